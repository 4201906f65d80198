// Command-line entry point: dataset synthesis, ingestion checks, ROI
// extraction, augmentation planning, training, evaluation, sweeps, gradient
// checking and report rendering.
#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "hippofuse/checkpoint.hpp"
#include "hippofuse/config.hpp"
#include "hippofuse/data.hpp"
#include "hippofuse/gradcheck.hpp"
#include "hippofuse/harness.hpp"
#include "hippofuse/nifti.hpp"
#include "hippofuse/report.hpp"
#include "hippofuse/schemas.hpp"

namespace fs = std::filesystem;
using namespace hippofuse;
using nlohmann::json;

// Documented exit codes (see README): 0 success, 1 check failure, 2 config or
// schema violation, 3 I/O problem, 4 data inconsistency, 5 shape mismatch.
namespace {

fs::path resolve_out(std::string cli_out, const char* fallback) {
  if (!cli_out.empty()) return cli_out;
  if (const char* env = std::getenv("HIPPOFUSE_OUT")) return fs::path(env) / fallback;
  return fs::path(fallback);
}

std::map<Diagnosis, std::size_t> parse_class_counts(const std::string& spec) {
  std::map<Diagnosis, std::size_t> out;
  std::size_t start = 0;
  while (start < spec.size()) {
    auto comma = spec.find(',', start);
    if (comma == std::string::npos) comma = spec.size();
    const std::string part = spec.substr(start, comma - start);
    const auto eq = part.find('=');
    if (eq == std::string::npos)
      throw ConfigError(msg("class counts '", spec, "': expected NAME=COUNT parts"));
    out[diagnosis_from_string(part.substr(0, eq))] =
        static_cast<std::size_t>(std::stoul(part.substr(eq + 1)));
    start = comma + 1;
  }
  if (out.empty()) throw ConfigError("no classes given");
  return out;
}

json load_validated_config(const std::string& path,
                           const std::vector<std::string>& overrides) {
  json doc = load_json_file(path);
  for (const auto& o : overrides) apply_override(doc, o);
  validate_against_schema(doc, json::parse(schemas::kRunConfig), "config");
  return doc;
}

DatasetManifest load_validated_manifest(const fs::path& path) {
  const json doc = load_json_file(path);
  validate_against_schema(doc, json::parse(schemas::kManifest), "manifest");
  auto manifest = DatasetManifest::from_json(doc);
  manifest.validate();
  return manifest;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(msg("cannot write '", path.string(), "'"));
  out << text;
}

void write_run_outputs(const fs::path& dir, const RunConfig& cfg,
                       const fs::path& manifest_path, const RunResult& result) {
  fs::create_directories(dir);
  json echo = cfg.to_json();
  echo["data"] = json{{"manifest", manifest_path.string()}};
  write_text(dir / "config_echo.json", echo.dump(2) + "\n");
  write_runlog_csv(dir / "runlog.csv", result.records);
  write_text(dir / "summary.json", result.summary.dump(2) + "\n");
  // wall-clock timings live outside the determinism-checked artifacts
  write_text(dir / "timing.json",
             json{{"wall_seconds", result.wall_seconds}}.dump(2) + "\n");
  auto net = FusionNetwork<float>::build(result.built_network, 0);
  net.scatter_params(result.final_params);
  net.scatter_running_stats(result.final_running_stats);
  save_checkpoint(dir / "checkpoint.bin", net);
}

RunConfig run_config_from_doc(const json& doc, std::uint64_t seed_override,
                              bool has_seed_override) {
  RunConfig cfg = RunConfig::from_json(doc);
  if (has_seed_override) cfg.seed = seed_override;
  cfg.validate();
  for (const auto& w : cfg.warnings()) std::cerr << "warning: " << w << "\n";
  return cfg;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"3D CNN fusion classifier for hippocampal ROI volumes"};
  app.require_subcommand(1);

  // ---- synth ----
  auto* synth = app.add_subcommand("synth", "generate a synthetic phantom cohort");
  std::string synth_out, synth_classes = "AD=48,NC=58", synth_grid = "121,145,121";
  double synth_sep = 2.0;
  std::uint64_t synth_seed = 1;
  int synth_k = 10;
  std::size_t synth_test = 12;
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--classes", synth_classes, "per-class subject counts, e.g. AD=48,NC=58");
  synth->add_option("--grid", synth_grid, "volume shape D,H,W");
  synth->add_option("--separation", synth_sep, "class separation (0 = indistinguishable)");
  synth->add_option("--seed", synth_seed, "master seed");
  synth->add_option("--k", synth_k, "augmentation level k");
  synth->add_option("--test-per-class", synth_test, "test subjects per class");

  // ---- ingest ----
  auto* ingest = app.add_subcommand("ingest", "parse a NIfTI-1 volume and print a summary");
  std::string ingest_file;
  ingest->add_option("--file", ingest_file, "single-file .nii volume")->required();

  // ---- extract ----
  auto* extract = app.add_subcommand("extract", "extract one ROI into the sample store");
  std::string ex_manifest, ex_subject, ex_modality = "sMRI", ex_roi = "left_hippocampus";
  std::string ex_out, ex_shift = "0,0,0";
  std::size_t ex_size = 28;
  double ex_sigma = 0.0;
  extract->add_option("--manifest", ex_manifest)->required();
  extract->add_option("--subject", ex_subject)->required();
  extract->add_option("--modality", ex_modality, "sMRI or MD-DTI");
  extract->add_option("--roi", ex_roi, "left_hippocampus or right_hippocampus");
  extract->add_option("--size", ex_size, "ROI size (28/38/42/48)");
  extract->add_option("--shift", ex_shift, "voxel shift d,h,w");
  extract->add_option("--sigma", ex_sigma, "Gaussian blur sigma");
  extract->add_option("--out", ex_out, "output prefix for .bin/.json");

  // ---- augment ----
  auto* augment = app.add_subcommand("augment", "write the balancing augmentation plan");
  std::string aug_manifest, aug_out;
  bool aug_materialize = false;
  std::size_t aug_size = 28;
  augment->add_option("--manifest", aug_manifest)->required();
  augment->add_option("--out", aug_out, "output directory");
  augment->add_flag("--materialize", aug_materialize, "also write sample blobs");
  augment->add_option("--size", aug_size, "ROI size when materializing");

  // ---- train ----
  auto* train = app.add_subcommand("train", "train one configuration");
  std::string train_config, train_out;
  std::vector<std::string> train_sets;
  std::uint64_t train_seed = 0;
  bool train_has_seed = false;
  train->add_option("--config", train_config, "run config JSON")->required();
  train->add_option("--set", train_sets, "dotted-key overrides, e.g. optimizer.mu0=0.005");
  train->add_option("--out", train_out, "output directory");
  train->add_option("--seed", train_seed, "master seed override")
      ->each([&](const std::string&) { train_has_seed = true; });

  // ---- evaluate ----
  auto* evaluate = app.add_subcommand("evaluate", "evaluate a checkpoint on the test sets");
  std::string eval_ckpt, eval_manifest, eval_pair = "AD-NC", eval_ci = "wald", eval_out;
  int eval_threads = 1;
  evaluate->add_option("--checkpoint", eval_ckpt)->required();
  evaluate->add_option("--manifest", eval_manifest)->required();
  evaluate->add_option("--pair", eval_pair, "classifier pair, e.g. AD-NC");
  evaluate->add_option("--ci", eval_ci, "wald or wilson");
  evaluate->add_option("--threads", eval_threads);
  evaluate->add_option("--out", eval_out, "output directory");

  // ---- sweep ----
  auto* sweep_cmd = app.add_subcommand("sweep", "run a grid of configurations");
  std::string sweep_config, sweep_out;
  std::vector<std::string> sweep_sets;
  sweep_cmd->add_option("--config", sweep_config)->required();
  sweep_cmd->add_option("--set", sweep_sets, "dotted-key overrides");
  sweep_cmd->add_option("--out", sweep_out, "output directory");

  // ---- gradcheck ----
  auto* gradcheck_cmd =
      app.add_subcommand("gradcheck", "finite-difference checks for every layer");
  std::uint64_t gc_seed = 1;
  int gc_rounds = 3;
  gradcheck_cmd->add_option("--seed", gc_seed, "base seed");
  gradcheck_cmd->add_option("--rounds", gc_rounds, "number of seeds to check");

  // ---- report ----
  auto* report = app.add_subcommand("report", "render result tables from run outputs");
  std::vector<std::string> report_runs;
  std::string report_curves;
  report->add_option("runs", report_runs, "run directories containing summary.json")
      ->required();
  report->add_option("--curves", report_curves, "write per-curve CSVs to this directory");

  CLI11_PARSE(app, argc, argv);

  if (*synth) {
    SynthParams params;
    params.subjects_per_class = parse_class_counts(synth_classes);
    if (std::sscanf(synth_grid.c_str(), "%zu,%zu,%zu", &params.volume_shape[0],
                    &params.volume_shape[1], &params.volume_shape[2]) != 3)
      throw ConfigError(msg("bad --grid '", synth_grid, "', expected D,H,W"));
    params.separation = synth_sep;
    params.seed = synth_seed;
    params.k = synth_k;
    params.test_per_class = synth_test;
    auto ds = synth_dataset(params);

    const fs::path dir = resolve_out(synth_out, "synth");
    fs::create_directories(dir / "vols");
    for (auto& subject : ds.manifest.subjects) {
      for (Modality m : {Modality::kSmri, Modality::kMdDti}) {
        const std::string name =
            msg(subject.id, m == Modality::kSmri ? "_smri" : "_mddti", ".nii");
        write_nifti(dir / "vols" / name, ds.store.get(subject, m));
        subject.volume_paths[m] = msg("vols/", name);
      }
    }
    ds.manifest.save(dir / "manifest.json");
    std::cout << "wrote " << ds.manifest.subjects.size() << " subjects to "
              << dir.string() << "\n";
    return 0;
  }

  if (*ingest) {
    const auto vol = read_nifti(ingest_file);
    double lo = vol.grid[0], hi = vol.grid[0], sum = 0.0;
    for (std::size_t i = 0; i < vol.grid.size(); ++i) {
      lo = std::min(lo, static_cast<double>(vol.grid[i]));
      hi = std::max(hi, static_cast<double>(vol.grid[i]));
      sum += vol.grid[i];
    }
    std::cout << "file:        " << ingest_file << "\n"
              << "grid:        " << shape_string(vol.grid.shape()) << " (D,H,W)\n"
              << "datatype:    " << (vol.datatype == kNiftiInt16 ? "int16" : "float32")
              << (vol.byte_swapped ? " (byte-swapped)" : "") << "\n"
              << "scl_slope:   " << vol.scl_slope << "\n"
              << "scl_inter:   " << vol.scl_inter << "\n"
              << "intensity:   min " << lo << ", max " << hi << ", mean "
              << sum / vol.grid.size() << "\n";
    return 0;
  }

  if (*extract) {
    auto manifest = load_validated_manifest(ex_manifest);
    VolumeStore store(fs::path(ex_manifest).parent_path());
    const auto& subject = manifest.subject(ex_subject);
    std::array<int, 3> shift{};
    if (std::sscanf(ex_shift.c_str(), "%d,%d,%d", &shift[0], &shift[1], &shift[2]) != 3)
      throw ConfigError(msg("bad --shift '", ex_shift, "', expected d,h,w"));
    auto roi = extract_roi(store.get(subject, modality_from_string(ex_modality)),
                           manifest.roi(ex_roi, ex_size), shift);
    if (ex_sigma > 0.0) roi = gaussian_blur3d(roi, ex_sigma);
    const fs::path prefix = ex_out.empty()
                                ? fs::path(msg(ex_subject, "_", ex_roi, "_", ex_size))
                                : fs::path(ex_out);
    write_sample_blob(prefix, roi,
                      json{{"subject", ex_subject},
                           {"modality", ex_modality},
                           {"roi", ex_roi},
                           {"size", ex_size},
                           {"shift", {shift[0], shift[1], shift[2]}},
                           {"sigma", ex_sigma}});
    std::cout << "wrote " << prefix.string() << ".bin/.json\n";
    return 0;
  }

  if (*augment) {
    auto manifest = load_validated_manifest(aug_manifest);
    std::map<Diagnosis, std::vector<std::string>> train_ids;
    for (const auto& s : manifest.subjects)
      if (!manifest.is_test_subject(s.id)) train_ids[s.diagnosis].push_back(s.id);
    const auto plan = balance_and_augment(train_ids, manifest.k, manifest.seed);
    const auto tests = build_test_sets(manifest.test_subjects, manifest.seed);
    const fs::path dir = resolve_out(aug_out, "augment");
    fs::create_directories(dir);
    write_text(dir / "plan.json", plan.to_json().dump(2) + "\n");
    write_text(dir / "test_sets.json", tests.to_json().dump(2) + "\n");
    std::size_t total = 0;
    for (const auto& [diag, refs] : plan.train) total += refs.size();
    if (aug_materialize) {
      VolumeStore store(fs::path(aug_manifest).parent_path());
      fs::create_directories(dir / "samples");
      for (const auto& [diag, refs] : plan.train)
        for (const auto& r : refs) {
          const auto& subject = manifest.subject(r.subject_id);
          for (const auto& [modality, path] : subject.volume_paths) {
            for (const char* roi_name : {"left_hippocampus", "right_hippocampus"}) {
              auto roi = extract_roi(store.get(subject, modality),
                                     manifest.roi(roi_name, aug_size),
                                     r.transform.shift);
              if (r.transform.sigma > 0.0) roi = gaussian_blur3d(roi, r.transform.sigma);
              write_sample_blob(
                  dir / "samples" / msg(r.sample_id, "_", to_string(modality), "_", roi_name),
                  roi,
                  json{{"sample", r.sample_id},
                       {"subject", r.subject_id},
                       {"diagnosis", to_string(diag)},
                       {"modality", to_string(modality)},
                       {"roi", roi_name},
                       {"shift",
                        {r.transform.shift[0], r.transform.shift[1], r.transform.shift[2]}},
                       {"sigma", r.transform.sigma}});
            }
          }
        }
    }
    std::cout << "augmentation plan: " << total << " train samples across "
              << plan.train.size() << " classes -> " << dir.string() << "\n";
    return 0;
  }

  if (*train) {
    const json doc = load_validated_config(train_config, train_sets);
    RunConfig cfg = run_config_from_doc(doc, train_seed, train_has_seed);
    if (!doc.contains("data") || !doc.at("data").contains("manifest"))
      throw ConfigError("config: missing required key 'data.manifest'");
    const fs::path manifest_path = doc.at("data").at("manifest").get<std::string>();
    auto manifest = load_validated_manifest(manifest_path);
    VolumeStore store(manifest_path.parent_path());
    const auto result = train_run(cfg, manifest, store);
    const fs::path dir = resolve_out(train_out, "run");
    write_run_outputs(dir, cfg, manifest_path, result);
    std::cout << "run complete: " << result.records.size() << " evaluations, "
              << result.wall_seconds << " s -> " << dir.string() << "\n";
    return 0;
  }

  if (*evaluate) {
    auto net = load_checkpoint(eval_ckpt);
    auto manifest = load_validated_manifest(eval_manifest);
    VolumeStore store(fs::path(eval_manifest).parent_path());
    RunConfig cfg;
    cfg.classifier_pair = eval_pair;
    cfg.threads = eval_threads;
    cfg.ci_method = eval_ci == "wilson" ? CiMethod::kWilsonScore : CiMethod::kWaldPaper;
    // the input mode is recoverable from the checkpointed pipelines
    const auto& pipes = net.config().input_pipelines;
    for (InputMode mode : {InputMode::kDtiL_DtiR, InputMode::kSmriL_SmriR,
                           InputMode::kSmriDtiLR, InputMode::kSmriLR_DtiLR})
      if (pipelines_for(mode) == pipes) cfg.input_mode = mode;
    const auto result = evaluate_network(net, cfg, manifest, store);
    const fs::path dir = resolve_out(eval_out, "evaluate");
    fs::create_directories(dir);
    write_text(dir / "evaluation.json", result.summary.dump(2) + "\n");
    RunView view{"evaluation", json{{"classifier_pair", cfg.classifier_pair},
                                    {"input_mode", to_string(cfg.input_mode)},
                                    {"reports", result.summary.at("reports")}}};
    std::cout << render_report_table({view});
    return 0;
  }

  if (*sweep_cmd) {
    const json doc = load_validated_config(sweep_config, sweep_sets);
    if (!doc.contains("sweep")) throw ConfigError("config: missing required key 'sweep'");
    if (!doc.contains("data") || !doc.at("data").contains("manifest"))
      throw ConfigError("config: missing required key 'data.manifest'");
    const fs::path manifest_path = doc.at("data").at("manifest").get<std::string>();
    auto manifest = load_validated_manifest(manifest_path);
    VolumeStore store(manifest_path.parent_path());

    const RunConfig base = RunConfig::from_json(doc);
    const json sw = doc.at("sweep");
    std::vector<std::string> pairs =
        sw.contains("classifier_pairs")
            ? sw.at("classifier_pairs").get<std::vector<std::string>>()
            : std::vector<std::string>{base.classifier_pair};
    std::vector<std::string> modes =
        sw.contains("input_modes") ? sw.at("input_modes").get<std::vector<std::string>>()
                                   : std::vector<std::string>{to_string(base.input_mode)};
    std::vector<std::pair<std::size_t, std::string>> grid;
    if (sw.contains("grid")) {
      for (const auto& g : sw.at("grid"))
        grid.push_back({g.at("roi_size").get<std::size_t>(),
                        g.at("configuration").get<std::string>()});
    } else {
      grid.push_back({base.network.roi_size, base.network.name});
    }

    std::vector<RunConfig> runs;
    for (const auto& pair : pairs)
      for (const auto& mode : modes)
        for (const auto& [roi, name] : grid) {
          RunConfig cfg = base;
          cfg.classifier_pair = pair;
          cfg.input_mode = input_mode_from_string(mode);
          const double dropout = cfg.network.dropout_rate;
          const bool shared = cfg.network.share_pipeline_weights;
          cfg.network = NetworkConfig::preset(name);
          cfg.network.roi_size = roi;
          cfg.network.dropout_rate = dropout;
          cfg.network.share_pipeline_weights = shared;
          cfg.network.input_pipelines = pipelines_for(cfg.input_mode);
          // per-run seed from the row descriptor: execution order irrelevant
          cfg.seed = derive_seed(base.seed, msg(pair, "|", mode, "|", roi, "|", name));
          cfg.validate();
          runs.push_back(std::move(cfg));
        }

    const auto rows = sweep(runs, manifest, store);
    const fs::path dir = resolve_out(sweep_out, "sweep");
    fs::create_directories(dir);
    write_sweep_csv(dir / "sweep.csv", rows);
    std::vector<RunView> views;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (!rows[i].ok) continue;
      json reports = json::object();
      // reuse the summary fragment layout for the table renderer
      for (const auto& [name, rep] : rows[i].reports) {
        json jr;
        auto one = [](const std::optional<TopMeanReport>& t) -> json {
          if (!t) return nullptr;
          return json{{"value", t->value}, {"ci_low", t->ci_low}, {"ci_high", t->ci_high}};
        };
        jr["acc"] = one(rep.acc);
        jr["sen"] = one(rep.sen);
        jr["spc"] = one(rep.spc);
        reports[name] = std::move(jr);
      }
      views.push_back(RunView{
          msg("row", i),
          json{{"config", json{{"run", json{{"classifier_pair", rows[i].config.classifier_pair},
                                            {"input_mode", to_string(rows[i].config.input_mode)}}},
                               {"network", json{{"roi_size", rows[i].config.network.roi_size},
                                                {"name", rows[i].config.network.name}}}}},
               {"reports", std::move(reports)}}});
    }
    std::cout << render_report_table(views);
    std::size_t failures = 0;
    for (const auto& r : rows) failures += !r.ok;
    if (failures > 0)
      std::cerr << failures << " of " << rows.size() << " runs failed (see sweep.csv)\n";
    std::cout << "sweep table -> " << (dir / "sweep.csv").string() << "\n";
    return 0;
  }

  if (*gradcheck_cmd) {
    bool all_ok = true;
    for (int round = 0; round < gc_rounds; ++round) {
      const std::uint64_t seed = gc_seed + static_cast<std::uint64_t>(round);
      std::printf("seed %llu\n", static_cast<unsigned long long>(seed));
      for (const auto& rep : gradcheck::run_suite(seed)) {
        const bool ok = rep.max_rel_err < 1e-4;
        all_ok &= ok;
        std::printf("  %-16s max rel err %.3e  %s\n", rep.layer.c_str(),
                    rep.max_rel_err, ok ? "ok" : "FAIL");
      }
    }
    return all_ok ? 0 : 1;
  }

  if (*report) {
    std::vector<RunView> views;
    for (const auto& run : report_runs) {
      const fs::path dir(run);
      const fs::path summary_path =
          fs::is_directory(dir) ? dir / "summary.json" : dir;
      RunView view;
      view.label = fs::is_directory(dir) ? dir.filename().string()
                                         : summary_path.stem().string();
      view.summary = load_json_file(summary_path);
      const auto evals = view.summary.value("evaluations", std::size_t{0});
      if (evals == 0) {
        std::cerr << "no evaluations recorded in " << summary_path.string() << "\n";
        return 4;
      }
      views.push_back(std::move(view));
    }
    std::cout << render_report_table(views);
    if (!report_curves.empty()) {
      for (const auto& run : report_runs) {
        const fs::path dir(run);
        if (!fs::is_directory(dir)) continue;
        const auto records = read_runlog_csv(dir / "runlog.csv");
        write_curve_csvs(fs::path(report_curves) / dir.filename(), records);
      }
      std::cout << "curves -> " << report_curves << "\n";
    }
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 4;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
