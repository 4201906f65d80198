// Acceptance suite: one pass/fail line per criterion, nonzero exit if any
// criterion fails. Heavier than the unit suites; the end-to-end synthetic
// experiment dominates the runtime.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hippofuse/checkpoint.hpp"
#include "hippofuse/gradcheck.hpp"
#include "hippofuse/harness.hpp"
#include "hippofuse/optim.hpp"
#include "oracles.hpp"

using namespace hippofuse;
namespace fs = std::filesystem;

namespace {

int failures = 0;

struct Criterion {
  const char* name;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  bool ok = true;
  std::string detail;

  explicit Criterion(const char* n) : name(n) {}
  void expect(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
  void finish() {
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("[%s] %-28s (%.1f s)%s%s\n", ok ? "PASS" : "FAIL", name, secs,
                detail.empty() ? "" : " - ", detail.c_str());
    std::fflush(stdout);
    failures += !ok;
  }
};

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---- criterion 1: gradient correctness --------------------------------------

void criterion_gradients() {
  Criterion c("1 gradient correctness");
  for (std::uint64_t seed : {101u, 202u, 303u}) {
    for (const auto& rep : gradcheck::run_suite(seed))
      c.expect(rep.max_rel_err < 1e-4,
               msg(rep.layer, " rel err ", rep.max_rel_err, " at seed ", seed));
  }
  // the end-to-end network is genuinely tiny
  auto tiny = FusionNetwork<double>::build(gradcheck::tiny_config(), 1);
  c.expect(tiny.param_count() <= 5000,
           msg("tiny net has ", tiny.param_count(), " params"));
  c.finish();
}

// ---- criterion 2: kernel oracles ---------------------------------------------

void criterion_kernels() {
  Criterion c("2 kernel oracles");
  Rng rng(2024);
  int conv_shapes = 0, pool_shapes = 0;
  for (int trial = 0; trial < 110; ++trial) {
    const std::size_t ci = 1 + rng.uniform_int(0, 3);
    const std::size_t co = 1 + rng.uniform_int(0, 3);
    const std::size_t k = 1 + rng.uniform_int(0, 4);
    const std::size_t d = 1 + rng.uniform_int(0, 5);
    auto x = oracle::random_tensor<double>({ci, d, d, d}, rng);
    auto kk = oracle::random_tensor<double>({co, ci, k, k, k}, rng);
    auto b = oracle::random_tensor<double>({co}, rng);
    auto got = conv3d_forward(x, ConvParams<double>{kk, b});
    auto want = oracle::naive_conv3d(x, kk, b);
    for (std::size_t i = 0; i < got.size(); ++i)
      c.expect(std::abs(got[i] - want[i]) <= 1e-10 * std::max(1.0, std::abs(want[i])),
               msg("conv mismatch at trial ", trial));
    ++conv_shapes;
  }
  for (int trial = 0; trial < 110; ++trial) {
    const std::size_t ch = 1 + rng.uniform_int(0, 3);
    const std::size_t d = 2 + rng.uniform_int(0, 8);
    auto x = oracle::random_tensor<double>({ch, d, d, d}, rng);
    auto got = maxpool3d_forward(x).output;
    auto want = oracle::naive_maxpool3d(x);
    for (std::size_t i = 0; i < got.size(); ++i)
      c.expect(got[i] == want[i], msg("pool mismatch at trial ", trial));
    ++pool_shapes;
  }
  c.expect(conv_shapes >= 100 && pool_shapes >= 100, "not enough shapes");
  c.finish();
}

// ---- criterion 3: architecture shapes ----------------------------------------

void criterion_architectures() {
  Criterion c("3 architecture shapes");
  struct Preset {
    const char* name;
    std::vector<std::size_t> kernels, filters, fc;
  };
  const Preset presets[4] = {
      {"C1", {5, 4, 3, 3}, {16, 32, 64, 128}, {16, 8}},
      {"C2", {5, 4, 3, 3, 3}, {16, 32, 64, 128, 128}, {16, 8}},
      {"C3", {7, 6, 5, 4, 3}, {16, 32, 64, 128, 256}, {32, 8}},
      {"C4", {7, 6, 5, 4, 3, 3}, {16, 32, 64, 128, 256, 256}, {16}},
  };
  for (const auto& p : presets) {
    const auto cfg = NetworkConfig::preset(p.name);
    c.expect(cfg.conv_kernel_sizes == p.kernels, msg(p.name, " kernel sizes"));
    c.expect(cfg.conv_filter_counts == p.filters, msg(p.name, " filter counts"));
    c.expect(cfg.fc_units == p.fc, msg(p.name, " fc widths"));
    c.expect(cfg.conv_kernel_sizes.size() == cfg.conv_filter_counts.size(),
             msg(p.name, " layer counts"));
  }
  const std::pair<const char*, std::size_t> pairings[8] = {
      {"C1", 28}, {"C2", 28}, {"C1", 38}, {"C2", 38},
      {"C3", 42}, {"C4", 42}, {"C3", 48}, {"C4", 48}};
  for (const auto& [name, roi] : pairings)
    for (InputMode mode : {InputMode::kDtiL_DtiR, InputMode::kSmriL_SmriR,
                           InputMode::kSmriDtiLR, InputMode::kSmriLR_DtiLR}) {
      auto cfg = NetworkConfig::preset(name);
      cfg.roi_size = roi;
      cfg.input_pipelines = pipelines_for(mode);
      try {
        auto net = FusionNetwork<float>::build(cfg, 5);
        c.expect(net.spatial_ladder().back() >= 1, msg(name, "@", roi, " ladder"));
      } catch (const Error& e) {
        c.expect(false, msg(name, "@", roi, " mode ", to_string(mode), ": ", e.what()));
      }
    }
  c.finish();
}

// ---- criterion 4: augmentation exactness --------------------------------------

void criterion_augmentation() {
  Criterion c("4 augmentation exactness");
  SynthParams params;
  params.subjects_per_class = {{Diagnosis::kAD, 48},
                               {Diagnosis::kMCI, 108},
                               {Diagnosis::kNC, 58}};
  params.volume_shape = {64, 64, 64};
  params.separation = 1.0;
  params.seed = 4;
  params.k = 10;
  params.test_per_class = 12;
  auto ds = synth_dataset(params);

  std::map<Diagnosis, std::vector<std::string>> train_ids;
  for (const auto& s : ds.manifest.subjects)
    if (!ds.manifest.is_test_subject(s.id)) train_ids[s.diagnosis].push_back(s.id);
  c.expect(train_ids[Diagnosis::kAD].size() == 36, "AD train subjects != 36");
  c.expect(train_ids[Diagnosis::kMCI].size() == 96, "MCI train subjects != 96");
  c.expect(train_ids[Diagnosis::kNC].size() == 46, "NC train subjects != 46");

  const auto plan = balance_and_augment(train_ids, ds.manifest.k, ds.manifest.seed);
  std::map<Diagnosis, std::size_t> generated;
  for (const auto& [diag, refs] : plan.train) {
    c.expect(refs.size() == 960, msg(to_string(diag), " pool ", refs.size(), " != 960"));
    for (const auto& r : refs) {
      if (!r.original) ++generated[diag];
      c.expect(std::abs(r.transform.shift[0]) <= 2 &&
                   std::abs(r.transform.shift[1]) <= 2 &&
                   std::abs(r.transform.shift[2]) <= 2,
               "shift outside {-2..2}");
      c.expect(r.transform.sigma >= 0.0 && r.transform.sigma <= 1.2, "sigma outside");
    }
  }
  c.expect(generated[Diagnosis::kAD] == 924, "generated AD != 924");
  c.expect(generated[Diagnosis::kMCI] == 864, "generated MCI != 864");
  c.expect(generated[Diagnosis::kNC] == 914, "generated NC != 914");

  const auto tests = build_test_sets(ds.manifest.test_subjects, ds.manifest.seed);
  for (Diagnosis d : {Diagnosis::kAD, Diagnosis::kMCI, Diagnosis::kNC}) {
    c.expect(tests.test0.at(d).size() == 12, "test0 size != 12");
    c.expect(tests.test1.at(d).size() == 120, "test1 size != 120");
    c.expect(tests.test2.at(d).size() == 120, "test2 size != 120");
    for (const auto& r : tests.test1.at(d))
      c.expect(r.transform.sigma == 0.0, "test1 sample with blur");
  }

  // the extraction windows of every transform stay inside the volumes
  const auto spec = ds.manifest.roi("left_hippocampus", 28);
  const auto& subject = ds.manifest.subjects.front();
  for (int s = -2; s <= 2; ++s) {
    auto roi = extract_roi(ds.store.get(subject, Modality::kSmri), spec, {s, s, s});
    c.expect(roi.size() == 28u * 28 * 28, "roi extraction size");
  }
  c.finish();
}

// ---- criterion 5: optimizer ----------------------------------------------------

void criterion_optimizer() {
  Criterion c("5 optimizer");
  OptimizerConfig cfg;  // mu0 0.01, lambda 0.8, t0 100, m 0.93
  for (long t = 0; t <= 1000; ++t)
    c.expect(lr_at(cfg, t) ==
                 cfg.mu0 * std::pow(cfg.lambda, static_cast<double>(t / cfg.t0)),
             msg("lr mismatch at t=", t));

  auto st = OptimizerState<double>::init(cfg, 1);
  std::vector<double> w{1.0};
  double sim_w = 1.0, sim_v = 0.0;
  long reached_at = -1;
  for (long t = 0; t < 2000; ++t) {
    nesterov_step(w, st, [](const std::vector<double>& p) { return p; });
    const double mu = lr_at(cfg, t);
    sim_v = cfg.momentum * sim_v - mu * (sim_w + cfg.momentum * sim_v);
    sim_w += sim_v;
    c.expect(std::abs(w[0] - sim_w) <= 1e-12, msg("trajectory diverged at t=", t));
    if (reached_at < 0 && std::abs(w[0]) < 1e-3) reached_at = t + 1;
  }
  c.expect(reached_at > 0, "|w| never dropped below 1e-3 within 2000 steps");

  // mini-group accumulation equals the single-batch gradient
  Rng rng(55);
  const std::size_t q = 90, len = 257;
  std::vector<std::vector<double>> grads(q, std::vector<double>(len));
  for (auto& g : grads)
    for (auto& v : g) v = rng.uniform(-1.0, 1.0);
  std::vector<double> single(len, 0.0);
  for (const auto& g : grads)
    for (std::size_t j = 0; j < len; ++j) single[j] += g[j];
  for (auto& v : single) v /= static_cast<double>(q);
  MiniGroupAccumulator<double> acc(q, len);
  for (std::size_t g0 = 0; g0 < q; g0 += 15) {
    std::vector<double> sum(len, 0.0);
    for (std::size_t i = g0; i < g0 + 15; ++i)
      for (std::size_t j = 0; j < len; ++j) sum[j] += grads[i][j];
    acc.add(sum, 15);
  }
  const auto released = acc.release();
  for (std::size_t j = 0; j < len; ++j)
    c.expect(std::abs(released[j] - single[j]) <= 1e-12, "accumulator mismatch");
  c.finish();
}

// ---- criterion 6: metrics ------------------------------------------------------

void criterion_metrics() {
  Criterion c("6 metrics");
  Rng rng(66);
  const std::size_t s = 10;
  int series_checked = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t len = s + static_cast<std::size_t>(rng.uniform_int(0, 990));
    MetricSeries series;
    std::vector<double> plain;
    for (std::size_t i = 0; i < len; ++i) {
      const double v = rng.next_unit();
      series.push_back({static_cast<long>(i), v});
      plain.push_back(v);
    }
    const auto got = top_mean(series, s);
    const auto want = oracle::naive_top_mean(plain, s);
    c.expect(got.value == want.mean && got.window_start == static_cast<long>(want.start),
             msg("top_mean mismatch at trial ", trial));
    ++series_checked;
  }
  c.expect(series_checked == 1000, "series count");

  const auto [lo, hi] = wilson_ci(0.5, 100);
  c.expect(std::abs((hi - lo) / 2.0 - 0.098) <= 1e-12, "wilson_ci(0.5,100) half-width");

  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t npos = 1 + rng.uniform_int(0, 300);
    ConfusionCounts cc;
    cc.tp = rng.uniform_int(0, static_cast<std::int64_t>(npos));
    cc.fn = npos - cc.tp;
    cc.tn = rng.uniform_int(0, static_cast<std::int64_t>(npos));
    cc.fp = npos - cc.tn;
    const auto m = acc_sen_spc(cc);
    c.expect(std::abs(*m.acc - (*m.sen + *m.spc) / 2.0) <= 1e-15,
             "balanced ACC != (SEN+SPC)/2");
  }
  c.finish();
}

// ---- criterion 7: end-to-end synthetic experiment -------------------------------

void criterion_end_to_end() {
  Criterion c("7 end-to-end synthetic");
  SynthParams params;
  params.subjects_per_class = {{Diagnosis::kAD, 48}, {Diagnosis::kNC, 58}};
  params.volume_shape = {64, 64, 64};  // ROI 28 +-2 voxel shifts fit comfortably
  params.separation = 3.0;
  params.seed = 9;
  params.k = 10;            // 960 train samples per class, as in the balancing table
  params.test_per_class = 12;  // 24 test subjects, the paper's split geometry
  auto ds = synth_dataset(params);

  RunConfig cfg;
  cfg.classifier_pair = "AD-NC";
  cfg.input_mode = InputMode::kSmriL_SmriR;
  cfg.network = NetworkConfig::preset("C1");
  cfg.network.roi_size = 28;
  cfg.iterations = 28;  // converges around iteration 8; well within 1000
  cfg.q = 90;
  cfg.mini_group_size = 15;
  cfg.resplit_period = 100;
  cfg.eval_period = 4;
  cfg.top_mean_window_iters = 16;
  cfg.seed = 1;

  const auto single = train_run(cfg, ds.manifest, ds.store);
  const auto& single_acc = single.reports.at("validation").acc;
  c.expect(single_acc.has_value(), "no validation top-mean report");
  if (single_acc)
    c.expect(single_acc->value >= 0.95,
             msg("sMRI_L+sMRI_R validation top-mean ", single_acc->value, " < 0.95"));

  RunConfig fusion_cfg = cfg;
  fusion_cfg.input_mode = InputMode::kSmriDtiLR;
  const auto fusion = train_run(fusion_cfg, ds.manifest, ds.store);
  const auto& fusion_acc = fusion.reports.at("validation").acc;
  c.expect(fusion_acc.has_value(), "no fusion validation report");
  if (single_acc && fusion_acc)
    c.expect(fusion_acc->value >= single_acc->value,
             msg("fusion ", fusion_acc->value, " < single-modality ",
                 single_acc->value));
  c.finish();
}

// ---- criterion 8: determinism ----------------------------------------------------

void criterion_determinism() {
  Criterion c("8 determinism");
  SynthParams params;
  params.subjects_per_class = {{Diagnosis::kAD, 26}, {Diagnosis::kNC, 30}};
  params.volume_shape = {48, 48, 48};
  params.separation = 2.0;
  params.seed = 12;
  params.k = 2;
  params.test_per_class = 12;

  RunConfig cfg;
  cfg.classifier_pair = "AD-NC";
  cfg.network.name = "custom";
  cfg.network.conv_kernel_sizes = {3, 3};
  cfg.network.conv_filter_counts = {4, 8};
  cfg.network.fc_units = {8};
  cfg.network.roi_size = 12;
  cfg.iterations = 6;
  cfg.q = 8;
  cfg.mini_group_size = 4;
  cfg.resplit_period = 3;
  cfg.eval_period = 2;
  cfg.top_mean_window_iters = 4;
  cfg.seed = 77;
  cfg.threads = 3;  // parallel evaluation included

  const auto dir = fs::temp_directory_path() / "hippofuse_acceptance";
  fs::create_directories(dir);
  std::string bytes_csv[2], bytes_json[2];
  for (int round = 0; round < 2; ++round) {
    auto ds = synth_dataset(params);
    const auto result = train_run(cfg, ds.manifest, ds.store);
    const auto csv = dir / msg("runlog", round, ".csv");
    const auto js = dir / msg("summary", round, ".json");
    write_runlog_csv(csv, result.records);
    std::ofstream(js, std::ios::trunc) << result.summary.dump(2) << "\n";
    bytes_csv[round] = file_bytes(csv);
    bytes_json[round] = file_bytes(js);
  }
  c.expect(!bytes_csv[0].empty(), "empty runlog");
  c.expect(bytes_csv[0] == bytes_csv[1], "runlog CSVs differ between identical runs");
  c.expect(bytes_json[0] == bytes_json[1], "summary JSONs differ between identical runs");

  // and the records must not depend on the thread count at all
  auto ds = synth_dataset(params);
  auto serial_cfg = cfg;
  serial_cfg.threads = 1;
  const auto serial = train_run(serial_cfg, ds.manifest, ds.store);
  const auto csv = dir / "runlog_serial.csv";
  write_runlog_csv(csv, serial.records);
  c.expect(file_bytes(csv) == bytes_csv[0],
           "records differ between threads=1 and threads=3");
  c.finish();
}

}  // namespace

int main() {
  std::printf("acceptance suite\n");
  criterion_gradients();
  criterion_kernels();
  criterion_architectures();
  criterion_augmentation();
  criterion_optimizer();
  criterion_metrics();
  criterion_end_to_end();
  criterion_determinism();
  if (failures == 0)
    std::printf("all criteria passed\n");
  else
    std::printf("%d criteria FAILED\n", failures);
  return failures == 0 ? 0 : 1;
}
