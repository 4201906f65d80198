#include "hippofuse/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <thread>

#include "hippofuse/optim.hpp"
#include "hippofuse/rng.hpp"

namespace hippofuse {

using nlohmann::json;

// ---------------------------------------------------------------------------
// RunConfig
// ---------------------------------------------------------------------------

std::pair<Diagnosis, Diagnosis> RunConfig::pair_classes() const {
  const auto dash = classifier_pair.find('-');
  if (dash == std::string::npos)
    throw ConfigError(msg("classifier pair '", classifier_pair,
                          "' is not of the form A-B"));
  return {diagnosis_from_string(classifier_pair.substr(0, dash)),
          diagnosis_from_string(classifier_pair.substr(dash + 1))};
}

Diagnosis RunConfig::resolved_positive() const {
  if (positive_class) return *positive_class;
  // disease-severe convention: AD in AD-NC and AD-MCI, MCI in MCI-NC
  const auto [a, b] = pair_classes();
  if (a == Diagnosis::kAD || b == Diagnosis::kAD) return Diagnosis::kAD;
  return Diagnosis::kMCI;
}

void RunConfig::validate() const {
  const auto [a, b] = pair_classes();
  if (a == b) throw ConfigError(msg("classifier pair '", classifier_pair,
                                    "' names the same class twice"));
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
  if (q < 2) throw ConfigError("q must be >= 2 (one sample per class)");
  if (mini_group_size < 2)
    throw ConfigError("mini_group_size must be >= 2 (batch normalization)");
  if (resplit_period < 1) throw ConfigError("resplit_period must be >= 1");
  if (eval_period < 1) throw ConfigError("eval_period must be >= 1");
  if (top_mean_window_iters < 1)
    throw ConfigError("top_mean_window_iters must be >= 1");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (validation_fraction <= 0.0 || validation_fraction >= 1.0)
    throw ConfigError("validation_fraction must be inside (0,1)");
  const auto pos = resolved_positive();
  if (pos != a && pos != b)
    throw ConfigError(msg("positive class ", to_string(pos), " is not part of pair ",
                          classifier_pair));
  optimizer.validate();
  NetworkConfig net = network;
  net.input_pipelines = pipelines_for(input_mode);
  net.validate();
}

std::vector<std::string> RunConfig::warnings() const {
  std::vector<std::string> w;
  const bool shallow = network.name == "C1" || network.name == "C2";
  const bool deep = network.name == "C3" || network.name == "C4";
  const std::size_t roi = network.roi_size;
  if (shallow && roi != 28 && roi != 38)
    w.push_back(msg(network.name, " was paired with ROI sizes 28/38; got ", roi));
  if (deep && roi != 42 && roi != 48)
    w.push_back(msg(network.name, " was paired with ROI sizes 42/48; got ", roi));
  return w;
}

json RunConfig::to_json() const {
  const auto seeds = expand_seeds(seed);
  json run{{"classifier_pair", classifier_pair},
           {"input_mode", to_string(input_mode)},
           {"iterations", iterations},
           {"q", q},
           {"mini_group_size", mini_group_size},
           {"resplit_period", resplit_period},
           {"eval_period", eval_period},
           {"top_mean_window_iters", top_mean_window_iters},
           {"validation_fraction", validation_fraction},
           {"threads", threads},
           {"seed", seed},
           {"ci_method", to_string(ci_method)},
           {"seeds",
            json{{"init", seeds.init},
                 {"draw", seeds.draw},
                 {"dropout", seeds.dropout},
                 {"split", seeds.split},
                 {"probe", seeds.probe}}}};
  if (positive_class) run["positive_class"] = to_string(*positive_class);
  return json{{"run", std::move(run)},
              {"network", network_config_to_json(network)},
              {"optimizer", optimizer_config_to_json(optimizer)}};
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig cfg;
  const json run = j.value("run", json::object());
  cfg.classifier_pair = run.value("classifier_pair", cfg.classifier_pair);
  if (run.contains("input_mode"))
    cfg.input_mode = input_mode_from_string(run.at("input_mode").get<std::string>());
  cfg.iterations = run.value("iterations", cfg.iterations);
  cfg.q = run.value("q", cfg.q);
  cfg.mini_group_size = run.value("mini_group_size", cfg.mini_group_size);
  cfg.resplit_period = run.value("resplit_period", cfg.resplit_period);
  cfg.eval_period = run.value("eval_period", cfg.eval_period);
  cfg.top_mean_window_iters =
      run.value("top_mean_window_iters", cfg.top_mean_window_iters);
  cfg.validation_fraction = run.value("validation_fraction", cfg.validation_fraction);
  cfg.threads = run.value("threads", cfg.threads);
  cfg.seed = run.value("seed", cfg.seed);
  if (run.contains("ci_method")) {
    const std::string m = run.at("ci_method").get<std::string>();
    if (m == "wald")
      cfg.ci_method = CiMethod::kWaldPaper;
    else if (m == "wilson")
      cfg.ci_method = CiMethod::kWilsonScore;
    else
      throw ConfigError(msg("unknown ci_method '", m, "'"));
  }
  if (run.contains("positive_class"))
    cfg.positive_class =
        diagnosis_from_string(run.at("positive_class").get<std::string>());
  if (j.contains("network")) cfg.network = network_config_from_json(j.at("network"));
  if (j.contains("optimizer"))
    cfg.optimizer = optimizer_config_from_json(j.at("optimizer"));
  cfg.network.input_pipelines = pipelines_for(cfg.input_mode);
  return cfg;
}

// ---------------------------------------------------------------------------
// sample materialization
// ---------------------------------------------------------------------------

namespace {

// One drawable training/evaluation unit: a provenance record plus, in merged
// mode, which hippocampus side it carries.
struct SampleKey {
  const SampleRef* ref;
  int side;  // 0 = left, 1 = right (mirrored); modes 1-3 use side 0 only
};

struct Materializer {
  const DatasetManifest* manifest;
  VolumeStore* store;
  const std::vector<PipelineInput>* pipelines;
  std::size_t roi_size;

  std::vector<Tensor> operator()(const SampleKey& key) const {
    const auto& subject = manifest->subject(key.ref->subject_id);
    std::vector<Tensor> out;
    out.reserve(pipelines->size());
    for (const auto& pipe : *pipelines) {
      const bool right = pipe.roi == RoiSel::kRightHippocampus ||
                         (pipe.roi == RoiSel::kMergedLR && key.side == 1);
      const auto spec = manifest->roi(
          right ? "right_hippocampus" : "left_hippocampus", roi_size);
      Tensor roi;
      try {
        roi = extract_roi(store->get(subject, pipe.modality), spec,
                          key.ref->transform.shift);
      } catch (const DataError& e) {
        throw DataError(msg("subject '", subject.id, "': ", e.what()));
      }
      if (key.ref->transform.sigma > 0.0)
        roi = gaussian_blur3d(roi, key.ref->transform.sigma);
      if (pipe.roi == RoiSel::kMergedLR && key.side == 1)
        roi = flip_axis(roi, roi.rank() - 1);
      out.push_back(std::move(roi));
    }
    return out;
  }
};

struct EvalSet {
  std::vector<std::vector<Tensor>> inputs;
  std::vector<std::size_t> labels;
};

std::vector<SampleKey> expand_keys(const std::vector<SampleRef>& refs, bool merged) {
  std::vector<SampleKey> keys;
  keys.reserve(refs.size() * (merged ? 2 : 1));
  for (const auto& r : refs) {
    keys.push_back({&r, 0});
    if (merged) keys.push_back({&r, 1});
  }
  return keys;
}

EvalSet materialize_set(const Materializer& mat, const std::vector<SampleKey>& keys,
                        const std::map<std::string, std::size_t>& label_of) {
  EvalSet set;
  set.inputs.reserve(keys.size());
  set.labels.reserve(keys.size());
  for (const auto& k : keys) {
    set.inputs.push_back(mat(k));
    set.labels.push_back(label_of.at(to_string(k.ref->diagnosis)));
  }
  return set;
}

// Inference over a set, fanned out over worker threads; results land in
// per-sample slots, so the outcome does not depend on the thread count.
std::vector<std::size_t> predict_set(FusionNetwork<float>& net, const EvalSet& set,
                                     int threads) {
  std::vector<std::size_t> preds(set.inputs.size());
  if (threads <= 1 || set.inputs.size() < 2) {
    for (std::size_t i = 0; i < set.inputs.size(); ++i)
      preds[i] = net.predict(set.inputs[i]);
    return preds;
  }
  const int n_workers = std::min<int>(threads, static_cast<int>(set.inputs.size()));
  std::vector<std::thread> workers;
  workers.reserve(n_workers);
  for (int w = 0; w < n_workers; ++w)
    workers.emplace_back([&, w] {
      for (std::size_t i = w; i < set.inputs.size(); i += n_workers)
        preds[i] = net.predict(set.inputs[i]);
    });
  for (auto& t : workers) t.join();
  return preds;
}

double accuracy_of(const std::vector<std::size_t>& preds,
                   const std::vector<std::size_t>& labels) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == labels[i];
  return preds.empty() ? 0.0
                       : static_cast<double>(correct) / static_cast<double>(preds.size());
}

json report_json(const SetReports& r) {
  auto one = [](const std::optional<TopMeanReport>& t) -> json {
    if (!t) return nullptr;
    return json{{"value", t->value},
                {"variance", t->variance},
                {"window_start", t->window_start},
                {"window_length", t->window_length},
                {"ci_low", t->ci_low},
                {"ci_high", t->ci_high},
                {"ci_method", t->ci_method},
                {"n", t->n_samples}};
  };
  return json{{"acc", one(r.acc)},
              {"sen", one(r.sen)},
              {"spc", one(r.spc)},
              {"n_samples", r.n_samples},
              {"final_confusion",
               json{{"tp", r.final_confusion.tp},
                    {"fp", r.final_confusion.fp},
                    {"tn", r.final_confusion.tn},
                    {"fn", r.final_confusion.fn}}}};
}

}  // namespace

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

RunResult train_run(const RunConfig& cfg, const DatasetManifest& manifest,
                    VolumeStore& store) {
  const auto t_start = std::chrono::steady_clock::now();
  cfg.validate();
  manifest.validate();
  const auto [cls0, cls1] = cfg.pair_classes();
  const auto seeds = expand_seeds(cfg.seed);

  NetworkConfig netcfg = cfg.network;
  netcfg.input_pipelines = pipelines_for(cfg.input_mode);
  const bool merged = cfg.input_mode == InputMode::kSmriLR_DtiLR;

  // every referenced subject must provide every modality the mode needs
  {
    std::vector<Modality> needed;
    for (const auto& p : netcfg.input_pipelines)
      if (std::find(needed.begin(), needed.end(), p.modality) == needed.end())
        needed.push_back(p.modality);
    for (const auto& s : manifest.subjects) {
      if (s.diagnosis != cls0 && s.diagnosis != cls1) continue;
      for (Modality m : needed)
        if (!store.contains(s.id, m) && s.volume_paths.count(m) == 0)
          throw DataError(msg("subject '", s.id, "' lacks the ", to_string(m),
                              " volume required by input mode ",
                              to_string(cfg.input_mode)));
    }
  }

  // dataset: balancing augmentation over every class in the manifest, then
  // the three test sets; both are functions of the manifest seed
  std::map<Diagnosis, std::vector<std::string>> train_ids;
  for (const auto& s : manifest.subjects)
    if (!manifest.is_test_subject(s.id)) train_ids[s.diagnosis].push_back(s.id);
  const auto plan = balance_and_augment(train_ids, manifest.k, manifest.seed);
  const auto tests = build_test_sets(manifest.test_subjects, manifest.seed);

  const std::map<std::string, std::size_t> label_of{{to_string(cls0), 0},
                                                    {to_string(cls1), 1}};
  const std::size_t positive_label = cfg.resolved_positive() == cls0 ? 0 : 1;

  Materializer mat{&manifest, &store, &netcfg.input_pipelines, netcfg.roi_size};

  auto pair_keys = [&](const std::map<Diagnosis, std::vector<SampleRef>>& by_class,
                       Diagnosis d) { return expand_keys(by_class.at(d), merged); };

  // invariant: no gradient sample may descend from a test subject
  for (Diagnosis d : {cls0, cls1})
    for (const auto& r : plan.train.at(d))
      if (manifest.is_test_subject(r.subject_id))
        throw DataError(msg("train sample ", r.sample_id,
                            " derives from test subject ", r.subject_id));

  EvalSet test_sets[3];
  {
    const std::map<Diagnosis, std::vector<SampleRef>>* src[3] = {
        &tests.test0, &tests.test1, &tests.test2};
    for (int i = 0; i < 3; ++i) {
      auto k0 = pair_keys(*src[i], cls0);
      auto k1 = pair_keys(*src[i], cls1);
      k0.insert(k0.end(), k1.begin(), k1.end());
      test_sets[i] = materialize_set(mat, k0, label_of);
    }
  }

  auto net = FusionNetwork<float>::build(netcfg, seeds.init);
  std::vector<float> params = net.gather_params();
  auto opt = OptimizerState<float>::init(cfg.optimizer, params.size());

  // per-class training pools (sample level; merged mode doubles the keys)
  const std::vector<SampleKey> pool0 = pair_keys(plan.train, cls0);
  const std::vector<SampleKey> pool1 = pair_keys(plan.train, cls1);
  const std::vector<SampleKey>* pools[2] = {&pool0, &pool1};

  // validation split and draw state, refreshed every resplit_period
  EvalSet val_set;
  std::vector<std::size_t> fit_idx[2];
  std::vector<std::size_t> draw_order[2];
  std::size_t draw_cursor[2] = {0, 0};
  std::uint64_t draw_round[2] = {0, 0};
  long current_epoch = -1;

  auto shuffle_fit = [&](int c, long epoch) {
    draw_order[c] = fit_idx[c];
    Rng rng = Rng::keyed(seeds.draw, static_cast<std::uint64_t>(c),
                         static_cast<std::uint64_t>(epoch), draw_round[c]);
    for (std::size_t i = draw_order[c].size(); i-- > 1;) {
      const auto j =
          static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)));
      std::swap(draw_order[c][i], draw_order[c][j]);
    }
    draw_cursor[c] = 0;
  };

  auto resplit = [&](long epoch) {
    current_epoch = epoch;
    const auto split = make_validation_split(
        {{cls0, pools[0]->size()}, {cls1, pools[1]->size()}}, cfg.validation_fraction,
        cfg.seed, epoch);
    std::vector<SampleKey> val_keys;
    const Diagnosis classes[2] = {cls0, cls1};
    for (int c = 0; c < 2; ++c) {
      fit_idx[c] = split.fit.at(classes[c]);
      for (auto i : split.val.at(classes[c])) val_keys.push_back((*pools[c])[i]);
      draw_round[c] = 0;
      shuffle_fit(c, epoch);
    }
    val_set = materialize_set(mat, val_keys, label_of);
  };

  auto draw_sample = [&](int c) {
    if (draw_cursor[c] == draw_order[c].size()) {
      ++draw_round[c];
      shuffle_fit(c, current_epoch);
    }
    return (*pools[c])[draw_order[c][draw_cursor[c]++]];
  };

  RunResult result;
  double last_train_loss = 0.0;

  // series per set and metric for the top-mean reports
  const char* set_names[4] = {"validation", "test0", "test1", "test2"};
  MetricSeries acc_series[4], sen_series[4], spc_series[4];
  ConfusionCounts last_conf[4];

  auto evaluate_all = [&](long iteration) {
    net.scatter_params(params);
    double accs[4];
    const EvalSet* sets[4] = {&val_set, &test_sets[0], &test_sets[1], &test_sets[2]};
    for (int s = 0; s < 4; ++s) {
      const auto preds = predict_set(net, *sets[s], cfg.threads);
      const auto conf = confusion(preds, sets[s]->labels, positive_label);
      const auto m = acc_sen_spc(conf);
      accs[s] = m.acc.value_or(0.0);
      acc_series[s].push_back({iteration, accs[s]});
      if (m.sen) sen_series[s].push_back({iteration, *m.sen});
      if (m.spc) spc_series[s].push_back({iteration, *m.spc});
      last_conf[s] = conf;
    }
    result.records.push_back(EvalRecord{iteration, lr_at(cfg.optimizer, iteration),
                                        last_train_loss, accs[0], accs[1], accs[2],
                                        accs[3]});
  };

  resplit(0);

  // iteration-0 probe: inference-phase loss over one class-balanced batch
  {
    Rng probe_rng(seeds.probe);
    double loss = 0.0;
    const std::size_t n0 = (cfg.q + 1) / 2, n1 = cfg.q / 2;
    for (std::size_t i = 0; i < cfg.q; ++i) {
      const int c = i < n0 ? 0 : 1;
      const auto& keys = *pools[c];
      const auto& key = keys[fit_idx[c][static_cast<std::size_t>(
          probe_rng.uniform_int(0, static_cast<std::int64_t>(fit_idx[c].size()) - 1))]];
      auto inputs = mat(key);
      auto probs = net.forward(inputs, Phase::kInfer);
      const std::size_t label = label_of.at(to_string(key.ref->diagnosis));
      for (std::size_t k = 0; k < probs.size(); ++k) {
        const double d = probs[k] - (k == label ? 1.0 : 0.0);
        loss += 0.5 * d * d;
      }
      (void)n1;
    }
    last_train_loss = loss / static_cast<double>(cfg.q);
  }
  evaluate_all(0);

  for (long t = 0; t < cfg.iterations; ++t) {
    if (t % cfg.resplit_period == 0 && t / cfg.resplit_period != current_epoch)
      resplit(t / cfg.resplit_period);

    // class-balanced draw: ceil(q/2) from the pair's first class, interleaved
    std::vector<SampleKey> batch_keys;
    batch_keys.reserve(cfg.q);
    const std::size_t n0 = (cfg.q + 1) / 2;
    for (std::size_t i = 0; i < cfg.q; ++i) {
      const int c = (i % 2 == 0 && i / 2 < n0) ? 0 : 1;
      batch_keys.push_back(draw_sample(c));
    }

    // mini-group sizes: memory-sized chunks of the q samples; a trailing
    // group of one cannot be batch-normalized, so it joins the final group
    std::vector<std::size_t> group_sizes;
    for (std::size_t left = cfg.q; left > 0;) {
      std::size_t count = std::min(cfg.mini_group_size, left);
      if (left - count == 1) ++count;
      group_sizes.push_back(count);
      left -= count;
    }

    auto grad_eval = [&](const std::vector<float>& lookahead) {
      net.scatter_params(lookahead);
      MiniGroupAccumulator<float> acc(cfg.q, params.size());
      double loss_sum = 0.0;
      std::size_t g0 = 0;
      for (std::size_t group_index = 0; group_index < group_sizes.size();
           ++group_index) {
        const std::size_t count = group_sizes[group_index];
        std::vector<LabeledSample<float>> batch;
        batch.reserve(count);
        for (std::size_t i = 0; i < count; ++i) {
          LabeledSample<float> sample;
          sample.inputs = mat(batch_keys[g0 + i]);
          sample.one_hot = Tensor({2});
          sample.one_hot[label_of.at(to_string(batch_keys[g0 + i].ref->diagnosis))] =
              1.0f;
          batch.push_back(std::move(sample));
        }
        Rng drop = Rng::keyed(seeds.dropout, static_cast<std::uint64_t>(t), group_index);
        auto [group_loss, group_grad] = net.loss_and_grad(batch, drop);
        for (auto& g : group_grad) g *= static_cast<float>(count);
        acc.add(group_grad, count);
        loss_sum += group_loss * static_cast<double>(count);
        g0 += count;
      }
      last_train_loss = loss_sum / static_cast<double>(cfg.q);
      return acc.release();
    };
    nesterov_step(params, opt, grad_eval);

    if ((t + 1) % cfg.eval_period == 0) evaluate_all(t + 1);
  }

  net.scatter_params(params);
  result.final_params = params;
  result.final_running_stats = net.gather_running_stats();
  result.built_network = netcfg;

  // top-mean reports; the window is top_mean_window_iters of training, i.e.
  // top_mean_window_iters / eval_period series entries
  const std::size_t window_entries = std::max<std::size_t>(
      1, static_cast<std::size_t>(cfg.top_mean_window_iters / cfg.eval_period));
  const std::size_t set_sizes[4] = {val_set.labels.size(), test_sets[0].labels.size(),
                                    test_sets[1].labels.size(),
                                    test_sets[2].labels.size()};
  for (int s = 0; s < 4; ++s) {
    SetReports rep;
    rep.n_samples = set_sizes[s];
    rep.final_confusion = last_conf[s];
    auto attach = [&](const MetricSeries& series) -> std::optional<TopMeanReport> {
      if (series.size() < window_entries) return std::nullopt;
      TopMeanReport t = top_mean(series, window_entries);
      attach_ci(t, set_sizes[s], cfg.ci_method);
      return t;
    };
    rep.acc = attach(acc_series[s]);
    rep.sen = attach(sen_series[s]);
    rep.spc = attach(spc_series[s]);
    result.reports[set_names[s]] = std::move(rep);
  }

  json summary;
  summary["config"] = cfg.to_json();
  summary["dataset"] = {{"manifest_seed", manifest.seed},
                        {"k", manifest.k},
                        {"classes", {to_string(cls0), to_string(cls1)}},
                        {"train_pool_per_class",
                         {pools[0]->size(), pools[1]->size()}}};
  json reports = json::object();
  for (const auto& [name, rep] : result.reports) reports[name] = report_json(rep);
  summary["reports"] = std::move(reports);
  summary["evaluations"] = result.records.size();
  result.summary = std::move(summary);
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return result;
}

// ---------------------------------------------------------------------------
// evaluate / sweep / serialization
// ---------------------------------------------------------------------------

EvaluateResult evaluate_network(FusionNetwork<float>& net, const RunConfig& cfg,
                                const DatasetManifest& manifest, VolumeStore& store) {
  manifest.validate();
  const auto [cls0, cls1] = cfg.pair_classes();
  const bool merged = cfg.input_mode == InputMode::kSmriLR_DtiLR;
  const std::map<std::string, std::size_t> label_of{{to_string(cls0), 0},
                                                    {to_string(cls1), 1}};
  const std::size_t positive_label = cfg.resolved_positive() == cls0 ? 0 : 1;
  auto pipelines = pipelines_for(cfg.input_mode);
  Materializer mat{&manifest, &store, &pipelines, net.config().roi_size};
  const auto tests = build_test_sets(manifest.test_subjects, manifest.seed);

  EvaluateResult result;
  const std::map<Diagnosis, std::vector<SampleRef>>* src[3] = {&tests.test0,
                                                               &tests.test1,
                                                               &tests.test2};
  const char* names[3] = {"test0", "test1", "test2"};
  json jreports = json::object();
  for (int i = 0; i < 3; ++i) {
    auto keys = expand_keys(src[i]->at(cls0), merged);
    auto k1 = expand_keys(src[i]->at(cls1), merged);
    keys.insert(keys.end(), k1.begin(), k1.end());
    const auto set = materialize_set(mat, keys, label_of);
    const auto preds = predict_set(net, set, cfg.threads);
    const auto conf = confusion(preds, set.labels, positive_label);
    const auto m = acc_sen_spc(conf);

    SetReports rep;
    rep.n_samples = set.labels.size();
    rep.final_confusion = conf;
    auto single = [&](std::optional<double> v) -> std::optional<TopMeanReport> {
      if (!v) return std::nullopt;
      TopMeanReport t;
      t.value = *v;
      t.variance = 0.0;
      t.window_start = 0;
      t.window_length = 1;
      attach_ci(t, set.labels.size(), cfg.ci_method);
      return t;
    };
    rep.acc = single(m.acc);
    rep.sen = single(m.sen);
    rep.spc = single(m.spc);
    jreports[names[i]] = report_json(rep);
    result.reports[names[i]] = std::move(rep);
  }
  result.summary = json{{"classifier_pair", cfg.classifier_pair},
                        {"input_mode", to_string(cfg.input_mode)},
                        {"ci_method", to_string(cfg.ci_method)},
                        {"reports", std::move(jreports)}};
  return result;
}

void write_runlog_csv(const std::filesystem::path& path,
                      const std::vector<EvalRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(msg("cannot write '", path.string(), "'"));
  out << "iteration,lr,train_loss,val_acc,test0_acc,test1_acc,test2_acc\n";
  char line[256];
  for (const auto& r : records) {
    std::snprintf(line, sizeof(line), "%ld,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                  r.iteration, r.lr, r.train_loss, r.val_acc, r.test0_acc, r.test1_acc,
                  r.test2_acc);
    out << line;
  }
}

std::vector<EvalRecord> read_runlog_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(msg("cannot open '", path.string(), "'"));
  std::string line;
  if (!std::getline(in, line))
    throw IoError(msg("'", path.string(), "': empty file"));
  std::vector<EvalRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    EvalRecord r{};
    if (std::sscanf(line.c_str(), "%ld,%lf,%lf,%lf,%lf,%lf,%lf", &r.iteration, &r.lr,
                    &r.train_loss, &r.val_acc, &r.test0_acc, &r.test1_acc,
                    &r.test2_acc) != 7)
      throw IoError(msg("'", path.string(), "' line ", line_no, ": malformed record"));
    records.push_back(r);
  }
  return records;
}

std::vector<SweepRow> sweep(std::vector<RunConfig> grid,
                            const DatasetManifest& manifest, VolumeStore& store) {
  std::vector<SweepRow> rows;
  rows.reserve(grid.size());
  for (auto& cfg : grid) {
    SweepRow row;
    row.config = cfg;
    try {
      auto result = train_run(cfg, manifest, store);
      row.reports = std::move(result.reports);
      row.ok = true;
    } catch (const Error& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_sweep_csv(const std::filesystem::path& path,
                     const std::vector<SweepRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(msg("cannot write '", path.string(), "'"));
  out << "classifier_pair,input_mode,roi_size,configuration,status";
  const char* sets[3] = {"test0", "test1", "test2"};
  const char* metrics[3] = {"acc", "sen", "spc"};
  for (const auto* m : metrics)
    for (const auto* s : sets) out << "," << m << "_" << s << "," << m << "_" << s << "_half";
  out << "\n";
  char buf[64];
  for (const auto& row : rows) {
    out << row.config.classifier_pair << "," << to_string(row.config.input_mode) << ","
        << row.config.network.roi_size << "," << row.config.network.name << ","
        << (row.ok ? "ok" : row.error);
    for (int m = 0; m < 3; ++m)
      for (int s = 0; s < 3; ++s) {
        const std::optional<TopMeanReport>* rep = nullptr;
        if (row.ok) {
          const auto& r = row.reports.at(sets[s]);
          rep = m == 0 ? &r.acc : m == 1 ? &r.sen : &r.spc;
        }
        if (rep && rep->has_value()) {
          std::snprintf(buf, sizeof(buf), ",%.10g,%.10g", (*rep)->value,
                        ((*rep)->ci_high - (*rep)->ci_low) / 2.0);
          out << buf;
        } else {
          out << ",,";
        }
      }
    out << "\n";
  }
}

}  // namespace hippofuse
