#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hippofuse/config.hpp"
#include "hippofuse/data.hpp"
#include "hippofuse/metrics.hpp"
#include "hippofuse/model.hpp"

namespace hippofuse {

struct RunConfig {
  std::string classifier_pair = "AD-NC";  // AD-NC | AD-MCI | MCI-NC
  InputMode input_mode = InputMode::kSmriL_SmriR;
  NetworkConfig network;     // input_pipelines are overwritten from input_mode
  OptimizerConfig optimizer;
  long iterations = 1000;
  std::size_t q = 90;               // samples consumed per optimizer iteration
  std::size_t mini_group_size = 15;
  long resplit_period = 100;        // iterations between fresh 90/10 splits
  long eval_period = 10;            // iterations between curve evaluations
  long top_mean_window_iters = 100; // window length in iterations
  double validation_fraction = 0.1;
  int threads = 1;
  std::uint64_t seed = 1;
  CiMethod ci_method = CiMethod::kWaldPaper;
  std::optional<Diagnosis> positive_class;  // default: the disease-severe class

  std::pair<Diagnosis, Diagnosis> pair_classes() const;
  Diagnosis resolved_positive() const;
  void validate() const;
  std::vector<std::string> warnings() const;  // ROI/architecture pairing advice

  nlohmann::json to_json() const;  // config echo (includes expanded sub-seeds)
  static RunConfig from_json(const nlohmann::json& j);
};

struct EvalRecord {
  long iteration;
  double lr;
  double train_loss;
  double val_acc, test0_acc, test1_acc, test2_acc;
};

struct SetReports {
  std::optional<TopMeanReport> acc, sen, spc;
  std::size_t n_samples = 0;
  ConfusionCounts final_confusion;  // at the last evaluation
};

struct RunResult {
  std::vector<EvalRecord> records;
  std::map<std::string, SetReports> reports;  // validation, test0, test1, test2
  nlohmann::json summary;                     // deterministic; no timings
  double wall_seconds = 0.0;                  // reported separately
  std::vector<float> final_params;
  NetworkConfig built_network;                // with pipelines resolved
  std::vector<float> final_running_stats;
};

// Runs the full training procedure: per iteration draws q class-balanced
// samples from the current fit split, accumulates mini-group gradients into
// one Nesterov update at the scheduled learning rate, re-randomizes the 90/10
// split every resplit_period iterations and appends the five evaluation
// curves every eval_period iterations.
RunResult train_run(const RunConfig& cfg, const DatasetManifest& manifest,
                    VolumeStore& store);

// Inference-only evaluation of a trained network on the three test sets.
struct EvaluateResult {
  std::map<std::string, SetReports> reports;  // test0, test1, test2
  nlohmann::json summary;
};
EvaluateResult evaluate_network(FusionNetwork<float>& net, const RunConfig& cfg,
                                const DatasetManifest& manifest, VolumeStore& store);

void write_runlog_csv(const std::filesystem::path& path,
                      const std::vector<EvalRecord>& records);
std::vector<EvalRecord> read_runlog_csv(const std::filesystem::path& path);

struct SweepRow {
  RunConfig config;
  bool ok = false;
  std::string error;
  std::map<std::string, SetReports> reports;
};

// Executes every run in the grid; individual failures are recorded in the
// row, not fatal. Each run's seed is derived from its descriptor, so results
// do not depend on execution order.
std::vector<SweepRow> sweep(std::vector<RunConfig> grid,
                            const DatasetManifest& manifest, VolumeStore& store);

void write_sweep_csv(const std::filesystem::path& path,
                     const std::vector<SweepRow>& rows);

}  // namespace hippofuse
