#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hippofuse/errors.hpp"

namespace hippofuse {

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t total() const { return tp + fp + tn + fn; }
};

// Standard counts with a configurable positive class; labels/predictions are
// class indices over {0, 1}.
ConfusionCounts confusion(std::span<const std::size_t> predictions,
                          std::span<const std::size_t> labels,
                          std::size_t positive_class);

struct AccSenSpc {
  std::optional<double> acc, sen, spc;  // empty = undefined (zero denominator)
};

AccSenSpc acc_sen_spc(const ConfusionCounts& c);

struct MetricPoint {
  long iteration;
  double value;
};
using MetricSeries = std::vector<MetricPoint>;

struct TopMeanReport {
  double value = 0.0;
  double variance = 0.0;       // population variance over the winning window
  long window_start = 0;       // iteration index of the window's first entry
  std::size_t window_length = 0;  // entries in the window
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::string ci_method;       // "wald" (paper form) or "wilson"
  std::size_t n_samples = 0;   // sample count behind each series value
};

// Best mean over sliding windows of s entries (stride 1, earliest wins).
// Confidence bounds are attached separately via attach_ci.
TopMeanReport top_mean(const MetricSeries& series, std::size_t s);

enum class CiMethod { kWaldPaper, kWilsonScore };

inline const char* to_string(CiMethod m) {
  return m == CiMethod::kWaldPaper ? "wald" : "wilson";
}

// The normal-approximation interval val +- theta*sqrt(val(1-val)/n), clamped
// to [0,1]. This is the formula the evaluation protocol prescribes.
std::pair<double, double> wilson_ci(double val, std::size_t n, double theta = 1.96);

// The actual Wilson score interval, available behind a flag.
std::pair<double, double> wilson_score_ci(double val, std::size_t n,
                                          double theta = 1.96);

void attach_ci(TopMeanReport& report, std::size_t n, CiMethod method,
               double theta = 1.96);

}  // namespace hippofuse
