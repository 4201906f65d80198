#include "hippofuse/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace hippofuse {

ConfusionCounts confusion(std::span<const std::size_t> predictions,
                          std::span<const std::size_t> labels,
                          std::size_t positive_class) {
  if (predictions.size() != labels.size())
    throw DataError(msg("confusion: ", predictions.size(), " predictions vs ",
                        labels.size(), " labels"));
  ConfusionCounts c;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const bool pred_pos = predictions[i] == positive_class;
    const bool label_pos = labels[i] == positive_class;
    if (pred_pos && label_pos)
      ++c.tp;
    else if (pred_pos && !label_pos)
      ++c.fp;
    else if (!pred_pos && label_pos)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

AccSenSpc acc_sen_spc(const ConfusionCounts& c) {
  AccSenSpc m;
  if (c.total() > 0)
    m.acc = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  if (c.tp + c.fn > 0)
    m.sen = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  if (c.tn + c.fp > 0)
    m.spc = static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
  return m;
}

TopMeanReport top_mean(const MetricSeries& series, std::size_t s) {
  if (s < 1) throw DataError("top_mean: window length must be >= 1");
  if (series.size() < s)
    throw DataError(msg("top_mean: series has ", series.size(),
                        " entries, window needs ", s));
  for (std::size_t i = 1; i < series.size(); ++i)
    if (series[i].iteration <= series[i - 1].iteration)
      throw DataError("top_mean: iteration indices must be strictly increasing");

  // Window means are computed by direct summation (not a running sum) so the
  // result matches window-by-window enumeration exactly.
  std::size_t best_start = 0;
  double best_mean = -1.0;
  for (std::size_t start = 0; start + s <= series.size(); ++start) {
    double sum = 0.0;
    for (std::size_t i = 0; i < s; ++i) sum += series[start + i].value;
    const double mean = sum / static_cast<double>(s);
    if (mean > best_mean) {
      best_mean = mean;
      best_start = start;
    }
  }
  double var = 0.0;
  for (std::size_t i = 0; i < s; ++i) {
    const double d = series[best_start + i].value - best_mean;
    var += d * d;
  }
  TopMeanReport r;
  r.value = best_mean;
  r.variance = var / static_cast<double>(s);
  r.window_start = series[best_start].iteration;
  r.window_length = s;
  return r;
}

std::pair<double, double> wilson_ci(double val, std::size_t n, double theta) {
  if (n < 1) throw DataError("wilson_ci: n must be >= 1");
  const double h = theta * std::sqrt(val * (1.0 - val) / static_cast<double>(n));
  return {std::max(0.0, val - h), std::min(1.0, val + h)};
}

std::pair<double, double> wilson_score_ci(double val, std::size_t n, double theta) {
  if (n < 1) throw DataError("wilson_score_ci: n must be >= 1");
  const double t2n = theta * theta / static_cast<double>(n);
  const double denom = 1.0 + t2n;
  const double center = (val + t2n / 2.0) / denom;
  const double half =
      theta *
      std::sqrt(val * (1.0 - val) / static_cast<double>(n) + t2n / (4.0 * n)) / denom;
  return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

void attach_ci(TopMeanReport& report, std::size_t n, CiMethod method, double theta) {
  const auto [lo, hi] = method == CiMethod::kWaldPaper
                            ? wilson_ci(report.value, n, theta)
                            : wilson_score_ci(report.value, n, theta);
  report.ci_low = lo;
  report.ci_high = hi;
  report.ci_method = to_string(method);
  report.n_samples = n;
}

}  // namespace hippofuse
