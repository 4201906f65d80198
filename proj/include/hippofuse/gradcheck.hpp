#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "hippofuse/model.hpp"

namespace hippofuse {

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

// Central finite differences of a scalar functional against an analytic
// gradient; returns the worst per-component relative error. The functional
// only exercises forward passes, so this check is independent of every
// backward implementation.
//
// Components whose FD window straddles a relu/maxpool kink are excluded: the
// second central difference is O(h^2) where the loss is smooth but O(h) times
// the slope jump across a kink, so a large second difference marks exactly
// the points where FD is not a valid derivative estimate. A wrong backward
// pass keeps the second difference small and is still caught.
template <typename Loss>
double fd_max_rel_error(std::vector<double>& x, Loss&& loss,
                        std::span<const double> analytic, double h = 1e-5) {
  if (x.size() != analytic.size())
    throw ShapeError(msg("fd check: ", x.size(), " variables vs ", analytic.size(),
                         " gradient entries"));
  const double l0 = loss();
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double lp = loss();
    x[i] = keep - h;
    const double lm = loss();
    x[i] = keep;
    const double fd = (lp - lm) / (2.0 * h);
    const double err = rel_err(fd, analytic[i]);
    if (err > 1e-5) {
      const double second = std::abs(lp + lm - 2.0 * l0);
      if (second > 0.25 * h * std::abs(fd - analytic[i])) continue;  // kink
    }
    worst = std::max(worst, err);
  }
  return worst;
}

namespace gradcheck {

inline TensorD random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0,
                             double hi = 1.0) {
  TensorD t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// <c, out>: a fixed random linear functional turns any layer into a scalar loss.
inline double weighted_sum(const TensorD& out, const TensorD& c) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * c[i];
  return s;
}

struct LayerReport {
  std::string layer;
  double max_rel_err;
};

inline double check_conv3d(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t ci = 1 + rng.uniform_int(0, 3), co = 1 + rng.uniform_int(0, 3);
  const std::size_t k = 1 + rng.uniform_int(0, 3), d = 3 + rng.uniform_int(0, 3);
  TensorD x = random_tensor({ci, d, d, d}, rng);
  ConvParams<double> p{random_tensor({co, ci, k, k, k}, rng),
                       random_tensor({co}, rng)};
  TensorD c = random_tensor({co, d, d, d}, rng);

  auto g = conv3d_backward(x, p, c);
  double worst = 0.0;
  auto loss_x = [&] { return weighted_sum(conv3d_forward(x, p), c); };
  worst = std::max(worst, fd_max_rel_error(x.values(), loss_x, g.input.values()));
  auto loss_k = [&] { return weighted_sum(conv3d_forward(x, p), c); };
  worst = std::max(worst,
                   fd_max_rel_error(p.kernels.values(), loss_k, g.kernels.values()));
  worst = std::max(worst, fd_max_rel_error(p.bias.values(), loss_k, g.bias.values()));
  return worst;
}

inline double check_batchnorm(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t ch = 1 + rng.uniform_int(0, 3), d = 2 + rng.uniform_int(0, 2);
  const std::size_t n = 2 + rng.uniform_int(0, 2);
  std::vector<TensorD> batch;
  for (std::size_t s = 0; s < n; ++s) batch.push_back(random_tensor({ch, d, d, d}, rng));
  BatchNormState<double> state = BatchNormState<double>::init(ch);
  for (std::size_t c = 0; c < ch; ++c) {
    state.gamma[c] = rng.uniform(0.5, 1.5);
    state.beta[c] = rng.uniform(-0.5, 0.5);
  }
  std::vector<TensorD> cs;
  for (std::size_t s = 0; s < n; ++s) cs.push_back(random_tensor({ch, d, d, d}, rng));

  auto loss = [&] {
    BatchNormState<double> st = state;  // keep running stats untouched
    auto r = batchnorm_forward(batch, st, Phase::kTrain);
    double total = 0.0;
    for (std::size_t s = 0; s < n; ++s) total += weighted_sum(r.outputs[s], cs[s]);
    return total;
  };
  BatchNormState<double> st = state;
  auto fwd = batchnorm_forward(batch, st, Phase::kTrain);
  auto g = batchnorm_backward(fwd.cache, state, cs);

  double worst = 0.0;
  for (std::size_t s = 0; s < n; ++s)
    worst = std::max(worst,
                     fd_max_rel_error(batch[s].values(), loss, g.inputs[s].values()));
  worst = std::max(worst, fd_max_rel_error(state.gamma, loss, g.gamma));
  worst = std::max(worst, fd_max_rel_error(state.beta, loss, g.beta));
  return worst;
}

inline double check_relu(std::uint64_t seed) {
  Rng rng(seed);
  TensorD x = random_tensor({3, 4, 4, 4}, rng);
  TensorD c = random_tensor(x.shape(), rng);
  auto loss = [&] { return weighted_sum(relu_forward(x), c); };
  TensorD g = relu_backward(x, c);
  return fd_max_rel_error(x.values(), loss, g.values());
}

inline double check_maxpool(std::uint64_t seed) {
  Rng rng(seed);
  TensorD x = random_tensor({2, 6, 6, 6}, rng);
  TensorD c = random_tensor({2, 3, 3, 3}, rng);
  auto loss = [&] { return weighted_sum(maxpool3d_forward(x).output, c); };
  auto fwd = maxpool3d_forward(x);
  TensorD g = maxpool3d_backward(fwd.cache, c);
  return fd_max_rel_error(x.values(), loss, g.values());
}

inline double check_fc(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t n = 8, p = 4;
  TensorD x = random_tensor({n}, rng);
  TensorD w = random_tensor({p, n}, rng);
  TensorD b = random_tensor({p}, rng);
  TensorD c = random_tensor({p}, rng);
  auto loss = [&] { return weighted_sum(fc_forward(x, w, b), c); };
  auto g = fc_backward(x, w, c);
  double worst = fd_max_rel_error(x.values(), loss, g.input.values());
  worst = std::max(worst, fd_max_rel_error(w.values(), loss, g.weights.values()));
  worst = std::max(worst, fd_max_rel_error(b.values(), loss, g.bias.values()));
  return worst;
}

inline double check_dropout(std::uint64_t seed) {
  Rng rng(seed);
  TensorD x = random_tensor({2, 4, 4, 4}, rng);
  TensorD c = random_tensor(x.shape(), rng);
  const double rate = 0.4;
  auto loss = [&] {
    Rng stream = Rng::keyed(seed, 7);  // same mask on every evaluation
    return weighted_sum(dropout_forward(x, rate, Phase::kTrain, stream).output, c);
  };
  Rng stream = Rng::keyed(seed, 7);
  auto fwd = dropout_forward(x, rate, Phase::kTrain, stream);
  TensorD g = dropout_backward(fwd.mask, rate, c);
  return fd_max_rel_error(x.values(), loss, g.values());
}

inline double check_softmax(std::uint64_t seed) {
  Rng rng(seed);
  TensorD z = random_tensor({4}, rng, -2.0, 2.0);
  TensorD c = random_tensor({4}, rng);
  auto loss = [&] { return weighted_sum(softmax(z), c); };
  TensorD g = softmax_backward(softmax(z), c);
  return fd_max_rel_error(z.values(), loss, g.values());
}

// Tiny two-pipeline fusion network: ROI 8, two conv layers, well under 5,000
// parameters, checked end to end through loss_and_grad.
inline NetworkConfig tiny_config() {
  NetworkConfig cfg;
  cfg.name = "custom";
  cfg.conv_kernel_sizes = {3, 3};
  cfg.conv_filter_counts = {2, 3};
  cfg.fc_units = {8};
  cfg.roi_size = 8;
  cfg.dropout_rate = 0.3;
  cfg.input_pipelines = pipelines_for(InputMode::kSmriL_SmriR);
  return cfg;
}

inline double check_end_to_end(std::uint64_t seed) {
  auto net = FusionNetwork<double>::build(tiny_config(), seed);
  Rng rng(mix64(seed));
  std::vector<LabeledSample<double>> batch;
  for (std::size_t s = 0; s < 2; ++s) {
    LabeledSample<double> sample;
    sample.inputs.push_back(random_tensor({1, 8, 8, 8}, rng));
    sample.inputs.push_back(random_tensor({1, 8, 8, 8}, rng));
    sample.one_hot = TensorD({2});
    sample.one_hot[s % 2] = 1.0;
    batch.push_back(std::move(sample));
  }

  std::vector<double> params = net.gather_params();
  Rng drop = Rng::keyed(seed, 11);
  auto [loss0, analytic] = net.loss_and_grad(batch, drop);
  (void)loss0;
  auto loss = [&] {
    net.scatter_params(params);
    Rng stream = Rng::keyed(seed, 11);
    return net.loss_and_grad(batch, stream).first;
  };
  const double worst = fd_max_rel_error(params, loss, analytic);
  net.scatter_params(params);
  return worst;
}

// The full suite, as printed by the gradcheck command.
inline std::vector<LayerReport> run_suite(std::uint64_t seed) {
  return {
      {"conv3d", check_conv3d(seed)},
      {"batchnorm", check_batchnorm(seed)},
      {"relu", check_relu(seed)},
      {"maxpool3d", check_maxpool(seed)},
      {"fully_connected", check_fc(seed)},
      {"dropout", check_dropout(seed)},
      {"softmax", check_softmax(seed)},
      {"end_to_end", check_end_to_end(seed)},
  };
}

}  // namespace gradcheck
}  // namespace hippofuse
