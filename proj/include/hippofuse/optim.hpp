#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "hippofuse/errors.hpp"

namespace hippofuse {

enum class LrSchedule {
  kStaircase,  // mu0 * lambda^floor(t/t0): one update every t0 iterations
  kLiteral,    // the compounding recurrence mu_{t+1} = mu_t * lambda^(t div t0)
};

struct OptimizerConfig {
  double momentum = 0.93;
  double mu0 = 0.01;
  double lambda = 0.8;
  long t0 = 100;
  LrSchedule schedule = LrSchedule::kStaircase;

  void validate() const {
    if (momentum < 0.0 || momentum >= 1.0)
      throw ConfigError(msg("momentum ", momentum, " outside [0,1)"));
    if (lambda <= 0.0 || lambda > 1.0)
      throw ConfigError(msg("decay rate ", lambda, " outside (0,1]"));
    if (t0 < 1) throw ConfigError(msg("decay step ", t0, " must be >= 1"));
    if (mu0 <= 0.0) throw ConfigError("initial learning rate must be positive");
  }
};

inline double lr_at(const OptimizerConfig& cfg, long t) {
  if (t < 0) throw ConfigError(msg("lr_at: negative iteration ", t));
  const long m = t / cfg.t0;
  if (cfg.schedule == LrSchedule::kStaircase)
    return cfg.mu0 * std::pow(cfg.lambda, static_cast<double>(m));
  // literal recurrence: exponent accumulates sum_{i<t} floor(i/t0)
  const double e = static_cast<double>(cfg.t0) * m * (m - 1) / 2.0 +
                   static_cast<double>(t - m * cfg.t0) * m;
  return cfg.mu0 * std::pow(cfg.lambda, e);
}

template <typename T>
struct OptimizerState {
  OptimizerConfig config;
  std::vector<T> velocity;  // v0 = 0
  long t = 0;

  static OptimizerState init(const OptimizerConfig& cfg, std::size_t param_count) {
    cfg.validate();
    return OptimizerState{cfg, std::vector<T>(param_count, T(0)), 0};
  }
};

// One Nesterov update: the gradient is evaluated at the lookahead point
// w_t + m*v_t, then v_{t+1} = m*v_t - mu_t*grad and w_{t+1} = w_t + v_{t+1}.
template <typename T, typename GradEval>
void nesterov_step(std::vector<T>& params, OptimizerState<T>& state,
                   GradEval&& grad_eval) {
  if (params.size() != state.velocity.size())
    throw ShapeError(msg("nesterov_step: ", params.size(), " parameters vs velocity ",
                         state.velocity.size()));
  const T m = static_cast<T>(state.config.momentum);
  std::vector<T> lookahead(params.size());
  for (std::size_t i = 0; i < params.size(); ++i)
    lookahead[i] = params[i] + m * state.velocity[i];
  const std::vector<T> grad = grad_eval(lookahead);
  if (grad.size() != params.size())
    throw ShapeError(msg("gradient length ", grad.size(), " != parameter length ",
                         params.size()));
  const T mu = static_cast<T>(lr_at(state.config, state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.velocity[i] = m * state.velocity[i] - mu * grad[i];
    params[i] += state.velocity[i];
  }
  ++state.t;
}

// Collects per-sample gradient sums until exactly q samples have been seen,
// then releases the average. Feeding a whole mini-group at once (sum of its
// per-sample gradients plus its size) is equivalent to feeding sample by
// sample.
template <typename T>
class MiniGroupAccumulator {
 public:
  MiniGroupAccumulator(std::size_t target_count, std::size_t param_len)
      : sum_(param_len, T(0)), target_(target_count) {
    if (target_count < 1) throw ConfigError("mini-group target count must be >= 1");
  }

  void add(std::span<const T> grad_sum, std::size_t sample_count = 1) {
    if (grad_sum.size() != sum_.size())
      throw ShapeError(msg("accumulate: gradient length ", grad_sum.size(),
                           " != ", sum_.size()));
    if (seen_ + sample_count > target_)
      throw DataError(msg("accumulate: ", seen_, "+", sample_count,
                          " samples overfill target ", target_));
    for (std::size_t i = 0; i < sum_.size(); ++i) sum_[i] += grad_sum[i];
    seen_ += sample_count;
  }

  bool full() const { return seen_ == target_; }
  std::size_t samples_seen() const { return seen_; }
  std::size_t target_count() const { return target_; }

  // Average over the q samples; resets the accumulator.
  std::vector<T> release() {
    if (!full())
      throw DataError(msg("release before target: ", seen_, " of ", target_));
    std::vector<T> avg(sum_.size());
    const T inv = T(1) / static_cast<T>(target_);
    for (std::size_t i = 0; i < sum_.size(); ++i) avg[i] = sum_[i] * inv;
    std::fill(sum_.begin(), sum_.end(), T(0));
    seen_ = 0;
    return avg;
  }

 private:
  std::vector<T> sum_;
  std::size_t seen_ = 0;
  std::size_t target_;
};

}  // namespace hippofuse
