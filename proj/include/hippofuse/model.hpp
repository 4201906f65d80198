#pragma once

#include <cctype>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hippofuse/layers.hpp"
#include "hippofuse/rng.hpp"
#include "hippofuse/tensor.hpp"

namespace hippofuse {

enum class Modality { kSmri, kMdDti };
enum class RoiSel { kLeftHippocampus, kRightHippocampus, kMergedLR };

inline const char* to_string(Modality m) {
  return m == Modality::kSmri ? "sMRI" : "MD-DTI";
}
inline const char* to_string(RoiSel r) {
  switch (r) {
    case RoiSel::kLeftHippocampus: return "left_hippocampus";
    case RoiSel::kRightHippocampus: return "right_hippocampus";
    default: return "merged_LR";
  }
}

struct PipelineInput {
  Modality modality;
  RoiSel roi;
  bool operator==(const PipelineInput&) const = default;
};

// The four pipeline sets the engine supports.
enum class InputMode { kDtiL_DtiR, kSmriL_SmriR, kSmriDtiLR, kSmriLR_DtiLR };

inline std::vector<PipelineInput> pipelines_for(InputMode mode) {
  using M = Modality;
  using R = RoiSel;
  switch (mode) {
    case InputMode::kDtiL_DtiR:
      return {{M::kMdDti, R::kLeftHippocampus}, {M::kMdDti, R::kRightHippocampus}};
    case InputMode::kSmriL_SmriR:
      return {{M::kSmri, R::kLeftHippocampus}, {M::kSmri, R::kRightHippocampus}};
    case InputMode::kSmriDtiLR:
      return {{M::kSmri, R::kLeftHippocampus},
              {M::kSmri, R::kRightHippocampus},
              {M::kMdDti, R::kLeftHippocampus},
              {M::kMdDti, R::kRightHippocampus}};
    case InputMode::kSmriLR_DtiLR:
      return {{M::kSmri, R::kMergedLR}, {M::kMdDti, R::kMergedLR}};
  }
  throw ConfigError("unknown input mode");
}

inline const char* to_string(InputMode mode) {
  switch (mode) {
    case InputMode::kDtiL_DtiR: return "DTI_L+DTI_R";
    case InputMode::kSmriL_SmriR: return "sMRI_L+sMRI_R";
    case InputMode::kSmriDtiLR: return "sMRI_L+sMRI_R+DTI_L+DTI_R";
    case InputMode::kSmriLR_DtiLR: return "sMRI_LR+DTI_LR";
  }
  return "?";
}

InputMode input_mode_from_string(std::string_view s);

struct NetworkConfig {
  std::string name = "C1";
  std::vector<std::size_t> conv_kernel_sizes{5, 4, 3, 3};
  std::vector<std::size_t> conv_filter_counts{16, 32, 64, 128};
  std::vector<std::size_t> fc_units{16, 8};
  double dropout_rate = 0.5;
  std::size_t roi_size = 28;
  std::vector<PipelineInput> input_pipelines = pipelines_for(InputMode::kSmriL_SmriR);
  std::size_t num_classes = 2;
  bool share_pipeline_weights = false;
  double bn_epsilon = 1e-5;
  double bn_momentum = 0.9;

  // C1..C4 per the compared-architectures table.
  static NetworkConfig preset(std::string_view name) {
    NetworkConfig c;
    c.name = std::string(name);
    if (name == "C1") {
      c.conv_kernel_sizes = {5, 4, 3, 3};
      c.conv_filter_counts = {16, 32, 64, 128};
      c.fc_units = {16, 8};
    } else if (name == "C2") {
      c.conv_kernel_sizes = {5, 4, 3, 3, 3};
      c.conv_filter_counts = {16, 32, 64, 128, 128};
      c.fc_units = {16, 8};
    } else if (name == "C3") {
      c.conv_kernel_sizes = {7, 6, 5, 4, 3};
      c.conv_filter_counts = {16, 32, 64, 128, 256};
      c.fc_units = {32, 8};
    } else if (name == "C4") {
      c.conv_kernel_sizes = {7, 6, 5, 4, 3, 3};
      c.conv_filter_counts = {16, 32, 64, 128, 256, 256};
      c.fc_units = {16};
    } else {
      throw ConfigError(msg("unknown network preset '", name, "'"));
    }
    return c;
  }

  void validate() const {
    if (conv_kernel_sizes.empty())
      throw ConfigError("network config has zero convolutional layers");
    if (conv_kernel_sizes.size() != conv_filter_counts.size())
      throw ConfigError(msg("kernel list length ", conv_kernel_sizes.size(),
                            " != filter list length ", conv_filter_counts.size()));
    for (std::size_t k : conv_kernel_sizes)
      if (k < 1) throw ConfigError("conv kernel size must be >= 1");
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
      throw ConfigError(msg("dropout rate ", dropout_rate, " outside [0,1)"));
    if (input_pipelines.empty()) throw ConfigError("no input pipelines configured");
  }
};

template <typename T>
struct FcLayer {
  TensorT<T> weights;  // [out, in]
  TensorT<T> bias;     // [out]
};

template <typename T>
struct ConvBlock {
  ConvParams<T> conv;
  BatchNormState<T> bn;
  bool pool = true;  // pooling is skipped once any spatial extent drops below 2
};

// Per-sample training inputs plus a one-hot label over num_classes.
template <typename T>
struct LabeledSample {
  std::vector<TensorT<T>> inputs;  // one [1,s,s,s] tensor per pipeline
  TensorT<T> one_hot;
};

// Siamese multi-pipeline network with late fusion: per-pipeline conv blocks
// (conv -> batchnorm -> relu -> pool), flattened outputs concatenated into an
// FC head finished by dropout and softmax.
template <typename T>
class FusionNetwork {
 public:
  static FusionNetwork build(const NetworkConfig& cfg, std::uint64_t init_seed);

  const NetworkConfig& config() const { return cfg_; }
  const std::vector<std::size_t>& spatial_ladder() const { return ladder_; }
  std::size_t flatten_length() const { return flatten_len_; }
  std::size_t head_input_length() const {
    return flatten_len_ * cfg_.input_pipelines.size();
  }
  std::size_t param_count() const;

  std::vector<T> gather_params() const;
  void scatter_params(std::span<const T> flat);
  std::vector<T> gather_running_stats() const;
  void scatter_running_stats(std::span<const T> flat);

  // Inference is deterministic; train phase needs a dropout stream and at
  // least two samples for batch normalization (use loss_and_grad for that).
  TensorT<T> forward(const std::vector<TensorT<T>>& inputs, Phase phase,
                     Rng* dropout_rng = nullptr);
  std::size_t predict(const std::vector<TensorT<T>>& inputs);

  // Mean Euclidean loss over the batch and its gradient in flat-parameter
  // order. Batch normalization runs in train phase over this batch.
  std::pair<double, std::vector<T>> loss_and_grad(
      const std::vector<LabeledSample<T>>& batch, Rng& dropout_rng);

  std::vector<std::vector<ConvBlock<T>>>& pipelines() { return pipelines_; }
  std::vector<FcLayer<T>>& head() { return head_; }

 private:
  void validate_sample_shapes(const std::vector<TensorT<T>>& inputs) const;
  std::size_t physical_pipelines() const {
    return cfg_.share_pipeline_weights ? 1 : cfg_.input_pipelines.size();
  }

  NetworkConfig cfg_;
  std::vector<std::vector<ConvBlock<T>>> pipelines_;  // one stack per pipeline
  std::vector<FcLayer<T>> head_;                      // hidden FCs + logits layer
  std::vector<std::size_t> ladder_;                   // extent after each block
  std::size_t flatten_len_ = 0;
};

// --------------------------------------------------------------------------
// implementation
// --------------------------------------------------------------------------

inline InputMode input_mode_from_string(std::string_view s) {
  std::string lower(s);
  for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (lower == "dti_l+dti_r") return InputMode::kDtiL_DtiR;
  if (lower == "smri_l+smri_r") return InputMode::kSmriL_SmriR;
  if (lower == "smri_l+smri_r+dti_l+dti_r") return InputMode::kSmriDtiLR;
  if (lower == "smri_lr+dti_lr") return InputMode::kSmriLR_DtiLR;
  throw ConfigError(msg("unknown input mode '", s, "'"));
}

template <typename T>
FusionNetwork<T> FusionNetwork<T>::build(const NetworkConfig& cfg,
                                         std::uint64_t init_seed) {
  cfg.validate();
  FusionNetwork<T> net;
  net.cfg_ = cfg;

  // spatial ladder: same-padded conv keeps extents, pooling floor-halves;
  // pooling stops for good once an extent would drop below 2
  std::size_t extent = cfg.roi_size;
  bool pooling_active = true;
  std::vector<bool> pool_flags;
  for (std::size_t b = 0; b < cfg.conv_kernel_sizes.size(); ++b) {
    if (pooling_active && extent >= 2) {
      extent /= 2;
      pool_flags.push_back(true);
    } else {
      pooling_active = false;
      pool_flags.push_back(false);
    }
    net.ladder_.push_back(extent);
  }
  net.flatten_len_ = cfg.conv_filter_counts.back() * extent * extent * extent;

  Rng rng(init_seed);
  auto uniform_fill = [&rng](TensorT<T>& t, double limit) {
    for (std::size_t i = 0; i < t.size(); ++i)
      t[i] = static_cast<T>(rng.uniform(-limit, limit));
  };

  auto build_stack = [&]() {
    std::vector<ConvBlock<T>> stack;
    std::size_t in_ch = 1;
    for (std::size_t b = 0; b < cfg.conv_kernel_sizes.size(); ++b) {
      const std::size_t k = cfg.conv_kernel_sizes[b];
      const std::size_t out_ch = cfg.conv_filter_counts[b];
      ConvBlock<T> block;
      block.conv.kernels = TensorT<T>({out_ch, in_ch, k, k, k});
      block.conv.bias = TensorT<T>({out_ch});
      const double fan_in = static_cast<double>(in_ch * k * k * k);
      const double fan_out = static_cast<double>(out_ch * k * k * k);
      uniform_fill(block.conv.kernels, std::sqrt(6.0 / (fan_in + fan_out)));
      block.bn = BatchNormState<T>::init(out_ch);
      block.bn.epsilon = static_cast<T>(cfg.bn_epsilon);
      block.bn.momentum = static_cast<T>(cfg.bn_momentum);
      block.pool = pool_flags[b];
      stack.push_back(std::move(block));
      in_ch = out_ch;
    }
    return stack;
  };

  const std::size_t n_phys = net.physical_pipelines();
  for (std::size_t p = 0; p < n_phys; ++p) net.pipelines_.push_back(build_stack());
  if (cfg.share_pipeline_weights)
    while (net.pipelines_.size() < cfg.input_pipelines.size())
      net.pipelines_.push_back(net.pipelines_[0]);

  // head: hidden FC layers from the preset, then the logits projection
  std::vector<std::size_t> widths = cfg.fc_units;
  widths.push_back(cfg.num_classes);
  std::size_t in_dim = net.head_input_length();
  for (std::size_t width : widths) {
    FcLayer<T> fc{TensorT<T>({width, in_dim}), TensorT<T>({width})};
    uniform_fill(fc.weights,
                 std::sqrt(6.0 / (static_cast<double>(in_dim) + static_cast<double>(width))));
    net.head_.push_back(std::move(fc));
    in_dim = width;
  }
  return net;
}

template <typename T>
std::size_t FusionNetwork<T>::param_count() const {
  std::size_t n = 0;
  for (std::size_t p = 0; p < physical_pipelines(); ++p)
    for (const auto& b : pipelines_[p])
      n += b.conv.kernels.size() + b.conv.bias.size() + 2 * b.bn.channels();
  for (const auto& fc : head_) n += fc.weights.size() + fc.bias.size();
  return n;
}

template <typename T>
std::vector<T> FusionNetwork<T>::gather_params() const {
  std::vector<T> flat;
  flat.reserve(param_count());
  auto append = [&flat](const auto& v) { flat.insert(flat.end(), v.begin(), v.end()); };
  for (std::size_t p = 0; p < physical_pipelines(); ++p)
    for (const auto& b : pipelines_[p]) {
      append(b.conv.kernels.values());
      append(b.conv.bias.values());
      append(b.bn.gamma);
      append(b.bn.beta);
    }
  for (const auto& fc : head_) {
    append(fc.weights.values());
    append(fc.bias.values());
  }
  return flat;
}

template <typename T>
void FusionNetwork<T>::scatter_params(std::span<const T> flat) {
  if (flat.size() != param_count())
    throw ShapeError(msg("scatter_params: got ", flat.size(), " values, expected ",
                         param_count()));
  std::size_t off = 0;
  auto take = [&](auto& v) {
    std::copy(flat.begin() + off, flat.begin() + off + v.size(), v.begin());
    off += v.size();
  };
  for (std::size_t p = 0; p < physical_pipelines(); ++p)
    for (auto& b : pipelines_[p]) {
      take(b.conv.kernels.values());
      take(b.conv.bias.values());
      take(b.bn.gamma);
      take(b.bn.beta);
    }
  for (auto& fc : head_) {
    take(fc.weights.values());
    take(fc.bias.values());
  }
  if (cfg_.share_pipeline_weights)
    for (std::size_t p = 1; p < pipelines_.size(); ++p) {
      for (std::size_t b = 0; b < pipelines_[0].size(); ++b) {
        pipelines_[p][b].conv.kernels = pipelines_[0][b].conv.kernels;
        pipelines_[p][b].conv.bias = pipelines_[0][b].conv.bias;
        pipelines_[p][b].bn.gamma = pipelines_[0][b].bn.gamma;
        pipelines_[p][b].bn.beta = pipelines_[0][b].bn.beta;
      }
    }
}

template <typename T>
std::vector<T> FusionNetwork<T>::gather_running_stats() const {
  std::vector<T> flat;
  for (const auto& stack : pipelines_)
    for (const auto& b : stack) {
      flat.insert(flat.end(), b.bn.running_mean.begin(), b.bn.running_mean.end());
      flat.insert(flat.end(), b.bn.running_var.begin(), b.bn.running_var.end());
    }
  return flat;
}

template <typename T>
void FusionNetwork<T>::scatter_running_stats(std::span<const T> flat) {
  std::size_t off = 0;
  for (auto& stack : pipelines_)
    for (auto& b : stack) {
      for (auto& v : b.bn.running_mean) v = flat[off++];
      for (auto& v : b.bn.running_var) v = flat[off++];
    }
  if (off != flat.size())
    throw ShapeError(msg("scatter_running_stats: got ", flat.size(), ", expected ", off));
}

template <typename T>
void FusionNetwork<T>::validate_sample_shapes(
    const std::vector<TensorT<T>>& inputs) const {
  if (inputs.size() != cfg_.input_pipelines.size())
    throw ShapeError(msg("sample provides ", inputs.size(), " tensors, network has ",
                         cfg_.input_pipelines.size(), " pipelines"));
  const std::size_t s = cfg_.roi_size;
  for (std::size_t p = 0; p < inputs.size(); ++p) {
    const auto& t = inputs[p];
    if (t.rank() != 4 || t.extent(0) != 1 || t.extent(1) != s || t.extent(2) != s ||
        t.extent(3) != s)
      throw ShapeError(msg("pipeline ", p, " (", to_string(cfg_.input_pipelines[p].modality),
                           "/", to_string(cfg_.input_pipelines[p].roi), ") expects [1,", s,
                           ",", s, ",", s, "], got ", shape_string(t.shape())));
  }
}

template <typename T>
TensorT<T> FusionNetwork<T>::forward(const std::vector<TensorT<T>>& inputs, Phase phase,
                                     Rng* dropout_rng) {
  validate_sample_shapes(inputs);
  TensorT<T> concat({head_input_length()});
  std::size_t off = 0;
  for (std::size_t p = 0; p < inputs.size(); ++p) {
    TensorT<T> cur = inputs[p];
    for (auto& block : pipelines_[p]) {
      cur = conv3d_forward(cur, block.conv);
      std::vector<TensorT<T>> one;
      one.push_back(std::move(cur));
      auto bn = batchnorm_forward(one, block.bn, phase);
      cur = relu_forward(bn.outputs[0]);
      if (block.pool) cur = maxpool3d_forward(cur).output;
    }
    std::copy(cur.data(), cur.data() + cur.size(), concat.data() + off);
    off += flatten_len_;
  }
  TensorT<T> cur = std::move(concat);
  for (std::size_t i = 0; i < head_.size(); ++i) {
    cur = fc_forward(cur, head_[i].weights, head_[i].bias);
    if (i + 1 < head_.size()) cur = relu_forward(cur);
  }
  if (phase == Phase::kTrain) {
    if (!dropout_rng)
      throw ShapeError("train-phase forward needs a dropout seed stream");
    cur = dropout_forward(cur, cfg_.dropout_rate, phase, *dropout_rng).output;
  }
  return softmax(cur);
}

template <typename T>
std::size_t FusionNetwork<T>::predict(const std::vector<TensorT<T>>& inputs) {
  TensorT<T> probs = forward(inputs, Phase::kInfer);
  std::size_t best = 0;
  for (std::size_t i = 1; i < probs.size(); ++i)
    if (probs[i] > probs[best]) best = i;  // ties go to the lower index
  return best;
}

template <typename T>
std::pair<double, std::vector<T>> FusionNetwork<T>::loss_and_grad(
    const std::vector<LabeledSample<T>>& batch, Rng& dropout_rng) {
  if (batch.empty()) throw DataError("loss_and_grad: empty batch");
  const std::size_t N = batch.size();
  const std::size_t n_pipes = cfg_.input_pipelines.size();
  for (const auto& s : batch) {
    validate_sample_shapes(s.inputs);
    if (s.one_hot.size() != cfg_.num_classes)
      throw DataError(msg("label has ", s.one_hot.size(), " entries, expected ",
                          cfg_.num_classes));
    std::size_t ones = 0;
    for (std::size_t i = 0; i < s.one_hot.size(); ++i) {
      if (s.one_hot[i] == T(1))
        ++ones;
      else if (s.one_hot[i] != T(0))
        throw DataError("label is not one-hot");
    }
    if (ones != 1) throw DataError("label is not one-hot");
  }

  // ---- forward, keeping per-layer caches ----
  struct BlockCache {
    std::vector<TensorT<T>> conv_in;    // per sample
    std::vector<TensorT<T>> bn_in;      // conv outputs
    BatchNormCache<T> bn;
    std::vector<TensorT<T>> relu_in;    // bn outputs
    std::vector<MaxPoolCache<T>> pool;  // empty when not pooling
  };
  std::vector<std::vector<BlockCache>> caches(n_pipes);
  std::vector<TensorT<T>> concat(N, TensorT<T>({head_input_length()}));

  for (std::size_t p = 0; p < n_pipes; ++p) {
    std::vector<TensorT<T>> cur;
    cur.reserve(N);
    for (const auto& s : batch) cur.push_back(s.inputs[p]);
    for (auto& block : pipelines_[p]) {
      BlockCache bc;
      bc.conv_in = std::move(cur);
      bc.bn_in.reserve(N);
      for (const auto& x : bc.conv_in) bc.bn_in.push_back(conv3d_forward(x, block.conv));
      auto bn = batchnorm_forward(bc.bn_in, block.bn, Phase::kTrain);
      bc.bn = std::move(bn.cache);
      bc.relu_in = std::move(bn.outputs);
      cur.clear();
      for (std::size_t s = 0; s < N; ++s) {
        TensorT<T> activated = relu_forward(bc.relu_in[s]);
        if (block.pool) {
          auto pooled = maxpool3d_forward(activated);
          bc.pool.push_back(std::move(pooled.cache));
          cur.push_back(std::move(pooled.output));
        } else {
          cur.push_back(std::move(activated));
        }
      }
      caches[p].push_back(std::move(bc));
    }
    for (std::size_t s = 0; s < N; ++s)
      std::copy(cur[s].data(), cur[s].data() + cur[s].size(),
                concat[s].data() + p * flatten_len_);
  }

  struct HeadCache {
    std::vector<TensorT<T>> fc_in;   // input of each fc layer
    std::vector<TensorT<T>> act_in;  // pre-relu output of hidden fc layers
    std::vector<std::uint8_t> dropout_mask;
    TensorT<T> probs;
  };
  std::vector<HeadCache> heads(N);
  double loss = 0.0;
  std::vector<TensorT<T>> grad_concat(N);
  const std::size_t n_fc = head_.size();

  for (std::size_t s = 0; s < N; ++s) {
    HeadCache& hc = heads[s];
    TensorT<T> cur = concat[s];
    for (std::size_t i = 0; i < n_fc; ++i) {
      hc.fc_in.push_back(cur);
      cur = fc_forward(cur, head_[i].weights, head_[i].bias);
      if (i + 1 < n_fc) {
        hc.act_in.push_back(cur);
        cur = relu_forward(cur);
      }
    }
    auto dropped = dropout_forward(cur, cfg_.dropout_rate, Phase::kTrain, dropout_rng);
    hc.dropout_mask = std::move(dropped.mask);
    hc.probs = softmax(dropped.output);
    for (std::size_t c = 0; c < cfg_.num_classes; ++c) {
      const double d = static_cast<double>(hc.probs[c]) -
                       static_cast<double>(batch[s].one_hot[c]);
      loss += 0.5 * d * d;
    }
  }
  loss /= static_cast<double>(N);

  // ---- backward ----
  const std::size_t n_params = param_count();
  std::vector<T> grad(n_params, T(0));

  // flat offsets mirroring gather_params order
  std::vector<std::vector<std::size_t>> block_off(physical_pipelines());
  std::size_t off = 0;
  for (std::size_t p = 0; p < physical_pipelines(); ++p)
    for (const auto& b : pipelines_[p]) {
      block_off[p].push_back(off);
      off += b.conv.kernels.size() + b.conv.bias.size() + 2 * b.bn.channels();
    }
  std::vector<std::size_t> fc_off;
  for (const auto& fc : head_) {
    fc_off.push_back(off);
    off += fc.weights.size() + fc.bias.size();
  }

  const T inv_n = T(1) / static_cast<T>(N);
  for (std::size_t s = 0; s < N; ++s) {
    HeadCache& hc = heads[s];
    TensorT<T> grad_probs(hc.probs.shape());
    for (std::size_t c = 0; c < cfg_.num_classes; ++c)
      grad_probs[c] = (hc.probs[c] - batch[s].one_hot[c]) * inv_n;
    TensorT<T> cur = softmax_backward(hc.probs, grad_probs);
    cur = dropout_backward(hc.dropout_mask, cfg_.dropout_rate, cur);
    for (std::size_t i = n_fc; i-- > 0;) {
      if (i + 1 < n_fc) cur = relu_backward(heads[s].act_in[i], cur);
      auto fg = fc_backward(hc.fc_in[i], head_[i].weights, cur);
      T* dst = grad.data() + fc_off[i];
      for (std::size_t j = 0; j < fg.weights.size(); ++j) dst[j] += fg.weights[j];
      dst += fg.weights.size();
      for (std::size_t j = 0; j < fg.bias.size(); ++j) dst[j] += fg.bias[j];
      cur = std::move(fg.input);
    }
    grad_concat[s] = std::move(cur);
  }

  for (std::size_t p = 0; p < n_pipes; ++p) {
    // physical parameter slot (pipeline 0 in shared mode)
    const std::size_t phys = cfg_.share_pipeline_weights ? 0 : p;
    std::vector<TensorT<T>> grads;
    grads.reserve(N);
    for (std::size_t s = 0; s < N; ++s) {
      const auto& last = caches[p].back();
      std::vector<std::size_t> shape;
      if (!last.pool.empty()) {
        const auto& in_shape = last.pool[s].in_shape;
        shape = {in_shape[0], in_shape[1] / 2, in_shape[2] / 2, in_shape[3] / 2};
      } else {
        shape = last.relu_in[s].shape();
      }
      TensorT<T> gflat({flatten_len_});
      std::copy(grad_concat[s].data() + p * flatten_len_,
                grad_concat[s].data() + (p + 1) * flatten_len_, gflat.data());
      grads.push_back(gflat.reshaped(shape));
    }
    for (std::size_t b = pipelines_[p].size(); b-- > 0;) {
      auto& block = pipelines_[phys][b];
      auto& bc = caches[p][b];
      if (block.pool)
        for (std::size_t s = 0; s < N; ++s)
          grads[s] = maxpool3d_backward(bc.pool[s], grads[s]);
      for (std::size_t s = 0; s < N; ++s)
        grads[s] = relu_backward(bc.relu_in[s], grads[s]);
      auto bg = batchnorm_backward(bc.bn, block.bn, grads);
      T* dst = grad.data() + block_off[phys][b] + block.conv.kernels.size() +
               block.conv.bias.size();
      for (std::size_t c = 0; c < block.bn.channels(); ++c) dst[c] += bg.gamma[c];
      dst += block.bn.channels();
      for (std::size_t c = 0; c < block.bn.channels(); ++c) dst[c] += bg.beta[c];
      for (std::size_t s = 0; s < N; ++s) {
        auto cg = conv3d_backward(bc.conv_in[s], block.conv, bg.inputs[s]);
        T* kdst = grad.data() + block_off[phys][b];
        for (std::size_t j = 0; j < cg.kernels.size(); ++j) kdst[j] += cg.kernels[j];
        kdst += cg.kernels.size();
        for (std::size_t j = 0; j < cg.bias.size(); ++j) kdst[j] += cg.bias[j];
        grads[s] = std::move(cg.input);
      }
    }
  }
  return {loss, std::move(grad)};
}

}  // namespace hippofuse
