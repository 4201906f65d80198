#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hippofuse/gradcheck.hpp"
#include "hippofuse/model.hpp"
#include "oracles.hpp"

using namespace hippofuse;

namespace {

Tensor random_roi(std::size_t s, Rng& rng) {
  return oracle::random_tensor<float>({1, s, s, s}, rng);
}

}  // namespace

TEST_CASE("presets match the architecture table") {
  auto c1 = NetworkConfig::preset("C1");
  CHECK(c1.conv_kernel_sizes == std::vector<std::size_t>{5, 4, 3, 3});
  CHECK(c1.conv_filter_counts == std::vector<std::size_t>{16, 32, 64, 128});
  CHECK(c1.fc_units == std::vector<std::size_t>{16, 8});

  auto c2 = NetworkConfig::preset("C2");
  CHECK(c2.conv_kernel_sizes == std::vector<std::size_t>{5, 4, 3, 3, 3});
  CHECK(c2.conv_filter_counts == std::vector<std::size_t>{16, 32, 64, 128, 128});
  CHECK(c2.fc_units == std::vector<std::size_t>{16, 8});

  auto c3 = NetworkConfig::preset("C3");
  CHECK(c3.conv_kernel_sizes == std::vector<std::size_t>{7, 6, 5, 4, 3});
  CHECK(c3.conv_filter_counts == std::vector<std::size_t>{16, 32, 64, 128, 256});
  CHECK(c3.fc_units == std::vector<std::size_t>{32, 8});

  auto c4 = NetworkConfig::preset("C4");
  CHECK(c4.conv_kernel_sizes == std::vector<std::size_t>{7, 6, 5, 4, 3, 3});
  CHECK(c4.conv_filter_counts == std::vector<std::size_t>{16, 32, 64, 128, 256, 256});
  CHECK(c4.fc_units == std::vector<std::size_t>{16});

  CHECK_THROWS_AS(NetworkConfig::preset("C9"), ConfigError);
}

TEST_CASE("spatial ladders") {
  auto cfg = NetworkConfig::preset("C1");
  cfg.roi_size = 28;
  auto net = FusionNetwork<float>::build(cfg, 1);
  CHECK(net.spatial_ladder() == std::vector<std::size_t>{14, 7, 3, 1});
  CHECK(net.flatten_length() == 128);
  CHECK(net.head_input_length() == 256);  // two pipelines

  auto cfg4 = NetworkConfig::preset("C4");
  cfg4.roi_size = 48;
  auto net4 = FusionNetwork<float>::build(cfg4, 1);
  CHECK(net4.spatial_ladder() == std::vector<std::size_t>{24, 12, 6, 3, 1, 1});
  CHECK(net4.flatten_length() == 256);  // sixth pool skipped, extent stays 1
}

TEST_CASE("every paper pairing builds under all four input modes") {
  const std::vector<std::pair<std::string, std::size_t>> pairings = {
      {"C1", 28}, {"C2", 28}, {"C1", 38}, {"C2", 38},
      {"C3", 42}, {"C4", 42}, {"C3", 48}, {"C4", 48}};
  for (const auto& [name, roi] : pairings)
    for (InputMode mode : {InputMode::kDtiL_DtiR, InputMode::kSmriL_SmriR,
                           InputMode::kSmriDtiLR, InputMode::kSmriLR_DtiLR}) {
      CAPTURE(name);
      CAPTURE(roi);
      auto cfg = NetworkConfig::preset(name);
      cfg.roi_size = roi;
      cfg.input_pipelines = pipelines_for(mode);
      auto net = FusionNetwork<float>::build(cfg, 7);
      CHECK(net.spatial_ladder().back() >= 1);
      CHECK(net.flatten_length() >= cfg.conv_filter_counts.back());
    }
}

TEST_CASE("zero conv layers is rejected") {
  NetworkConfig cfg;
  cfg.conv_kernel_sizes.clear();
  cfg.conv_filter_counts.clear();
  CHECK_THROWS_AS(FusionNetwork<float>::build(cfg, 1), ConfigError);
}

TEST_CASE("fresh networks output near-uniform probabilities") {
  auto cfg = NetworkConfig::preset("C1");
  cfg.roi_size = 28;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto net = FusionNetwork<float>::build(cfg, seed);
    Rng rng(seed + 5000);
    std::vector<Tensor> inputs{oracle::random_tensor<float>({1, 28, 28, 28}, rng, 0, 1),
                               oracle::random_tensor<float>({1, 28, 28, 28}, rng, 0, 1)};
    auto probs = net.forward(inputs, Phase::kInfer);
    for (std::size_t c = 0; c < 2; ++c) CHECK(std::abs(probs[c] - 0.5f) <= 0.2f);
  }
}

TEST_CASE("inference forward is bit-deterministic") {
  auto net = FusionNetwork<float>::build(gradcheck::tiny_config(), 42);
  Rng rng(5);
  std::vector<Tensor> inputs{random_roi(8, rng), random_roi(8, rng)};
  auto p1 = net.forward(inputs, Phase::kInfer);
  auto p2 = net.forward(inputs, Phase::kInfer);
  for (std::size_t i = 0; i < p1.size(); ++i) CHECK(p1[i] == p2[i]);
}

TEST_CASE("forward validates pipeline shapes naming the pipeline") {
  auto net = FusionNetwork<float>::build(gradcheck::tiny_config(), 42);
  Rng rng(5);
  std::vector<Tensor> bad{random_roi(8, rng), random_roi(6, rng)};
  try {
    net.forward(bad, Phase::kInfer);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("pipeline 1") != std::string::npos);
  }
}

TEST_CASE("flat parameter gather/scatter round trip is bit exact") {
  auto net = FusionNetwork<float>::build(gradcheck::tiny_config(), 9);
  auto flat = net.gather_params();
  CHECK(flat.size() == net.param_count());
  net.scatter_params(flat);
  auto again = net.gather_params();
  REQUIRE(again.size() == flat.size());
  for (std::size_t i = 0; i < flat.size(); ++i) CHECK(flat[i] == again[i]);

  // scatter a modified vector and read it back
  for (auto& v : flat) v += 0.25f;
  net.scatter_params(flat);
  auto modified = net.gather_params();
  for (std::size_t i = 0; i < flat.size(); ++i) CHECK(modified[i] == flat[i]);

  CHECK_THROWS_AS(net.scatter_params(std::vector<float>(flat.size() + 1)), ShapeError);
}

TEST_CASE("weight-shared pipelines: swapping parameter stacks is a no-op") {
  auto cfg = gradcheck::tiny_config();
  cfg.share_pipeline_weights = true;
  cfg.dropout_rate = 0.0;
  auto net = FusionNetwork<float>::build(cfg, 13);
  Rng rng(6);
  std::vector<Tensor> inputs{random_roi(8, rng), random_roi(8, rng)};
  auto before = net.forward(inputs, Phase::kInfer);
  std::swap(net.pipelines()[0], net.pipelines()[1]);
  auto after = net.forward(inputs, Phase::kInfer);
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);
}

TEST_CASE("loss values match the Euclidean definition") {
  auto cfg = gradcheck::tiny_config();
  cfg.dropout_rate = 0.0;
  auto net = FusionNetwork<double>::build(cfg, 3);

  // all-zero parameters force logits (0,0) and probabilities (0.5, 0.5)
  std::vector<double> zeros(net.param_count(), 0.0);
  net.scatter_params(zeros);
  Rng rng(4);
  std::vector<LabeledSample<double>> batch;
  for (int s = 0; s < 2; ++s) {
    LabeledSample<double> sample;
    sample.inputs = {oracle::random_tensor<double>({1, 8, 8, 8}, rng),
                     oracle::random_tensor<double>({1, 8, 8, 8}, rng)};
    sample.one_hot = TensorD({2});
    sample.one_hot[0] = 1.0;
    batch.push_back(std::move(sample));
  }
  Rng drop(1);
  auto [loss, grad] = net.loss_and_grad(batch, drop);
  CHECK(loss == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(grad.size() == net.param_count());

  // saturating the logit bias makes the prediction exactly one-hot: loss 0
  auto params = zeros;
  params[params.size() - 2] = 1000.0;   // logit bias, class 0
  params[params.size() - 1] = -1000.0;  // logit bias, class 1
  net.scatter_params(params);
  Rng drop2(1);
  auto [loss0, grad0] = net.loss_and_grad(batch, drop2);
  CHECK(loss0 == 0.0);
  (void)grad0;
}

TEST_CASE("loss_and_grad rejects labels that are not one-hot") {
  auto cfg = gradcheck::tiny_config();
  auto net = FusionNetwork<double>::build(cfg, 3);
  Rng rng(4);
  std::vector<LabeledSample<double>> batch(2);
  for (auto& s : batch) {
    s.inputs = {oracle::random_tensor<double>({1, 8, 8, 8}, rng),
                oracle::random_tensor<double>({1, 8, 8, 8}, rng)};
    s.one_hot = TensorD({2});
    s.one_hot[0] = 0.5;
    s.one_hot[1] = 0.5;
  }
  Rng drop(1);
  CHECK_THROWS_AS(net.loss_and_grad(batch, drop), DataError);
}

TEST_CASE("predict breaks ties toward the lower class index") {
  auto cfg = gradcheck::tiny_config();
  cfg.dropout_rate = 0.0;
  auto net = FusionNetwork<float>::build(cfg, 3);
  std::vector<float> zeros(net.param_count(), 0.0f);
  net.scatter_params(zeros);  // probabilities exactly (0.5, 0.5)
  Rng rng(4);
  std::vector<Tensor> inputs{random_roi(8, rng), random_roi(8, rng)};
  CHECK(net.predict(inputs) == 0);
}

TEST_CASE("whole-network gradient matches finite differences across seeds") {
  for (std::uint64_t seed : {101u, 202u, 303u}) {
    CAPTURE(seed);
    CHECK(gradcheck::check_end_to_end(seed) < 1e-4);
  }
}
