#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "hippofuse/tensor.hpp"
#include "oracles.hpp"

using namespace hippofuse;

TEST_CASE("elementwise add/sub/mul/scale") {
  Tensor a({2}, {1.0f, 2.0f});
  Tensor b({2}, {3.0f, 4.0f});
  auto sum = add(a, b);
  CHECK(sum[0] == 4.0f);
  CHECK(sum[1] == 6.0f);

  Tensor c({3}, {1.0f, 2.0f, 3.0f});
  auto zeroed = scale(c, 0.0f);
  for (std::size_t i = 0; i < 3; ++i) CHECK(zeroed[i] == 0.0f);

  auto same = mul(c, ones_like(c));
  for (std::size_t i = 0; i < 3; ++i) CHECK(same[i] == c[i]);

  auto diff = sub(b, a);
  CHECK(diff[0] == 2.0f);
  CHECK(diff[1] == 2.0f);
}

TEST_CASE("elementwise shape mismatch names both shapes") {
  Tensor a({2, 3});
  Tensor b({3, 2});
  try {
    add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string m = e.what();
    CHECK(m.find("[2,3]") != std::string::npos);
    CHECK(m.find("[3,2]") != std::string::npos);
  }
}

TEST_CASE("elementwise ops preserve shape on random shapes") {
  Rng rng(123);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t rank = 1 + rng.uniform_int(0, 3);
    std::vector<std::size_t> shape;
    for (std::size_t i = 0; i < rank; ++i) shape.push_back(1 + rng.uniform_int(0, 4));
    auto a = oracle::random_tensor<float>(shape, rng);
    auto b = oracle::random_tensor<float>(shape, rng);
    CHECK(add(a, b).shape() == shape);
    CHECK(sub(a, b).shape() == shape);
    CHECK(mul(a, b).shape() == shape);
    CHECK(scale(a, 2.5f).shape() == shape);
  }
}

TEST_CASE("matmul identity and hand arithmetic") {
  TensorD eye({2, 2}, {1.0, 0.0, 0.0, 1.0});
  TensorD m({2, 2}, {1.0, 2.0, 3.0, 4.0});
  auto r = matmul(eye, m);
  for (std::size_t i = 0; i < 4; ++i) CHECK(r[i] == m[i]);

  TensorD row({1, 2}, {1.0, 2.0});
  TensorD col({2, 1}, {3.0, 4.0});
  CHECK(matmul(row, col)[0] == doctest::Approx(11.0));
}

TEST_CASE("matmul matches triple-loop oracle") {
  Rng rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t m = 1 + rng.uniform_int(0, 7);
    const std::size_t k = 1 + rng.uniform_int(0, 7);
    const std::size_t n = 1 + rng.uniform_int(0, 7);
    auto a = oracle::random_tensor<double>({m, k}, rng);
    auto b = oracle::random_tensor<double>({k, n}, rng);
    auto got = matmul(a, b);
    auto want = oracle::naive_matmul(a, b);
    for (std::size_t i = 0; i < got.size(); ++i)
      CHECK(std::abs(got[i] - want[i]) <=
            1e-12 * std::max(1.0, std::abs(want[i])));
  }
  // inner-dimension mismatch
  CHECK_THROWS_AS(matmul(TensorD({2, 3}), TensorD({4, 2})), ShapeError);
}

TEST_CASE("crop windows") {
  // full-window identity
  Rng rng(3);
  auto t = oracle::random_tensor<float>({4, 4, 4}, rng);
  std::vector<std::size_t> zeros{0, 0, 0}, full{4, 4, 4};
  auto same = crop(t, zeros, full);
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(same[i] == t[i]);

  // 1..64 cube, interior 2x2x2 block by the row-major index formula
  Tensor cube({4, 4, 4});
  for (std::size_t i = 0; i < 64; ++i) cube[i] = static_cast<float>(i + 1);
  std::vector<std::size_t> origin{1, 1, 1}, size{2, 2, 2};
  auto inner = crop(cube, origin, size);
  std::size_t n = 0;
  for (std::size_t z = 1; z < 3; ++z)
    for (std::size_t y = 1; y < 3; ++y)
      for (std::size_t x = 1; x < 3; ++x)
        CHECK(inner[n++] == static_cast<float>(z * 16 + y * 4 + x + 1));

  // bounds violation names the axis
  std::vector<std::size_t> bad_origin{3, 0, 0}, bad_size{2, 4, 4};
  try {
    crop(cube, bad_origin, bad_size);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("axis 0") != std::string::npos);
  }
}

TEST_CASE("crop of embed is identity on the region") {
  Rng rng(11);
  auto t = oracle::random_tensor<float>({2, 3, 4}, rng);
  std::vector<std::size_t> origin{1, 2, 3}, outer{5, 7, 9};
  auto big = embed(t, origin, outer);
  std::vector<std::size_t> size{2, 3, 4};
  auto back = crop(big, origin, size);
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(back[i] == t[i]);
}

TEST_CASE("flip_axis") {
  Tensor v({3}, {1.0f, 2.0f, 3.0f});
  auto r = flip_axis(v, 0);
  CHECK(r[0] == 3.0f);
  CHECK(r[1] == 2.0f);
  CHECK(r[2] == 1.0f);

  Rng rng(17);
  auto t = oracle::random_tensor<float>({3, 4, 5}, rng);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    auto twice = flip_axis(flip_axis(t, axis), axis);
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(twice[i] == t[i]);
  }

  // symmetric along axis 0 stays unchanged
  Tensor s({2, 2}, {5.0f, 6.0f, 5.0f, 6.0f});
  auto fs = flip_axis(s, 0);
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(fs[i] == s[i]);

  CHECK_THROWS_AS(flip_axis(v, 1), ShapeError);
}

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor(std::vector<std::size_t>{}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 0, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor({1, 2, 3, 4, 5, 6}), ShapeError);
  CHECK_THROWS_AS(Tensor({{2, 2}}, {1.0f, 2.0f, 3.0f}), ShapeError);
  Tensor t({2, 3, 4});
  CHECK(t.size() == 24);
  CHECK(t.strides() == std::vector<std::size_t>{12, 4, 1});
}
