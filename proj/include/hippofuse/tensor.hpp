#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "hippofuse/errors.hpp"

namespace hippofuse {

inline constexpr std::size_t kMaxRank = 5;

inline std::string shape_string(std::span<const std::size_t> shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// Dense row-major N-d array (rank 1..5). Value-semantic: copies never alias.
// The last axis is contiguous; strides are fully determined by the shape.
template <typename T>
class TensorT {
  static_assert(std::is_floating_point_v<T>, "tensor scalars must be real");

 public:
  TensorT() = default;

  explicit TensorT(std::vector<std::size_t> shape, T fill = T(0))
      : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(count(), fill);
  }

  TensorT(std::vector<std::size_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (data_.size() != count())
      throw ShapeError(msg("tensor data length ", data_.size(),
                           " does not match shape ", shape_string(shape_)));
  }

  std::size_t rank() const { return shape_.size(); }
  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t extent(std::size_t axis) const { return shape_[axis]; }
  std::size_t size() const { return data_.size(); }
  bool same_shape(const TensorT& other) const { return shape_ == other.shape_; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  T& operator[](std::size_t flat) { return data_[flat]; }
  const T& operator[](std::size_t flat) const { return data_[flat]; }

  // Row-major strides; stride of the last axis is 1.
  std::vector<std::size_t> strides() const {
    std::vector<std::size_t> s(rank(), 1);
    for (std::size_t i = rank(); i-- > 1;) s[i - 1] = s[i] * shape_[i];
    return s;
  }

  template <typename U>
  TensorT<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return TensorT<U>(shape_, std::move(out));
  }

  TensorT reshaped(std::vector<std::size_t> new_shape) const {
    TensorT out(std::move(new_shape), data_);
    return out;
  }

 private:
  std::size_t count() const {
    return std::accumulate(shape_.begin(), shape_.end(), std::size_t{1},
                           std::multiplies<>());
  }
  void validate_shape() const {
    if (shape_.empty() || shape_.size() > kMaxRank)
      throw ShapeError(msg("tensor rank ", shape_.size(), " outside 1..", kMaxRank));
    for (std::size_t e : shape_)
      if (e < 1) throw ShapeError(msg("tensor extent 0 in shape ", shape_string(shape_)));
  }

  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

namespace detail {
template <typename T, typename Op>
TensorT<T> zip(const TensorT<T>& a, const TensorT<T>& b, Op op, const char* name) {
  if (!a.same_shape(b))
    throw ShapeError(msg(name, ": shape mismatch ", shape_string(a.shape()), " vs ",
                         shape_string(b.shape())));
  TensorT<T> out(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (std::size_t i = 0; i < a.size(); ++i) po[i] = op(pa[i], pb[i]);
  return out;
}
}  // namespace detail

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  return detail::zip(a, b, [](T x, T y) { return x + y; }, "add");
}
template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  return detail::zip(a, b, [](T x, T y) { return x - y; }, "sub");
}
template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  return detail::zip(a, b, [](T x, T y) { return x * y; }, "mul");
}
template <typename T>
TensorT<T> scale(const TensorT<T>& a, T s) {
  TensorT<T> out(a.shape());
  const T* pa = a.data();
  T* po = out.data();
  for (std::size_t i = 0; i < a.size(); ++i) po[i] = pa[i] * s;
  return out;
}

// Standard matrix product for rank-2 tensors, accumulated in T.
template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError(msg("matmul expects rank-2 operands, got ",
                         shape_string(a.shape()), " and ", shape_string(b.shape())));
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  if (b.extent(0) != k)
    throw ShapeError(msg("matmul inner extents differ: ", shape_string(a.shape()),
                         " x ", shape_string(b.shape())));
  TensorT<T> out({m, n});
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T aik = pa[i * k + kk];
      const T* brow = pb + kk * n;
      T* orow = po + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

// Copies the axis-aligned sub-block at `origin` with extents `size`.
template <typename T>
TensorT<T> crop(const TensorT<T>& t, std::span<const std::size_t> origin,
                std::span<const std::size_t> size) {
  if (origin.size() != t.rank() || size.size() != t.rank())
    throw ShapeError(msg("crop: window rank ", origin.size(), "/", size.size(),
                         " does not match tensor rank ", t.rank()));
  for (std::size_t a = 0; a < t.rank(); ++a) {
    if (size[a] < 1 || origin[a] + size[a] > t.extent(a))
      throw ShapeError(msg("crop: window [", origin[a], ", ", origin[a] + size[a],
                           ") exceeds extent ", t.extent(a), " on axis ", a));
  }
  TensorT<T> out(std::vector<std::size_t>(size.begin(), size.end()));
  const auto src_strides = t.strides();
  const std::size_t rank = t.rank();
  const std::size_t row = size[rank - 1];
  const std::size_t rows = out.size() / row;
  std::vector<std::size_t> idx(rank, 0);
  const T* src = t.data();
  T* dst = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t off = 0;
    for (std::size_t a = 0; a < rank; ++a) off += (origin[a] + idx[a]) * src_strides[a];
    std::copy(src + off, src + off + row, dst + r * row);
    for (std::size_t a = rank - 1; a-- > 0;) {  // advance all but the last axis
      if (++idx[a] < size[a]) break;
      idx[a] = 0;
    }
  }
  return out;
}

// Places `t` into a zero tensor of shape `outer` at `origin` (inverse of crop).
template <typename T>
TensorT<T> embed(const TensorT<T>& t, std::span<const std::size_t> origin,
                 std::span<const std::size_t> outer) {
  if (origin.size() != t.rank() || outer.size() != t.rank())
    throw ShapeError(msg("embed: rank mismatch with tensor rank ", t.rank()));
  for (std::size_t a = 0; a < t.rank(); ++a)
    if (origin[a] + t.extent(a) > outer[a])
      throw ShapeError(msg("embed: block exceeds extent ", outer[a], " on axis ", a));
  TensorT<T> out(std::vector<std::size_t>(outer.begin(), outer.end()));
  const auto dst_strides = out.strides();
  const std::size_t rank = t.rank();
  const std::size_t row = t.extent(rank - 1);
  const std::size_t rows = t.size() / row;
  std::vector<std::size_t> idx(rank, 0);
  const T* src = t.data();
  T* dst = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t off = 0;
    for (std::size_t a = 0; a < rank; ++a) off += (origin[a] + idx[a]) * dst_strides[a];
    std::copy(src + r * row, src + (r + 1) * row, dst + off);
    for (std::size_t a = rank - 1; a-- > 0;) {
      if (++idx[a] < t.extent(a)) break;
      idx[a] = 0;
    }
  }
  return out;
}

// Reverses element order along one axis.
template <typename T>
TensorT<T> flip_axis(const TensorT<T>& t, std::size_t axis) {
  if (axis >= t.rank())
    throw ShapeError(msg("flip_axis: axis ", axis, " out of range for rank ", t.rank()));
  TensorT<T> out(t.shape());
  const auto strides = t.strides();
  const std::size_t n = t.size();
  const std::size_t stride = strides[axis];
  const std::size_t extent = t.extent(axis);
  const T* src = t.data();
  T* dst = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t pos = (i / stride) % extent;
    const std::size_t j = i + (extent - 1 - 2 * pos) * stride;
    dst[j] = src[i];
  }
  return out;
}

template <typename T>
TensorT<T> ones_like(const TensorT<T>& t) {
  return TensorT<T>(t.shape(), T(1));
}

}  // namespace hippofuse
