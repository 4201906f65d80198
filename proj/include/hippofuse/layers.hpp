#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#if defined(__AVX512F__) || (defined(__AVX2__) && defined(__FMA__))
#include <immintrin.h>
#endif

#include "hippofuse/rng.hpp"
#include "hippofuse/tensor.hpp"

namespace hippofuse {

enum class Phase { kTrain, kInfer };

// ---------------------------------------------------------------------------
// vector helpers (written so gcc auto-vectorizes without -ffast-math; the
// reduction order is fixed in source, so results are bit-reproducible)
// ---------------------------------------------------------------------------

template <typename T>
inline void axpy_row(T* __restrict dst, const T* __restrict src, T w, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] += w * src[i];
}

// Dot product with 64 explicit partial sums so the compiler can keep several
// independent fma chains in flight. The combine order is fixed in source, so
// the result is deterministic (no -ffast-math needed).
template <typename T>
inline T dot_row(const T* __restrict a, const T* __restrict b, std::size_t n) {
  constexpr std::size_t kLanes = 64;
  T lanes[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes)
    for (std::size_t l = 0; l < kLanes; ++l) lanes[l] += a[i + l] * b[i + l];
  for (; i + 16 <= n; i += 16)
    for (std::size_t l = 0; l < 16; ++l) lanes[l] += a[i + l] * b[i + l];
  T tail = T(0);
  for (; i < n; ++i) tail += a[i] * b[i];
  T s = tail;
  for (std::size_t l = 0; l < kLanes; ++l) s += lanes[l];
  return s;
}

// ---------------------------------------------------------------------------
// 3D convolution, zero-padded "same", stride 1
// ---------------------------------------------------------------------------

template <typename T>
struct ConvParams {
  TensorT<T> kernels;  // [C_out, C_in, k, k, k]
  TensorT<T> bias;     // [C_out]

  std::size_t out_channels() const { return kernels.extent(0); }
  std::size_t in_channels() const { return kernels.extent(1); }
  std::size_t kernel_size() const { return kernels.extent(2); }

  void validate() const {
    if (kernels.rank() != 5 || kernels.extent(2) != kernels.extent(3) ||
        kernels.extent(3) != kernels.extent(4))
      throw ShapeError(msg("conv kernels must be [Cout,Cin,k,k,k], got ",
                           shape_string(kernels.shape())));
    if (bias.rank() != 1 || bias.extent(0) != out_channels())
      throw ShapeError(msg("conv bias length ", bias.size(), " != C_out ",
                           out_channels()));
  }
};

template <typename T>
struct Conv3dGrads {
  TensorT<T> input;
  TensorT<T> kernels;
  TensorT<T> bias;
};

namespace detail {

// Low-side padding of "same" convolution; the high side gets k-1-pad_lo.
inline std::size_t same_pad_lo(std::size_t k) { return (k - 1) / 2; }

// Zero-pads every spatial axis of [C,D,H,W] by `lo` in front and k-1-lo behind.
template <typename T>
std::vector<T> pad_spatial(const TensorT<T>& x, std::size_t k, std::size_t lo) {
  const std::size_t C = x.extent(0), D = x.extent(1), H = x.extent(2), W = x.extent(3);
  const std::size_t Dp = D + k - 1, Hp = H + k - 1, Wp = W + k - 1;
  std::vector<T> padded(C * Dp * Hp * Wp, T(0));
  const T* src = x.data();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t z = 0; z < D; ++z)
      for (std::size_t y = 0; y < H; ++y) {
        T* dst = padded.data() + ((c * Dp + z + lo) * Hp + y + lo) * Wp + lo;
        std::copy(src, src + W, dst);
        src += W;
      }
  return padded;
}

// Gathers the receptive-field patches of output positions [p0, p0+count) into
// a row-major tile [count, Ci*k^3]; patch element order is (ci, tz, ty, tx),
// matching the kernel layout.
template <typename T>
void gather_patch_tile(const T* padded, std::size_t Ci, std::size_t Dp, std::size_t Hp,
                       std::size_t Wp, std::size_t k, std::size_t H, std::size_t W,
                       std::size_t p0, std::size_t count, T* tile) {
  const std::size_t chan = Dp * Hp * Wp;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t p = p0 + i;
    const std::size_t z = p / (H * W), y = (p / W) % H, x = p % W;
    T* row = tile + i * (Ci * k * k * k);
    for (std::size_t ci = 0; ci < Ci; ++ci) {
      const T* base = padded + ci * chan + (z * Hp + y) * Wp + x;
      for (std::size_t tz = 0; tz < k; ++tz)
        for (std::size_t ty = 0; ty < k; ++ty) {
          const T* src = base + (tz * Hp + ty) * Wp;
          for (std::size_t tx = 0; tx < k; ++tx) *row++ = src[tx];
        }
    }
  }
}

// Positions per tile; sized so a tile stays L2-resident for the largest J.
inline constexpr std::size_t kConvTile = 128;

// C[m, n] = bias[m] + <A[m, :], B[n, :]> for A [M, J], B [N, J], C row stride
// ldc. Generic version; the float build uses the register-blocked kernels
// below when AVX is available.
template <typename T>
void gemm_abt(const T* A, const T* B, T* C, std::size_t M, std::size_t N,
              std::size_t J, std::size_t ldc, const T* bias) {
  for (std::size_t m = 0; m < M; ++m) {
    const T b = bias ? bias[m] : T(0);
    for (std::size_t n = 0; n < N; ++n)
      C[m * ldc + n] = b + dot_row(A + m * J, B + n * J, J);
  }
}

// C[m, :J] += sum_n A[m, n] * B[n, :J]; used for the weight and input gradients.
template <typename T>
void gemm_acc(const T* A, std::size_t lda, const T* B, std::size_t ldb, T* C,
              std::size_t ldc, std::size_t M, std::size_t N, std::size_t J) {
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t n = 0; n < N; ++n)
      axpy_row(C + m * ldc, B + n * ldb, A[m * lda + n], J);
}

#if defined(__AVX512F__)

inline float hsum(__m512 v) { return _mm512_reduce_add_ps(v); }

// One A row against four B rows; the final partial step uses a masked load.
inline void gemm_abt_1x4(const float* a, const float* b0, const float* b1,
                         const float* b2, const float* b3, std::size_t J, float bias,
                         float* c, std::size_t stride_c) {
  __m512 acc0 = _mm512_setzero_ps(), acc1 = _mm512_setzero_ps();
  __m512 acc2 = _mm512_setzero_ps(), acc3 = _mm512_setzero_ps();
  std::size_t p = 0;
  for (; p + 16 <= J; p += 16) {
    const __m512 va = _mm512_loadu_ps(a + p);
    acc0 = _mm512_fmadd_ps(va, _mm512_loadu_ps(b0 + p), acc0);
    acc1 = _mm512_fmadd_ps(va, _mm512_loadu_ps(b1 + p), acc1);
    acc2 = _mm512_fmadd_ps(va, _mm512_loadu_ps(b2 + p), acc2);
    acc3 = _mm512_fmadd_ps(va, _mm512_loadu_ps(b3 + p), acc3);
  }
  if (p < J) {
    const __mmask16 mask = static_cast<__mmask16>((1u << (J - p)) - 1u);
    const __m512 va = _mm512_maskz_loadu_ps(mask, a + p);
    acc0 = _mm512_fmadd_ps(va, _mm512_maskz_loadu_ps(mask, b0 + p), acc0);
    acc1 = _mm512_fmadd_ps(va, _mm512_maskz_loadu_ps(mask, b1 + p), acc1);
    acc2 = _mm512_fmadd_ps(va, _mm512_maskz_loadu_ps(mask, b2 + p), acc2);
    acc3 = _mm512_fmadd_ps(va, _mm512_maskz_loadu_ps(mask, b3 + p), acc3);
  }
  c[0] = bias + hsum(acc0);
  c[stride_c] = bias + hsum(acc1);
  c[2 * stride_c] = bias + hsum(acc2);
  c[3 * stride_c] = bias + hsum(acc3);
}

// 4x4 register-blocked C = A Bt micro-kernel, fp32.
inline void gemm_abt(const float* A, const float* B, float* C, std::size_t M,
                     std::size_t N, std::size_t J, std::size_t ldc,
                     const float* bias) {
  const __mmask16 tail_mask =
      static_cast<__mmask16>(J % 16 ? (1u << (J % 16)) - 1u : 0u);
  std::size_t m = 0;
  for (; m + 4 <= M; m += 4) {
    const float* a0 = A + m * J;
    const float* a1 = a0 + J;
    const float* a2 = a1 + J;
    const float* a3 = a2 + J;
    std::size_t n = 0;
    for (; n + 4 <= N; n += 4) {
      const float* b0 = B + n * J;
      const float* b1 = b0 + J;
      const float* b2 = b1 + J;
      const float* b3 = b2 + J;
      __m512 acc[4][4];
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) acc[i][j] = _mm512_setzero_ps();
      auto step = [&](__m512 vb0, __m512 vb1, __m512 vb2, __m512 vb3, __m512 va0,
                      __m512 va1, __m512 va2, __m512 va3) {
        acc[0][0] = _mm512_fmadd_ps(va0, vb0, acc[0][0]);
        acc[0][1] = _mm512_fmadd_ps(va0, vb1, acc[0][1]);
        acc[0][2] = _mm512_fmadd_ps(va0, vb2, acc[0][2]);
        acc[0][3] = _mm512_fmadd_ps(va0, vb3, acc[0][3]);
        acc[1][0] = _mm512_fmadd_ps(va1, vb0, acc[1][0]);
        acc[1][1] = _mm512_fmadd_ps(va1, vb1, acc[1][1]);
        acc[1][2] = _mm512_fmadd_ps(va1, vb2, acc[1][2]);
        acc[1][3] = _mm512_fmadd_ps(va1, vb3, acc[1][3]);
        acc[2][0] = _mm512_fmadd_ps(va2, vb0, acc[2][0]);
        acc[2][1] = _mm512_fmadd_ps(va2, vb1, acc[2][1]);
        acc[2][2] = _mm512_fmadd_ps(va2, vb2, acc[2][2]);
        acc[2][3] = _mm512_fmadd_ps(va2, vb3, acc[2][3]);
        acc[3][0] = _mm512_fmadd_ps(va3, vb0, acc[3][0]);
        acc[3][1] = _mm512_fmadd_ps(va3, vb1, acc[3][1]);
        acc[3][2] = _mm512_fmadd_ps(va3, vb2, acc[3][2]);
        acc[3][3] = _mm512_fmadd_ps(va3, vb3, acc[3][3]);
      };
      std::size_t p = 0;
      for (; p + 16 <= J; p += 16)
        step(_mm512_loadu_ps(b0 + p), _mm512_loadu_ps(b1 + p), _mm512_loadu_ps(b2 + p),
             _mm512_loadu_ps(b3 + p), _mm512_loadu_ps(a0 + p), _mm512_loadu_ps(a1 + p),
             _mm512_loadu_ps(a2 + p), _mm512_loadu_ps(a3 + p));
      if (p < J)
        step(_mm512_maskz_loadu_ps(tail_mask, b0 + p),
             _mm512_maskz_loadu_ps(tail_mask, b1 + p),
             _mm512_maskz_loadu_ps(tail_mask, b2 + p),
             _mm512_maskz_loadu_ps(tail_mask, b3 + p),
             _mm512_maskz_loadu_ps(tail_mask, a0 + p),
             _mm512_maskz_loadu_ps(tail_mask, a1 + p),
             _mm512_maskz_loadu_ps(tail_mask, a2 + p),
             _mm512_maskz_loadu_ps(tail_mask, a3 + p));
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
          C[(m + i) * ldc + n + j] = (bias ? bias[m + i] : 0.0f) + hsum(acc[i][j]);
    }
    for (; n < N; ++n)
      for (int i = 0; i < 4; ++i)
        C[(m + i) * ldc + n] =
            (bias ? bias[m + i] : 0.0f) + dot_row(A + (m + i) * J, B + n * J, J);
  }
  for (; m < M; ++m) {
    const float b = bias ? bias[m] : 0.0f;
    std::size_t n = 0;
    for (; n + 4 <= N; n += 4)
      gemm_abt_1x4(A + m * J, B + n * J, B + (n + 1) * J, B + (n + 2) * J,
                   B + (n + 3) * J, J, b, C + m * ldc + n, 1);
    for (; n < N; ++n) C[m * ldc + n] = b + dot_row(A + m * J, B + n * J, J);
  }
}

// C[m, :J] += sum_n A[m, n] * B[n, :J], fp32: 2 rows x 64 columns per block,
// then 16-wide and masked remainder phases.
inline void gemm_acc(const float* A, std::size_t lda, const float* B, std::size_t ldb,
                     float* C, std::size_t ldc, std::size_t M, std::size_t N,
                     std::size_t J) {
  const std::size_t J64 = J / 64 * 64;
  const std::size_t J16 = J / 16 * 16;
  const __mmask16 tail_mask =
      static_cast<__mmask16>(J % 16 ? (1u << (J % 16)) - 1u : 0u);
  std::size_t m = 0;
  for (; m + 2 <= M; m += 2) {
    float* c0 = C + m * ldc;
    float* c1 = c0 + ldc;
    for (std::size_t q = 0; q < J64; q += 64) {
      __m512 acc0[4], acc1[4];
      for (int v = 0; v < 4; ++v) {
        acc0[v] = _mm512_loadu_ps(c0 + q + 16 * v);
        acc1[v] = _mm512_loadu_ps(c1 + q + 16 * v);
      }
      for (std::size_t n = 0; n < N; ++n) {
        const float* brow = B + n * ldb + q;
        const __m512 s0 = _mm512_set1_ps(A[m * lda + n]);
        const __m512 s1 = _mm512_set1_ps(A[(m + 1) * lda + n]);
        for (int v = 0; v < 4; ++v) {
          const __m512 vb = _mm512_loadu_ps(brow + 16 * v);
          acc0[v] = _mm512_fmadd_ps(s0, vb, acc0[v]);
          acc1[v] = _mm512_fmadd_ps(s1, vb, acc1[v]);
        }
      }
      for (int v = 0; v < 4; ++v) {
        _mm512_storeu_ps(c0 + q + 16 * v, acc0[v]);
        _mm512_storeu_ps(c1 + q + 16 * v, acc1[v]);
      }
    }
    for (std::size_t q = J64; q < J16; q += 16) {
      __m512 acc0 = _mm512_loadu_ps(c0 + q);
      __m512 acc1 = _mm512_loadu_ps(c1 + q);
      for (std::size_t n = 0; n < N; ++n) {
        const __m512 vb = _mm512_loadu_ps(B + n * ldb + q);
        acc0 = _mm512_fmadd_ps(_mm512_set1_ps(A[m * lda + n]), vb, acc0);
        acc1 = _mm512_fmadd_ps(_mm512_set1_ps(A[(m + 1) * lda + n]), vb, acc1);
      }
      _mm512_storeu_ps(c0 + q, acc0);
      _mm512_storeu_ps(c1 + q, acc1);
    }
    if (J16 < J) {
      __m512 acc0 = _mm512_maskz_loadu_ps(tail_mask, c0 + J16);
      __m512 acc1 = _mm512_maskz_loadu_ps(tail_mask, c1 + J16);
      for (std::size_t n = 0; n < N; ++n) {
        const __m512 vb = _mm512_maskz_loadu_ps(tail_mask, B + n * ldb + J16);
        acc0 = _mm512_fmadd_ps(_mm512_set1_ps(A[m * lda + n]), vb, acc0);
        acc1 = _mm512_fmadd_ps(_mm512_set1_ps(A[(m + 1) * lda + n]), vb, acc1);
      }
      _mm512_mask_storeu_ps(c0 + J16, tail_mask, acc0);
      _mm512_mask_storeu_ps(c1 + J16, tail_mask, acc1);
    }
  }
  for (; m < M; ++m)
    for (std::size_t n = 0; n < N; ++n)
      axpy_row(C + m * ldc, B + n * ldb, A[m * lda + n], J);
}

#elif defined(__AVX2__) && defined(__FMA__)

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  lo = _mm_hadd_ps(lo, lo);
  lo = _mm_hadd_ps(lo, lo);
  return _mm_cvtss_f32(lo);
}

// 2x4 register-blocked C = A Bt micro-kernel, fp32.
inline void gemm_abt(const float* A, const float* B, float* C, std::size_t M,
                     std::size_t N, std::size_t J, std::size_t ldc,
                     const float* bias) {
  const std::size_t J8 = J / 8 * 8;
  std::size_t m = 0;
  for (; m + 2 <= M; m += 2) {
    const float* a0 = A + m * J;
    const float* a1 = a0 + J;
    std::size_t n = 0;
    for (; n + 4 <= N; n += 4) {
      const float* b0 = B + n * J;
      const float* b1 = b0 + J;
      const float* b2 = b1 + J;
      const float* b3 = b2 + J;
      __m256 acc[2][4];
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 4; ++j) acc[i][j] = _mm256_setzero_ps();
      for (std::size_t p = 0; p < J8; p += 8) {
        const __m256 vb0 = _mm256_loadu_ps(b0 + p);
        const __m256 vb1 = _mm256_loadu_ps(b1 + p);
        const __m256 vb2 = _mm256_loadu_ps(b2 + p);
        const __m256 vb3 = _mm256_loadu_ps(b3 + p);
        __m256 va = _mm256_loadu_ps(a0 + p);
        acc[0][0] = _mm256_fmadd_ps(va, vb0, acc[0][0]);
        acc[0][1] = _mm256_fmadd_ps(va, vb1, acc[0][1]);
        acc[0][2] = _mm256_fmadd_ps(va, vb2, acc[0][2]);
        acc[0][3] = _mm256_fmadd_ps(va, vb3, acc[0][3]);
        va = _mm256_loadu_ps(a1 + p);
        acc[1][0] = _mm256_fmadd_ps(va, vb0, acc[1][0]);
        acc[1][1] = _mm256_fmadd_ps(va, vb1, acc[1][1]);
        acc[1][2] = _mm256_fmadd_ps(va, vb2, acc[1][2]);
        acc[1][3] = _mm256_fmadd_ps(va, vb3, acc[1][3]);
      }
      const float* arows[2] = {a0, a1};
      const float* brows[4] = {b0, b1, b2, b3};
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 4; ++j) {
          float s = hsum(acc[i][j]);
          for (std::size_t p = J8; p < J; ++p) s += arows[i][p] * brows[j][p];
          C[(m + i) * ldc + n + j] = (bias ? bias[m + i] : 0.0f) + s;
        }
    }
    for (; n < N; ++n)
      for (int i = 0; i < 2; ++i)
        C[(m + i) * ldc + n] =
            (bias ? bias[m + i] : 0.0f) + dot_row(A + (m + i) * J, B + n * J, J);
  }
  for (; m < M; ++m) {
    const float b = bias ? bias[m] : 0.0f;
    for (std::size_t n = 0; n < N; ++n)
      C[m * ldc + n] = b + dot_row(A + m * J, B + n * J, J);
  }
}

inline void gemm_acc(const float* A, std::size_t lda, const float* B, std::size_t ldb,
                     float* C, std::size_t ldc, std::size_t M, std::size_t N,
                     std::size_t J) {
  const std::size_t J32 = J / 32 * 32;
  std::size_t m = 0;
  for (; m + 2 <= M; m += 2) {
    float* c0 = C + m * ldc;
    float* c1 = c0 + ldc;
    for (std::size_t q = 0; q < J32; q += 32) {
      __m256 acc0[4], acc1[4];
      for (int v = 0; v < 4; ++v) {
        acc0[v] = _mm256_loadu_ps(c0 + q + 8 * v);
        acc1[v] = _mm256_loadu_ps(c1 + q + 8 * v);
      }
      for (std::size_t n = 0; n < N; ++n) {
        const float* brow = B + n * ldb + q;
        const __m256 s0 = _mm256_set1_ps(A[m * lda + n]);
        const __m256 s1 = _mm256_set1_ps(A[(m + 1) * lda + n]);
        for (int v = 0; v < 4; ++v) {
          const __m256 vb = _mm256_loadu_ps(brow + 8 * v);
          acc0[v] = _mm256_fmadd_ps(s0, vb, acc0[v]);
          acc1[v] = _mm256_fmadd_ps(s1, vb, acc1[v]);
        }
      }
      for (int v = 0; v < 4; ++v) {
        _mm256_storeu_ps(c0 + q + 8 * v, acc0[v]);
        _mm256_storeu_ps(c1 + q + 8 * v, acc1[v]);
      }
    }
    if (J32 < J)
      for (std::size_t n = 0; n < N; ++n) {
        axpy_row(c0 + J32, B + n * ldb + J32, A[m * lda + n], J - J32);
        axpy_row(c1 + J32, B + n * ldb + J32, A[(m + 1) * lda + n], J - J32);
      }
  }
  for (; m < M; ++m)
    for (std::size_t n = 0; n < N; ++n)
      axpy_row(C + m * ldc, B + n * ldb, A[m * lda + n], J);
}

#endif  // AVX dispatch

// out[co, p] = bias[co] + <w[co, :], patch(p)>, computed tile by tile.
template <typename T>
void correlate3d(const T* padded, std::size_t Ci, std::size_t Dp, std::size_t Hp,
                 std::size_t Wp, const T* w, std::size_t Co, std::size_t k, T* out,
                 std::size_t D, std::size_t H, std::size_t W, const T* bias) {
  const std::size_t J = Ci * k * k * k;
  const std::size_t P = D * H * W;
  std::vector<T> tile(std::min(kConvTile, P) * J);
  for (std::size_t p0 = 0; p0 < P; p0 += kConvTile) {
    const std::size_t count = std::min(kConvTile, P - p0);
    gather_patch_tile(padded, Ci, Dp, Hp, Wp, k, H, W, p0, count, tile.data());
    gemm_abt(w, tile.data(), out + p0, Co, count, J, P, bias);
  }
}

}  // namespace detail

template <typename T>
TensorT<T> conv3d_forward(const TensorT<T>& x, const ConvParams<T>& p) {
  p.validate();
  if (x.rank() != 4)
    throw ShapeError(msg("conv3d input must be [C,D,H,W], got ",
                         shape_string(x.shape())));
  if (x.extent(0) != p.in_channels())
    throw ShapeError(msg("conv3d: input has ", x.extent(0), " channels, kernels expect ",
                         p.in_channels()));
  const std::size_t k = p.kernel_size();
  const std::size_t D = x.extent(1), H = x.extent(2), W = x.extent(3);
  const std::size_t lo = detail::same_pad_lo(k);
  const auto padded = detail::pad_spatial(x, k, lo);
  TensorT<T> out({p.out_channels(), D, H, W});
  detail::correlate3d(padded.data(), p.in_channels(), D + k - 1, H + k - 1, W + k - 1,
                      p.kernels.data(), p.out_channels(), k, out.data(), D, H, W,
                      p.bias.data());
  return out;
}

template <typename T>
Conv3dGrads<T> conv3d_backward(const TensorT<T>& x, const ConvParams<T>& p,
                               const TensorT<T>& grad_out) {
  p.validate();
  const std::size_t k = p.kernel_size();
  const std::size_t Ci = p.in_channels(), Co = p.out_channels();
  const std::size_t D = x.extent(1), H = x.extent(2), W = x.extent(3);
  if (grad_out.rank() != 4 || grad_out.extent(0) != Co || grad_out.extent(1) != D ||
      grad_out.extent(2) != H || grad_out.extent(3) != W)
    throw ShapeError(msg("conv3d_backward: grad shape ", shape_string(grad_out.shape()),
                         " does not match output [", Co, ",", D, ",", H, ",", W, "]"));
  const std::size_t lo = detail::same_pad_lo(k);
  const std::size_t k3 = k * k * k;

  Conv3dGrads<T> g{TensorT<T>(x.shape()), TensorT<T>(p.kernels.shape()),
                   TensorT<T>(p.bias.shape())};

  // bias: plain sums over each output channel
  for (std::size_t co = 0; co < Co; ++co) {
    const T* go = grad_out.data() + co * D * H * W;
    T s = T(0);
    for (std::size_t i = 0; i < D * H * W; ++i) s += go[i];
    g.bias[co] = s;
  }

  // kernels: dk[co, :] accumulates grad_out[co, p] * patch(p) over positions,
  // using the same patch tiles as the forward pass
  const auto xpad = detail::pad_spatial(x, k, lo);
  const std::size_t Dp = D + k - 1, Hp = H + k - 1, Wp = W + k - 1;
  const std::size_t J = Ci * k3;
  const std::size_t P = D * H * W;
  {
    std::vector<T> tile(std::min(detail::kConvTile, P) * J);
    for (std::size_t p0 = 0; p0 < P; p0 += detail::kConvTile) {
      const std::size_t count = std::min(detail::kConvTile, P - p0);
      detail::gather_patch_tile(xpad.data(), Ci, Dp, Hp, Wp, k, H, W, p0, count,
                                tile.data());
      detail::gemm_acc(grad_out.data() + p0, P, tile.data(), J, g.kernels.data(), J,
                       Co, count, J);
    }
  }

  // input: first dcol[(ci,t), p] = sum_co w[co,ci,t] * grad_out[co, p], then
  // col2im: dxpad[ci, p (+) t] += dcol[(ci,t), p]. Both phases run on
  // contiguous rows, so nothing is gathered element by element.
  {
    TensorT<T> wr({J, Co});  // wr[(ci,t), co] = kernels[co, ci, t]
    for (std::size_t co = 0; co < Co; ++co)
      for (std::size_t m = 0; m < J; ++m)
        wr[m * Co + co] = p.kernels[co * J + m];
    std::vector<T> dxpad(Ci * Dp * Hp * Wp, T(0));
    const std::size_t cap = std::min(detail::kConvTile, P);
    std::vector<T> dcol(J * cap);
    for (std::size_t p0 = 0; p0 < P; p0 += cap) {
      const std::size_t count = std::min(cap, P - p0);
      std::fill(dcol.begin(), dcol.end(), T(0));
      detail::gemm_acc(wr.data(), Co, grad_out.data() + p0, P, dcol.data(), cap, J, Co,
                       count);
      // scatter by maximal x-runs within the tile
      std::size_t i = 0;
      while (i < count) {
        const std::size_t pp = p0 + i;
        const std::size_t z = pp / (H * W), y = (pp / W) % H, xx = pp % W;
        const std::size_t run = std::min(W - xx, count - i);
        for (std::size_t ci = 0; ci < Ci; ++ci) {
          const T* src = dcol.data() + ci * k3 * cap + i;
          for (std::size_t tz = 0; tz < k; ++tz)
            for (std::size_t ty = 0; ty < k; ++ty) {
              T* dst = dxpad.data() +
                       ((ci * Dp + z + tz) * Hp + y + ty) * Wp + xx;
              for (std::size_t tx = 0; tx < k; ++tx) {
                const T* s = src + ((tz * k + ty) * k + tx) * cap;
                T* d = dst + tx;
                for (std::size_t r = 0; r < run; ++r) d[r] += s[r];
              }
            }
        }
        i += run;
      }
    }
    // interior of the padded gradient is the input gradient
    for (std::size_t ci = 0; ci < Ci; ++ci)
      for (std::size_t z = 0; z < D; ++z)
        for (std::size_t y = 0; y < H; ++y) {
          const T* src = dxpad.data() + ((ci * Dp + z + lo) * Hp + y + lo) * Wp + lo;
          std::copy(src, src + W, g.input.data() + ((ci * D + z) * H + y) * W);
        }
  }
  return g;
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> relu_forward(const TensorT<T>& x) {
  TensorT<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return out;
}

// Gradient flows where the forward input was strictly positive.
template <typename T>
TensorT<T> relu_backward(const TensorT<T>& x, const TensorT<T>& grad_out) {
  if (!x.same_shape(grad_out))
    throw ShapeError(msg("relu_backward: shape mismatch ", shape_string(x.shape()),
                         " vs ", shape_string(grad_out.shape())));
  TensorT<T> dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > T(0) ? grad_out[i] : T(0);
  return dx;
}

// ---------------------------------------------------------------------------
// 3D max pooling: 2x2x2 windows, stride 2, trailing odd remainder dropped
// ---------------------------------------------------------------------------

template <typename T>
struct MaxPoolCache {
  std::vector<std::size_t> in_shape;
  std::vector<std::uint32_t> argmax;  // flat input index per output cell
};

template <typename T>
struct MaxPoolResult {
  TensorT<T> output;
  MaxPoolCache<T> cache;
};

template <typename T>
MaxPoolResult<T> maxpool3d_forward(const TensorT<T>& x) {
  if (x.rank() != 4)
    throw ShapeError(msg("maxpool3d input must be [C,D,H,W], got ",
                         shape_string(x.shape())));
  const std::size_t C = x.extent(0), D = x.extent(1), H = x.extent(2), W = x.extent(3);
  if (D < 2 || H < 2 || W < 2)
    throw ShapeError(msg("maxpool3d: spatial extent < 2 in ", shape_string(x.shape())));
  const std::size_t Do = D / 2, Ho = H / 2, Wo = W / 2;
  MaxPoolResult<T> r{TensorT<T>({C, Do, Ho, Wo}), {x.shape(), {}}};
  r.cache.argmax.resize(C * Do * Ho * Wo);
  const T* src = x.data();
  std::size_t o = 0;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t z = 0; z < Do; ++z)
      for (std::size_t y = 0; y < Ho; ++y)
        for (std::size_t xo = 0; xo < Wo; ++xo, ++o) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t best_idx = 0;
          for (std::size_t dz = 0; dz < 2; ++dz)
            for (std::size_t dy = 0; dy < 2; ++dy)
              for (std::size_t dx = 0; dx < 2; ++dx) {
                const std::size_t idx =
                    ((c * D + 2 * z + dz) * H + 2 * y + dy) * W + 2 * xo + dx;
                if (src[idx] > best) {  // strict: first index wins ties
                  best = src[idx];
                  best_idx = idx;
                }
              }
          r.output[o] = best;
          r.cache.argmax[o] = static_cast<std::uint32_t>(best_idx);
        }
  return r;
}

template <typename T>
TensorT<T> maxpool3d_backward(const MaxPoolCache<T>& cache, const TensorT<T>& grad_out) {
  TensorT<T> dx(cache.in_shape);
  if (grad_out.size() != cache.argmax.size())
    throw ShapeError(msg("maxpool3d_backward: grad size ", grad_out.size(),
                         " != cached output size ", cache.argmax.size()));
  for (std::size_t o = 0; o < cache.argmax.size(); ++o)
    dx[cache.argmax[o]] += grad_out[o];
  return dx;
}

// ---------------------------------------------------------------------------
// Batch normalization over batch x spatial positions, per channel
// ---------------------------------------------------------------------------

template <typename T>
struct BatchNormState {
  std::vector<T> gamma;
  std::vector<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T epsilon = T(1e-5);
  T momentum = T(0.9);  // running = momentum * running + (1 - momentum) * batch

  static BatchNormState init(std::size_t channels) {
    BatchNormState s;
    s.gamma.assign(channels, T(1));
    s.beta.assign(channels, T(0));
    s.running_mean.assign(channels, T(0));
    s.running_var.assign(channels, T(1));
    return s;
  }
  std::size_t channels() const { return gamma.size(); }
};

template <typename T>
struct BatchNormCache {
  std::vector<TensorT<T>> xhat;  // normalized pre-scale activations
  std::vector<T> inv_std;        // per channel
};

template <typename T>
struct BatchNormResult {
  std::vector<TensorT<T>> outputs;
  BatchNormCache<T> cache;
};

template <typename T>
BatchNormResult<T> batchnorm_forward(const std::vector<TensorT<T>>& batch,
                                     BatchNormState<T>& state, Phase phase) {
  if (batch.empty()) throw ShapeError("batchnorm: empty batch");
  if (phase == Phase::kTrain && batch.size() < 2)
    throw ShapeError(msg("batchnorm: train phase needs batch size >= 2, got ",
                         batch.size()));
  const std::size_t C = state.channels();
  for (const auto& t : batch)
    if (t.extent(0) != C)
      throw ShapeError(msg("batchnorm: input has ", t.extent(0), " channels, state has ",
                           C));
  const std::size_t spatial = batch[0].size() / C;
  const std::size_t m = batch.size() * spatial;  // positions per channel

  std::vector<T> mean(C), var(C);
  if (phase == Phase::kTrain) {
    for (std::size_t c = 0; c < C; ++c) {
      T s = T(0);
      for (const auto& t : batch) {
        const T* p = t.data() + c * spatial;
        for (std::size_t i = 0; i < spatial; ++i) s += p[i];
      }
      mean[c] = s / static_cast<T>(m);
      T v = T(0);
      for (const auto& t : batch) {
        const T* p = t.data() + c * spatial;
        for (std::size_t i = 0; i < spatial; ++i) {
          const T d = p[i] - mean[c];
          v += d * d;
        }
      }
      var[c] = v / static_cast<T>(m);  // population variance
      state.running_mean[c] = state.momentum * state.running_mean[c] +
                              (T(1) - state.momentum) * mean[c];
      state.running_var[c] =
          state.momentum * state.running_var[c] + (T(1) - state.momentum) * var[c];
    }
  } else {
    mean = state.running_mean;
    var = state.running_var;
  }

  BatchNormResult<T> r;
  r.cache.inv_std.resize(C);
  for (std::size_t c = 0; c < C; ++c)
    r.cache.inv_std[c] = T(1) / std::sqrt(var[c] + state.epsilon);
  r.outputs.reserve(batch.size());
  r.cache.xhat.reserve(batch.size());
  for (const auto& t : batch) {
    TensorT<T> xh(t.shape());
    TensorT<T> out(t.shape());
    for (std::size_t c = 0; c < C; ++c) {
      const T* p = t.data() + c * spatial;
      T* ph = xh.data() + c * spatial;
      T* po = out.data() + c * spatial;
      const T is = r.cache.inv_std[c], mu = mean[c];
      const T ga = state.gamma[c], be = state.beta[c];
      for (std::size_t i = 0; i < spatial; ++i) {
        ph[i] = (p[i] - mu) * is;
        po[i] = ga * ph[i] + be;
      }
    }
    r.cache.xhat.push_back(std::move(xh));
    r.outputs.push_back(std::move(out));
  }
  return r;
}

template <typename T>
struct BatchNormGrads {
  std::vector<TensorT<T>> inputs;
  std::vector<T> gamma;
  std::vector<T> beta;
};

// Standard train-phase backward through the batch statistics.
template <typename T>
BatchNormGrads<T> batchnorm_backward(const BatchNormCache<T>& cache,
                                     const BatchNormState<T>& state,
                                     const std::vector<TensorT<T>>& grad_outs) {
  const std::size_t C = state.channels();
  const std::size_t n = grad_outs.size();
  if (n != cache.xhat.size())
    throw ShapeError(msg("batchnorm_backward: batch size ", n, " != cached ",
                         cache.xhat.size()));
  const std::size_t spatial = cache.xhat[0].size() / C;
  const std::size_t m = n * spatial;

  BatchNormGrads<T> g;
  g.gamma.assign(C, T(0));
  g.beta.assign(C, T(0));
  std::vector<T> sum_dy(C, T(0)), sum_dy_xhat(C, T(0));
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const T* dy = grad_outs[b].data() + c * spatial;
      const T* xh = cache.xhat[b].data() + c * spatial;
      T sd = T(0), sdx = T(0);
      for (std::size_t i = 0; i < spatial; ++i) {
        sd += dy[i];
        sdx += dy[i] * xh[i];
      }
      sum_dy[c] += sd;
      sum_dy_xhat[c] += sdx;
    }
  for (std::size_t c = 0; c < C; ++c) {
    g.beta[c] = sum_dy[c];
    g.gamma[c] = sum_dy_xhat[c];
  }

  g.inputs.reserve(n);
  for (std::size_t b = 0; b < n; ++b) {
    TensorT<T> dx(cache.xhat[b].shape());
    for (std::size_t c = 0; c < C; ++c) {
      const T* dy = grad_outs[b].data() + c * spatial;
      const T* xh = cache.xhat[b].data() + c * spatial;
      T* pdx = dx.data() + c * spatial;
      const T scale = state.gamma[c] * cache.inv_std[c] / static_cast<T>(m);
      for (std::size_t i = 0; i < spatial; ++i)
        pdx[i] = scale * (static_cast<T>(m) * dy[i] - sum_dy[c] - xh[i] * sum_dy_xhat[c]);
    }
    g.inputs.push_back(std::move(dx));
  }
  return g;
}

// ---------------------------------------------------------------------------
// Fully connected
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> fc_forward(const TensorT<T>& x, const TensorT<T>& weights,
                      const TensorT<T>& bias) {
  if (x.rank() != 1 || weights.rank() != 2 || bias.rank() != 1)
    throw ShapeError("fc: expects x[n], W[p,n], b[p]");
  const std::size_t n = x.size(), p = weights.extent(0);
  if (weights.extent(1) != n || bias.size() != p)
    throw ShapeError(msg("fc: W ", shape_string(weights.shape()), " b[", bias.size(),
                         "] incompatible with x[", n, "]"));
  TensorT<T> out({p});
  for (std::size_t i = 0; i < p; ++i)
    out[i] = bias[i] + dot_row(weights.data() + i * n, x.data(), n);
  return out;
}

template <typename T>
struct FcGrads {
  TensorT<T> input;
  TensorT<T> weights;
  TensorT<T> bias;
};

template <typename T>
FcGrads<T> fc_backward(const TensorT<T>& x, const TensorT<T>& weights,
                       const TensorT<T>& grad_out) {
  const std::size_t n = x.size(), p = weights.extent(0);
  if (grad_out.size() != p)
    throw ShapeError(msg("fc_backward: grad size ", grad_out.size(), " != ", p));
  FcGrads<T> g{TensorT<T>({n}), TensorT<T>(weights.shape()), grad_out};
  for (std::size_t i = 0; i < p; ++i) {
    axpy_row(g.input.data(), weights.data() + i * n, grad_out[i], n);
    axpy_row(g.weights.data() + i * n, x.data(), grad_out[i], n);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Inverted dropout
// ---------------------------------------------------------------------------

template <typename T>
struct DropoutResult {
  TensorT<T> output;
  std::vector<std::uint8_t> mask;  // 1 = kept
};

template <typename T>
DropoutResult<T> dropout_forward(const TensorT<T>& x, double rate, Phase phase,
                                 Rng& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw ShapeError(msg("dropout rate ", rate, " outside [0,1)"));
  DropoutResult<T> r{x, {}};
  if (phase == Phase::kInfer || rate == 0.0) return r;
  const T keep_scale = T(1.0 / (1.0 - rate));
  r.mask.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const bool keep = rng.next_unit() >= rate;
    r.mask[i] = keep ? 1 : 0;
    r.output[i] = keep ? x[i] * keep_scale : T(0);
  }
  return r;
}

template <typename T>
TensorT<T> dropout_backward(const std::vector<std::uint8_t>& mask, double rate,
                            const TensorT<T>& grad_out) {
  if (mask.empty()) return grad_out;  // infer phase or rate 0: identity
  TensorT<T> dx(grad_out.shape());
  const T keep_scale = T(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < grad_out.size(); ++i)
    dx[i] = mask[i] ? grad_out[i] * keep_scale : T(0);
  return dx;
}

// ---------------------------------------------------------------------------
// Softmax with max-subtraction
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> softmax(const TensorT<T>& logits) {
  if (logits.rank() != 1 || logits.size() < 2)
    throw ShapeError(msg("softmax expects a vector of >= 2 logits, got ",
                         shape_string(logits.shape())));
  TensorT<T> out(logits.shape());
  T mx = logits[0];
  for (std::size_t i = 1; i < logits.size(); ++i) mx = std::max(mx, logits[i]);
  T sum = T(0);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] /= sum;
  return out;
}

// d(loss)/d(logits) given d(loss)/d(probs), via the softmax Jacobian.
template <typename T>
TensorT<T> softmax_backward(const TensorT<T>& probs, const TensorT<T>& grad_probs) {
  TensorT<T> dz(probs.shape());
  T inner = T(0);
  for (std::size_t i = 0; i < probs.size(); ++i) inner += grad_probs[i] * probs[i];
  for (std::size_t i = 0; i < probs.size(); ++i)
    dz[i] = probs[i] * (grad_probs[i] - inner);
  return dz;
}

}  // namespace hippofuse
