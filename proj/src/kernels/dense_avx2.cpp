// AVX2 + FMA variants. Compiled with -mavx2 -mfma; only reached after a
// runtime CPU check in dispatch.cpp.

#include <immintrin.h>

#include <cmath>
#include <numbers>

#include "internal.hpp"

namespace udeoc::kernels::detail {
namespace {

constexpr std::size_t kLanes = 4;
constexpr std::size_t kBlock = 4 * kLanes;

inline double HorizontalSum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

// out[j, b] = bias[j] + sum_k w[j * w_stride_j + k * w_stride_k] * in[k, b]
template <bool kHasBias>
void AffineBatch(const double* w, std::size_t w_stride_j, std::size_t w_stride_k,
                 const double* bias, std::size_t rows, std::size_t cols, const double* in,
                 std::size_t batch, double* out) {
  std::size_t b0 = 0;
  for (; b0 + kBlock <= batch; b0 += kBlock) {
    for (std::size_t j = 0; j < rows; ++j) {
      const __m256d init = _mm256_set1_pd(kHasBias ? bias[j] : 0.0);
      __m256d acc0 = init, acc1 = init, acc2 = init, acc3 = init;
      for (std::size_t k = 0; k < cols; ++k) {
        const __m256d wv = _mm256_broadcast_sd(w + j * w_stride_j + k * w_stride_k);
        const double* src = in + k * batch + b0;
        acc0 = _mm256_fmadd_pd(wv, _mm256_loadu_pd(src), acc0);
        acc1 = _mm256_fmadd_pd(wv, _mm256_loadu_pd(src + kLanes), acc1);
        acc2 = _mm256_fmadd_pd(wv, _mm256_loadu_pd(src + 2 * kLanes), acc2);
        acc3 = _mm256_fmadd_pd(wv, _mm256_loadu_pd(src + 3 * kLanes), acc3);
      }
      double* dst = out + j * batch + b0;
      _mm256_storeu_pd(dst, acc0);
      _mm256_storeu_pd(dst + kLanes, acc1);
      _mm256_storeu_pd(dst + 2 * kLanes, acc2);
      _mm256_storeu_pd(dst + 3 * kLanes, acc3);
    }
  }
  for (; b0 + kLanes <= batch; b0 += kLanes) {
    for (std::size_t j = 0; j < rows; ++j) {
      __m256d acc = _mm256_set1_pd(kHasBias ? bias[j] : 0.0);
      for (std::size_t k = 0; k < cols; ++k) {
        const __m256d wv = _mm256_broadcast_sd(w + j * w_stride_j + k * w_stride_k);
        acc = _mm256_fmadd_pd(wv, _mm256_loadu_pd(in + k * batch + b0), acc);
      }
      _mm256_storeu_pd(out + j * batch + b0, acc);
    }
  }
  for (; b0 < batch; ++b0) {
    for (std::size_t j = 0; j < rows; ++j) {
      double acc = kHasBias ? bias[j] : 0.0;
      for (std::size_t k = 0; k < cols; ++k)
        acc = std::fma(w[j * w_stride_j + k * w_stride_k], in[k * batch + b0], acc);
      out[j * batch + b0] = acc;
    }
  }
}

void DenseForward(const double* w, const double* bias, std::size_t rows, std::size_t cols,
                  const double* in, std::size_t batch, double* out) {
  AffineBatch<true>(w, cols, 1, bias, rows, cols, in, batch, out);
}

void DenseBackwardInput(const double* w, std::size_t rows, std::size_t cols, const double* delta,
                        std::size_t batch, double* grad_in) {
  // Transposed access: output feature k reads column k of w.
  AffineBatch<false>(w, 1, cols, nullptr, cols, rows, delta, batch, grad_in);
}

void DenseBackwardParams(const double* delta, const double* in, std::size_t rows,
                         std::size_t cols, std::size_t batch, double* grad_w, double* grad_b) {
  for (std::size_t j = 0; j < rows; ++j) {
    const double* d_row = delta + j * batch;
    {
      __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
      std::size_t b = 0;
      for (; b + 2 * kLanes <= batch; b += 2 * kLanes) {
        s0 = _mm256_add_pd(s0, _mm256_loadu_pd(d_row + b));
        s1 = _mm256_add_pd(s1, _mm256_loadu_pd(d_row + b + kLanes));
      }
      double sum = HorizontalSum(_mm256_add_pd(s0, s1));
      for (; b < batch; ++b) sum += d_row[b];
      grad_b[j] += sum;
    }
    for (std::size_t k = 0; k < cols; ++k) {
      const double* in_row = in + k * batch;
      __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
      std::size_t b = 0;
      for (; b + 2 * kLanes <= batch; b += 2 * kLanes) {
        s0 = _mm256_fmadd_pd(_mm256_loadu_pd(d_row + b), _mm256_loadu_pd(in_row + b), s0);
        s1 = _mm256_fmadd_pd(_mm256_loadu_pd(d_row + b + kLanes),
                             _mm256_loadu_pd(in_row + b + kLanes), s1);
      }
      double sum = HorizontalSum(_mm256_add_pd(s0, s1));
      for (; b < batch; ++b) sum = std::fma(d_row[b], in_row[b], sum);
      grad_w[j * cols + k] += sum;
    }
  }
}

// exp(v) for v <= 0. Cody-Waite reduction to |r| <= ln2/2 and a degree-12
// Taylor polynomial; arguments below the normal range flush to zero.
inline __m256d ExpNonPositive(__m256d v) {
  const __m256d kMin = _mm256_set1_pd(-708.0);
  const __m256d underflow = _mm256_cmp_pd(v, kMin, _CMP_LT_OQ);
  v = _mm256_max_pd(v, kMin);
  const __m256d n = _mm256_round_pd(_mm256_mul_pd(v, _mm256_set1_pd(std::numbers::log2e)),
                                    _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_fnmadd_pd(n, _mm256_set1_pd(6.93147180369123816490e-01), v);
  r = _mm256_fnmadd_pd(n, _mm256_set1_pd(1.90821492927058770002e-10), r);

  constexpr double kInvFact[13] = {1.0,
                                   1.0,
                                   1.0 / 2,
                                   1.0 / 6,
                                   1.0 / 24,
                                   1.0 / 120,
                                   1.0 / 720,
                                   1.0 / 5040,
                                   1.0 / 40320,
                                   1.0 / 362880,
                                   1.0 / 3628800,
                                   1.0 / 39916800,
                                   1.0 / 479001600};
  __m256d p = _mm256_set1_pd(kInvFact[12]);
  for (int i = 11; i >= 0; --i) p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(kInvFact[i]));

  const __m256d magic = _mm256_set1_pd(0x1.8p52);
  const __m256i ni = _mm256_sub_epi64(_mm256_castpd_si256(_mm256_add_pd(n, magic)),
                                      _mm256_castpd_si256(magic));
  const __m256i bits = _mm256_slli_epi64(_mm256_add_epi64(ni, _mm256_set1_epi64x(1023)), 52);
  const __m256d result = _mm256_mul_pd(p, _mm256_castsi256_pd(bits));
  return _mm256_andnot_pd(underflow, result);
}

// Chebyshev series of erfcx(x) in Z = (L - x) / (L + x), L = 4, valid for
// every x >= 0 (relative error ~5e-15).
constexpr double kErfcxL = 4.0;
constexpr double kErfcxCoeffs[24] = {
    2.98101793693657580e-01,  4.29086441255805362e-01,  1.80272565687710551e-01,
    6.52375244973489865e-02,  2.03672565767448639e-02,  5.44908706645900760e-03,
    1.22785153726067547e-03,  2.24697942187730498e-04,  3.06854311309895126e-05,
    2.31782349994685353e-06,  -1.46283564847275776e-07, -6.92783051874894869e-08,
    -6.88311076336284643e-09, 6.85848914944544974e-10,  2.45937349894966119e-10,
    7.81490917403097508e-12,  -5.88939473380501340e-12, -6.86923043935936313e-13,
    1.25504925597193036e-13,  2.82325115500815531e-14,  -2.60316123510942137e-15,
    -1.02504845588779614e-15, 5.72211298781140774e-17,  3.82975575671367379e-17};

inline __m256d Erfcx(__m256d x) {
  const __m256d l = _mm256_set1_pd(kErfcxL);
  const __m256d z = _mm256_div_pd(_mm256_sub_pd(l, x), _mm256_add_pd(l, x));
  const __m256d two_z = _mm256_add_pd(z, z);
  __m256d b1 = _mm256_setzero_pd();
  __m256d b2 = _mm256_setzero_pd();
  for (int n = 23; n >= 1; --n) {
    const __m256d next = _mm256_add_pd(_mm256_fmsub_pd(two_z, b1, b2),
                                       _mm256_set1_pd(kErfcxCoeffs[n]));
    b2 = b1;
    b1 = next;
  }
  return _mm256_add_pd(_mm256_fmsub_pd(z, b1, b2), _mm256_set1_pd(kErfcxCoeffs[0]));
}

void Gelu(const double* z, std::size_t n, double* a, double* da) {
  const __m256d half = _mm256_set1_pd(0.5);
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d inv_sqrt2 = _mm256_set1_pd(1.0 / std::numbers::sqrt2);
  const __m256d inv_sqrt2pi = _mm256_set1_pd(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
  const __m256d sign_mask = _mm256_set1_pd(-0.0);
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    const __m256d x = _mm256_loadu_pd(z + i);
    const __m256d r = _mm256_mul_pd(_mm256_andnot_pd(sign_mask, x), inv_sqrt2);
    const __m256d e = ExpNonPositive(_mm256_mul_pd(_mm256_mul_pd(_mm256_sub_pd(_mm256_setzero_pd(), half), x), x));
    // q = erfc(|x| / sqrt2) / 2
    const __m256d q = _mm256_mul_pd(_mm256_mul_pd(half, e), Erfcx(r));
    const __m256d negative = _mm256_cmp_pd(x, _mm256_setzero_pd(), _CMP_LT_OQ);
    const __m256d cdf = _mm256_blendv_pd(_mm256_sub_pd(one, q), q, negative);
    _mm256_storeu_pd(a + i, _mm256_mul_pd(x, cdf));
    _mm256_storeu_pd(da + i, _mm256_fmadd_pd(_mm256_mul_pd(x, inv_sqrt2pi), e, cdf));
  }
  if (i < n) scalar_table().gelu(z + i, n - i, a + i, da + i);
}

void MultiplyInplace(double* x, const double* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes)
    _mm256_storeu_pd(x + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) x[i] *= y[i];
}

}  // namespace

const Table& avx2_table() {
  // tanh only runs on the output layer (2-3 features); the scalar one is reused.
  static const Table t{DenseForward, DenseBackwardInput, DenseBackwardParams,
                       Gelu,         scalar_table().tanh_act, MultiplyInplace};
  return t;
}

}  // namespace udeoc::kernels::detail
