// Reference kernels. Every SIMD variant is tested against these.

#include <cmath>
#include <numbers>

#include "internal.hpp"

namespace udeoc::kernels::detail {
namespace {

void DenseForward(const double* w, const double* bias, std::size_t rows, std::size_t cols,
                  const double* in, std::size_t batch, double* out) {
  for (std::size_t j = 0; j < rows; ++j) {
    double* out_row = out + j * batch;
    for (std::size_t b = 0; b < batch; ++b) out_row[b] = bias[j];
    for (std::size_t k = 0; k < cols; ++k) {
      const double wjk = w[j * cols + k];
      const double* in_row = in + k * batch;
      for (std::size_t b = 0; b < batch; ++b) out_row[b] += wjk * in_row[b];
    }
  }
}

void DenseBackwardInput(const double* w, std::size_t rows, std::size_t cols, const double* delta,
                        std::size_t batch, double* grad_in) {
  for (std::size_t k = 0; k < cols; ++k) {
    double* g_row = grad_in + k * batch;
    for (std::size_t b = 0; b < batch; ++b) g_row[b] = 0.0;
    for (std::size_t j = 0; j < rows; ++j) {
      const double wjk = w[j * cols + k];
      const double* d_row = delta + j * batch;
      for (std::size_t b = 0; b < batch; ++b) g_row[b] += wjk * d_row[b];
    }
  }
}

void DenseBackwardParams(const double* delta, const double* in, std::size_t rows,
                         std::size_t cols, std::size_t batch, double* grad_w, double* grad_b) {
  for (std::size_t j = 0; j < rows; ++j) {
    const double* d_row = delta + j * batch;
    double sum_b = 0.0;
    for (std::size_t b = 0; b < batch; ++b) sum_b += d_row[b];
    grad_b[j] += sum_b;
    for (std::size_t k = 0; k < cols; ++k) {
      const double* in_row = in + k * batch;
      double sum = 0.0;
      for (std::size_t b = 0; b < batch; ++b) sum += d_row[b] * in_row[b];
      grad_w[j * cols + k] += sum;
    }
  }
}

void Gelu(const double* z, std::size_t n, double* a, double* da) {
  constexpr double kInvSqrt2 = 1.0 / std::numbers::sqrt2;
  constexpr double kInvSqrt2Pi = std::numbers::inv_sqrtpi / std::numbers::sqrt2;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = z[i];
    const double cdf = 0.5 * std::erfc(-x * kInvSqrt2);
    a[i] = x * cdf;
    da[i] = cdf + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
  }
}

void Tanh(const double* z, std::size_t n, double* a, double* da) {
  for (std::size_t i = 0; i < n; ++i) {
    const double t = std::tanh(z[i]);
    a[i] = t;
    da[i] = 1.0 - t * t;
  }
}

void MultiplyInplace(double* x, const double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] *= y[i];
}

}  // namespace

const Table& scalar_table() {
  static const Table t{DenseForward, DenseBackwardInput, DenseBackwardParams,
                       Gelu,         Tanh,               MultiplyInplace};
  return t;
}

}  // namespace udeoc::kernels::detail
