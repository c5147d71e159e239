#pragma once

// Batched dense-layer kernels used by the MLP. Activations are stored
// feature-major: element (feature k, sample b) lives at k * batch + b, so
// SIMD lanes run across samples.

#include <cstddef>
#include <span>
#include <string_view>

namespace udeoc::kernels {

enum class Backend { kScalar, kAvx2 };

std::string_view backend_name(Backend backend);
bool backend_supported(Backend backend);

/// Backend used by the free functions below. Chosen once from CPU features;
/// the environment variable UDEOC_SIMD=scalar forces the reference path.
Backend active_backend();
/// Throws InvalidArgument if the backend is not supported on this CPU.
void set_backend(Backend backend);

/// out[j, b] = bias[j] + sum_k weights[j, k] * in[k, b]; weights is rows x cols.
void dense_forward(std::span<const double> weights, std::span<const double> bias, std::size_t rows,
                   std::size_t cols, std::span<const double> in, std::size_t batch,
                   std::span<double> out);

/// grad_in[k, b] = sum_j weights[j, k] * delta[j, b].
void dense_backward_input(std::span<const double> weights, std::size_t rows, std::size_t cols,
                          std::span<const double> delta, std::size_t batch,
                          std::span<double> grad_in);

/// grad_w[j, k] += sum_b delta[j, b] * in[k, b];  grad_b[j] += sum_b delta[j, b].
void dense_backward_params(std::span<const double> delta, std::span<const double> in,
                           std::size_t rows, std::size_t cols, std::size_t batch,
                           std::span<double> grad_w, std::span<double> grad_b);

/// a = GELU(z) (exact erf form), da = GELU'(z).
void gelu(std::span<const double> z, std::span<double> a, std::span<double> da);

/// a = tanh(z), da = 1 - a^2.
void tanh_act(std::span<const double> z, std::span<double> a, std::span<double> da);

/// x *= y elementwise.
void multiply_inplace(std::span<double> x, std::span<const double> y);

/// Explicit-backend entry points, used for equivalence testing.
struct Table {
  void (*dense_forward)(const double* w, const double* bias, std::size_t rows, std::size_t cols,
                        const double* in, std::size_t batch, double* out);
  void (*dense_backward_input)(const double* w, std::size_t rows, std::size_t cols,
                               const double* delta, std::size_t batch, double* grad_in);
  void (*dense_backward_params)(const double* delta, const double* in, std::size_t rows,
                                std::size_t cols, std::size_t batch, double* grad_w,
                                double* grad_b);
  void (*gelu)(const double* z, std::size_t n, double* a, double* da);
  void (*tanh_act)(const double* z, std::size_t n, double* a, double* da);
  void (*multiply_inplace)(double* x, const double* y, std::size_t n);
};

/// Throws InvalidArgument if the backend is not supported on this CPU.
const Table& table(Backend backend);

}  // namespace udeoc::kernels
