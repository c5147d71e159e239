#include <atomic>
#include <cstdlib>
#include <string>

#include "internal.hpp"
#include "udeoc/error.hpp"

namespace udeoc::kernels {
namespace {

Backend DetectBackend() {
  if (const char* env = std::getenv("UDEOC_SIMD"); env != nullptr && std::string(env) == "scalar")
    return Backend::kScalar;
  if (backend_supported(Backend::kAvx2)) return Backend::kAvx2;
  return Backend::kScalar;
}

std::atomic<Backend>& ActiveSlot() {
  static std::atomic<Backend> slot{DetectBackend()};
  return slot;
}

}  // namespace

std::string_view backend_name(Backend backend) {
  switch (backend) {
    case Backend::kScalar:
      return "scalar";
    case Backend::kAvx2:
      return "avx2";
  }
  return "unknown";
}

bool backend_supported(Backend backend) {
  switch (backend) {
    case Backend::kScalar:
      return true;
    case Backend::kAvx2:
#if defined(UDEOC_HAVE_AVX2)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

Backend active_backend() { return ActiveSlot().load(std::memory_order_relaxed); }

void set_backend(Backend backend) {
  if (!backend_supported(backend))
    throw InvalidArgument("kernel backend '" + std::string(backend_name(backend)) +
                          "' is not supported on this CPU");
  ActiveSlot().store(backend, std::memory_order_relaxed);
}

const Table& table(Backend backend) {
  if (!backend_supported(backend))
    throw InvalidArgument("kernel backend '" + std::string(backend_name(backend)) +
                          "' is not supported on this CPU");
#if defined(UDEOC_HAVE_AVX2)
  if (backend == Backend::kAvx2) return detail::avx2_table();
#endif
  return detail::scalar_table();
}

namespace {
const Table& Active() { return table(active_backend()); }

void CheckSize(std::size_t have, std::size_t need, const char* what) {
  if (have < need) throw InvalidArgument(std::string("kernel buffer too small: ") + what);
}
}  // namespace

void dense_forward(std::span<const double> weights, std::span<const double> bias, std::size_t rows,
                   std::size_t cols, std::span<const double> in, std::size_t batch,
                   std::span<double> out) {
  CheckSize(weights.size(), rows * cols, "weights");
  CheckSize(bias.size(), rows, "bias");
  CheckSize(in.size(), cols * batch, "input");
  CheckSize(out.size(), rows * batch, "output");
  Active().dense_forward(weights.data(), bias.data(), rows, cols, in.data(), batch, out.data());
}

void dense_backward_input(std::span<const double> weights, std::size_t rows, std::size_t cols,
                          std::span<const double> delta, std::size_t batch,
                          std::span<double> grad_in) {
  CheckSize(weights.size(), rows * cols, "weights");
  CheckSize(delta.size(), rows * batch, "delta");
  CheckSize(grad_in.size(), cols * batch, "grad_in");
  Active().dense_backward_input(weights.data(), rows, cols, delta.data(), batch, grad_in.data());
}

void dense_backward_params(std::span<const double> delta, std::span<const double> in,
                           std::size_t rows, std::size_t cols, std::size_t batch,
                           std::span<double> grad_w, std::span<double> grad_b) {
  CheckSize(delta.size(), rows * batch, "delta");
  CheckSize(in.size(), cols * batch, "input");
  CheckSize(grad_w.size(), rows * cols, "grad_w");
  CheckSize(grad_b.size(), rows, "grad_b");
  Active().dense_backward_params(delta.data(), in.data(), rows, cols, batch, grad_w.data(),
                                 grad_b.data());
}

void gelu(std::span<const double> z, std::span<double> a, std::span<double> da) {
  CheckSize(a.size(), z.size(), "gelu output");
  CheckSize(da.size(), z.size(), "gelu derivative");
  Active().gelu(z.data(), z.size(), a.data(), da.data());
}

void tanh_act(std::span<const double> z, std::span<double> a, std::span<double> da) {
  CheckSize(a.size(), z.size(), "tanh output");
  CheckSize(da.size(), z.size(), "tanh derivative");
  Active().tanh_act(z.data(), z.size(), a.data(), da.data());
}

void multiply_inplace(std::span<double> x, std::span<const double> y) {
  CheckSize(y.size(), x.size(), "multiplier");
  Active().multiply_inplace(x.data(), y.data(), x.size());
}

}  // namespace udeoc::kernels
