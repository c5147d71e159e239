#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

namespace udeoc {

enum class Activation { kLinear, kGelu, kTanh };

/// Exact GELU, x * Phi(x) with Phi the standard normal CDF.
double gelu(double x);
double gelu_prime(double x);

struct Layer {
  std::size_t inputs = 0;
  std::size_t outputs = 0;
  std::vector<double> weights;  // outputs x inputs, row-major
  std::vector<double> bias;     // outputs
  Activation activation = Activation::kLinear;

  double w(std::size_t row, std::size_t col) const { return weights[row * inputs + col]; }
};

/// Layered weights and biases of a fully connected network. Parameters are
/// flattened layer by layer, W row-major then b.
class MlpParams {
 public:
  MlpParams() = default;
  /// Throws InvalidArgument if adjacent layer sizes do not chain or any entry is non-finite.
  explicit MlpParams(std::vector<Layer> layers);

  /// All-zero network with the given widths (input first) and one activation per layer.
  static MlpParams zeros(std::span<const std::size_t> widths, std::span<const Activation> activations);

  const std::vector<Layer>& layers() const { return layers_; }
  std::size_t input_dim() const { return layers_.empty() ? 0 : layers_.front().inputs; }
  std::size_t output_dim() const { return layers_.empty() ? 0 : layers_.back().outputs; }
  std::size_t parameter_count() const;

  std::vector<double> flatten() const;
  /// Same architecture, new parameter values.
  MlpParams with_values(std::span<const double> flat) const;

  friend bool operator==(const MlpParams& a, const MlpParams& b);

 private:
  std::vector<Layer> layers_;
};

bool operator==(const Layer& a, const Layer& b);

/// Uniform(-sqrt(6/(n_in+n_out)), +sqrt(6/(n_in+n_out))) weights, zero biases.
MlpParams init_scaled_uniform(std::span<const std::size_t> widths,
                              std::span<const Activation> activations, std::uint64_t seed);

/// Input width m, two GELU hidden layers of width 10, tanh output of width m.
MlpParams control_network(std::size_t n_controls, std::uint64_t seed);

struct ForwardCache {
  std::vector<double> input;                      // a^(1)
  std::vector<std::vector<double>> pre;           // z^(l) per layer
  std::vector<std::vector<double>> activations;   // a^(l) per layer
};

struct MlpGradient {
  std::vector<std::vector<double>> weights;  // dL/dW per layer, row-major
  std::vector<std::vector<double>> biases;   // dL/db per layer
  std::vector<std::vector<double>> deltas;   // delta^(l) = dL/dz^(l)

  std::vector<double> flatten() const;
};

/// Single-sample forward pass. Throws InvalidArgument on input size mismatch.
std::pair<std::vector<double>, ForwardCache> forward(const MlpParams& params,
                                                   std::span<const double> input);

/// Backpropagates dL/da^(L) = output_error through the recorded pass.
MlpGradient backward(const MlpParams& params, const ForwardCache& cache,
                     std::span<const double> output_error);

/// Batched pass; buffers are feature-major (feature k of sample b at k * batch + b).
struct BatchCache {
  std::size_t batch = 0;
  std::vector<std::vector<double>> activations;  // [0] = input, then one per layer
  std::vector<std::vector<double>> derivatives;  // sigma'(z^(l)) per layer
  std::span<const double> output() const { return activations.back(); }
};

BatchCache forward_batch(const MlpParams& params, std::span<const double> inputs, std::size_t batch);

/// Flat parameter gradient of sum_b output_error[:, b] . a^(L)[:, b].
std::vector<double> backward_batch(const MlpParams& params, const BatchCache& cache,
                                   std::span<const double> output_error);

/// Feature-major inputs (t, ..., t) for a time-only control network.
std::vector<double> time_inputs(std::span<const double> times, std::size_t input_dim);

/// CSV rows `layer,kind,row,col,value` (kind W or b, biases use col 0).
void write_snapshot(std::ostream& out, const MlpParams& params);
/// Reads values into a network with the architecture of `shape`.
MlpParams read_snapshot(std::istream& in, const MlpParams& shape);

}  // namespace udeoc
