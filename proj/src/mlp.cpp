#include "udeoc/mlp.hpp"

#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>
#include <string>

#include "udeoc/error.hpp"
#include "udeoc/kernels.hpp"
#include "util.hpp"

namespace udeoc {

double gelu(double x) { return x * (0.5 * std::erfc(-x * (1.0 / std::numbers::sqrt2))); }

double gelu_prime(double x) {
  const double cdf = 0.5 * std::erfc(-x * (1.0 / std::numbers::sqrt2));
  return cdf + x * (std::numbers::inv_sqrtpi / std::numbers::sqrt2) * std::exp(-0.5 * x * x);
}

namespace {

double Activate(Activation act, double z) {
  switch (act) {
    case Activation::kLinear:
      return z;
    case Activation::kGelu:
      return gelu(z);
    case Activation::kTanh:
      return std::tanh(z);
  }
  return z;
}

double ActivatePrime(Activation act, double z) {
  switch (act) {
    case Activation::kLinear:
      return 1.0;
    case Activation::kGelu:
      return gelu_prime(z);
    case Activation::kTanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
  }
  return 1.0;
}

}  // namespace

MlpParams::MlpParams(std::vector<Layer> layers) : layers_(std::move(layers)) {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    if (layer.inputs == 0 || layer.outputs == 0)
      throw InvalidArgument("layer " + std::to_string(l) + " has zero width");
    if (layer.weights.size() != layer.inputs * layer.outputs || layer.bias.size() != layer.outputs)
      throw InvalidArgument("layer " + std::to_string(l) + " storage does not match its shape");
    if (l > 0 && layer.inputs != layers_[l - 1].outputs)
      throw InvalidArgument("layer " + std::to_string(l) + " input width does not chain");
    for (double v : layer.weights)
      if (!std::isfinite(v)) throw InvalidArgument("non-finite weight");
    for (double v : layer.bias)
      if (!std::isfinite(v)) throw InvalidArgument("non-finite bias");
  }
}

MlpParams MlpParams::zeros(std::span<const std::size_t> widths,
                           std::span<const Activation> activations) {
  if (widths.size() < 2 || activations.size() != widths.size() - 1)
    throw InvalidArgument("need one activation per layer and at least two widths");
  std::vector<Layer> layers;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    Layer layer;
    layer.inputs = widths[l];
    layer.outputs = widths[l + 1];
    layer.weights.assign(layer.inputs * layer.outputs, 0.0);
    layer.bias.assign(layer.outputs, 0.0);
    layer.activation = activations[l];
    layers.push_back(std::move(layer));
  }
  return MlpParams(std::move(layers));
}

std::size_t MlpParams::parameter_count() const {
  std::size_t n = 0;
  for (const Layer& layer : layers_) n += layer.weights.size() + layer.bias.size();
  return n;
}

std::vector<double> MlpParams::flatten() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const Layer& layer : layers_) {
    flat.insert(flat.end(), layer.weights.begin(), layer.weights.end());
    flat.insert(flat.end(), layer.bias.begin(), layer.bias.end());
  }
  return flat;
}

MlpParams MlpParams::with_values(std::span<const double> flat) const {
  if (flat.size() != parameter_count())
    throw InvalidArgument("flat parameter vector has " + std::to_string(flat.size()) +
                          " entries, network has " + std::to_string(parameter_count()));
  std::vector<Layer> layers = layers_;
  std::size_t pos = 0;
  for (Layer& layer : layers) {
    for (double& w : layer.weights) w = flat[pos++];
    for (double& b : layer.bias) b = flat[pos++];
  }
  return MlpParams(std::move(layers));
}

bool operator==(const Layer& a, const Layer& b) {
  return a.inputs == b.inputs && a.outputs == b.outputs && a.weights == b.weights &&
         a.bias == b.bias && a.activation == b.activation;
}

bool operator==(const MlpParams& a, const MlpParams& b) { return a.layers_ == b.layers_; }

MlpParams init_scaled_uniform(std::span<const std::size_t> widths,
                              std::span<const Activation> activations, std::uint64_t seed) {
  MlpParams shape = MlpParams::zeros(widths, activations);
  std::mt19937_64 rng(seed);
  std::vector<double> flat;
  flat.reserve(shape.parameter_count());
  for (const Layer& layer : shape.layers()) {
    const double limit = std::sqrt(6.0 / static_cast<double>(layer.inputs + layer.outputs));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (std::size_t i = 0; i < layer.weights.size(); ++i) flat.push_back(dist(rng));
    for (std::size_t i = 0; i < layer.bias.size(); ++i) flat.push_back(0.0);
  }
  return shape.with_values(flat);
}

MlpParams control_network(std::size_t n_controls, std::uint64_t seed) {
  const std::size_t widths[] = {n_controls, 10, 10, n_controls};
  const Activation acts[] = {Activation::kGelu, Activation::kGelu, Activation::kTanh};
  return init_scaled_uniform(widths, acts, seed);
}

std::vector<double> MlpGradient::flatten() const {
  std::vector<double> flat;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    flat.insert(flat.end(), weights[l].begin(), weights[l].end());
    flat.insert(flat.end(), biases[l].begin(), biases[l].end());
  }
  return flat;
}

std::pair<std::vector<double>, ForwardCache> forward(const MlpParams& params,
                                                   std::span<const double> input) {
  if (input.size() != params.input_dim())
    throw InvalidArgument("network input has size " + std::to_string(input.size()) +
                          ", expected " + std::to_string(params.input_dim()));
  ForwardCache cache;
  cache.input.assign(input.begin(), input.end());
  const std::vector<double>* prev = &cache.input;
  for (const Layer& layer : params.layers()) {
    std::vector<double> z(layer.outputs);
    std::vector<double> a(layer.outputs);
    for (std::size_t j = 0; j < layer.outputs; ++j) {
      double acc = layer.bias[j];
      for (std::size_t k = 0; k < layer.inputs; ++k) acc += layer.w(j, k) * (*prev)[k];
      z[j] = acc;
      a[j] = Activate(layer.activation, acc);
    }
    cache.pre.push_back(std::move(z));
    cache.activations.push_back(std::move(a));
    prev = &cache.activations.back();
  }
  return {cache.activations.back(), std::move(cache)};
}

MlpGradient backward(const MlpParams& params, const ForwardCache& cache,
                     std::span<const double> output_error) {
  const auto& layers = params.layers();
  if (cache.pre.size() != layers.size() || cache.activations.size() != layers.size() ||
      cache.input.size() != params.input_dim())
    throw InvalidArgument("forward cache does not match the network");
  for (std::size_t l = 0; l < layers.size(); ++l)
    if (cache.pre[l].size() != layers[l].outputs)
      throw InvalidArgument("forward cache layer " + std::to_string(l) + " has the wrong width");
  if (output_error.size() != params.output_dim())
    throw InvalidArgument("output error has the wrong size");

  const std::size_t n_layers = layers.size();
  MlpGradient grad;
  grad.weights.resize(n_layers);
  grad.biases.resize(n_layers);
  grad.deltas.resize(n_layers);

  std::vector<double> upstream(output_error.begin(), output_error.end());  // dL/da^(l)
  for (std::size_t l = n_layers; l-- > 0;) {
    const Layer& layer = layers[l];
    std::vector<double>& delta = grad.deltas[l];
    delta.resize(layer.outputs);
    for (std::size_t j = 0; j < layer.outputs; ++j)
      delta[j] = upstream[j] * ActivatePrime(layer.activation, cache.pre[l][j]);

    const std::vector<double>& a_prev = l == 0 ? cache.input : cache.activations[l - 1];
    grad.weights[l].resize(layer.weights.size());
    for (std::size_t j = 0; j < layer.outputs; ++j)
      for (std::size_t k = 0; k < layer.inputs; ++k)
        grad.weights[l][j * layer.inputs + k] = delta[j] * a_prev[k];
    grad.biases[l] = delta;

    std::vector<double> next(layer.inputs, 0.0);
    for (std::size_t j = 0; j < layer.outputs; ++j)
      for (std::size_t k = 0; k < layer.inputs; ++k) next[k] += layer.w(j, k) * delta[j];
    upstream = std::move(next);
  }
  return grad;
}

BatchCache forward_batch(const MlpParams& params, std::span<const double> inputs, std::size_t batch) {
  if (inputs.size() != params.input_dim() * batch)
    throw InvalidArgument("batched input has the wrong size");
  BatchCache cache;
  cache.batch = batch;
  cache.activations.emplace_back(inputs.begin(), inputs.end());
  for (const Layer& layer : params.layers()) {
    std::vector<double> z(layer.outputs * batch);
    kernels::dense_forward(layer.weights, layer.bias, layer.outputs, layer.inputs,
                           cache.activations.back(), batch, z);
    std::vector<double> a(z.size());
    std::vector<double> da(z.size());
    switch (layer.activation) {
      case Activation::kLinear:
        a = z;
        da.assign(z.size(), 1.0);
        break;
      case Activation::kGelu:
        kernels::gelu(z, a, da);
        break;
      case Activation::kTanh:
        kernels::tanh_act(z, a, da);
        break;
    }
    cache.activations.push_back(std::move(a));
    cache.derivatives.push_back(std::move(da));
  }
  return cache;
}

std::vector<double> backward_batch(const MlpParams& params, const BatchCache& cache,
                                   std::span<const double> output_error) {
  const auto& layers = params.layers();
  const std::size_t batch = cache.batch;
  if (cache.activations.size() != layers.size() + 1 || cache.derivatives.size() != layers.size())
    throw InvalidArgument("batch cache does not match the network");
  if (output_error.size() != params.output_dim() * batch)
    throw InvalidArgument("batched output error has the wrong size");

  // Per-layer gradient storage in flat order.
  std::vector<std::size_t> offsets(layers.size());
  std::size_t total = 0;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    offsets[l] = total;
    total += layers[l].weights.size() + layers[l].bias.size();
  }
  std::vector<double> flat(total, 0.0);

  std::vector<double> delta(output_error.begin(), output_error.end());
  std::vector<double> upstream;
  for (std::size_t l = layers.size(); l-- > 0;) {
    const Layer& layer = layers[l];
    kernels::multiply_inplace(delta, cache.derivatives[l]);
    std::span<double> gw(flat.data() + offsets[l], layer.weights.size());
    std::span<double> gb(flat.data() + offsets[l] + layer.weights.size(), layer.bias.size());
    kernels::dense_backward_params(delta, cache.activations[l], layer.outputs, layer.inputs, batch,
                                   gw, gb);
    if (l > 0) {
      upstream.resize(layer.inputs * batch);
      kernels::dense_backward_input(layer.weights, layer.outputs, layer.inputs, delta, batch,
                                    upstream);
      std::swap(delta, upstream);
    }
  }
  return flat;
}

std::vector<double> time_inputs(std::span<const double> times, std::size_t input_dim) {
  std::vector<double> inputs;
  inputs.reserve(times.size() * input_dim);
  for (std::size_t k = 0; k < input_dim; ++k) inputs.insert(inputs.end(), times.begin(), times.end());
  return inputs;
}

void write_snapshot(std::ostream& out, const MlpParams& params) {
  out << "layer,kind,row,col,value\n";
  const auto& layers = params.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Layer& layer = layers[l];
    for (std::size_t j = 0; j < layer.outputs; ++j)
      for (std::size_t k = 0; k < layer.inputs; ++k)
        out << l << ",W," << j << ',' << k << ',' << format_double(layer.w(j, k)) << '\n';
    for (std::size_t j = 0; j < layer.outputs; ++j)
      out << l << ",b," << j << ",0," << format_double(layer.bias[j]) << '\n';
  }
}

MlpParams read_snapshot(std::istream& in, const MlpParams& shape) {
  std::vector<Layer> layers = shape.layers();
  std::vector<std::size_t> seen(layers.size(), 0);
  std::string line;
  if (!std::getline(in, line) || trim(line) != "layer,kind,row,col,value")
    throw InvalidArgument("parameter snapshot is missing its header");
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const std::vector<std::string> cells = split(line, ',');
    if (cells.size() != 5) throw InvalidArgument("malformed snapshot row: " + line);
    const std::size_t l = parse_index(cells[0]);
    const std::size_t row = parse_index(cells[2]);
    const std::size_t col = parse_index(cells[3]);
    const double value = parse_double(cells[4]);
    if (l >= layers.size()) throw InvalidArgument("snapshot layer out of range: " + line);
    Layer& layer = layers[l];
    if (cells[1] == "W") {
      if (row >= layer.outputs || col >= layer.inputs)
        throw InvalidArgument("snapshot weight index out of range: " + line);
      layer.weights[row * layer.inputs + col] = value;
    } else if (cells[1] == "b") {
      if (row >= layer.outputs || col != 0)
        throw InvalidArgument("snapshot bias index out of range: " + line);
      layer.bias[row] = value;
    } else {
      throw InvalidArgument("snapshot kind must be W or b: " + line);
    }
    ++seen[l];
  }
  for (std::size_t l = 0; l < layers.size(); ++l)
    if (seen[l] != layers[l].weights.size() + layers[l].bias.size())
      throw InvalidArgument("snapshot is incomplete for layer " + std::to_string(l));
  return MlpParams(std::move(layers));
}

}  // namespace udeoc
