#include "drrel/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "drrel/error.hpp"
#include "drrel/rng.hpp"

namespace drrel::mlp {
namespace {

constexpr const char* kCheckpointFormat = "drrel.mlp";
constexpr int kCheckpointVersion = 1;

double activate(Activation a, double z) noexcept {
  switch (a) {
    case Activation::identity: return z;
    case Activation::sigmoid: return sigmoid(z);
    case Activation::tanh: return std::tanh(z);
    case Activation::relu: return z > 0.0 ? z : 0.0;
  }
  return z;
}

// Derivative expressed through the pre-activation z and output y.
double activation_grad(Activation a, double z, double y) noexcept {
  switch (a) {
    case Activation::identity: return 1.0;
    case Activation::sigmoid: return y * (1.0 - y);
    case Activation::tanh: return 1.0 - y * y;
    case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
  }
  return 1.0;
}

void check_cache(const MlpModel& model, const ForwardCache& cache) {
  if (cache.model != &model || cache.generation != model.generation() ||
      cache.inputs.size() != model.layers().size() + 1) {
    throw DimensionError("stale forward cache: model changed since the forward pass");
  }
}

MlpGradients backward_from(const MlpModel& model, const ForwardCache& cache, std::vector<double> delta,
                           std::vector<double>* grad_input) {
  // `delta` is dLoss/dPreactivation of the last layer.
  const auto& layers = model.layers();
  MlpGradients g = model.zero_gradients();
  for (std::size_t li = layers.size(); li-- > 0;) {
    const auto& layer = layers[li];
    const auto& x = cache.inputs[li];
    for (std::size_t o = 0; o < layer.out; ++o) {
      g.bias[li][o] = delta[o];
      double* row = &g.weights[li][o * layer.in];
      for (std::size_t i = 0; i < layer.in; ++i) row[i] = delta[o] * x[i];
    }
    std::vector<double> upstream(layer.in, 0.0);
    for (std::size_t o = 0; o < layer.out; ++o) {
      const double* w = &layer.weights[o * layer.in];
      for (std::size_t i = 0; i < layer.in; ++i) upstream[i] += w[i] * delta[o];
    }
    if (li == 0) {
      if (grad_input) *grad_input = std::move(upstream);
      break;
    }
    const auto& prev = layers[li - 1];
    for (std::size_t i = 0; i < layer.in; ++i) {
      upstream[i] *= activation_grad(prev.activation, cache.pre[li - 1][i], cache.inputs[li][i]);
    }
    delta = std::move(upstream);
  }
  return g;
}

}  // namespace

std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
  }
  return "identity";
}

Activation activation_from_string(std::string_view name) {
  if (name == "identity") return Activation::identity;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  throw SchemaError("unknown activation '" + std::string(name) + "'");
}

double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// --- gradients -------------------------------------------------------------------

void MlpGradients::add(const MlpGradients& other, double s) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    for (std::size_t i = 0; i < weights[l].size(); ++i) weights[l][i] += s * other.weights[l][i];
    for (std::size_t i = 0; i < bias[l].size(); ++i) bias[l][i] += s * other.bias[l][i];
  }
}

void MlpGradients::scale(double factor) {
  for (auto& w : weights) for (double& v : w) v *= factor;
  for (auto& b : bias) for (double& v : b) v *= factor;
}

double MlpGradients::max_abs() const {
  double m = 0.0;
  for (const auto& w : weights) for (double v : w) m = std::max(m, std::abs(v));
  for (const auto& b : bias) for (double v : b) m = std::max(m, std::abs(v));
  return m;
}

// --- model -----------------------------------------------------------------------

MlpModel::MlpModel(std::vector<DenseLayer> layers) : layers_(std::move(layers)) { validate(); }

MlpModel MlpModel::zeros(std::span<const std::size_t> dims, Activation hidden, Activation head) {
  if (dims.size() < 2) throw DimensionError("an MLP needs at least input and output dimensions");
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    if (dims[l] == 0 || dims[l + 1] == 0) throw DimensionError("layer dimensions must be positive");
    DenseLayer layer;
    layer.in = dims[l];
    layer.out = dims[l + 1];
    layer.weights.assign(layer.in * layer.out, 0.0);
    layer.bias.assign(layer.out, 0.0);
    layer.activation = (l + 2 == dims.size()) ? head : hidden;
    layers.push_back(std::move(layer));
  }
  return MlpModel(std::move(layers));
}

MlpModel MlpModel::random(std::span<const std::size_t> dims, Activation hidden, Activation head,
                          std::uint64_t seed) {
  MlpModel m = zeros(dims, hidden, head);
  Rng rng = make_rng(seed, 0x6d6c70ULL);
  for (auto& layer : m.layers_) {
    const double limit = std::sqrt(6.0 / static_cast<double>(layer.in + layer.out));
    for (double& w : layer.weights) w = (2.0 * uniform01(rng) - 1.0) * limit;
  }
  return m;
}

std::size_t MlpModel::input_dim() const { return layers_.empty() ? 0 : layers_.front().in; }
std::size_t MlpModel::output_dim() const { return layers_.empty() ? 0 : layers_.back().out; }

std::size_t MlpModel::num_parameters() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weights.size() + l.bias.size();
  return n;
}

std::vector<double> MlpModel::flat_parameters() const {
  std::vector<double> out;
  out.reserve(num_parameters());
  for (const auto& l : layers_) {
    out.insert(out.end(), l.weights.begin(), l.weights.end());
    out.insert(out.end(), l.bias.begin(), l.bias.end());
  }
  return out;
}

void MlpModel::set_flat_parameters(std::span<const double> params) {
  if (params.size() != num_parameters()) throw DimensionError("parameter vector has the wrong length");
  std::size_t at = 0;
  for (auto& l : layers_) {
    std::copy_n(params.begin() + static_cast<std::ptrdiff_t>(at), l.weights.size(), l.weights.begin());
    at += l.weights.size();
    std::copy_n(params.begin() + static_cast<std::ptrdiff_t>(at), l.bias.size(), l.bias.begin());
    at += l.bias.size();
  }
  ++generation_;
}

void MlpModel::apply_gradient(const MlpGradients& grads, double learning_rate) {
  if (grads.weights.size() != layers_.size()) throw DimensionError("gradient shape does not match model");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    auto& layer = layers_[l];
    for (std::size_t i = 0; i < layer.weights.size(); ++i) layer.weights[i] -= learning_rate * grads.weights[l][i];
    for (std::size_t i = 0; i < layer.bias.size(); ++i) layer.bias[i] -= learning_rate * grads.bias[l][i];
  }
  ++generation_;
}

MlpGradients MlpModel::zero_gradients() const {
  MlpGradients g;
  for (const auto& l : layers_) {
    g.weights.emplace_back(l.weights.size(), 0.0);
    g.bias.emplace_back(l.bias.size(), 0.0);
  }
  return g;
}

void MlpModel::validate() const {
  if (layers_.empty()) throw DimensionError("model has no layers");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    if (layer.weights.size() != layer.in * layer.out || layer.bias.size() != layer.out) {
      throw DimensionError("layer " + std::to_string(l) + " has inconsistent parameter sizes");
    }
    if (l > 0 && layers_[l - 1].out != layer.in) {
      throw DimensionError("layer " + std::to_string(l) + " input does not match previous output");
    }
    for (double v : layer.weights) if (!std::isfinite(v)) throw DimensionError("non-finite weight");
    for (double v : layer.bias) if (!std::isfinite(v)) throw DimensionError("non-finite bias");
  }
}

std::string MlpModel::to_checkpoint() const {
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  auto& arr = j["layers"] = nlohmann::json::array();
  for (const auto& l : layers_) {
    arr.push_back({{"in", l.in},
                   {"out", l.out},
                   {"activation", to_string(l.activation)},
                   {"weights", l.weights},
                   {"bias", l.bias}});
  }
  return j.dump();
}

MlpModel MlpModel::from_checkpoint(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed MLP checkpoint: ") + e.what());
  }
  if (j.value("format", "") != kCheckpointFormat) throw SchemaError("not an MLP checkpoint");
  if (j.value("version", 0) != kCheckpointVersion) throw SchemaError("unsupported MLP checkpoint version");
  std::vector<DenseLayer> layers;
  try {
    for (const auto& jl : j.at("layers")) {
      DenseLayer l;
      l.in = jl.at("in").get<std::size_t>();
      l.out = jl.at("out").get<std::size_t>();
      l.activation = activation_from_string(jl.at("activation").get<std::string>());
      l.weights = jl.at("weights").get<std::vector<double>>();
      l.bias = jl.at("bias").get<std::vector<double>>();
      layers.push_back(std::move(l));
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed MLP checkpoint: ") + e.what());
  }
  return MlpModel(std::move(layers));
}

bool operator==(const MlpModel& a, const MlpModel& b) {
  if (a.layers_.size() != b.layers_.size()) return false;
  for (std::size_t l = 0; l < a.layers_.size(); ++l) {
    const auto& x = a.layers_[l];
    const auto& y = b.layers_[l];
    if (x.in != y.in || x.out != y.out || x.activation != y.activation || x.weights != y.weights ||
        x.bias != y.bias) {
      return false;
    }
  }
  return true;
}

// --- forward / backward -----------------------------------------------------------

std::vector<double> mlp_forward(const MlpModel& model, std::span<const double> input, ForwardCache* cache) {
  const auto& layers = model.layers();
  if (layers.empty()) throw DimensionError("empty model");
  if (input.size() != model.input_dim()) {
    throw DimensionError("input has dimension " + std::to_string(input.size()) + ", model expects " +
                         std::to_string(model.input_dim()));
  }
  std::vector<double> x(input.begin(), input.end());
  if (cache) {
    cache->model = &model;
    cache->generation = model.generation();
    cache->inputs.clear();
    cache->pre.clear();
    cache->inputs.push_back(x);
  }
  for (const auto& layer : layers) {
    std::vector<double> z(layer.out);
    for (std::size_t o = 0; o < layer.out; ++o) {
      const double* w = &layer.weights[o * layer.in];
      double acc = layer.bias[o];
      for (std::size_t i = 0; i < layer.in; ++i) acc += w[i] * x[i];
      z[o] = acc;
    }
    std::vector<double> y(layer.out);
    for (std::size_t o = 0; o < layer.out; ++o) y[o] = activate(layer.activation, z[o]);
    if (cache) {
      cache->pre.push_back(std::move(z));
      cache->inputs.push_back(y);
    }
    x = std::move(y);
  }
  return x;
}

double mlp_predict(const MlpModel& model, std::span<const double> input) {
  if (model.output_dim() != 1) throw DimensionError("mlp_predict needs a single-output model");
  return mlp_forward(model, input).front();
}

MlpGradients mlp_backward(const MlpModel& model, const ForwardCache& cache, std::span<const double> grad_output,
                          std::vector<double>* grad_input) {
  check_cache(model, cache);
  const auto& head = model.layers().back();
  if (grad_output.size() != head.out) throw DimensionError("gradient does not match output dimension");
  std::vector<double> delta(head.out);
  for (std::size_t o = 0; o < head.out; ++o) {
    delta[o] = grad_output[o] * activation_grad(head.activation, cache.pre.back()[o], cache.inputs.back()[o]);
  }
  return backward_from(model, cache, std::move(delta), grad_input);
}

MlpGradients mlp_backward_logits(const MlpModel& model, const ForwardCache& cache,
                                 std::span<const double> grad_logits, std::vector<double>* grad_input) {
  check_cache(model, cache);
  if (grad_logits.size() != model.output_dim()) throw DimensionError("gradient does not match output dimension");
  return backward_from(model, cache, std::vector<double>(grad_logits.begin(), grad_logits.end()), grad_input);
}

// --- scaler ------------------------------------------------------------------------

FeatureScaler FeatureScaler::identity(std::size_t dim) {
  return {std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)};
}

FeatureScaler FeatureScaler::fit(std::span<const std::vector<double>> rows) {
  if (rows.empty()) throw DimensionError("cannot fit a scaler on zero rows");
  const std::size_t dim = rows.front().size();
  FeatureScaler s{std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)};
  const auto n = static_cast<double>(rows.size());
  for (const auto& r : rows) {
    if (r.size() != dim) throw DimensionError("ragged feature rows");
    for (std::size_t i = 0; i < dim; ++i) s.mean[i] += r[i];
  }
  for (double& m : s.mean) m /= n;
  std::vector<double> var(dim, 0.0);
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < dim; ++i) var[i] += (r[i] - s.mean[i]) * (r[i] - s.mean[i]);
  }
  for (std::size_t i = 0; i < dim; ++i) {
    const double sd = std::sqrt(var[i] / n);
    s.scale[i] = sd > 1e-12 ? 1.0 / sd : 1.0;
  }
  return s;
}

std::vector<double> FeatureScaler::apply(std::span<const double> x) const {
  if (x.size() != mean.size()) throw DimensionError("scaler dimension mismatch");
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean[i]) * scale[i];
  return out;
}

// --- training ------------------------------------------------------------------------

double TrainConfig::rate_at(std::size_t step) const {
  if (warmup_steps == 0 || step >= warmup_steps) return learning_rate;
  return learning_rate * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be >= 0");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
}

TrainResult minibatch_descent(MlpModel& model, std::size_t n_examples, const TrainConfig& config,
                              const ExampleLoss& loss) {
  config.validate();
  if (n_examples == 0) throw EmptyDataError("no training examples");
  TrainResult result;
  std::vector<std::size_t> order(n_examples);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng = make_rng(config.seed, epoch);
    for (std::size_t i = n_examples; i > 1; --i) {
      const auto j = std::min(static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i)), i - 1);
      std::swap(order[i - 1], order[j]);
    }
    for (std::size_t lo = 0; lo < n_examples; lo += config.batch_size) {
      const std::size_t hi = std::min(n_examples, lo + config.batch_size);
      MlpGradients grads = model.zero_gradients();
      double batch_loss = 0.0;
      for (std::size_t b = lo; b < hi; ++b) batch_loss += loss(model, order[b], grads);
      const auto count = static_cast<double>(hi - lo);
      batch_loss /= count;
      if (!std::isfinite(batch_loss)) throw DivergenceError("non-finite training loss", result.steps);
      const double rate = config.rate_at(result.steps);
      if (rate != 0.0) model.apply_gradient(grads, rate / count);
      result.loss_trace.push_back(batch_loss);
      ++result.steps;
    }
  }
  return result;
}

double logistic_loss_from_logit(double logit, double label) noexcept {
  // softplus(z) - y z, computed without overflow.
  const double softplus = logit > 0.0 ? logit + std::log1p(std::exp(-logit)) : std::log1p(std::exp(logit));
  return softplus - label * logit;
}

TrainResult train_binary_cross_entropy(MlpModel& model, std::span<const std::vector<double>> inputs,
                                       std::span<const double> labels, const TrainConfig& config) {
  if (inputs.size() != labels.size()) throw DimensionError("inputs and labels differ in length");
  if (model.output_dim() != 1 || model.layers().back().activation != Activation::sigmoid) {
    throw DimensionError("binary cross-entropy needs a single sigmoid output");
  }
  ForwardCache cache;
  return minibatch_descent(model, inputs.size(), config,
                           [&](const MlpModel& m, std::size_t i, MlpGradients& grads) {
                             const double p = mlp_forward(m, inputs[i], &cache).front();
                             const double z = cache.pre.back().front();
                             const double g = p - labels[i];
                             grads.add(mlp_backward_logits(m, cache, std::span<const double>(&g, 1)));
                             return logistic_loss_from_logit(z, labels[i]);
                           });
}

std::vector<double> smoothed(std::span<const double> trace, std::size_t window) {
  std::vector<double> out;
  if (window == 0) return out;
  for (std::size_t lo = 0; lo + window <= trace.size(); lo += window) {
    double s = 0.0;
    for (std::size_t i = lo; i < lo + window; ++i) s += trace[i];
    out.push_back(s / static_cast<double>(window));
  }
  return out;
}

}  // namespace drrel::mlp
