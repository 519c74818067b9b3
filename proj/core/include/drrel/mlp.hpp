#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace drrel::mlp {

enum class Activation { identity, sigmoid, tanh, relu };

std::string to_string(Activation a);
Activation activation_from_string(std::string_view name);

double sigmoid(double x) noexcept;

/// Fully connected layer: y = act(W x + b), W stored row-major (out x in).
struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weights;
  std::vector<double> bias;
  Activation activation = Activation::identity;
};

struct MlpGradients {
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> bias;

  void add(const MlpGradients& other, double scale = 1.0);
  void scale(double factor);
  double max_abs() const;
};

class MlpModel;

/// Activations recorded by a forward pass; tied to one model generation.
struct ForwardCache {
  const MlpModel* model = nullptr;
  std::uint64_t generation = 0;
  std::vector<std::vector<double>> inputs;  // inputs[l] feeds layer l; inputs.back() is the output
  std::vector<std::vector<double>> pre;     // pre-activations per layer
};

/// A small feed-forward network. Every mutation bumps `generation()`, which
/// invalidates outstanding forward caches.
class MlpModel {
 public:
  MlpModel() = default;

  /// dims = {input, hidden..., output}; every parameter zero.
  static MlpModel zeros(std::span<const std::size_t> dims, Activation hidden, Activation head);
  /// Glorot-uniform weights, zero biases.
  static MlpModel random(std::span<const std::size_t> dims, Activation hidden, Activation head,
                         std::uint64_t seed);

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t num_parameters() const;
  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  std::uint64_t generation() const noexcept { return generation_; }

  /// Parameters in layer order: W_0, b_0, W_1, b_1, ...
  std::vector<double> flat_parameters() const;
  void set_flat_parameters(std::span<const double> params);

  /// params -= lr * grads
  void apply_gradient(const MlpGradients& grads, double learning_rate);

  MlpGradients zero_gradients() const;

  /// Throws DimensionError if consecutive dimensions disagree or values are non-finite.
  void validate() const;

  std::string to_checkpoint() const;
  static MlpModel from_checkpoint(std::string_view text);

  friend bool operator==(const MlpModel& a, const MlpModel& b);

 private:
  explicit MlpModel(std::vector<DenseLayer> layers);

  std::vector<DenseLayer> layers_;
  std::uint64_t generation_ = 0;
};

/// Runs the network. Fills `cache` when given.
std::vector<double> mlp_forward(const MlpModel& model, std::span<const double> input,
                                ForwardCache* cache = nullptr);

/// Scalar-output convenience.
double mlp_predict(const MlpModel& model, std::span<const double> input);

/// Reverse-mode gradients given dLoss/dOutput (post-activation of the head).
MlpGradients mlp_backward(const MlpModel& model, const ForwardCache& cache,
                          std::span<const double> grad_output,
                          std::vector<double>* grad_input = nullptr);

/// Same, but the gradient is given w.r.t. the head pre-activation (logits).
MlpGradients mlp_backward_logits(const MlpModel& model, const ForwardCache& cache,
                                 std::span<const double> grad_logits,
                                 std::vector<double>* grad_input = nullptr);

/// Per-feature standardization fitted on training inputs.
struct FeatureScaler {
  std::vector<double> mean;
  std::vector<double> scale;  // 1 / stddev, 1 for constant features

  static FeatureScaler identity(std::size_t dim);
  static FeatureScaler fit(std::span<const std::vector<double>> rows);
  std::vector<double> apply(std::span<const double> x) const;

  friend bool operator==(const FeatureScaler&, const FeatureScaler&) = default;
};

struct TrainConfig {
  double learning_rate = 0.05;
  std::size_t warmup_steps = 100;
  std::size_t batch_size = 64;
  std::size_t epochs = 5;
  std::uint64_t seed = 0;

  /// Linear warm-up to `learning_rate`, then constant.
  double rate_at(std::size_t step) const;
  void validate() const;
};

struct TrainResult {
  std::vector<double> loss_trace;  // mean loss per step
  std::size_t steps = 0;
};

/// Loss of one example; adds its gradient into `grads`.
using ExampleLoss = std::function<double(const MlpModel& model, std::size_t example, MlpGradients& grads)>;

/// Minibatch gradient descent over examples 0..n-1, reshuffled each epoch.
/// Throws DivergenceError on a non-finite loss.
TrainResult minibatch_descent(MlpModel& model, std::size_t n_examples, const TrainConfig& config,
                              const ExampleLoss& loss);

/// Numerically stable -y log(sigmoid z) - (1-y) log(1 - sigmoid z).
double logistic_loss_from_logit(double logit, double label) noexcept;

/// Binary cross-entropy training of a sigmoid-headed, single-output network.
TrainResult train_binary_cross_entropy(MlpModel& model, std::span<const std::vector<double>> inputs,
                                       std::span<const double> labels, const TrainConfig& config);

/// Mean of `trace` over consecutive windows of `window` steps.
std::vector<double> smoothed(std::span<const double> trace, std::size_t window);

}  // namespace drrel::mlp
