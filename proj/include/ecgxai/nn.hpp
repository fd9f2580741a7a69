#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ecgxai/tensor.hpp"

namespace ecgxai::nn {

/// Raised when an activation does not fit the layer it is fed to.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class LayerKind {
  Conv1d,
  BatchNorm1d,
  Relu,
  MaxPool1d,
  AvgPool1d,
  GlobalAvgPool,
  Linear,
  ResidualBlock,
};

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view name);

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  std::string name;
  std::size_t in_channels = 0;   // conv, batchnorm, linear (in features)
  std::size_t out_channels = 0;  // conv, linear (out features)
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t window = 2;        // max/avg pool; stride equals window
  std::vector<LayerSpec> body;   // residual block branch, added to its input
};

enum class Head { SigmoidMultilabel, LinearRegression };

std::string_view to_string(Head head);
Head head_from_string(std::string_view name);

struct ModelSpec {
  std::string arch = "custom";
  std::vector<LayerSpec> layers;
  Head head = Head::SigmoidMultilabel;
  std::size_t output_dim = 0;
  std::size_t input_channels = 12;
  std::size_t min_length = 250;
};

/// Checks channel chaining, kernel/stride bounds and that the last layer emits
/// output_dim features. Throws ShapeError naming the first offending layer.
void validate(const ModelSpec& spec);

struct LeNetOptions {
  std::vector<std::size_t> widths = {32, 64, 128};
  std::size_t kernel = 5;
  std::size_t stride = 2;
  std::size_t hidden = 64;
};

/// Three conv/BN/ReLU stages (max, max, global-average pooling) followed by
/// two fully connected layers.
ModelSpec lenet(std::size_t output_dim, Head head, const LeNetOptions& opts = {});

struct ResNetOptions {
  std::size_t width = 32;
  std::size_t blocks = 4;
};

/// Stem conv, `blocks` residual blocks (conv-BN-ReLU twice plus identity skip)
/// with max pooling after the first two, global average pooling and a linear head.
ModelSpec residual_net(std::size_t output_dim, Head head, const ResNetOptions& opts = {});

enum class Mode { Inference, Training };

enum class LrpRule { Epsilon, ZPlusConv };

struct LrpConfig {
  LrpRule rule = LrpRule::Epsilon;
  /// Stabilizer per layer is epsilon_scale * mean |pre-activation|, added
  /// with the sign of the denominator.
  double epsilon_scale = 1e-6;
};

struct LayerCache {
  virtual ~LayerCache() = default;
};

/// One network layer operating on [batch, time, channel] activations.
class Layer {
 public:
  explicit Layer(LayerSpec spec) : spec_(std::move(spec)) {}
  virtual ~Layer() = default;
  virtual std::unique_ptr<Layer> clone() const = 0;

  const LayerSpec& spec() const { return spec_; }
  LayerKind kind() const { return spec_.kind; }
  const std::string& name() const { return spec_.name; }

  virtual Tensor forward(const Tensor& x, Mode mode, std::unique_ptr<LayerCache>* cache) const = 0;

  /// Returns dL/dx given dL/dy. When `grads` is non-empty, parameter gradients
  /// are accumulated into it (same order as collect_params).
  virtual Tensor backward(const Tensor& x, const Tensor& y, const Tensor& gy,
                          const LayerCache* cache, std::span<Tensor> grads) const = 0;

  /// Redistributes output relevance `ry` onto the input.
  virtual Tensor relevance(const Tensor& x, const Tensor& y, const Tensor& ry,
                           const LrpConfig& cfg) const = 0;

  virtual void collect_params(std::vector<Tensor*>& out);
  virtual void collect_params(std::vector<const Tensor*>& out) const;
  virtual void collect_param_names(const std::string& prefix, std::vector<std::string>& out) const;
  virtual std::size_t num_params() const { return params_.size(); }

  std::vector<Tensor>& own_params() { return params_; }
  const std::vector<Tensor>& own_params() const { return params_; }

 protected:
  virtual std::vector<std::string> param_roles() const { return {}; }

  LayerSpec spec_;
  std::vector<Tensor> params_;
};

std::unique_ptr<Layer> make_layer(const LayerSpec& spec);

/// Activations kept for one forward pass. Position 0 is the input, position i
/// the output of layer i-1. Tensors carry a leading batch dimension.
struct ForwardTrace {
  Mode mode = Mode::Inference;
  std::vector<Tensor> activations;
  std::vector<std::unique_ptr<LayerCache>> caches;
};

/// A network with parameters. Immutable after training; all const members are
/// safe to call concurrently.
class Model {
 public:
  Model() = default;
  /// Builds the layers and draws He-normal weights from `seed`.
  Model(ModelSpec spec, std::uint64_t seed);
  Model(const Model& other);
  Model& operator=(const Model& other);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }
  bool folded() const { return folded_; }
  std::size_t num_layers() const { return layers_.size(); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }
  Layer& layer(std::size_t i) { return *layers_.at(i); }

  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::vector<std::string> parameter_names() const;

  /// Batched forward on [B, T, C]. Returns [B, 1, output_dim].
  Tensor forward_batch(const Tensor& batch, Mode mode, ForwardTrace* trace) const;

  /// Runs layers [start, num_layers) on a batched activation.
  Tensor forward_from(const Tensor& activation, std::size_t start) const;

  /// Back-propagates `grad_out` (batched, matching the final activation) to
  /// trace position `stop`. Parameter gradients accumulate into `grads` when
  /// it is non-empty.
  Tensor backward(const ForwardTrace& trace, const Tensor& grad_out, std::size_t stop,
                  std::span<Tensor> grads) const;

  /// Trace position holding the output of the layer called `name`; "input"
  /// maps to position 0.
  std::size_t position_of(std::string_view name) const;

  // Used by fold_batchnorm and checkpoint loading.
  Model(ModelSpec spec, std::vector<std::unique_ptr<Layer>> layers, std::uint64_t seed, bool folded);

 private:
  ModelSpec spec_;
  std::vector<std::unique_ptr<Layer>> layers_;
  std::uint64_t seed_ = 0;
  bool folded_ = false;
};

struct ForwardResult {
  Tensor output;  // [output_dim]
  std::optional<ForwardTrace> trace;
};

/// Inference forward pass of one [T, C] signal.
ForwardResult forward(const Model& model, const Tensor& input, bool keep_trace = false);

/// dF_k/dx on the pre-activation logit (never the sigmoid). Same shape as input.
Tensor input_gradient(const Model& model, const Tensor& input, std::size_t output_index);

/// Gradients of several outputs sharing one forward pass.
std::vector<Tensor> input_gradients(const Model& model, const Tensor& input,
                                    std::span<const std::size_t> output_indices);

/// dF_k/dA for the activation A at trace position `position` ([T_l, C_l]).
Tensor layer_gradient(const Model& model, const Tensor& input, std::size_t position,
                      std::size_t output_index);

/// Same as layer_gradient, reusing an existing inference trace.
Tensor layer_gradient(const Model& model, const ForwardTrace& trace, std::size_t position,
                      std::size_t output_index);

/// Activation at a trace position with the batch dimension removed.
Tensor trace_activation(const ForwardTrace& trace, std::size_t position);

/// Replaces every batchnorm by an equivalent affine change of the preceding
/// conv/linear layer (also inside residual branches).
Model fold_batchnorm(const Model& model);

/// Adds a leading batch dimension of one.
Tensor as_batch(const Tensor& sample);

/// Moves batchnorm running statistics toward the batch statistics recorded in
/// a training-mode trace.
void apply_running_stats(Model& model, const ForwardTrace& trace, double momentum);

/// Per parameter (in parameters() order): false for running statistics.
std::vector<bool> trainable_mask(const Model& model);

}  // namespace ecgxai::nn
