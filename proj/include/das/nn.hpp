#pragma once

#include "das/tensor.hpp"

#include <cstdint>
#include <span>
#include <variant>
#include <vector>

namespace das {

// Layer kinds. Per-sample activations are (C, H, W) for spatial layers and
// (F) after pooling; the batch extent is always leading.

struct Conv2D {
  int kernel = 1, cin = 1, cout = 1, stride = 1, padding = 0;
  Tensor weight;  // (cout, cin, kernel, kernel)
  Tensor bias;    // (cout)
};

struct Linear {
  int fin = 1, fout = 1;
  Tensor weight;  // (fout, fin)
  Tensor bias;    // (fout)
};

struct ReLU {};

struct MaxPool2D {
  int kernel = 2, stride = 2, padding = 0;
};

struct GlobalAvgPool {};
/// Elementwise sum of all inputs, multiplied by `scale` (1/k averages).
struct Add {
  double scale = 1.0;
};
/// Joins inputs along the channel (first per-sample) axis.
struct Concat {};

using LayerKind = std::variant<Conv2D, Linear, ReLU, MaxPool2D, GlobalAvgPool, Add, Concat>;

/// Zero-initialized conv/linear layers with correctly shaped parameters.
Conv2D make_conv(int kernel, int cin, int cout, int stride = 1, int padding = 0);
Linear make_linear(int fin, int fout);

const char* kind_name(const LayerKind& kind) noexcept;

struct Layer {
  int id = 0;
  LayerKind kind;
  std::vector<int> inputs;
};

struct ReluMask {
  int node_id = 0;
  Shape shape;                       // (N, per-sample extents...)
  std::vector<std::uint8_t> active;  // output > 0, same order as the tensor
};

struct ParamRef {
  int node_id;
  Tensor* tensor;
};

struct Gradients {
  std::vector<Tensor> params;  // aligned with Network::parameters()
  Tensor input;                // d loss / d batch, only when requested
  double loss = 0.0;
};

/**
 * A DAG of layers fed by a single input node (id 0) with a single sink that
 * produces the logits. Layers are stored in a topological order; any valid
 * order evaluates identically because parameters, initialization streams and
 * mask order are keyed by node id rather than list position.
 *
 * Holds mutable per-pass state (activations, ReLU masks, caches), so an
 * instance must not be shared between threads during forward/backward.
 */
class Network {
 public:
  static constexpr int kInputId = 0;

  Network() = default;
  explicit Network(Shape input_shape);
  /// Rebuild from an explicit layer list; throws ConfigError if the list is
  /// not a valid topological order of a single-sink DAG.
  Network(Shape input_shape, std::vector<Layer> layers);

  /// Appends a layer and returns its id.
  int add(LayerKind kind, std::vector<int> inputs);

  const Shape& input_shape() const noexcept { return input_shape_; }
  std::span<const Layer> layers() const noexcept { return layers_; }
  std::span<Layer> layers() noexcept { return layers_; }
  const Layer& layer(int id) const;

  /// The unique node whose output no other node consumes.
  int sink() const;

  /// Per-sample output shape of every node, indexed by id (0 is the input).
  std::vector<Shape> infer_shapes() const;

  std::size_t param_count() const;
  /// Per-input total ReLU output elements (N_A).
  std::size_t activation_units() const;

  /// Weight then bias of each parametrized layer, ordered by node id.
  std::vector<ParamRef> parameters();
  std::vector<const Tensor*> parameters() const;

  /// Masks captured by the last forward pass, ordered by node id.
  std::span<const ReluMask> relu_masks() const noexcept { return masks_; }

  friend Tensor forward(Network& net, const Tensor& batch);
  friend Gradients backward(Network& net, const Tensor& logits, std::span<const int> labels,
                            bool want_input_grad);
  friend void sgd_step(Network& net, const Gradients& grads, double lr, double momentum);

 private:
  int max_id() const noexcept { return next_id_ - 1; }
  void check_topology() const;

  Shape input_shape_;
  std::vector<Layer> layers_;
  std::vector<int> position_;  // id -> index into layers_, -1 for the input
  int next_id_ = 1;

  // per-pass state
  std::vector<Tensor> acts_;                        // by id
  std::vector<Buffer> cols_;                        // im2col cache by id
  std::vector<std::vector<std::uint32_t>> argmax_;  // max-pool routes by id
  std::vector<ReluMask> masks_;
  Tensor input_;
  bool has_forward_ = false;
  std::vector<Tensor> momentum_;
};

/// Runs the batch through the network and returns logits (N, classes).
/// Overwrites the ReLU mask buffer.
Tensor forward(Network& net, const Tensor& batch);

/// Mean softmax cross-entropy gradients for the batch of the last forward.
Gradients backward(Network& net, const Tensor& logits, std::span<const int> labels,
                   bool want_input_grad = false);

/// Momentum SGD: v = momentum * v + g; w -= lr * v.
void sgd_step(Network& net, const Gradients& grads, double lr, double momentum);

/// He-normal weights (std = sqrt(2 / fan_in)), zero biases. Each layer draws
/// from its own stream derived from (seed, node id).
void init_params(Network& net, std::uint64_t seed);

/// Mean softmax cross-entropy of logits against labels.
double cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Predicted class per row.
std::vector<int> argmax_rows(const Tensor& logits);

/// FNV-1a over the raw parameter bytes.
std::uint64_t param_checksum(const Network& net);

}  // namespace das
