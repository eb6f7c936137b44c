#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <variant>
#include <vector>

#include "wscam/tensor.hpp"

namespace wscam {

struct Conv2d {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  Tensor weight;  // (out, in, kh, kw)
  Tensor bias;    // (out)

  Conv2d() = default;
  Conv2d(std::size_t in, std::size_t out, std::size_t kh, std::size_t kw, std::size_t stride_,
         std::size_t padding_);
  friend bool operator==(const Conv2d&, const Conv2d&) = default;
};

struct Relu {
  friend bool operator==(const Relu&, const Relu&) = default;
};

struct AvgPool {
  std::size_t window = 2;
  std::size_t stride = 2;
  friend bool operator==(const AvgPool&, const AvgPool&) = default;
};

struct GlobalAvgPool {
  friend bool operator==(const GlobalAvgPool&, const GlobalAvgPool&) = default;
};

struct Linear {
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  Tensor weight;  // (out, in)
  Tensor bias;    // (out)

  Linear() = default;
  Linear(std::size_t in, std::size_t out);
  friend bool operator==(const Linear&, const Linear&) = default;
};

using Layer = std::variant<Conv2d, Relu, AvgPool, GlobalAvgPool, Linear>;

const char* layer_name(const Layer& layer);

// Feed-forward conv net ending in global_avg_pool -> linear head. The head rows
// are the per-class weights that classical CAM reads.
class MicroNet {
 public:
  MicroNet() = default;
  explicit MicroNet(std::vector<Layer> layers);

  const std::vector<Layer>& layers() const { return layers_; }
  std::size_t layer_count() const { return layers_.size(); }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }
  // Mutable access for optimizers. Shapes must not be changed.
  Layer& mutable_layer(std::size_t i) { return layers_.at(i); }

  std::size_t gap_index() const { return gap_index_; }
  std::size_t head_index() const { return layers_.size() - 1; }
  const Linear& head() const { return std::get<Linear>(layers_.back()); }
  Linear& mutable_head() { return std::get<Linear>(layers_.back()); }
  std::size_t num_classes() const { return head().out_features; }
  std::size_t feature_width() const { return head().in_features; }
  std::size_t input_channels() const { return input_channels_; }

  friend bool operator==(const MicroNet&, const MicroNet&) = default;

 private:
  std::vector<Layer> layers_;
  std::size_t gap_index_ = 0;
  std::size_t input_channels_ = 0;
};

// He-normal conv/linear weights, zero biases.
void initialize_weights(MicroNet& net, std::mt19937_64& rng);

struct ForwardRecord {
  Tensor input;
  std::vector<Tensor> outputs;  // outputs[i] is the output of layer i
  std::vector<double> logits;
  std::vector<double> probabilities;  // per-class sigmoid of logits

  friend bool operator==(const ForwardRecord&, const ForwardRecord&) = default;
};

double sigmoid(double z);

ForwardRecord forward(const MicroNet& net, const Tensor& image);

// Runs layers (layer, end) on `activation`, the output of `layer`.
std::vector<double> replay_logits(const MicroNet& net, const Tensor& activation, std::size_t layer);

struct LayerGrads {
  Tensor weight;  // empty for parameter-free layers
  Tensor bias;
};

struct BackwardResult {
  // Gradient w.r.t. the output of `stop_layer`, or w.r.t. the input when no stop layer.
  Tensor grad;
  std::vector<LayerGrads> params;  // filled when requested, one entry per layer
};

// Reverse pass. `injected[i]` (empty or shaped like outputs[i]) is added to the
// gradient arriving at the output of layer i; the logits are outputs.back().
BackwardResult backward(const MicroNet& net, const ForwardRecord& record, std::span<const Tensor> injected,
                        std::optional<std::size_t> stop_layer, bool want_params);

// d logit[cls] / d outputs[layer].
Tensor backprop_to_activation(const MicroNet& net, const ForwardRecord& record, std::size_t cls,
                              std::size_t layer);

// Central-difference estimate of backprop_to_activation: every cell of the
// activation at `layer` is perturbed by +-epsilon and the suffix replayed.
Tensor finite_diff_gradient(const MicroNet& net, const Tensor& image, std::size_t cls, std::size_t layer,
                            double epsilon);

// Applies only the linear head to a pooled feature vector.
std::vector<double> head_logits(const MicroNet& net, std::span<const double> features);

}  // namespace wscam
