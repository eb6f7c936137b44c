#include "wscam/net.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace wscam {

Conv2d::Conv2d(std::size_t in, std::size_t out, std::size_t kh, std::size_t kw, std::size_t stride_,
               std::size_t padding_)
    : in_channels(in),
      out_channels(out),
      kernel_h(kh),
      kernel_w(kw),
      stride(stride_),
      padding(padding_),
      weight({out, in, kh, kw}),
      bias({out}) {
  if (stride == 0) throw std::invalid_argument("conv2d stride must be positive");
}

Linear::Linear(std::size_t in, std::size_t out) : in_features(in), out_features(out), weight({out, in}), bias({out}) {}

const char* layer_name(const Layer& layer) {
  struct Visitor {
    const char* operator()(const Conv2d&) const { return "conv2d"; }
    const char* operator()(const Relu&) const { return "relu"; }
    const char* operator()(const AvgPool&) const { return "avg_pool"; }
    const char* operator()(const GlobalAvgPool&) const { return "global_avg_pool"; }
    const char* operator()(const Linear&) const { return "linear"; }
  };
  return std::visit(Visitor{}, layer);
}

MicroNet::MicroNet(std::vector<Layer> layers) : layers_(std::move(layers)) {
  std::size_t gap_count = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (std::holds_alternative<GlobalAvgPool>(layers_[i])) {
      ++gap_count;
      gap_index_ = i;
    }
  }
  if (gap_count != 1) throw std::invalid_argument("micro net needs exactly one global_avg_pool layer");
  if (gap_index_ + 2 != layers_.size() || !std::holds_alternative<Linear>(layers_.back())) {
    throw std::invalid_argument("global_avg_pool must be followed only by the linear head");
  }

  // Channel bookkeeping: conv in_channels must chain, head width must match.
  std::optional<std::size_t> channels;
  for (std::size_t i = 0; i < gap_index_; ++i) {
    const auto* conv = std::get_if<Conv2d>(&layers_[i]);
    if (conv) {
      if (conv->kernel_h == 0 || conv->kernel_w == 0 || conv->out_channels == 0 || conv->in_channels == 0) {
        throw std::invalid_argument("conv2d layer " + std::to_string(i) + " has a zero extent");
      }
      if (channels && *channels != conv->in_channels) {
        throw std::invalid_argument("conv2d layer " + std::to_string(i) + " expects " +
                                    std::to_string(conv->in_channels) + " input channels, previous layer gives " +
                                    std::to_string(*channels));
      }
      if (!channels) input_channels_ = conv->in_channels;
      channels = conv->out_channels;
    } else if (const auto* pool = std::get_if<AvgPool>(&layers_[i])) {
      if (pool->window == 0 || pool->stride == 0) throw std::invalid_argument("avg_pool window/stride must be positive");
    } else if (std::holds_alternative<Linear>(layers_[i])) {
      throw std::invalid_argument("linear layer only allowed as the head");
    }
  }
  if (!channels) throw std::invalid_argument("micro net needs at least one conv2d layer before global_avg_pool");
  if (head().in_features != *channels) {
    throw std::invalid_argument("head expects " + std::to_string(head().in_features) + " features, got " +
                                std::to_string(*channels) + " channels");
  }
}

void initialize_weights(MicroNet& net, std::mt19937_64& rng) {
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    auto& layer = net.mutable_layer(i);
    if (auto* conv = std::get_if<Conv2d>(&layer)) {
      const double fan_in = static_cast<double>(conv->in_channels * conv->kernel_h * conv->kernel_w);
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
      for (auto& w : conv->weight.values()) w = dist(rng);
      for (auto& b : conv->bias.values()) b = 0.0;
    } else if (auto* lin = std::get_if<Linear>(&layer)) {
      std::normal_distribution<double> dist(0.0, std::sqrt(1.0 / static_cast<double>(lin->in_features)));
      for (auto& w : lin->weight.values()) w = dist(rng);
      for (auto& b : lin->bias.values()) b = 0.0;
    }
  }
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

namespace {

[[noreturn]] void dimension_error(std::size_t index, const Layer& layer, const std::string& what) {
  throw std::invalid_argument("layer " + std::to_string(index) + " (" + layer_name(layer) + "): " + what);
}

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

Tensor conv_forward(const Conv2d& conv, const Tensor& in) {
  const std::size_t ih = in.dim(1), iw = in.dim(2);
  const std::size_t oh = conv_out_extent(ih, conv.kernel_h, conv.stride, conv.padding);
  const std::size_t ow = conv_out_extent(iw, conv.kernel_w, conv.stride, conv.padding);
  Tensor out({conv.out_channels, oh, ow});
  const long pad = static_cast<long>(conv.padding);
  const long s = static_cast<long>(conv.stride);
  for (std::size_t oc = 0; oc < conv.out_channels; ++oc) {
    double* o = out.data() + oc * oh * ow;
    const double b = conv.bias[oc];
    for (std::size_t i = 0; i < oh * ow; ++i) o[i] = b;
    for (std::size_t ic = 0; ic < conv.in_channels; ++ic) {
      const double* src = in.data() + ic * ih * iw;
      for (std::size_t ky = 0; ky < conv.kernel_h; ++ky) {
        for (std::size_t kx = 0; kx < conv.kernel_w; ++kx) {
          const double w = conv.weight[((oc * conv.in_channels + ic) * conv.kernel_h + ky) * conv.kernel_w + kx];
          // valid ox: 0 <= ox*s + kx - pad < iw
          const long x_off = static_cast<long>(kx) - pad;
          const long ox_lo = x_off >= 0 ? 0 : (-x_off + s - 1) / s;
          long ox_hi = (static_cast<long>(iw) - 1 - x_off) / s;  // inclusive
          if (static_cast<long>(iw) - 1 - x_off < 0) continue;
          ox_hi = std::min(ox_hi, static_cast<long>(ow) - 1);
          if (ox_lo > ox_hi) continue;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const long iy = static_cast<long>(oy) * s + static_cast<long>(ky) - pad;
            if (iy < 0 || iy >= static_cast<long>(ih)) continue;
            const double* row = src + iy * static_cast<long>(iw);
            double* orow = o + oy * ow;
            if (s == 1) {
              for (long ox = ox_lo; ox <= ox_hi; ++ox) orow[ox] += w * row[ox + x_off];
            } else {
              for (long ox = ox_lo; ox <= ox_hi; ++ox) orow[ox] += w * row[ox * s + x_off];
            }
          }
        }
      }
    }
  }
  return out;
}

// Accumulates input and weight gradients of a conv layer.
void conv_backward(const Conv2d& conv, const Tensor& in, const Tensor& grad_out, Tensor* grad_in,
                   LayerGrads* grads) {
  const std::size_t ih = in.dim(1), iw = in.dim(2);
  const std::size_t oh = grad_out.dim(1), ow = grad_out.dim(2);
  const long pad = static_cast<long>(conv.padding);
  const long s = static_cast<long>(conv.stride);
  if (grads) {
    grads->weight = Tensor(conv.weight.shape());
    grads->bias = Tensor(conv.bias.shape());
  }
  for (std::size_t oc = 0; oc < conv.out_channels; ++oc) {
    const double* go = grad_out.data() + oc * oh * ow;
    if (grads) {
      double acc = 0.0;
      for (std::size_t i = 0; i < oh * ow; ++i) acc += go[i];
      grads->bias[oc] = acc;
    }
    for (std::size_t ic = 0; ic < conv.in_channels; ++ic) {
      const double* src = in.data() + ic * ih * iw;
      double* gi = grad_in ? grad_in->data() + ic * ih * iw : nullptr;
      for (std::size_t ky = 0; ky < conv.kernel_h; ++ky) {
        for (std::size_t kx = 0; kx < conv.kernel_w; ++kx) {
          const std::size_t widx = ((oc * conv.in_channels + ic) * conv.kernel_h + ky) * conv.kernel_w + kx;
          const double w = conv.weight[widx];
          const long x_off = static_cast<long>(kx) - pad;
          if (static_cast<long>(iw) - 1 - x_off < 0) continue;
          const long ox_lo = x_off >= 0 ? 0 : (-x_off + s - 1) / s;
          const long ox_hi = std::min((static_cast<long>(iw) - 1 - x_off) / s, static_cast<long>(ow) - 1);
          if (ox_lo > ox_hi) continue;
          double wacc = 0.0;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const long iy = static_cast<long>(oy) * s + static_cast<long>(ky) - pad;
            if (iy < 0 || iy >= static_cast<long>(ih)) continue;
            const double* row = src + iy * static_cast<long>(iw);
            const double* grow = go + oy * ow;
            double* girow = gi ? gi + iy * static_cast<long>(iw) : nullptr;
            if (s == 1) {
              if (grads) {
                for (long ox = ox_lo; ox <= ox_hi; ++ox) wacc += grow[ox] * row[ox + x_off];
              }
              if (girow) {
                for (long ox = ox_lo; ox <= ox_hi; ++ox) girow[ox + x_off] += w * grow[ox];
              }
            } else {
              for (long ox = ox_lo; ox <= ox_hi; ++ox) {
                if (grads) wacc += grow[ox] * row[ox * s + x_off];
                if (girow) girow[ox * s + x_off] += w * grow[ox];
              }
            }
          }
          if (grads) grads->weight[widx] = wacc;
        }
      }
    }
  }
}

Tensor pool_forward(const AvgPool& pool, const Tensor& in) {
  const std::size_t c = in.dim(0), ih = in.dim(1), iw = in.dim(2);
  const std::size_t oh = (ih - pool.window) / pool.stride + 1;
  const std::size_t ow = (iw - pool.window) / pool.stride + 1;
  const double inv = 1.0 / static_cast<double>(pool.window * pool.window);
  Tensor out({c, oh, ow});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        for (std::size_t dy = 0; dy < pool.window; ++dy) {
          for (std::size_t dx = 0; dx < pool.window; ++dx) {
            acc += in.at(ch, oy * pool.stride + dy, ox * pool.stride + dx);
          }
        }
        out.at(ch, oy, ox) = acc * inv;
      }
    }
  }
  return out;
}

Tensor pool_backward(const AvgPool& pool, const Tensor& in, const Tensor& grad_out) {
  Tensor grad_in(in.shape());
  const std::size_t c = grad_out.dim(0), oh = grad_out.dim(1), ow = grad_out.dim(2);
  const double inv = 1.0 / static_cast<double>(pool.window * pool.window);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const double g = grad_out.at(ch, oy, ox) * inv;
        for (std::size_t dy = 0; dy < pool.window; ++dy) {
          for (std::size_t dx = 0; dx < pool.window; ++dx) {
            grad_in.at(ch, oy * pool.stride + dy, ox * pool.stride + dx) += g;
          }
        }
      }
    }
  }
  return grad_in;
}

Tensor layer_forward(const Layer& layer, std::size_t index, const Tensor& in) {
  if (const auto* conv = std::get_if<Conv2d>(&layer)) {
    if (in.rank() != 3) dimension_error(index, layer, "expects (C,H,W) input, got " + shape_to_string(in.shape()));
    if (in.dim(0) != conv->in_channels) {
      dimension_error(index, layer,
                      "expects " + std::to_string(conv->in_channels) + " channels, got " + shape_to_string(in.shape()));
    }
    if (in.dim(1) + 2 * conv->padding < conv->kernel_h || in.dim(2) + 2 * conv->padding < conv->kernel_w) {
      dimension_error(index, layer, "kernel does not fit padded input " + shape_to_string(in.shape()));
    }
    return conv_forward(*conv, in);
  }
  if (std::holds_alternative<Relu>(layer)) {
    Tensor out = in;
    for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
    return out;
  }
  if (const auto* pool = std::get_if<AvgPool>(&layer)) {
    if (in.rank() != 3) dimension_error(index, layer, "expects (C,H,W) input, got " + shape_to_string(in.shape()));
    if (in.dim(1) < pool->window || in.dim(2) < pool->window) {
      dimension_error(index, layer, "window larger than input " + shape_to_string(in.shape()));
    }
    return pool_forward(*pool, in);
  }
  if (std::holds_alternative<GlobalAvgPool>(layer)) {
    if (in.rank() != 3) dimension_error(index, layer, "expects (C,H,W) input, got " + shape_to_string(in.shape()));
    const std::size_t c = in.dim(0), hw = in.dim(1) * in.dim(2);
    Tensor out({c});
    for (std::size_t ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      const double* p = in.data() + ch * hw;
      for (std::size_t i = 0; i < hw; ++i) acc += p[i];
      out[ch] = acc / static_cast<double>(hw);
    }
    return out;
  }
  const auto& lin = std::get<Linear>(layer);
  if (in.size() != lin.in_features) {
    dimension_error(index, layer,
                    "expects " + std::to_string(lin.in_features) + " features, got " + shape_to_string(in.shape()));
  }
  Tensor out({lin.out_features});
  for (std::size_t o = 0; o < lin.out_features; ++o) {
    double acc = lin.bias[o];
    for (std::size_t i = 0; i < lin.in_features; ++i) acc += lin.weight.at(o, i) * in[i];
    out[o] = acc;
  }
  return out;
}

Tensor layer_backward(const Layer& layer, const Tensor& in, const Tensor& grad_out, LayerGrads* grads,
                      bool want_input_grad) {
  if (const auto* conv = std::get_if<Conv2d>(&layer)) {
    Tensor grad_in;
    if (want_input_grad) grad_in = Tensor(in.shape());
    conv_backward(*conv, in, grad_out, want_input_grad ? &grad_in : nullptr, grads);
    return grad_in;
  }
  if (std::holds_alternative<Relu>(layer)) {
    Tensor grad_in = grad_out;
    for (std::size_t i = 0; i < grad_in.size(); ++i) {
      if (!(in[i] > 0.0)) grad_in[i] = 0.0;
    }
    return grad_in;
  }
  if (const auto* pool = std::get_if<AvgPool>(&layer)) return pool_backward(*pool, in, grad_out);
  if (std::holds_alternative<GlobalAvgPool>(layer)) {
    Tensor grad_in(in.shape());
    const std::size_t c = in.dim(0), hw = in.dim(1) * in.dim(2);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double g = grad_out[ch] / static_cast<double>(hw);
      double* p = grad_in.data() + ch * hw;
      for (std::size_t i = 0; i < hw; ++i) p[i] = g;
    }
    return grad_in;
  }
  const auto& lin = std::get<Linear>(layer);
  Tensor grad_in(in.shape());
  if (grads) {
    grads->weight = Tensor(lin.weight.shape());
    grads->bias = Tensor(lin.bias.shape());
  }
  for (std::size_t o = 0; o < lin.out_features; ++o) {
    const double g = grad_out[o];
    if (grads) grads->bias[o] = g;
    for (std::size_t i = 0; i < lin.in_features; ++i) {
      grad_in[i] += lin.weight.at(o, i) * g;
      if (grads) grads->weight.at(o, i) = g * in[i];
    }
  }
  return grad_in;
}

}  // namespace

ForwardRecord forward(const MicroNet& net, const Tensor& image) {
  if (image.rank() != 3) {
    throw std::invalid_argument("forward expects a (C,H,W) image, got " + shape_to_string(image.shape()));
  }
  if (image.dim(0) != net.input_channels()) {
    throw std::invalid_argument("image has " + std::to_string(image.dim(0)) + " channels, net expects " +
                                std::to_string(net.input_channels()));
  }
  ForwardRecord record;
  record.input = image;
  record.outputs.reserve(net.layer_count());
  const Tensor* current = &record.input;
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    record.outputs.push_back(layer_forward(net.layer(i), i, *current));
    current = &record.outputs.back();
  }
  const auto logits = record.outputs.back().values();
  record.logits.assign(logits.begin(), logits.end());
  record.probabilities.reserve(record.logits.size());
  for (double z : record.logits) record.probabilities.push_back(sigmoid(z));
  return record;
}

std::vector<double> replay_logits(const MicroNet& net, const Tensor& activation, std::size_t layer) {
  if (layer >= net.layer_count()) throw std::out_of_range("replay from unknown layer " + std::to_string(layer));
  Tensor current = activation;
  for (std::size_t i = layer + 1; i < net.layer_count(); ++i) current = layer_forward(net.layer(i), i, current);
  return {current.values().begin(), current.values().end()};
}

std::vector<double> head_logits(const MicroNet& net, std::span<const double> features) {
  Tensor in({features.size()}, std::vector<double>(features.begin(), features.end()));
  const Tensor out = layer_forward(net.head(), net.head_index(), in);
  return {out.values().begin(), out.values().end()};
}

BackwardResult backward(const MicroNet& net, const ForwardRecord& record, std::span<const Tensor> injected,
                        std::optional<std::size_t> stop_layer, bool want_params) {
  const std::size_t n = net.layer_count();
  if (record.outputs.size() != n) throw std::invalid_argument("forward record does not belong to this net");
  if (injected.size() != n) throw std::invalid_argument("need one injected-gradient slot per layer");
  if (stop_layer && *stop_layer >= n) throw std::out_of_range("stop layer " + std::to_string(*stop_layer) + " not recorded");
  for (std::size_t i = 0; i < n; ++i) {
    if (!injected[i].empty() && injected[i].shape() != record.outputs[i].shape()) {
      throw std::invalid_argument("injected gradient at layer " + std::to_string(i) + " has shape " +
                                  shape_to_string(injected[i].shape()) + ", expected " +
                                  shape_to_string(record.outputs[i].shape()));
    }
  }

  BackwardResult result;
  if (want_params) result.params.resize(n);
  Tensor grad = injected[n - 1].empty() ? Tensor(record.outputs[n - 1].shape()) : injected[n - 1];
  const std::size_t lowest = stop_layer ? *stop_layer + 1 : 0;
  for (std::size_t i = n; i-- > lowest;) {
    const Tensor& in = i == 0 ? record.input : record.outputs[i - 1];
    Tensor grad_in = layer_backward(net.layer(i), in, grad, want_params ? &result.params[i] : nullptr, true);
    if (i > 0 && !injected[i - 1].empty()) grad_in += injected[i - 1];
    grad = std::move(grad_in);
  }
  result.grad = std::move(grad);
  return result;
}

Tensor backprop_to_activation(const MicroNet& net, const ForwardRecord& record, std::size_t cls, std::size_t layer) {
  if (cls >= net.num_classes()) {
    throw std::out_of_range("class " + std::to_string(cls) + " outside " + std::to_string(net.num_classes()) +
                            " classes");
  }
  if (layer >= record.outputs.size()) throw std::out_of_range("layer " + std::to_string(layer) + " was not recorded");
  std::vector<Tensor> injected(net.layer_count());
  injected.back() = Tensor({net.num_classes()});
  injected.back()[cls] = 1.0;
  Tensor grad = backward(net, record, injected, layer, false).grad;
  if (!grad.all_finite()) throw std::runtime_error("non-finite gradient at layer " + std::to_string(layer));
  return grad;
}

Tensor finite_diff_gradient(const MicroNet& net, const Tensor& image, std::size_t cls, std::size_t layer,
                            double epsilon) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("finite-difference epsilon must be positive");
  if (cls >= net.num_classes()) throw std::out_of_range("class " + std::to_string(cls) + " out of range");
  const ForwardRecord record = forward(net, image);
  if (layer >= record.outputs.size()) throw std::out_of_range("layer " + std::to_string(layer) + " was not recorded");
  Tensor activation = record.outputs[layer];
  Tensor grad(activation.shape());
  for (std::size_t i = 0; i < activation.size(); ++i) {
    const double saved = activation[i];
    activation[i] = saved + epsilon;
    const double plus = replay_logits(net, activation, layer)[cls];
    activation[i] = saved - epsilon;
    const double minus = replay_logits(net, activation, layer)[cls];
    activation[i] = saved;
    grad[i] = (plus - minus) / (2.0 * epsilon);
  }
  return grad;
}

}  // namespace wscam
