#include "wscam/saliency.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "wscam/resample.hpp"

namespace wscam {

namespace {
constexpr double kEps = 1e-12;

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

const Tensor& activation_at(const ForwardRecord& record, std::size_t layer) {
  if (layer >= record.outputs.size()) throw std::out_of_range("layer " + std::to_string(layer) + " was not recorded");
  const Tensor& a = record.outputs[layer];
  if (a.rank() != 3) {
    throw std::invalid_argument("saliency needs a spatial (C,H,W) activation; layer " + std::to_string(layer) +
                                " has shape " + shape_to_string(a.shape()));
  }
  return a;
}

SaliencyMap make_map(Tensor grid, Method method, std::vector<std::size_t> layers, std::size_t cls) {
  return SaliencyMap{std::move(grid), method, std::move(layers), cls};
}

SaliencyMap single_layer_map(Method method, const ForwardRecord& record, const MicroNet& net, std::size_t cls,
                             std::size_t layer) {
  const ChannelWeights w = channel_weights(method, record, net, cls, layer);
  return make_map(weighted_combination(activation_at(record, layer), w.alpha), method, {layer}, cls);
}
}  // namespace

std::string_view method_name(Method m) {
  switch (m) {
    case Method::cam:
      return "CAM";
    case Method::grad_cam:
      return "GradCAM";
    case Method::grad_cam_pp:
      return "GradCAM++";
    case Method::xgrad_cam:
      return "XGradCAM";
    case Method::layer_cam:
      return "LayerCAM";
  }
  return "?";
}

std::string valid_method_names() {
  std::string out;
  for (auto m : kAllMethods) {
    if (!out.empty()) out += ", ";
    out += method_name(m);
  }
  return out;
}

Method parse_method(std::string_view name) {
  const std::string key = lower(name);
  for (auto m : kAllMethods) {
    if (key == lower(method_name(m))) return m;
  }
  if (key == "gradcampp") return Method::grad_cam_pp;
  throw std::invalid_argument("unknown activation-map method '" + std::string(name) + "'; valid: " +
                              valid_method_names());
}

Tensor weighted_combination(const Tensor& activation, std::span<const double> alpha) {
  if (activation.rank() != 3 || alpha.size() != activation.dim(0)) {
    throw std::invalid_argument("channel weight count " + std::to_string(alpha.size()) +
                                " does not match activation " + shape_to_string(activation.shape()));
  }
  const std::size_t c = activation.dim(0), h = activation.dim(1), w = activation.dim(2);
  Tensor grid({h, w});
  for (std::size_t k = 0; k < c; ++k) {
    const double a = alpha[k];
    if (a == 0.0) continue;
    const double* src = activation.data() + k * h * w;
    for (std::size_t i = 0; i < h * w; ++i) grid[i] += a * src[i];
  }
  for (auto& v : grid.values()) v = v > 0.0 ? v : 0.0;
  return grid;
}

ChannelWeights channel_weights(Method method, const ForwardRecord& record, const MicroNet& net, std::size_t cls,
                               std::size_t layer) {
  const Tensor& act = activation_at(record, layer);
  if (cls >= net.num_classes()) throw std::out_of_range("class " + std::to_string(cls) + " out of range");
  const std::size_t c = act.dim(0), hw = act.dim(1) * act.dim(2);
  ChannelWeights out;
  out.alpha.assign(c, 0.0);

  if (method == Method::cam) {
    if (layer + 1 != net.gap_index()) {
      throw std::invalid_argument("CAM reads head weights, so it needs the layer that feeds global_avg_pool (layer " +
                                  std::to_string(net.gap_index() - 1) + "), got layer " + std::to_string(layer));
    }
    for (std::size_t k = 0; k < c; ++k) out.alpha[k] = net.head().weight.at(cls, k);
    return out;
  }
  if (method == Method::layer_cam) throw std::invalid_argument("LayerCAM has per-cell weights, not channel weights");

  const Tensor grad = backprop_to_activation(net, record, cls, layer);
  switch (method) {
    case Method::grad_cam:
      for (std::size_t k = 0; k < c; ++k) {
        double acc = 0.0;
        for (std::size_t i = 0; i < hw; ++i) acc += grad[k * hw + i];
        out.alpha[k] = acc / static_cast<double>(hw);
      }
      break;
    case Method::xgrad_cam:
      for (std::size_t k = 0; k < c; ++k) {
        const double* a = act.data() + k * hw;
        double a_sum = 0.0;
        for (std::size_t i = 0; i < hw; ++i) {
          if (a[i] < 0.0) {
            throw std::invalid_argument("XGradCAM needs a nonnegative (post-ReLU) activation at layer " +
                                        std::to_string(layer));
          }
          a_sum += a[i];
        }
        double acc = 0.0;
        for (std::size_t i = 0; i < hw; ++i) acc += a[i] / (a_sum + kEps) * grad[k * hw + i];
        out.alpha[k] = acc;
      }
      break;
    case Method::grad_cam_pp: {
      // Score Y = exp(S). With S piecewise linear in A its higher derivatives
      // vanish, so d^nY/dA^n = exp(S) g^n and the exp(S) factors cancel in the
      // per-cell coefficient a = g^2 / (2 g^2 + sum(A) g^3).
      const double exp_score = std::exp(record.logits.at(cls));
      if (!std::isfinite(exp_score)) throw std::runtime_error("GradCAM++: exp(logit) overflows");
      for (std::size_t k = 0; k < c; ++k) {
        const double* a = act.data() + k * hw;
        double a_sum = 0.0;
        for (std::size_t i = 0; i < hw; ++i) a_sum += a[i];
        double acc = 0.0;
        for (std::size_t i = 0; i < hw; ++i) {
          const double g = grad[k * hw + i];
          const double g2 = g * g;
          const double denom = 2.0 * g2 + a_sum * g2 * g;
          if (denom == 0.0) continue;
          const double dy = exp_score * g;
          if (dy > 0.0) acc += g2 / denom * dy;
        }
        out.alpha[k] = acc;
      }
      break;
    }
    default:
      break;
  }
  return out;
}

SaliencyMap cam(const ForwardRecord& record, const MicroNet& net, std::size_t cls, std::size_t layer) {
  return single_layer_map(Method::cam, record, net, cls, layer);
}

SaliencyMap grad_cam(const ForwardRecord& record, const MicroNet& net, std::size_t cls, std::size_t layer) {
  return single_layer_map(Method::grad_cam, record, net, cls, layer);
}

SaliencyMap grad_cam_pp(const ForwardRecord& record, const MicroNet& net, std::size_t cls, std::size_t layer) {
  return single_layer_map(Method::grad_cam_pp, record, net, cls, layer);
}

SaliencyMap xgrad_cam(const ForwardRecord& record, const MicroNet& net, std::size_t cls, std::size_t layer) {
  return single_layer_map(Method::xgrad_cam, record, net, cls, layer);
}

SaliencyMap layer_cam(const ForwardRecord& record, const MicroNet& net, std::size_t cls,
                      std::span<const std::size_t> layers) {
  if (layers.empty()) throw std::invalid_argument("LayerCAM needs at least one layer");
  std::vector<Tensor> per_layer;
  std::size_t out_h = 0, out_w = 0;
  for (std::size_t layer : layers) {
    const Tensor& act = activation_at(record, layer);
    const Tensor grad = backprop_to_activation(net, record, cls, layer);
    const std::size_t c = act.dim(0), h = act.dim(1), w = act.dim(2);
    Tensor m({h, w});
    for (std::size_t k = 0; k < c; ++k) {
      for (std::size_t i = 0; i < h * w; ++i) {
        const double g = grad[k * h * w + i];
        if (g > 0.0) m[i] += g * act[k * h * w + i];
      }
    }
    for (auto& v : m.values()) v = v > 0.0 ? v : 0.0;
    if (h * w > out_h * out_w) {
      out_h = h;
      out_w = w;
    }
    per_layer.push_back(normalize_grid(m));
  }
  Tensor fused({out_h, out_w});
  for (const auto& m : per_layer) {
    const Tensor up = bilinear_upsample(m, out_h, out_w);
    for (std::size_t i = 0; i < fused.size(); ++i) fused[i] = std::max(fused[i], up[i]);
  }
  return make_map(std::move(fused), Method::layer_cam, {layers.begin(), layers.end()}, cls);
}

SaliencyMap compute_saliency(Method method, const ForwardRecord& record, const MicroNet& net, std::size_t cls,
                             std::size_t layer, std::span<const std::size_t> layer_set) {
  if (method == Method::layer_cam) return layer_cam(record, net, cls, layer_set);
  return single_layer_map(method, record, net, cls, layer);
}

Tensor normalize_grid(const Tensor& grid) {
  Tensor out(grid.shape());
  const double lo = grid.min();
  const double range = grid.max() - lo;
  if (!(range > kEps)) return out;
  for (std::size_t i = 0; i < grid.size(); ++i) out[i] = (grid[i] - lo) / range;
  return out;
}

SaliencyMap normalize_map(const SaliencyMap& map) {
  SaliencyMap out = map;
  out.grid = normalize_grid(map.grid);
  return out;
}

namespace {
unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}
}  // namespace

void write_saliency_pgm(const std::filesystem::path& path, const Tensor& normalized) {
  if (normalized.rank() != 2) throw std::invalid_argument("saliency PGM needs a 2-D grid");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "P5\n" << normalized.dim(1) << ' ' << normalized.dim(0) << "\n255\n";
  for (double v : normalized.values()) os.put(static_cast<char>(to_byte(v)));
}

void write_overlay_ppm(const std::filesystem::path& path, const Tensor& image, const Tensor& normalized) {
  if (image.rank() != 2 || image.shape() != normalized.shape()) {
    throw std::invalid_argument("overlay needs a 2-D image and a map of the same shape");
  }
  constexpr double kBlend = 0.6;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "P6\n" << image.dim(1) << ' ' << image.dim(0) << "\n255\n";
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double a = kBlend * std::clamp(normalized[i], 0.0, 1.0);
    const double base = std::clamp(image[i], 0.0, 1.0) * (1.0 - a);
    os.put(static_cast<char>(to_byte(base + a)));
    os.put(static_cast<char>(to_byte(base)));
    os.put(static_cast<char>(to_byte(base)));
  }
}

}  // namespace wscam
