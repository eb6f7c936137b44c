#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wscam/net.hpp"
#include "wscam/tensor.hpp"

namespace wscam {

enum class Method { cam, grad_cam, grad_cam_pp, xgrad_cam, layer_cam };

inline constexpr std::array<Method, 5> kAllMethods = {Method::cam, Method::grad_cam, Method::grad_cam_pp,
                                                      Method::xgrad_cam, Method::layer_cam};

std::string_view method_name(Method m);
// Accepts the display names (CAM, GradCAM, GradCAM++, XGradCAM, LayerCAM),
// case-insensitively, plus "GradCAMpp". Throws listing the valid names.
Method parse_method(std::string_view name);
std::string valid_method_names();

// The class index whose saliency this project evaluates.
inline constexpr std::size_t kMassClass = 1;

struct SaliencyMap {
  Tensor grid;  // (H, W), every value >= 0
  Method method = Method::cam;
  std::vector<std::size_t> layers;
  std::size_t class_index = 0;
};

// Per-channel coefficients alpha_k over a (C, H, W) activation.
struct ChannelWeights {
  std::vector<double> alpha;
};

// ReLU(sum_k alpha_k A_k) over a (C, H, W) activation.
Tensor weighted_combination(const Tensor& activation, std::span<const double> alpha);

// Channel weights for the single-layer methods (everything except LayerCAM).
ChannelWeights channel_weights(Method method, const ForwardRecord& record, const MicroNet& net, std::size_t cls,
                               std::size_t layer);

SaliencyMap cam(const ForwardRecord& record, const MicroNet& net, std::size_t cls, std::size_t layer);
SaliencyMap grad_cam(const ForwardRecord& record, const MicroNet& net, std::size_t cls, std::size_t layer);
SaliencyMap grad_cam_pp(const ForwardRecord& record, const MicroNet& net, std::size_t cls, std::size_t layer);
SaliencyMap xgrad_cam(const ForwardRecord& record, const MicroNet& net, std::size_t cls, std::size_t layer);
SaliencyMap layer_cam(const ForwardRecord& record, const MicroNet& net, std::size_t cls,
                      std::span<const std::size_t> layers);

// Dispatch on method. `layer` feeds the single-layer methods, `layer_set` LayerCAM.
SaliencyMap compute_saliency(Method method, const ForwardRecord& record, const MicroNet& net, std::size_t cls,
                             std::size_t layer, std::span<const std::size_t> layer_set);

// Min-max rescale to [0, 1]; a constant map becomes all zeros.
SaliencyMap normalize_map(const SaliencyMap& map);
Tensor normalize_grid(const Tensor& grid);

// 8-bit grayscale P5 rendering of a [0,1] grid.
void write_saliency_pgm(const std::filesystem::path& path, const Tensor& normalized);
// P6 rendering of a [0,1] grayscale image with the map blended into the red channel.
void write_overlay_ppm(const std::filesystem::path& path, const Tensor& image, const Tensor& normalized);

}  // namespace wscam
