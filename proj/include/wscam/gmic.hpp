#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "wscam/dataset.hpp"
#include "wscam/detection.hpp"
#include "wscam/net.hpp"
#include "wscam/saliency.hpp"

namespace wscam {

// Global/local/fusion classifier at desk scale. The global net's saliency
// picks patches, the local net reads them, and the fusion head sees both
// feature vectors.
struct GmicModel {
  MicroNet global_net;
  MicroNet local_net;
  Linear fusion_head;  // in = global feature width + local feature width
  std::size_t saliency_layer = 0;
  Method train_map_method = Method::cam;

  friend bool operator==(const GmicModel&, const GmicModel&) = default;
};

struct GmicArchitecture {
  std::size_t global_channels_1 = 8;
  std::size_t global_channels_2 = 16;
  std::size_t local_channels_1 = 8;
  std::size_t local_channels_2 = 16;
  std::size_t classes = 2;
};

// conv5x5/2 relu pool2 conv3x3 relu conv3x3 relu | gap linear (global),
// conv3x3 relu pool2 conv3x3 relu | gap linear (local). Saliency reads the
// last global ReLU.
GmicModel make_gmic_model(std::uint64_t seed, Method train_map_method, const GmicArchitecture& arch = {});

// Default LayerCAM layer set for models built by make_gmic_model: every global ReLU.
std::vector<std::size_t> default_layercam_layers(const GmicModel& model);

void validate(const GmicModel& model);

// Methods allowed to drive ROI selection and the regularizer during training.
bool is_trainable_map_method(Method m);

struct TrainConfig {
  double beta = 3.26e-4;
  std::size_t epochs = 40;
  std::size_t batch_size = 6;
  double learning_rate = 5e-2;
  std::uint64_t seed = 7;
  std::size_t roi_count = 2;
  std::size_t patch_size = 32;
  std::size_t crop_size = 112;
  Method train_map_method = Method::cam;
  Method test_map_method = Method::grad_cam_pp;
};

void validate(const TrainConfig& config);

struct LossBreakdown {
  double bce_local = 0.0;
  double bce_global = 0.0;
  double bce_fusion = 0.0;
  double reg = 0.0;
  double total = 0.0;
};

inline constexpr double kProbabilityClamp = 1e-7;

// Binary cross-entropy summed over classes, probabilities clamped to [1e-7, 1-1e-7].
double bce(std::span<const double> targets, std::span<const double> probabilities);

// total = bce_local + bce_global + bce_fusion + beta * sum|A|.
LossBreakdown gmic_loss(std::span<const double> targets, std::span<const double> y_local,
                        std::span<const double> y_global, std::span<const double> y_fusion, const Tensor& saliency,
                        double beta);

// Per-class targets for the two-class (normal, mass) problem.
std::vector<double> class_targets(Label label, std::size_t classes = 2);

struct PatchOrigin {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const PatchOrigin&, const PatchOrigin&) = default;
};

// Greedy: centre a patch on the current maximum (clamped to the image),
// zero the covered area, repeat. Returns min(k, distinct windows) distinct origins.
std::vector<PatchOrigin> select_rois(const Tensor& map, std::size_t k, std::size_t patch);

Tensor crop_patch(const Tensor& image, const PatchOrigin& origin, std::size_t patch);

struct LocalAggregate {
  std::vector<double> features;  // mean of per-patch pooled features
  std::vector<double> logits;
  std::vector<double> probabilities;
  std::vector<ForwardRecord> patch_records;
};

// Zero patches give a zero feature vector and a bias-only prediction.
LocalAggregate local_aggregate(const MicroNet& local_net, std::span<const Tensor> patches);

struct GmicForward {
  ForwardRecord global;
  SaliencyMap train_map;  // raw map of the mass class from the model's train method
  ChannelWeights alpha;
  Tensor roi_map;  // normalized, upsampled to the image
  std::vector<PatchOrigin> rois;
  LocalAggregate local;
  std::vector<double> fused_features;
  std::vector<double> fusion_logits;
  std::vector<double> fusion_probabilities;
};

// `image` is already normalized.
GmicForward gmic_forward(const GmicModel& model, const Tensor& image, std::size_t roi_count, std::size_t patch_size);

struct GmicGradients {
  std::vector<LayerGrads> global;
  std::vector<LayerGrads> local;
  LayerGrads fusion;

  void accumulate(const GmicGradients& other);
  void scale(double factor);
};

// Full loss of one forward pass and, when `grads` is set, its gradient. ROI
// coordinates are constants; gradient-derived channel weights (GradCAM-family
// train maps) are treated as constants, CAM's head weights are differentiated.
LossBreakdown gmic_loss_and_gradients(const GmicModel& model, const GmicForward& fwd, Label label, double beta,
                                      GmicGradients* grads);

void apply_gradients(GmicModel& model, const GmicGradients& grads, double learning_rate);

struct PredictConfig {
  std::size_t roi_count = 2;
  std::size_t patch_size = 32;
  double tau_cand = 0.5;
  int connectivity = 8;
  std::vector<std::size_t> layercam_layers;  // empty: default_layercam_layers
};

struct Prediction {
  double y_global = 0.0;  // mass-class probabilities
  double y_local = 0.0;
  double y_fusion = 0.0;
  SaliencyMap saliency;  // raw map from the requested method
  Tensor normalized_map;  // normalized and upsampled to the image
  std::vector<Detection> detections;
};

// Normalizes a raw [0,1] image, classifies it, and localizes with `map_method`.
// Classification always uses the model's train method for ROI selection.
Prediction predict(const GmicModel& model, const Tensor& raw_image, Method map_method, const PredictConfig& config);

struct TrainResult {
  GmicModel model;
  std::vector<LossBreakdown> history;  // mean per epoch
};

using EpochCallback = std::function<void(std::size_t epoch, const LossBreakdown& mean)>;

// Mini-batch gradient descent on the full loss. Reads only image labels.
TrainResult train(GmicModel model, const Dataset& dataset, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

void write_history_csv(std::ostream& os, std::span<const LossBreakdown> history);

void write_checkpoint(std::ostream& os, const GmicModel& model);
GmicModel read_checkpoint(std::istream& is);
void save_checkpoint(const std::filesystem::path& path, const GmicModel& model);
GmicModel load_checkpoint(const std::filesystem::path& path);

}  // namespace wscam
