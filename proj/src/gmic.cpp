#include "wscam/gmic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>

#include "wscam/resample.hpp"
#include "wscam/rng.hpp"
#include "wscam/weights_io.hpp"

namespace wscam {

GmicModel make_gmic_model(std::uint64_t seed, Method train_map_method, const GmicArchitecture& arch) {
  if (!is_trainable_map_method(train_map_method)) {
    throw std::invalid_argument(std::string("train map method must be CAM, GradCAM, GradCAM++ or XGradCAM, got ") +
                                std::string(method_name(train_map_method)));
  }
  GmicModel model;
  model.global_net = MicroNet({Conv2d(1, arch.global_channels_1, 5, 5, 2, 2), Relu{}, AvgPool{2, 2},
                               Conv2d(arch.global_channels_1, arch.global_channels_2, 3, 3, 1, 1), Relu{},
                               Conv2d(arch.global_channels_2, arch.global_channels_2, 3, 3, 1, 1), Relu{},
                               GlobalAvgPool{}, Linear(arch.global_channels_2, arch.classes)});
  model.local_net = MicroNet({Conv2d(1, arch.local_channels_1, 3, 3, 1, 1), Relu{}, AvgPool{2, 2},
                              Conv2d(arch.local_channels_1, arch.local_channels_2, 3, 3, 1, 1), Relu{},
                              GlobalAvgPool{}, Linear(arch.local_channels_2, arch.classes)});
  model.fusion_head = Linear(arch.global_channels_2 + arch.local_channels_2, arch.classes);
  model.saliency_layer = model.global_net.gap_index() - 1;
  model.train_map_method = train_map_method;

  auto global_rng = make_rng(seed, "init-global");
  auto local_rng = make_rng(seed, "init-local");
  auto fusion_rng = make_rng(seed, "init-fusion");
  initialize_weights(model.global_net, global_rng);
  initialize_weights(model.local_net, local_rng);
  std::normal_distribution<double> dist(0.0, std::sqrt(1.0 / static_cast<double>(model.fusion_head.in_features)));
  for (auto& w : model.fusion_head.weight.values()) w = dist(fusion_rng);
  return model;
}

std::vector<std::size_t> default_layercam_layers(const GmicModel& model) {
  std::vector<std::size_t> layers;
  for (std::size_t i = 0; i < model.global_net.gap_index(); ++i) {
    if (std::holds_alternative<Relu>(model.global_net.layer(i))) layers.push_back(i);
  }
  return layers;
}

void validate(const GmicModel& model) {
  const auto classes = model.global_net.num_classes();
  if (model.local_net.num_classes() != classes || model.fusion_head.out_features != classes) {
    throw std::invalid_argument("global, local and fusion heads disagree on the class count");
  }
  if (model.fusion_head.in_features != model.global_net.feature_width() + model.local_net.feature_width()) {
    throw std::invalid_argument("fusion head width must equal global + local feature widths");
  }
  if (model.saliency_layer >= model.global_net.gap_index()) {
    throw std::invalid_argument("saliency layer must precede global_avg_pool");
  }
  if (classes <= kMassClass) throw std::invalid_argument("model needs a mass class");
  if (model.global_net.input_channels() != model.local_net.input_channels()) {
    throw std::invalid_argument("global and local nets must read the same image channels");
  }
}

bool is_trainable_map_method(Method m) { return m != Method::layer_cam; }

void validate(const TrainConfig& c) {
  if (!(c.beta >= 0.0)) throw std::invalid_argument("beta must be >= 0");
  if (c.epochs == 0) throw std::invalid_argument("epochs must be positive");
  if (c.batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (!(c.learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
  if (c.patch_size == 0) throw std::invalid_argument("patch_size must be positive");
  if (c.crop_size == 0) throw std::invalid_argument("crop_size must be positive");
  if (c.patch_size > c.crop_size) throw std::invalid_argument("patch_size must not exceed crop_size");
  if (!is_trainable_map_method(c.train_map_method)) {
    throw std::invalid_argument("LayerCAM cannot drive training; use CAM, GradCAM, GradCAM++ or XGradCAM");
  }
}

namespace {
double clamp_probability(double p) { return std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp); }

// d BCE / d logit of a sigmoid output. The clamp only keeps the reported loss
// finite; the gradient stays p - y so saturated outputs can still recover.
double bce_logit_grad(double target, double p) { return p - target; }
}  // namespace

double bce(std::span<const double> targets, std::span<const double> probabilities) {
  if (targets.size() != probabilities.size()) {
    throw std::invalid_argument("BCE: " + std::to_string(targets.size()) + " targets vs " +
                                std::to_string(probabilities.size()) + " predictions");
  }
  double loss = 0.0;
  for (std::size_t c = 0; c < targets.size(); ++c) {
    const double p = clamp_probability(probabilities[c]);
    loss -= targets[c] * std::log(p) + (1.0 - targets[c]) * std::log(1.0 - p);
  }
  return loss;
}

LossBreakdown gmic_loss(std::span<const double> targets, std::span<const double> y_local,
                        std::span<const double> y_global, std::span<const double> y_fusion, const Tensor& saliency,
                        double beta) {
  LossBreakdown out;
  out.bce_local = bce(targets, y_local);
  out.bce_global = bce(targets, y_global);
  out.bce_fusion = bce(targets, y_fusion);
  for (double v : saliency.values()) out.reg += std::abs(v);
  out.total = out.bce_local + out.bce_global + out.bce_fusion + beta * out.reg;
  return out;
}

std::vector<double> class_targets(Label label, std::size_t classes) {
  std::vector<double> y(classes, 0.0);
  y.at(label == Label::mass ? kMassClass : 0) = 1.0;
  return y;
}

std::vector<PatchOrigin> select_rois(const Tensor& map, std::size_t k, std::size_t patch) {
  if (map.rank() != 2) throw std::invalid_argument("select_rois needs a 2-D map");
  const std::size_t h = map.dim(0), w = map.dim(1);
  if (patch == 0 || patch > h || patch > w) {
    throw std::invalid_argument("patch size " + std::to_string(patch) + " does not fit map " + shape_to_string(map.shape()));
  }
  const std::size_t available = (h - patch + 1) * (w - patch + 1);
  const std::size_t n = std::min(k, available);
  Tensor work = map;
  std::vector<PatchOrigin> out;
  auto origin_of = [&](std::size_t r, std::size_t c) {
    const auto half = static_cast<long>(patch / 2);
    const long orow = std::clamp(static_cast<long>(r) - half, 0L, static_cast<long>(h - patch));
    const long ocol = std::clamp(static_cast<long>(c) - half, 0L, static_cast<long>(w - patch));
    return PatchOrigin{static_cast<std::size_t>(orow), static_cast<std::size_t>(ocol)};
  };
  while (out.size() < n) {
    bool found = false;
    double best = 0.0;
    PatchOrigin pick;
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        const double v = work.at(r, c);
        if (found && !(v > best)) continue;
        const PatchOrigin o = origin_of(r, c);
        if (std::find(out.begin(), out.end(), o) != out.end()) continue;
        found = true;
        best = v;
        pick = o;
      }
    }
    if (!found) break;
    out.push_back(pick);
    for (std::size_t r = pick.row; r < pick.row + patch; ++r) {
      for (std::size_t c = pick.col; c < pick.col + patch; ++c) work.at(r, c) = 0.0;
    }
  }
  return out;
}

Tensor crop_patch(const Tensor& image, const PatchOrigin& origin, std::size_t patch) {
  if (image.rank() != 3) throw std::invalid_argument("crop_patch needs a (C,H,W) image");
  const std::size_t c = image.dim(0);
  if (origin.row + patch > image.dim(1) || origin.col + patch > image.dim(2)) {
    throw std::out_of_range("patch at (" + std::to_string(origin.row) + "," + std::to_string(origin.col) +
                            ") of size " + std::to_string(patch) + " leaves image " + shape_to_string(image.shape()));
  }
  Tensor out({c, patch, patch});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t r = 0; r < patch; ++r) {
      const double* src = image.data() + (ch * image.dim(1) + origin.row + r) * image.dim(2) + origin.col;
      std::copy(src, src + patch, out.data() + (ch * patch + r) * patch);
    }
  }
  return out;
}

LocalAggregate local_aggregate(const MicroNet& local_net, std::span<const Tensor> patches) {
  LocalAggregate agg;
  agg.features.assign(local_net.feature_width(), 0.0);
  for (const auto& patch : patches) {
    agg.patch_records.push_back(forward(local_net, patch));
    const Tensor& pooled = agg.patch_records.back().outputs[local_net.gap_index()];
    for (std::size_t i = 0; i < agg.features.size(); ++i) agg.features[i] += pooled[i];
  }
  if (!patches.empty()) {
    for (auto& f : agg.features) f /= static_cast<double>(patches.size());
  }
  agg.logits = head_logits(local_net, agg.features);
  for (double z : agg.logits) agg.probabilities.push_back(sigmoid(z));
  return agg;
}

GmicForward gmic_forward(const GmicModel& model, const Tensor& image, std::size_t roi_count, std::size_t patch_size) {
  GmicForward fwd;
  fwd.global = forward(model.global_net, image);
  fwd.alpha = channel_weights(model.train_map_method, fwd.global, model.global_net, kMassClass, model.saliency_layer);
  fwd.train_map = SaliencyMap{weighted_combination(fwd.global.outputs[model.saliency_layer], fwd.alpha.alpha),
                              model.train_map_method,
                              {model.saliency_layer},
                              kMassClass};
  fwd.roi_map = bilinear_upsample(normalize_grid(fwd.train_map.grid), image.dim(1), image.dim(2));
  fwd.rois = select_rois(fwd.roi_map, roi_count, patch_size);
  std::vector<Tensor> patches;
  patches.reserve(fwd.rois.size());
  for (const auto& o : fwd.rois) patches.push_back(crop_patch(image, o, patch_size));
  fwd.local = local_aggregate(model.local_net, patches);

  const Tensor& global_features = fwd.global.outputs[model.global_net.gap_index()];
  fwd.fused_features.assign(global_features.values().begin(), global_features.values().end());
  fwd.fused_features.insert(fwd.fused_features.end(), fwd.local.features.begin(), fwd.local.features.end());
  const Linear& fh = model.fusion_head;
  for (std::size_t o = 0; o < fh.out_features; ++o) {
    double z = fh.bias[o];
    for (std::size_t i = 0; i < fh.in_features; ++i) z += fh.weight.at(o, i) * fwd.fused_features[i];
    fwd.fusion_logits.push_back(z);
    fwd.fusion_probabilities.push_back(sigmoid(z));
  }
  return fwd;
}

namespace {
void accumulate_layers(std::vector<LayerGrads>& into, const std::vector<LayerGrads>& from) {
  if (into.empty()) {
    into = from;
    return;
  }
  for (std::size_t i = 0; i < into.size(); ++i) {
    if (!from[i].weight.empty()) into[i].weight += from[i].weight;
    if (!from[i].bias.empty()) into[i].bias += from[i].bias;
  }
}

std::vector<LayerGrads> zero_grads(const MicroNet& net) {
  std::vector<LayerGrads> out(net.layer_count());
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    if (const auto* conv = std::get_if<Conv2d>(&net.layer(i))) {
      out[i] = {Tensor(conv->weight.shape()), Tensor(conv->bias.shape())};
    } else if (const auto* lin = std::get_if<Linear>(&net.layer(i))) {
      out[i] = {Tensor(lin->weight.shape()), Tensor(lin->bias.shape())};
    }
  }
  return out;
}

void scale_layers(std::vector<LayerGrads>& grads, double factor) {
  for (auto& g : grads) {
    if (!g.weight.empty()) g.weight *= factor;
    if (!g.bias.empty()) g.bias *= factor;
  }
}

void step_layer(Tensor& param, const Tensor& grad, double lr) {
  if (grad.empty()) return;
  for (std::size_t i = 0; i < param.size(); ++i) param[i] -= lr * grad[i];
}

void step_net(MicroNet& net, const std::vector<LayerGrads>& grads, double lr) {
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    auto& layer = net.mutable_layer(i);
    if (auto* conv = std::get_if<Conv2d>(&layer)) {
      step_layer(conv->weight, grads[i].weight, lr);
      step_layer(conv->bias, grads[i].bias, lr);
    } else if (auto* lin = std::get_if<Linear>(&layer)) {
      step_layer(lin->weight, grads[i].weight, lr);
      step_layer(lin->bias, grads[i].bias, lr);
    }
  }
}
}  // namespace

void GmicGradients::accumulate(const GmicGradients& other) {
  accumulate_layers(global, other.global);
  accumulate_layers(local, other.local);
  if (fusion.weight.empty()) {
    fusion = other.fusion;
  } else {
    fusion.weight += other.fusion.weight;
    fusion.bias += other.fusion.bias;
  }
}

void GmicGradients::scale(double factor) {
  scale_layers(global, factor);
  scale_layers(local, factor);
  if (!fusion.weight.empty()) {
    fusion.weight *= factor;
    fusion.bias *= factor;
  }
}

LossBreakdown gmic_loss_and_gradients(const GmicModel& model, const GmicForward& fwd, Label label, double beta,
                                      GmicGradients* grads) {
  const std::size_t classes = model.global_net.num_classes();
  const auto y = class_targets(label, classes);
  const LossBreakdown loss = gmic_loss(y, fwd.local.probabilities, fwd.global.probabilities, fwd.fusion_probabilities,
                                       fwd.train_map.grid, beta);
  if (!grads) return loss;

  const MicroNet& gnet = model.global_net;
  const MicroNet& lnet = model.local_net;
  const std::size_t gwidth = gnet.feature_width(), lwidth = lnet.feature_width();

  std::vector<double> dz_global(classes), dz_local(classes), dz_fusion(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    dz_global[c] = bce_logit_grad(y[c], fwd.global.probabilities[c]);
    dz_local[c] = bce_logit_grad(y[c], fwd.local.probabilities[c]);
    dz_fusion[c] = bce_logit_grad(y[c], fwd.fusion_probabilities[c]);
  }

  // Fusion head.
  const Linear& fh = model.fusion_head;
  grads->fusion = {Tensor(fh.weight.shape()), Tensor(fh.bias.shape())};
  std::vector<double> d_fused(fh.in_features, 0.0);
  for (std::size_t o = 0; o < classes; ++o) {
    grads->fusion.bias[o] = dz_fusion[o];
    for (std::size_t i = 0; i < fh.in_features; ++i) {
      grads->fusion.weight.at(o, i) = dz_fusion[o] * fwd.fused_features[i];
      d_fused[i] += fh.weight.at(o, i) * dz_fusion[o];
    }
  }

  // Local head acts on the pooled vector; patches share d(pooled) / n.
  const Linear& lh = lnet.head();
  std::vector<double> d_local(d_fused.begin() + static_cast<long>(gwidth), d_fused.end());
  LayerGrads local_head{Tensor(lh.weight.shape()), Tensor(lh.bias.shape())};
  for (std::size_t o = 0; o < classes; ++o) {
    local_head.bias[o] = dz_local[o];
    for (std::size_t i = 0; i < lwidth; ++i) {
      local_head.weight.at(o, i) = dz_local[o] * fwd.local.features[i];
      d_local[i] += lh.weight.at(o, i) * dz_local[o];
    }
  }
  grads->local = zero_grads(lnet);
  const std::size_t n_patches = fwd.local.patch_records.size();
  if (n_patches > 0) {
    std::vector<Tensor> injected(lnet.layer_count());
    injected[lnet.gap_index()] = Tensor({lwidth}, d_local);
    injected[lnet.gap_index()] *= 1.0 / static_cast<double>(n_patches);
    for (const auto& rec : fwd.local.patch_records) {
      accumulate_layers(grads->local, backward(lnet, rec, injected, std::nullopt, true).params);
    }
  }
  grads->local[lnet.head_index()] = std::move(local_head);

  // Global net: logits, pooled features (via fusion), and the regularizer.
  std::vector<Tensor> injected(gnet.layer_count());
  injected[gnet.head_index()] = Tensor({classes}, dz_global);
  injected[gnet.gap_index()] = Tensor({gwidth}, std::vector<double>(d_fused.begin(), d_fused.begin() + static_cast<long>(gwidth)));
  const Tensor& act = fwd.global.outputs[model.saliency_layer];
  const Tensor& map = fwd.train_map.grid;
  const std::size_t channels = act.dim(0), hw = act.dim(1) * act.dim(2);
  if (beta != 0.0) {
    Tensor d_act(act.shape());
    for (std::size_t k = 0; k < channels; ++k) {
      const double a = beta * fwd.alpha.alpha[k];
      for (std::size_t i = 0; i < hw; ++i) {
        if (map[i] > 0.0) d_act[k * hw + i] = a;
      }
    }
    injected[model.saliency_layer] = std::move(d_act);
  }
  grads->global = backward(gnet, fwd.global, injected, std::nullopt, true).params;
  if (beta != 0.0 && model.train_map_method == Method::cam) {
    Tensor& head_w = grads->global[gnet.head_index()].weight;
    for (std::size_t k = 0; k < channels; ++k) {
      double acc = 0.0;
      for (std::size_t i = 0; i < hw; ++i) {
        if (map[i] > 0.0) acc += act[k * hw + i];
      }
      head_w.at(kMassClass, k) += beta * acc;
    }
  }
  return loss;
}

void apply_gradients(GmicModel& model, const GmicGradients& grads, double learning_rate) {
  step_net(model.global_net, grads.global, learning_rate);
  step_net(model.local_net, grads.local, learning_rate);
  step_layer(model.fusion_head.weight, grads.fusion.weight, learning_rate);
  step_layer(model.fusion_head.bias, grads.fusion.bias, learning_rate);
}

Prediction predict(const GmicModel& model, const Tensor& raw_image, Method map_method, const PredictConfig& config) {
  Tensor image = raw_image;
  normalize_image(image);
  const GmicForward fwd = gmic_forward(model, image, config.roi_count, config.patch_size);
  Prediction p;
  p.y_global = fwd.global.probabilities[kMassClass];
  p.y_local = fwd.local.probabilities[kMassClass];
  p.y_fusion = fwd.fusion_probabilities[kMassClass];
  const auto layers = config.layercam_layers.empty() ? default_layercam_layers(model) : config.layercam_layers;
  p.saliency = compute_saliency(map_method, fwd.global, model.global_net, kMassClass, model.saliency_layer, layers);
  p.normalized_map = bilinear_upsample(normalize_grid(p.saliency.grid), image.dim(1), image.dim(2));
  p.detections = extract_detections(p.normalized_map, config.tau_cand, config.connectivity);
  return p;
}

TrainResult train(GmicModel model, const Dataset& dataset, const TrainConfig& config, const EpochCallback& on_epoch) {
  validate(config);
  if (dataset.empty()) throw std::invalid_argument("cannot train on an empty dataset");
  model.train_map_method = config.train_map_method;
  validate(model);
  const AugmentConfig aug{config.crop_size, 0.5};

  TrainResult result;
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto shuffle_rng = make_rng(config.seed, "shuffle", epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    LossBreakdown epoch_sum;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      GmicGradients batch;
      for (std::size_t pos = start; pos < end; ++pos) {
        const std::size_t idx = order[pos];
        const Sample& src = dataset.samples[idx];
        const Sample sample = augment(src, derive_seed(config.seed, "augment", epoch * dataset.size() + idx), aug);
        const GmicForward fwd = gmic_forward(model, sample.image, config.roi_count, config.patch_size);
        GmicGradients g;
        const LossBreakdown loss = gmic_loss_and_gradients(model, fwd, sample.label, config.beta, &g);
        if (!std::isfinite(loss.total)) {
          char buf[256];
          std::snprintf(buf, sizeof buf,
                        "training diverged at epoch %zu on sample %s: bce_local=%g bce_global=%g bce_fusion=%g reg=%g",
                        epoch + 1, src.id.c_str(), loss.bce_local, loss.bce_global, loss.bce_fusion, loss.reg);
          throw std::runtime_error(buf);
        }
        epoch_sum.bce_local += loss.bce_local;
        epoch_sum.bce_global += loss.bce_global;
        epoch_sum.bce_fusion += loss.bce_fusion;
        epoch_sum.reg += loss.reg;
        epoch_sum.total += loss.total;
        batch.accumulate(g);
      }
      batch.scale(1.0 / static_cast<double>(end - start));
      apply_gradients(model, batch, config.learning_rate);
    }
    const double n = static_cast<double>(dataset.size());
    LossBreakdown mean{epoch_sum.bce_local / n, epoch_sum.bce_global / n, epoch_sum.bce_fusion / n,
                       epoch_sum.reg / n, epoch_sum.total / n};
    result.history.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
  }
  result.model = std::move(model);
  return result;
}

void write_history_csv(std::ostream& os, std::span<const LossBreakdown> history) {
  os << "epoch,bce_local,bce_global,bce_fusion,reg,total\n";
  char buf[256];
  for (std::size_t i = 0; i < history.size(); ++i) {
    const auto& h = history[i];
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g\n", i + 1, h.bce_local, h.bce_global, h.bce_fusion,
                  h.reg, h.total);
    os << buf;
  }
}

namespace {
constexpr char kSectionMagic[4] = {'G', 'M', 'I', 'C'};
}

void write_checkpoint(std::ostream& os, const GmicModel& model) {
  write_net(os, model.global_net);
  ByteWriter w(os);
  w.bytes(kSectionMagic, 4);
  w.u32(static_cast<std::uint32_t>(model.saliency_layer));
  w.u8(static_cast<std::uint8_t>(model.train_map_method));
  w.u32(static_cast<std::uint32_t>(model.local_net.layer_count()));
  for (const auto& layer : model.local_net.layers()) w.layer(layer);
  w.layer(model.fusion_head);
}

GmicModel read_checkpoint(std::istream& is) {
  GmicModel model;
  model.global_net = read_net(is);
  ByteReader r(is);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kSectionMagic, 4) != 0) throw std::runtime_error("weights file has no GMIC section");
  model.saliency_layer = r.u32();
  const auto method = r.u8();
  if (method > static_cast<std::uint8_t>(Method::layer_cam)) throw std::runtime_error("checkpoint: unknown map method");
  model.train_map_method = static_cast<Method>(method);
  const auto count = r.u32();
  if (count == 0 || count > 1024) throw std::runtime_error("checkpoint: implausible local layer count");
  std::vector<Layer> layers;
  for (std::uint32_t i = 0; i < count; ++i) layers.push_back(r.layer());
  model.local_net = MicroNet(std::move(layers));
  Layer fusion = r.layer();
  if (!std::holds_alternative<Linear>(fusion)) throw std::runtime_error("checkpoint: fusion head must be linear");
  model.fusion_head = std::get<Linear>(std::move(fusion));
  validate(model);
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const GmicModel& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  write_checkpoint(os, model);
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

GmicModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  return read_checkpoint(is);
}

}  // namespace wscam
