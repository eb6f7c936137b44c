#include "wscam/run_config.hpp"

#include <fstream>
#include <initializer_list>
#include <limits>
#include <stdexcept>
#include <string_view>

#include "wscam/rng.hpp"

namespace wscam {

namespace {

using json = nlohmann::json;

[[noreturn]] void fail(const std::string& key, const std::string& what) {
  throw std::invalid_argument("config: '" + key + "' " + what);
}

void require_object(const json& j, const std::string& key) {
  if (!j.is_object()) fail(key, "must be an object");
}

void reject_unknown(const json& j, const std::string& scope, std::initializer_list<std::string_view> allowed) {
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || k == a;
    if (ok) continue;
    std::string names;
    for (auto a : allowed) names += (names.empty() ? "" : ", ") + std::string(a);
    fail(scope.empty() ? k : scope + "." + k, "is not a recognized key (expected one of: " + names + ")");
  }
}

std::string path_of(const std::string& scope, const char* key) { return scope.empty() ? key : scope + "." + key; }

void read(const json& j, const std::string& scope, const char* key, double& out) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_number()) fail(path_of(scope, key), "must be a number");
  out = v.get<double>();
}

template <typename U>
  requires std::is_unsigned_v<U>
void read(const json& j, const std::string& scope, const char* key, U& out) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_number_unsigned()) fail(path_of(scope, key), "must be a nonnegative integer");
  const auto raw = v.get<std::uint64_t>();
  if (raw > std::numeric_limits<U>::max()) fail(path_of(scope, key), "is out of range");
  out = static_cast<U>(raw);
}

void read(const json& j, const std::string& scope, const char* key, int& out) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_number_integer()) fail(path_of(scope, key), "must be an integer");
  out = v.get<int>();
}

void read_method(const json& j, const std::string& scope, const char* key, Method& out) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_string()) fail(path_of(scope, key), "must be a method name string");
  try {
    out = parse_method(v.get<std::string>());
  } catch (const std::exception& e) {
    fail(path_of(scope, key), e.what());
  }
}

}  // namespace

RunConfig parse_run_config(const json& doc) {
  require_object(doc, "<root>");
  reject_unknown(doc, "", {"seed", "out_dir", "data", "train", "detect", "overlay_count"});
  RunConfig c;
  read(doc, "", "seed", c.seed);
  read(doc, "", "overlay_count", c.overlay_count);
  if (doc.contains("out_dir")) {
    if (!doc["out_dir"].is_string() || doc["out_dir"].get<std::string>().empty()) {
      fail("out_dir", "must be a non-empty string");
    }
    c.out_dir = doc["out_dir"].get<std::string>();
  }

  if (doc.contains("data")) {
    const auto& d = doc["data"];
    require_object(d, "data");
    reject_unknown(d, "data", {"image_size", "train_per_class", "test_per_class", "radius_min", "radius_max",
                               "contrast_min", "contrast_max", "texture_scale", "noise_std"});
    read(d, "data", "image_size", c.data.image_size);
    read(d, "data", "train_per_class", c.data.train_per_class);
    read(d, "data", "test_per_class", c.data.test_per_class);
    read(d, "data", "radius_min", c.data.radius_min);
    read(d, "data", "radius_max", c.data.radius_max);
    read(d, "data", "contrast_min", c.data.contrast_min);
    read(d, "data", "contrast_max", c.data.contrast_max);
    read(d, "data", "texture_scale", c.data.texture_scale);
    read(d, "data", "noise_std", c.data.noise_std);
  }

  if (doc.contains("train")) {
    const auto& t = doc["train"];
    require_object(t, "train");
    reject_unknown(t, "train", {"beta", "epochs", "batch_size", "learning_rate", "roi_count", "patch_size",
                                "crop_size", "train_map_method"});
    read(t, "train", "beta", c.train.beta);
    read(t, "train", "epochs", c.train.epochs);
    read(t, "train", "batch_size", c.train.batch_size);
    read(t, "train", "learning_rate", c.train.learning_rate);
    read(t, "train", "roi_count", c.train.roi_count);
    read(t, "train", "patch_size", c.train.patch_size);
    read(t, "train", "crop_size", c.train.crop_size);
    read_method(t, "train", "train_map_method", c.train.train_map_method);
  }

  if (doc.contains("detect")) {
    const auto& d = doc["detect"];
    require_object(d, "detect");
    reject_unknown(d, "detect", {"test_map_method", "tau_cand", "cutoff_count", "iou_min", "fppi_cap",
                                 "connectivity", "layercam_layers"});
    read_method(d, "detect", "test_map_method", c.train.test_map_method);
    read(d, "detect", "tau_cand", c.detect.tau_cand);
    read(d, "detect", "cutoff_count", c.detect.cutoff_count);
    read(d, "detect", "iou_min", c.detect.iou_min);
    read(d, "detect", "fppi_cap", c.detect.fppi_cap);
    read(d, "detect", "connectivity", c.detect.connectivity);
    if (d.contains("layercam_layers")) {
      const auto& arr = d["layercam_layers"];
      if (!arr.is_array()) fail("detect.layercam_layers", "must be an array of layer indices");
      for (const auto& v : arr) {
        if (!v.is_number_unsigned()) fail("detect.layercam_layers", "must contain nonnegative integers");
        c.detect.layercam_layers.push_back(v.get<std::size_t>());
      }
    }
  }
  c.train.seed = c.seed;
  validate(c);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(is);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config " + path.string() + ": " + e.what());
  }
  return parse_run_config(doc);
}

nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir.string();
  j["overlay_count"] = c.overlay_count;
  j["data"] = {{"image_size", c.data.image_size},       {"train_per_class", c.data.train_per_class},
               {"test_per_class", c.data.test_per_class}, {"radius_min", c.data.radius_min},
               {"radius_max", c.data.radius_max},         {"contrast_min", c.data.contrast_min},
               {"contrast_max", c.data.contrast_max},     {"texture_scale", c.data.texture_scale},
               {"noise_std", c.data.noise_std}};
  j["train"] = {{"beta", c.train.beta},
                {"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"learning_rate", c.train.learning_rate},
                {"roi_count", c.train.roi_count},
                {"patch_size", c.train.patch_size},
                {"crop_size", c.train.crop_size},
                {"train_map_method", std::string(method_name(c.train.train_map_method))}};
  j["detect"] = {{"test_map_method", std::string(method_name(c.train.test_map_method))},
                 {"tau_cand", c.detect.tau_cand},
                 {"cutoff_count", c.detect.cutoff_count},
                 {"iou_min", c.detect.iou_min},
                 {"fppi_cap", c.detect.fppi_cap},
                 {"connectivity", c.detect.connectivity},
                 {"layercam_layers", c.detect.layercam_layers}};
  return j;
}

void validate(const RunConfig& c) {
  validate(train_synth_config(c));
  validate(test_synth_config(c));
  validate(c.train);
  if (c.train.crop_size > c.data.image_size) fail("train.crop_size", "exceeds data.image_size");
  if (c.data.train_per_class == 0) fail("data.train_per_class", "must be positive");
  if (c.data.test_per_class == 0) fail("data.test_per_class", "must be positive");
  const auto& d = c.detect;
  if (!(d.tau_cand >= 0.0 && d.tau_cand <= 1.0)) fail("detect.tau_cand", "must lie in [0, 1]");
  if (d.cutoff_count < 2) fail("detect.cutoff_count", "must be at least 2");
  if (!(d.iou_min >= 0.0 && d.iou_min < 1.0)) fail("detect.iou_min", "must lie in [0, 1)");
  if (!(d.fppi_cap >= 0.0)) fail("detect.fppi_cap", "must be >= 0");
  if (d.connectivity != 4 && d.connectivity != 8) fail("detect.connectivity", "must be 4 or 8");
}

SynthConfig train_synth_config(const RunConfig& c) {
  SynthConfig s;
  s.image_size = c.data.image_size;
  s.normal_count = c.data.train_per_class;
  s.mass_count = c.data.train_per_class;
  s.radius_min = c.data.radius_min;
  s.radius_max = c.data.radius_max;
  s.contrast_min = c.data.contrast_min;
  s.contrast_max = c.data.contrast_max;
  s.texture_scale = c.data.texture_scale;
  s.noise_std = c.data.noise_std;
  s.seed = derive_seed(c.seed, "train-data");
  s.id_prefix = "train";
  return s;
}

SynthConfig test_synth_config(const RunConfig& c) {
  SynthConfig s = train_synth_config(c);
  s.normal_count = c.data.test_per_class;
  s.mass_count = c.data.test_per_class;
  s.seed = derive_seed(c.seed, "test-data");
  s.id_prefix = "test";
  return s;
}

PredictConfig predict_config(const RunConfig& c) {
  PredictConfig p;
  p.roi_count = c.train.roi_count;
  p.patch_size = c.train.patch_size;
  p.tau_cand = c.detect.tau_cand;
  p.connectivity = c.detect.connectivity;
  p.layercam_layers = c.detect.layercam_layers;
  return p;
}

}  // namespace wscam
