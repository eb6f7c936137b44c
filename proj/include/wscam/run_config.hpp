#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wscam/dataset.hpp"
#include "wscam/gmic.hpp"

namespace wscam {

struct DetectConfig {
  double tau_cand = 0.5;
  std::size_t cutoff_count = 101;
  double iou_min = 0.3;
  double fppi_cap = 1.0;
  int connectivity = 8;
  std::vector<std::size_t> layercam_layers;  // empty: every global ReLU
};

struct DataConfig {
  std::size_t image_size = 128;
  std::size_t train_per_class = 200;
  std::size_t test_per_class = 50;
  double radius_min = 6.0;
  double radius_max = 14.0;
  double contrast_min = 0.15;
  double contrast_max = 0.35;
  double texture_scale = 40.0;
  double noise_std = 0.03;
};

struct RunConfig {
  std::uint64_t seed = 7;
  std::filesystem::path out_dir = "out";
  DataConfig data;
  TrainConfig train;  // train.seed always follows `seed`
  DetectConfig detect;
  std::size_t overlay_count = 8;
};

// Missing keys keep their defaults; unknown keys, wrong types and invalid
// values throw std::invalid_argument naming the offending key.
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::ordered_json to_json(const RunConfig& config);

void validate(const RunConfig& config);

// Train and test synthesis settings; each split has its own derived seed.
SynthConfig train_synth_config(const RunConfig& config);
SynthConfig test_synth_config(const RunConfig& config);
PredictConfig predict_config(const RunConfig& config);

}  // namespace wscam
