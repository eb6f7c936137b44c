#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "wscam/detection.hpp"
#include "wscam/tensor.hpp"

namespace wscam {

enum class Label : int { normal = 0, mass = 1 };

const char* label_name(Label label);

struct Sample {
  std::string id;
  Tensor image;  // (1, H, W), values in [0, 1] until normalized
  Label label = Label::normal;
  std::vector<BBox> boxes;  // evaluation only; training never reads them

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct Dataset {
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct SynthConfig {
  std::size_t image_size = 128;
  std::size_t normal_count = 200;
  std::size_t mass_count = 200;
  double radius_min = 6.0;
  double radius_max = 14.0;
  double contrast_min = 0.15;
  double contrast_max = 0.35;
  double texture_scale = 40.0;  // wavelength of the background texture, pixels
  double noise_std = 0.03;
  std::uint64_t seed = 7;
  std::string id_prefix = "img";
};

void validate(const SynthConfig& config);

// Normals first, then masses. Pixel values are pre-quantized to 8 bits so the
// in-memory dataset equals what write_dataset/load_manifest round-trip.
Dataset generate_synthetic(const SynthConfig& config);

// Writes <dir>/<id>.pgm for every sample plus <dir>/<manifest_name>.
void write_dataset(const std::filesystem::path& dir, const Dataset& dataset,
                   const std::string& manifest_name = "manifest.csv");

// Manifest rows: image_path,label[,x_min,y_min,x_max,y_max]*; paths are
// relative to the manifest's directory.
Dataset load_manifest(const std::filesystem::path& path);

Dataset without_boxes(Dataset dataset);

void flip_horizontal(Sample& sample);
// Crops to [y0, y0+h) x [x0, x0+w); boxes are clipped and dropped when less
// than a quarter of their original area survives.
void crop(Sample& sample, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w);
// Zero mean, unit variance (variance floored at 1e-8).
void normalize_image(Tensor& image);

struct AugmentConfig {
  std::size_t crop_size = 112;
  double flip_probability = 0.5;
};

// Random horizontal flip, random crop, per-image normalization.
Sample augment(const Sample& sample, std::uint64_t seed, const AugmentConfig& config = {});

}  // namespace wscam
