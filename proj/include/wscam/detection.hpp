#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "wscam/tensor.hpp"

namespace wscam {

// Half-open integer pixel box [x_min, x_max) x [y_min, y_max).
struct BBox {
  int x_min = 0;
  int y_min = 0;
  int x_max = 0;
  int y_max = 0;

  long area() const { return static_cast<long>(x_max - x_min) * (y_max - y_min); }
  bool valid() const { return x_max > x_min && y_max > y_min; }
  friend bool operator==(const BBox&, const BBox&) = default;
};

struct Detection {
  BBox box;
  double score = 0.0;
  friend bool operator==(const Detection&, const Detection&) = default;
};

struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> cells;  // row-major, 0 or 1

  std::uint8_t at(std::size_t r, std::size_t c) const { return cells[r * width + c]; }
};

struct Cell {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

using Region = std::vector<Cell>;

// cell = 1 iff value > tau.
Mask threshold_mask(const Tensor& normalized, double tau);

// Regions in raster order of their first cell; cells within a region in raster order.
std::vector<Region> connected_components(const Mask& mask, int connectivity = 8);

// Tight box per region scored by the region's max map value, sorted by score
// descending then (y_min, x_min) ascending. `map` must be image-sized.
std::vector<Detection> regions_to_detections(const std::vector<Region>& regions, const Tensor& map,
                                             std::size_t image_h, std::size_t image_w);

// threshold -> components -> detections in one call.
std::vector<Detection> extract_detections(const Tensor& normalized_map, double tau_cand, int connectivity = 8);

double iou(const BBox& a, const BBox& b);

struct MatchPair {
  std::size_t detection = 0;
  std::size_t ground_truth = 0;
  double iou = 0.0;
};

struct MatchReport {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::vector<MatchPair> pairs;
};

inline constexpr double kDefaultIouMin = 0.3;

// Greedy in detection order (callers pass score-descending detections).
MatchReport match_detections(std::span<const Detection> detections, std::span<const BBox> ground_truths,
                             double iou_min = kDefaultIouMin);

struct ImageDetections {
  std::vector<Detection> detections;  // score-descending
  std::vector<BBox> ground_truths;
};

struct FrocPoint {
  double cutoff = 0.0;
  double fppi = 0.0;
  double tpr = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  friend bool operator==(const FrocPoint&, const FrocPoint&) = default;
};

struct FrocCurve {
  std::vector<FrocPoint> points;  // descending cutoff
  std::size_t images = 0;
  std::size_t ground_truths = 0;
  bool tpr_undefined = false;  // no ground truths anywhere; TPR reported as 0
};

// `count` evenly spaced values in [0, 1], ascending.
std::vector<double> default_cutoffs(std::size_t count = 101);

FrocCurve froc_curve(std::span<const ImageDetections> per_image, std::span<const double> cutoffs,
                     double iou_min = kDefaultIouMin);

struct OperatingPoint {
  double tpr = 0.0;
  double fppi = 0.0;
  double cutoff = 0.0;
  bool within_cap = true;  // false: no point met the cap, the lowest-FPPI point is returned
};

OperatingPoint tpr_at_fppi(const FrocCurve& curve, double fppi_cap);

// "0.70@0.88"
std::string format_operating_point(const OperatingPoint& op);

struct IndexedDetection {
  std::string image_id;
  Detection detection;
};

struct IndexedBox {
  std::string image_id;
  BBox box;
};

void write_detections_csv(std::ostream& os, std::span<const IndexedDetection> rows);
void write_ground_truth_csv(std::ostream& os, std::span<const IndexedBox> rows);
void write_froc_csv(std::ostream& os, const FrocCurve& curve);
std::vector<IndexedDetection> read_detections_csv(std::istream& is);
std::vector<IndexedBox> read_ground_truth_csv(std::istream& is);

}  // namespace wscam
