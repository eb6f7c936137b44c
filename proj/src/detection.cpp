#include "wscam/detection.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "wscam/csv.hpp"

namespace wscam {

Mask threshold_mask(const Tensor& normalized, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("threshold tau must lie in [0, 1]");
  if (normalized.rank() != 2) throw std::invalid_argument("threshold_mask needs a 2-D map");
  Mask mask{normalized.dim(0), normalized.dim(1), {}};
  mask.cells.resize(normalized.size());
  for (std::size_t i = 0; i < normalized.size(); ++i) mask.cells[i] = normalized[i] > tau ? 1 : 0;
  return mask;
}

std::vector<Region> connected_components(const Mask& mask, int connectivity) {
  if (connectivity != 4 && connectivity != 8) throw std::invalid_argument("connectivity must be 4 or 8");
  const long h = static_cast<long>(mask.height), w = static_cast<long>(mask.width);
  std::vector<std::uint8_t> seen(mask.cells.size(), 0);
  std::vector<Region> regions;
  std::vector<Cell> stack;
  for (long r = 0; r < h; ++r) {
    for (long c = 0; c < w; ++c) {
      const auto idx = static_cast<std::size_t>(r * w + c);
      if (!mask.cells[idx] || seen[idx]) continue;
      Region region;
      seen[idx] = 1;
      stack.push_back({static_cast<std::size_t>(r), static_cast<std::size_t>(c)});
      while (!stack.empty()) {
        const Cell cell = stack.back();
        stack.pop_back();
        region.push_back(cell);
        for (long dr = -1; dr <= 1; ++dr) {
          for (long dc = -1; dc <= 1; ++dc) {
            if (dr == 0 && dc == 0) continue;
            if (connectivity == 4 && dr != 0 && dc != 0) continue;
            const long nr = static_cast<long>(cell.row) + dr, nc = static_cast<long>(cell.col) + dc;
            if (nr < 0 || nr >= h || nc < 0 || nc >= w) continue;
            const auto nidx = static_cast<std::size_t>(nr * w + nc);
            if (mask.cells[nidx] && !seen[nidx]) {
              seen[nidx] = 1;
              stack.push_back({static_cast<std::size_t>(nr), static_cast<std::size_t>(nc)});
            }
          }
        }
      }
      std::sort(region.begin(), region.end(),
                [](const Cell& a, const Cell& b) { return a.row != b.row ? a.row < b.row : a.col < b.col; });
      regions.push_back(std::move(region));
    }
  }
  return regions;
}

std::vector<Detection> regions_to_detections(const std::vector<Region>& regions, const Tensor& map,
                                             std::size_t image_h, std::size_t image_w) {
  if (map.rank() != 2 || map.dim(0) != image_h || map.dim(1) != image_w) {
    throw std::invalid_argument("regions_to_detections: map " + shape_to_string(map.shape()) +
                                " is not image-sized; upsample it first");
  }
  std::vector<Detection> out;
  out.reserve(regions.size());
  for (const auto& region : regions) {
    if (region.empty()) continue;
    std::size_t r0 = image_h, c0 = image_w, r1 = 0, c1 = 0;
    double best = -1.0;
    for (const auto& cell : region) {
      r0 = std::min(r0, cell.row);
      c0 = std::min(c0, cell.col);
      r1 = std::max(r1, cell.row);
      c1 = std::max(c1, cell.col);
      best = std::max(best, map.at(cell.row, cell.col));
    }
    out.push_back({BBox{static_cast<int>(c0), static_cast<int>(r0), static_cast<int>(c1 + 1), static_cast<int>(r1 + 1)},
                   std::clamp(best, 0.0, 1.0)});
  }
  std::stable_sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.box.y_min != b.box.y_min) return a.box.y_min < b.box.y_min;
    return a.box.x_min < b.box.x_min;
  });
  return out;
}

std::vector<Detection> extract_detections(const Tensor& normalized_map, double tau_cand, int connectivity) {
  const auto regions = connected_components(threshold_mask(normalized_map, tau_cand), connectivity);
  return regions_to_detections(regions, normalized_map, normalized_map.dim(0), normalized_map.dim(1));
}

double iou(const BBox& a, const BBox& b) {
  const long ix = std::max(0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const long iy = std::max(0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const long inter = ix * iy;
  const long uni = a.area() + b.area() - inter;
  if (uni <= 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

MatchReport match_detections(std::span<const Detection> detections, std::span<const BBox> ground_truths,
                             double iou_min) {
  MatchReport report;
  std::vector<bool> taken(ground_truths.size(), false);
  for (std::size_t d = 0; d < detections.size(); ++d) {
    double best = -1.0;
    std::size_t best_gt = ground_truths.size();
    for (std::size_t g = 0; g < ground_truths.size(); ++g) {
      if (taken[g]) continue;
      const double v = iou(detections[d].box, ground_truths[g]);
      if (v > best) {
        best = v;
        best_gt = g;
      }
    }
    if (best_gt < ground_truths.size() && best > iou_min) {
      taken[best_gt] = true;
      ++report.tp;
      report.pairs.push_back({d, best_gt, best});
    } else {
      ++report.fp;
    }
  }
  report.fn = ground_truths.size() - report.tp;
  return report;
}

std::vector<double> default_cutoffs(std::size_t count) {
  if (count < 2) throw std::invalid_argument("cutoff grid needs at least 2 values");
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = static_cast<double>(i) / static_cast<double>(count - 1);
  return out;
}

FrocCurve froc_curve(std::span<const ImageDetections> per_image, std::span<const double> cutoffs, double iou_min) {
  if (per_image.empty()) throw std::invalid_argument("FROC needs at least one image");
  FrocCurve curve;
  curve.images = per_image.size();
  for (const auto& img : per_image) curve.ground_truths += img.ground_truths.size();
  curve.tpr_undefined = curve.ground_truths == 0;

  std::vector<double> sorted(cutoffs.begin(), cutoffs.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  std::vector<Detection> kept;
  for (double cutoff : sorted) {
    FrocPoint p;
    p.cutoff = cutoff;
    for (const auto& img : per_image) {
      kept.clear();
      for (const auto& det : img.detections) {
        if (det.score >= cutoff) kept.push_back(det);
      }
      const MatchReport m = match_detections(kept, img.ground_truths, iou_min);
      p.tp += m.tp;
      p.fp += m.fp;
    }
    p.fppi = static_cast<double>(p.fp) / static_cast<double>(curve.images);
    p.tpr = curve.ground_truths ? static_cast<double>(p.tp) / static_cast<double>(curve.ground_truths) : 0.0;
    curve.points.push_back(p);
  }
  return curve;
}

OperatingPoint tpr_at_fppi(const FrocCurve& curve, double fppi_cap) {
  if (curve.points.empty()) throw std::invalid_argument("tpr_at_fppi on an empty curve");
  const FrocPoint* best = nullptr;
  for (const auto& p : curve.points) {
    if (p.fppi > fppi_cap) continue;
    if (!best || p.tpr > best->tpr || (p.tpr == best->tpr && p.fppi < best->fppi)) best = &p;
  }
  if (best) return {best->tpr, best->fppi, best->cutoff, true};
  const FrocPoint* lowest = &curve.points.front();
  for (const auto& p : curve.points) {
    if (p.fppi < lowest->fppi) lowest = &p;
  }
  return {lowest->tpr, lowest->fppi, lowest->cutoff, false};
}

std::string format_operating_point(const OperatingPoint& op) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f@%.2f", op.tpr, op.fppi);
  return buf;
}

namespace {
std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

BBox parse_box(const std::vector<std::string>& fields, std::size_t first, std::size_t line) {
  BBox b{csv::parse_int(fields[first], line), csv::parse_int(fields[first + 1], line),
         csv::parse_int(fields[first + 2], line), csv::parse_int(fields[first + 3], line)};
  if (!b.valid()) throw std::runtime_error("line " + std::to_string(line) + ": box has non-positive extent");
  return b;
}
}  // namespace

void write_detections_csv(std::ostream& os, std::span<const IndexedDetection> rows) {
  os << "image_id,x_min,y_min,x_max,y_max,score\n";
  for (const auto& r : rows) {
    const auto& b = r.detection.box;
    os << r.image_id << ',' << b.x_min << ',' << b.y_min << ',' << b.x_max << ',' << b.y_max << ','
       << fmt_double(r.detection.score) << '\n';
  }
}

void write_ground_truth_csv(std::ostream& os, std::span<const IndexedBox> rows) {
  os << "image_id,x_min,y_min,x_max,y_max\n";
  for (const auto& r : rows) {
    os << r.image_id << ',' << r.box.x_min << ',' << r.box.y_min << ',' << r.box.x_max << ',' << r.box.y_max << '\n';
  }
}

void write_froc_csv(std::ostream& os, const FrocCurve& curve) {
  os << "cutoff,fppi,tpr\n";
  for (const auto& p : curve.points) os << fmt_double(p.cutoff) << ',' << fmt_double(p.fppi) << ',' << fmt_double(p.tpr) << '\n';
}

std::vector<IndexedDetection> read_detections_csv(std::istream& is) {
  std::vector<IndexedDetection> out;
  csv::for_each_row(is, true, [&](const std::vector<std::string>& f, std::size_t line) {
    if (f.size() != 6) throw std::runtime_error("line " + std::to_string(line) + ": expected 6 detection columns");
    const double score = csv::parse_double(f[5], line);
    if (!(score >= 0.0 && score <= 1.0)) throw std::runtime_error("line " + std::to_string(line) + ": score outside [0,1]");
    out.push_back({f[0], Detection{parse_box(f, 1, line), score}});
  });
  return out;
}

std::vector<IndexedBox> read_ground_truth_csv(std::istream& is) {
  std::vector<IndexedBox> out;
  csv::for_each_row(is, true, [&](const std::vector<std::string>& f, std::size_t line) {
    if (f.size() != 5) throw std::runtime_error("line " + std::to_string(line) + ": expected 5 ground-truth columns");
    out.push_back({f[0], parse_box(f, 1, line)});
  });
  return out;
}

}  // namespace wscam
