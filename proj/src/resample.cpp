#include "wscam/resample.hpp"

#include <algorithm>
#include <stdexcept>

namespace wscam {

namespace {
struct Tap {
  std::size_t lo;
  std::size_t hi;
  double frac;
};

Tap source_tap(std::size_t i, std::size_t in, std::size_t out) {
  if (in == 1 || out == 1) return {0, 0, 0.0};
  // Exact rational position i*(in-1)/(out-1) split into integer and fraction.
  const std::size_t num = i * (in - 1);
  const std::size_t den = out - 1;
  const std::size_t lo = num / den;
  const std::size_t rem = num % den;
  if (rem == 0) return {lo, lo, 0.0};
  return {lo, std::min(lo + 1, in - 1), static_cast<double>(rem) / static_cast<double>(den)};
}
}  // namespace

Tensor bilinear_upsample(const Tensor& map, std::size_t out_h, std::size_t out_w) {
  if (map.empty()) throw std::invalid_argument("bilinear_upsample: empty map");
  if (map.rank() != 2) throw std::invalid_argument("bilinear_upsample expects a 2-D map, got " + shape_to_string(map.shape()));
  const std::size_t h = map.dim(0), w = map.dim(1);
  if (out_h < h || out_w < w) {
    throw std::invalid_argument("bilinear_upsample: target " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                                " smaller than source " + shape_to_string(map.shape()));
  }
  std::vector<Tap> xs(out_w);
  for (std::size_t x = 0; x < out_w; ++x) xs[x] = source_tap(x, w, out_w);
  Tensor out({out_h, out_w});
  for (std::size_t y = 0; y < out_h; ++y) {
    const Tap ty = source_tap(y, h, out_h);
    for (std::size_t x = 0; x < out_w; ++x) {
      const Tap& tx = xs[x];
      const double top = map.at(ty.lo, tx.lo) + tx.frac * (map.at(ty.lo, tx.hi) - map.at(ty.lo, tx.lo));
      const double bot = map.at(ty.hi, tx.lo) + tx.frac * (map.at(ty.hi, tx.hi) - map.at(ty.hi, tx.lo));
      out.at(y, x) = top + ty.frac * (bot - top);
    }
  }
  return out;
}

}  // namespace wscam
