#include "wscam/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>

#include "wscam/csv.hpp"
#include "wscam/pgm.hpp"
#include "wscam/rng.hpp"

namespace wscam {

const char* label_name(Label label) { return label == Label::mass ? "mass" : "normal"; }

void validate(const SynthConfig& c) {
  if (c.image_size < 16) throw std::invalid_argument("synthetic image_size must be at least 16");
  if (!(c.radius_min > 0.0) || c.radius_max < c.radius_min) {
    throw std::invalid_argument("lesion radii must satisfy 0 < radius_min <= radius_max");
  }
  if (!(c.radius_max < static_cast<double>(c.image_size) / 2.0)) {
    throw std::invalid_argument("lesion radius_max must be below image_size / 2");
  }
  if (!(c.contrast_min > 0.0) || c.contrast_max < c.contrast_min) {
    throw std::invalid_argument("lesion contrast must satisfy 0 < contrast_min <= contrast_max");
  }
  if (!(c.texture_scale > 0.0)) throw std::invalid_argument("texture_scale must be positive");
  if (c.noise_std < 0.0) throw std::invalid_argument("noise_std must be nonnegative");
  if (c.normal_count + c.mass_count == 0) throw std::invalid_argument("synthetic dataset would be empty");
}

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Smooth background: a few low-frequency plane waves around a base level.
void paint_background(Tensor& img, const SynthConfig& c, std::mt19937_64& rng) {
  const std::size_t n = c.image_size;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double base = 0.30 + 0.15 * unit(rng);
  struct Wave {
    double kx, ky, phase, amp;
  };
  Wave waves[4];
  for (auto& wv : waves) {
    const double wavelength = c.texture_scale * (0.6 + 0.9 * unit(rng));
    const double theta = kTwoPi * unit(rng);
    wv = {kTwoPi / wavelength * std::cos(theta), kTwoPi / wavelength * std::sin(theta), kTwoPi * unit(rng),
          0.025 + 0.025 * unit(rng)};
  }
  std::normal_distribution<double> noise(0.0, c.noise_std > 0 ? c.noise_std : 1.0);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      double v = base;
      for (const auto& wv : waves) v += wv.amp * std::cos(wv.kx * x + wv.ky * y + wv.phase);
      if (c.noise_std > 0) v += noise(rng);
      img.at(0, y, x) = v;
    }
  }
}

// Elliptical blob with a soft rim; returns the tight box of its support.
BBox paint_lesion(Tensor& img, const SynthConfig& c, std::mt19937_64& rng) {
  const double n = static_cast<double>(c.image_size);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double rx = c.radius_min + (c.radius_max - c.radius_min) * unit(rng);
  const double ry = c.radius_min + (c.radius_max - c.radius_min) * unit(rng);
  const double theta = std::numbers::pi * unit(rng);
  const double contrast = c.contrast_min + (c.contrast_max - c.contrast_min) * unit(rng);
  const double reach = std::max(rx, ry) + 1.0;
  const double cx = reach + (n - 2.0 * reach) * unit(rng);
  const double cy = reach + (n - 2.0 * reach) * unit(rng);
  const double ct = std::cos(theta), st = std::sin(theta);

  int x0 = static_cast<int>(c.image_size), y0 = static_cast<int>(c.image_size), x1 = -1, y1 = -1;
  for (std::size_t y = 0; y < c.image_size; ++y) {
    for (std::size_t x = 0; x < c.image_size; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
      const double u = (dx * ct + dy * st) / rx, v = (-dx * st + dy * ct) / ry;
      const double d = std::sqrt(u * u + v * v);
      if (d >= 1.0) continue;
      img.at(0, y, x) += contrast * std::min(1.0, (1.0 - d) / 0.3);
      x0 = std::min(x0, static_cast<int>(x));
      y0 = std::min(y0, static_cast<int>(y));
      x1 = std::max(x1, static_cast<int>(x));
      y1 = std::max(y1, static_cast<int>(y));
    }
  }
  return BBox{x0, y0, x1 + 1, y1 + 1};
}

bool box_outshines_rest(const Tensor& img, const BBox& b) {
  const int n = static_cast<int>(img.dim(1));
  double in = 0.0, out = 0.0;
  long n_in = 0, n_out = 0;
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const double v = img.at(0, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
      if (x >= b.x_min && x < b.x_max && y >= b.y_min && y < b.y_max) {
        in += v;
        ++n_in;
      } else {
        out += v;
        ++n_out;
      }
    }
  }
  return n_out == 0 || in / static_cast<double>(n_in) > out / static_cast<double>(n_out);
}

std::string sample_id(const std::string& prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_%04zu", i);
  return prefix + buf;
}

}  // namespace

Dataset generate_synthetic(const SynthConfig& config) {
  validate(config);
  Dataset ds;
  const std::size_t total = config.normal_count + config.mass_count;
  ds.samples.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    auto rng = make_rng(config.seed, "synthetic-sample", i);
    Sample s;
    s.id = sample_id(config.id_prefix, i);
    s.image = Tensor({1, config.image_size, config.image_size});
    paint_background(s.image, config, rng);
    if (i >= config.normal_count) {
      s.label = Label::mass;
      // A small lesion over a dark patch of texture can leave its box dimmer
      // than the rest of the image; redraw the lesion until it stands out.
      const Tensor background = s.image;
      for (int attempt = 0;; ++attempt) {
        if (attempt == 1000) throw std::runtime_error("could not place a visible lesion in " + s.id);
        s.image = background;
        const BBox box = paint_lesion(s.image, config, rng);
        quantize_8bit(s.image);
        if (box_outshines_rest(s.image, box)) {
          s.boxes.push_back(box);
          break;
        }
      }
    }
    quantize_8bit(s.image);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& dataset, const std::string& manifest_name) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / manifest_name, std::ios::binary);
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir.string());
  manifest << "image_path,label,x_min,y_min,x_max,y_max\n";
  for (const auto& s : dataset.samples) {
    const std::string file = s.id + ".pgm";
    write_pgm(dir / file, s.image);
    manifest << file << ',' << label_name(s.label);
    for (const auto& b : s.boxes) manifest << ',' << b.x_min << ',' << b.y_min << ',' << b.x_max << ',' << b.y_max;
    manifest << '\n';
  }
  if (!manifest) throw std::runtime_error("manifest write failed in " + dir.string());
}

Dataset load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open manifest " + path.string());
  const auto base = path.parent_path();
  Dataset ds;
  csv::for_each_row(is, true, [&](const std::vector<std::string>& f, std::size_t line) {
    const auto where = path.string() + ":" + std::to_string(line) + ": ";
    if (f.size() < 2 || (f.size() - 2) % 4 != 0) {
      throw std::runtime_error(where + "expected image_path,label followed by groups of 4 box coordinates");
    }
    Sample s;
    const std::filesystem::path file = f[0];
    s.id = file.stem().string();
    if (f[1] == "mass") s.label = Label::mass;
    else if (f[1] == "normal") s.label = Label::normal;
    else throw std::runtime_error(where + "label must be 'normal' or 'mass', got '" + f[1] + "'");
    try {
      s.image = read_pgm(file.is_absolute() ? file : base / file);
    } catch (const std::exception& e) {
      throw std::runtime_error(where + e.what());
    }
    const int h = static_cast<int>(s.image.dim(1)), w = static_cast<int>(s.image.dim(2));
    for (std::size_t k = 2; k < f.size(); k += 4) {
      BBox b;
      try {
        b = {csv::parse_int(f[k], line), csv::parse_int(f[k + 1], line), csv::parse_int(f[k + 2], line),
             csv::parse_int(f[k + 3], line)};
      } catch (const std::exception& e) {
        throw std::runtime_error(path.string() + ":" + e.what());
      }
      if (!b.valid()) throw std::runtime_error(where + "box needs x_max > x_min and y_max > y_min");
      if (b.x_min < 0 || b.y_min < 0 || b.x_max > w || b.y_max > h) {
        throw std::runtime_error(where + "box lies outside the " + std::to_string(w) + "x" + std::to_string(h) + " image");
      }
      s.boxes.push_back(b);
    }
    ds.samples.push_back(std::move(s));
  });
  return ds;
}

Dataset without_boxes(Dataset dataset) {
  for (auto& s : dataset.samples) s.boxes.clear();
  return dataset;
}

void flip_horizontal(Sample& sample) {
  Tensor& img = sample.image;
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      double* row = img.data() + (ch * h + y) * w;
      std::reverse(row, row + w);
    }
  }
  const int width = static_cast<int>(w);
  for (auto& b : sample.boxes) b = BBox{width - b.x_max, b.y_min, width - b.x_min, b.y_max};
}

void crop(Sample& sample, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
  const Tensor& img = sample.image;
  const std::size_t c = img.dim(0);
  if (y0 + h > img.dim(1) || x0 + w > img.dim(2)) {
    throw std::invalid_argument("crop window exceeds image " + shape_to_string(img.shape()));
  }
  Tensor out({c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) out.at(ch, y, x) = img.at(ch, y0 + y, x0 + x);
    }
  }
  sample.image = std::move(out);

  const BBox window{static_cast<int>(x0), static_cast<int>(y0), static_cast<int>(x0 + w), static_cast<int>(y0 + h)};
  std::vector<BBox> kept;
  for (const auto& b : sample.boxes) {
    const BBox clipped{std::max(b.x_min, window.x_min), std::max(b.y_min, window.y_min),
                       std::min(b.x_max, window.x_max), std::min(b.y_max, window.y_max)};
    if (!clipped.valid() || 4 * clipped.area() < b.area()) continue;
    kept.push_back(BBox{clipped.x_min - window.x_min, clipped.y_min - window.y_min, clipped.x_max - window.x_min,
                        clipped.y_max - window.y_min});
  }
  sample.boxes = std::move(kept);
}

void normalize_image(Tensor& image) {
  const double n = static_cast<double>(image.size());
  const double mean = image.sum() / n;
  double var = 0.0;
  for (double v : image.values()) var += (v - mean) * (v - mean);
  var /= n;
  const double inv_std = 1.0 / std::sqrt(std::max(var, 1e-8));
  for (auto& v : image.values()) v = (v - mean) * inv_std;
}

Sample augment(const Sample& sample, std::uint64_t seed, const AugmentConfig& config) {
  const std::size_t h = sample.image.dim(1), w = sample.image.dim(2);
  if (config.crop_size > h || config.crop_size > w) {
    throw std::invalid_argument("crop size " + std::to_string(config.crop_size) + " exceeds image " +
                                shape_to_string(sample.image.shape()));
  }
  // Draws never depend on boxes, so box-free datasets see the same stream.
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const bool flip = unit(rng) < config.flip_probability;
  std::uniform_int_distribution<std::size_t> oy(0, h - config.crop_size), ox(0, w - config.crop_size);
  const std::size_t y0 = oy(rng), x0 = ox(rng);

  Sample out = sample;
  if (flip) flip_horizontal(out);
  crop(out, y0, x0, config.crop_size, config.crop_size);
  normalize_image(out.image);
  return out;
}

}  // namespace wscam
