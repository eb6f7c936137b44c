#include "wscam/pgm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

namespace wscam {

namespace {
std::size_t read_header_int(std::istream& is, const std::filesystem::path& path) {
  // Skip whitespace and '#' comments.
  while (true) {
    const int c = is.peek();
    if (c == '#') {
      std::string skip;
      std::getline(is, skip);
    } else if (c != EOF && std::isspace(c)) {
      is.get();
    } else {
      break;
    }
  }
  std::size_t v = 0;
  if (!(is >> v)) throw std::runtime_error("malformed PGM header in " + path.string());
  return v;
}
}  // namespace

Tensor read_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open image " + path.string());
  char magic[2] = {0, 0};
  is.read(magic, 2);
  if (magic[0] != 'P' || magic[1] != '5') throw std::runtime_error(path.string() + " is not a binary PGM (P5)");
  const std::size_t w = read_header_int(is, path);
  const std::size_t h = read_header_int(is, path);
  const std::size_t maxval = read_header_int(is, path);
  if (w == 0 || h == 0 || w > 65535 || h > 65535) throw std::runtime_error("implausible PGM size in " + path.string());
  if (maxval == 0 || maxval > 255) throw std::runtime_error("only 8-bit PGM supported: " + path.string());
  is.get();  // single whitespace before the raster
  std::string raster(w * h, '\0');
  is.read(raster.data(), static_cast<std::streamsize>(raster.size()));
  if (static_cast<std::size_t>(is.gcount()) != raster.size()) throw std::runtime_error("truncated PGM " + path.string());
  Tensor image({1, h, w});
  const double top = static_cast<double>(maxval);
  for (std::size_t i = 0; i < raster.size(); ++i) {
    // divide (not multiply by 1/maxval) so values match quantize_8bit bit for bit
    image[i] = std::min(1.0, static_cast<double>(static_cast<unsigned char>(raster[i])) / top);
  }
  return image;
}

void write_pgm(const std::filesystem::path& path, const Tensor& image) {
  std::size_t h = 0, w = 0;
  if (image.rank() == 3 && image.dim(0) == 1) {
    h = image.dim(1);
    w = image.dim(2);
  } else if (image.rank() == 2) {
    h = image.dim(0);
    w = image.dim(1);
  } else {
    throw std::invalid_argument("write_pgm expects (1,H,W) or (H,W), got " + shape_to_string(image.shape()));
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "P5\n" << w << ' ' << h << "\n255\n";
  for (double v : image.values()) os.put(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

void quantize_8bit(Tensor& image) {
  for (auto& v : image.values()) v = static_cast<double>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.0;
}

}  // namespace wscam
