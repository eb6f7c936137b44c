#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "wscam/net.hpp"

namespace wscam {

inline constexpr char kWeightsMagic[4] = {'W', 'C', 'A', 'M'};
inline constexpr std::uint32_t kWeightsVersion = 1;

enum class LayerTag : std::uint8_t { conv2d = 1, relu = 2, avg_pool = 3, global_avg_pool = 4, linear = 5 };

// Little-endian primitive encoding shared by net files and checkpoints.
class ByteWriter {
 public:
  explicit ByteWriter(std::ostream& os) : os_(os) {}
  void u8(std::uint8_t v);
  void u32(std::uint32_t v);
  void f64(double v);
  void tensor_values(const Tensor& t);
  void bytes(const char* p, std::size_t n);
  void layer(const Layer& layer);

 private:
  std::ostream& os_;
};

class ByteReader {
 public:
  explicit ByteReader(std::istream& is) : is_(is) {}
  std::uint8_t u8();
  std::uint32_t u32();
  double f64();
  void tensor_values(Tensor& t);
  void bytes(char* p, std::size_t n);
  Layer layer();

 private:
  std::istream& is_;
};

void write_net(std::ostream& os, const MicroNet& net);
MicroNet read_net(std::istream& is);

void save_net(const std::filesystem::path& path, const MicroNet& net);
MicroNet load_net(const std::filesystem::path& path);

}  // namespace wscam
