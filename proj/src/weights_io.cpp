#include "wscam/weights_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace wscam {

void ByteWriter::u8(std::uint8_t v) { os_.put(static_cast<char>(v)); }

void ByteWriter::u32(std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
  os_.write(b, 4);
}

void ByteWriter::f64(double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xFFu);
  os_.write(b, 8);
}

void ByteWriter::tensor_values(const Tensor& t) {
  for (double v : t.values()) f64(v);
}

void ByteWriter::bytes(const char* p, std::size_t n) { os_.write(p, static_cast<std::streamsize>(n)); }

namespace {
std::uint32_t checked_u32(std::size_t v) {
  if (v > 0xFFFFFFFFu) throw std::overflow_error("extent does not fit in u32");
  return static_cast<std::uint32_t>(v);
}
}  // namespace

void ByteWriter::layer(const Layer& layer) {
  if (const auto* conv = std::get_if<Conv2d>(&layer)) {
    u8(static_cast<std::uint8_t>(LayerTag::conv2d));
    for (auto e : {conv->in_channels, conv->out_channels, conv->kernel_h, conv->kernel_w, conv->stride, conv->padding}) {
      u32(checked_u32(e));
    }
    tensor_values(conv->weight);
    tensor_values(conv->bias);
  } else if (std::holds_alternative<Relu>(layer)) {
    u8(static_cast<std::uint8_t>(LayerTag::relu));
  } else if (const auto* pool = std::get_if<AvgPool>(&layer)) {
    u8(static_cast<std::uint8_t>(LayerTag::avg_pool));
    u32(checked_u32(pool->window));
    u32(checked_u32(pool->stride));
  } else if (std::holds_alternative<GlobalAvgPool>(layer)) {
    u8(static_cast<std::uint8_t>(LayerTag::global_avg_pool));
  } else {
    const auto& lin = std::get<Linear>(layer);
    u8(static_cast<std::uint8_t>(LayerTag::linear));
    u32(checked_u32(lin.in_features));
    u32(checked_u32(lin.out_features));
    tensor_values(lin.weight);
    tensor_values(lin.bias);
  }
}

void ByteReader::bytes(char* p, std::size_t n) {
  is_.read(p, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is_.gcount()) != n) throw std::runtime_error("weights file truncated");
}

std::uint8_t ByteReader::u8() {
  char c;
  bytes(&c, 1);
  return static_cast<std::uint8_t>(c);
}

std::uint32_t ByteReader::u32() {
  unsigned char b[4];
  bytes(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

double ByteReader::f64() {
  unsigned char b[8];
  bytes(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

void ByteReader::tensor_values(Tensor& t) {
  for (auto& v : t.values()) v = f64();
}

namespace {
// Caps on extents read from disk so a corrupt header cannot request huge buffers.
constexpr std::uint32_t kMaxExtent = 1u << 16;

std::size_t bounded(std::uint32_t v, const char* what) {
  if (v == 0 || v > kMaxExtent) throw std::runtime_error(std::string("weights file: implausible ") + what);
  return v;
}
}  // namespace

Layer ByteReader::layer() {
  const auto tag = u8();
  switch (static_cast<LayerTag>(tag)) {
    case LayerTag::conv2d: {
      const auto in = bounded(u32(), "conv in_channels");
      const auto out = bounded(u32(), "conv out_channels");
      const auto kh = bounded(u32(), "conv kernel_h");
      const auto kw = bounded(u32(), "conv kernel_w");
      const auto stride = bounded(u32(), "conv stride");
      const std::size_t pad = u32();
      Conv2d conv(in, out, kh, kw, stride, pad);
      tensor_values(conv.weight);
      tensor_values(conv.bias);
      return conv;
    }
    case LayerTag::relu:
      return Relu{};
    case LayerTag::avg_pool: {
      AvgPool pool;
      pool.window = bounded(u32(), "pool window");
      pool.stride = bounded(u32(), "pool stride");
      return pool;
    }
    case LayerTag::global_avg_pool:
      return GlobalAvgPool{};
    case LayerTag::linear: {
      const auto in = bounded(u32(), "linear in_features");
      const auto out = bounded(u32(), "linear out_features");
      Linear lin(in, out);
      tensor_values(lin.weight);
      tensor_values(lin.bias);
      return lin;
    }
  }
  throw std::runtime_error("weights file: unknown layer tag " + std::to_string(tag));
}

void write_net(std::ostream& os, const MicroNet& net) {
  ByteWriter w(os);
  w.bytes(kWeightsMagic, 4);
  w.u32(kWeightsVersion);
  w.u32(checked_u32(net.layer_count()));
  for (const auto& layer : net.layers()) w.layer(layer);
}

MicroNet read_net(std::istream& is) {
  ByteReader r(is);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kWeightsMagic, 4) != 0) throw std::runtime_error("not a WCAM weights file");
  const auto version = r.u32();
  if (version != kWeightsVersion) throw std::runtime_error("unsupported WCAM version " + std::to_string(version));
  const auto count = r.u32();
  if (count == 0 || count > 1024) throw std::runtime_error("weights file: implausible layer count");
  std::vector<Layer> layers;
  layers.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) layers.push_back(r.layer());
  return MicroNet(std::move(layers));
}

void save_net(const std::filesystem::path& path, const MicroNet& net) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  write_net(os, net);
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

MicroNet load_net(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return read_net(is);
}

}  // namespace wscam
