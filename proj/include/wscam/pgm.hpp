#pragma once

#include <filesystem>

#include "wscam/tensor.hpp"

namespace wscam {

// Reads a binary P5 graymap (maxval <= 255) as a (1, H, W) tensor scaled to [0, 1].
Tensor read_pgm(const std::filesystem::path& path);

// Writes a (1, H, W) or (H, W) tensor with values in [0, 1] as 8-bit P5.
void write_pgm(const std::filesystem::path& path, const Tensor& image);

// Rounds [0, 1] values to the nearest 1/255 step, matching what write_pgm stores.
void quantize_8bit(Tensor& image);

}  // namespace wscam
