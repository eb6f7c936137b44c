#pragma once

#include <cstddef>

#include "wscam/tensor.hpp"

namespace wscam {

// Corner-aligned bilinear resize of a 2-D map to (out_h, out_w). Output
// corners equal input corners; every value stays inside [min, max] of the map.
Tensor bilinear_upsample(const Tensor& map, std::size_t out_h, std::size_t out_w);

}  // namespace wscam
