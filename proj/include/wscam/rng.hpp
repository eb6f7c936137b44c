#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace wscam {

// Fans one run seed out into independent per-component streams:
// splitmix64 over (seed, FNV-1a(component), index).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view component, std::uint64_t index = 0);

inline std::mt19937_64 make_rng(std::uint64_t seed, std::string_view component, std::uint64_t index = 0) {
  return std::mt19937_64(derive_seed(seed, component, index));
}

}  // namespace wscam
