#pragma once

// "VTEN v1" tensor files:
//   magic "VTEN" | u8 version (=1) | u8 rank | rank x u32 LE extents |
//   product(extents) x float32 LE, row-major.
// Values are narrowed to float32 on write; anything already representable
// as float32 round-trips bit-exactly.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "vidattack/tensor.hpp"

namespace vidattack {

inline constexpr std::uint8_t kVtenVersion = 1;

void write_vten(std::ostream& out, const Tensor& t);
Tensor read_vten(std::istream& in);

std::vector<std::uint8_t> encode_vten(const Tensor& t);
Tensor decode_vten(const std::vector<std::uint8_t>& bytes);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

// Rounds every entry to the nearest float32 in place (leaf only).
void round_to_float32(Tensor& t);

}  // namespace vidattack
