#pragma once

#include <filesystem>
#include <iosfwd>

#include "llts/tensor.hpp"

namespace llts {

// Tensor container: "LLTS", u32 rank, rank x u32 extents, f64 payload; all
// little-endian. Several containers may be concatenated in one stream.

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

void write_u32_le(std::ostream& os, std::uint32_t v);
std::uint32_t read_u32_le(std::istream& is);

}  // namespace llts
