#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "tensorslice/tensor.hpp"

namespace tslice {

// Binary tensor format, little-endian:
//   magic "TSLC" | version u32 | rank u32 | extents u64[rank] | f64[product(extents)]
inline constexpr char kTensorMagic[4] = {'T', 'S', 'L', 'C'};
inline constexpr std::uint32_t kTensorFormatVersion = 1;

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

std::string tensor_bytes(const Tensor& t);

}  // namespace tslice
