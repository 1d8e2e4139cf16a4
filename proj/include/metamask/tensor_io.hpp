#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "metamask/tensor.hpp"

// MMT1 binary tensor files:
//   "MMT1" | u32 rank | rank x u32 extents | product(extents) x f64
// All integers and floats little-endian, payload row-major.

namespace metamask::io {

std::vector<unsigned char> encode_mmt1(const Tensor& t);
Tensor decode_mmt1(const std::vector<unsigned char>& bytes, const std::string& origin = "<memory>");

void write_mmt1(const std::filesystem::path& path, const Tensor& t);
Tensor read_mmt1(const std::filesystem::path& path);

}  // namespace metamask::io
