#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "isdiff/core.hpp"

namespace isdiff {

// [-1, 1] <-> byte with round-half-up; values outside the range saturate.
std::uint8_t to_byte(double v);
double from_byte(std::uint8_t b);

// Binary netpbm: P5 (1 channel) or P6 (3 channels), maxval 255.
PixelGrid read_image(std::istream& is);
PixelGrid read_image(const std::filesystem::path& path);
void write_image(std::ostream& os, const PixelGrid& g);
void write_image(const std::filesystem::path& path, const PixelGrid& g);

// P5 mask: bytes >= 128 are known, anything lower is unknown.
Mask read_mask(const std::filesystem::path& path);
void write_mask(const std::filesystem::path& path, const Mask& m);

}  // namespace isdiff
