#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vseg {

struct GrayImage {
  std::size_t h = 0, w = 0;
  std::vector<std::uint8_t> px;  // row-major
};

// 8-bit grayscale PNG or PGM (P5), chosen by file extension. PNG support
// depends on the build; PGM always works. Throws on color input, bad magic,
// or a maxval above 255.
GrayImage read_gray(const std::string& path);
void write_gray(const std::string& path, const GrayImage& img);

// True when this build can read and write PNG files.
bool png_supported();

}  // namespace vseg
