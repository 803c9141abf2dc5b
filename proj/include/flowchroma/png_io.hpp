#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace flowchroma::data {

/// 8-bit interleaved RGB image as stored on disk.
struct Image8 {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> rgb;  // H*W*3
};

Image8 read_png_rgb8(const std::filesystem::path& path);
void write_png_rgb8(const std::filesystem::path& path, const Image8& image);

}  // namespace flowchroma::data
