#pragma once

#include "colorbridge/abi.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace colorbridge::inline COLORBRIDGE_ABI {

/// 8-bit interleaved image: pixels[(y * width + x) * channels + c].
struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;  // 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> pixels;
};

void write_png(const std::filesystem::path& path, const Image8& image);
/// Reads 8-bit gray or RGB files; other formats are converted by libpng.
Image8 read_png(const std::filesystem::path& path);

}  // namespace colorbridge
