#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace tfda {

// Interleaved 8-bit raster. channels is 1 (index/gray) or 3 (RGB).
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  bool operator==(const Raster&) const = default;
};

void write_png(const std::filesystem::path& path, const Raster& raster);

// Reads a PNG and converts it to the requested channel count.
Raster read_png(const std::filesystem::path& path, int channels);

}  // namespace tfda
