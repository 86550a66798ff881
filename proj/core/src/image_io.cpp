#include "tfda/image_io.hpp"

#include <png.h>

#include <cstring>

#include "tfda/error.hpp"

namespace tfda {

namespace {

png_uint_32 format_for(int channels) {
  return channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
}

}  // namespace

void write_png(const std::filesystem::path& path, const Raster& raster) {
  if (raster.channels != 1 && raster.channels != 3) {
    fail(ErrorCode::kInternal, "write_png: unsupported channel count");
  }
  if (raster.pixels.size() !=
      static_cast<size_t>(raster.width) * raster.height * raster.channels) {
    fail(ErrorCode::kInternal, "write_png: pixel buffer size mismatch");
  }
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(raster.width);
  image.height = static_cast<png_uint_32>(raster.height);
  image.format = format_for(raster.channels);
  if (png_image_write_to_file(&image, path.c_str(), 0, raster.pixels.data(), 0,
                              nullptr) == 0) {
    fail(ErrorCode::kIo, "cannot write " + path.string() + ": " + image.message);
  }
}

Raster read_png(const std::filesystem::path& path, int channels) {
  if (!std::filesystem::exists(path)) {
    fail(ErrorCode::kValidation, "missing file " + path.string());
  }
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_file(&image, path.c_str()) == 0) {
    fail(ErrorCode::kValidation,
         "cannot decode " + path.string() + ": " + image.message);
  }
  image.format = format_for(channels);
  Raster raster;
  raster.width = static_cast<int>(image.width);
  raster.height = static_cast<int>(image.height);
  raster.channels = channels;
  raster.pixels.resize(PNG_IMAGE_SIZE(image));
  if (png_image_finish_read(&image, nullptr, raster.pixels.data(), 0,
                            nullptr) == 0) {
    png_image_free(&image);
    fail(ErrorCode::kValidation,
         "cannot decode " + path.string() + ": " + image.message);
  }
  return raster;
}

}  // namespace tfda
