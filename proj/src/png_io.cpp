#include "flowchroma/png_io.hpp"

#include <png.h>

#include <cstring>
#include <stdexcept>

namespace flowchroma::data {

Image8 read_png_rgb8(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw std::runtime_error("failed to read PNG " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  Image8 out;
  out.height = static_cast<int>(image.height);
  out.width = static_cast<int>(image.width);
  out.rgb.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.rgb.data(), 0, nullptr)) {
    png_image_free(&image);
    throw std::runtime_error("failed to decode PNG " + path.string() + ": " + image.message);
  }
  return out;
}

void write_png_rgb8(const std::filesystem::path& path, const Image8& img) {
  if (img.rgb.size() != static_cast<size_t>(img.height) * img.width * 3)
    throw std::invalid_argument("image buffer does not match dimensions");
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, img.rgb.data(), 0,
                               nullptr)) {
    throw std::runtime_error("failed to write PNG " + path.string() + ": " + image.message);
  }
}

}  // namespace flowchroma::data
