#pragma once

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "evolrp/tensor.hpp"

namespace evolrp {

/// Height and width of a (H, W) or (1, H, W) image tensor.
inline std::pair<std::size_t, std::size_t> image_extent(const Tensor& image) {
  if (image.rank() == 2) return {image.dim(0), image.dim(1)};
  if (image.rank() == 3 && image.dim(0) == 1) return {image.dim(1), image.dim(2)};
  throw std::invalid_argument("expected a (H, W) or (1, H, W) image, got " + shape_to_string(image.shape()));
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// Binary "P5" greymap, maxval 255; pixel values in [0, 1] are scaled to bytes.
inline void write_pgm_bytes(const std::filesystem::path& path, std::size_t height, std::size_t width,
                            const std::vector<std::uint8_t>& pixels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

inline void write_pgm(const std::filesystem::path& path, const Tensor& image) {
  const auto [h, w] = image_extent(image);
  std::vector<std::uint8_t> pixels(h * w);
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = to_byte(image[i]);
  write_pgm_bytes(path, h, w, pixels);
}

/// Reads a binary P5 greymap (maxval <= 255) as a (1, H, W) tensor in [0, 1].
inline Tensor read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  auto next_token = [&]() {
    std::string tok;
    char ch;
    while (in.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(ch);
    }
    return tok;
  };
  if (next_token() != "P5") throw std::runtime_error(path.string() + ": not a binary PGM (P5) file");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(next_token());
    h = std::stoul(next_token());
    maxval = std::stoul(next_token());
  } catch (const std::exception&) {
    throw std::runtime_error(path.string() + ": malformed PGM header");
  }
  if (w == 0 || h == 0 || maxval == 0 || maxval > 255) throw std::runtime_error(path.string() + ": unsupported PGM header");
  std::vector<std::uint8_t> pixels(w * h);
  in.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (static_cast<std::size_t>(in.gcount()) != pixels.size()) throw std::runtime_error(path.string() + ": truncated PGM data");
  Tensor image({1, h, w});
  for (std::size_t i = 0; i < pixels.size(); ++i) image[i] = static_cast<float>(pixels[i]) / static_cast<float>(maxval);
  return image;
}

/// 8-bit RGB PNG; `rgb` holds height*width*3 bytes.
inline void write_png_rgb(const std::filesystem::path& path, std::size_t height, std::size_t width,
                          const std::vector<std::uint8_t>& rgb) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, rgb.data(), 0, nullptr)) {
    std::string message = image.message;
    png_image_free(&image);
    throw std::runtime_error("failed writing PNG " + path.string() + ": " + message);
  }
}

/// Reads any PNG as 8-bit RGB; used for checking rendered output.
inline std::vector<std::uint8_t> read_png_rgb(const std::filesystem::path& path, std::size_t& height,
                                              std::size_t& width) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str()))
    throw std::runtime_error("failed reading PNG " + path.string() + ": " + image.message);
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    std::string message = image.message;
    png_image_free(&image);
    throw std::runtime_error("failed decoding PNG " + path.string() + ": " + message);
  }
  height = image.height;
  width = image.width;
  return buffer;
}

}  // namespace evolrp
