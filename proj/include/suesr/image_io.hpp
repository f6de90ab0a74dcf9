#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "suesr/tensor.hpp"
#include "suesr/uncertainty.hpp"

namespace suesr {

/// Loads any format OpenCV decodes as a 3 x H x W RGB tensor scaled by 1/255.
Tensor read_image(const std::filesystem::path& path);

/// Quantizes a 3 x H x W tensor (clamped to [0,1]) to 8-bit RGB.
RgbImage to_rgb8(const Tensor& image);
Tensor from_rgb8(const RgbImage& image);

/// Deterministic PNG encoding (fixed compression level, no metadata).
std::string encode_png(const RgbImage& image);
std::string encode_png(const Tensor& image);
std::string encode_gray_png(const std::vector<std::uint8_t>& values, int width, int height);

void write_png(const std::filesystem::path& path, const Tensor& image);
void write_png(const std::filesystem::path& path, const RgbImage& image);

}  // namespace suesr
