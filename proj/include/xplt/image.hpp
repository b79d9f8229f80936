#pragma once

#include "xplt/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace xplt {

inline constexpr int kImageSize = 64;

/// 64x64 grayscale image, intensities in [0,1]. Generation draws shapes at
/// exactly 1.0 on a 0.0 background so 8-bit quantization is lossless.
struct GrayImage {
  std::vector<float> px = std::vector<float>(kImageSize * kImageSize, 0.0f);

  float& at(int r, int c) { return px[static_cast<size_t>(r) * kImageSize + c]; }
  float at(int r, int c) const { return px[static_cast<size_t>(r) * kImageSize + c]; }
};

/// 64x64 binary mask, values in {0,1}.
struct BinaryMask {
  std::vector<uint8_t> px = std::vector<uint8_t>(kImageSize * kImageSize, 0);

  uint8_t& at(int r, int c) { return px[static_cast<size_t>(r) * kImageSize + c]; }
  uint8_t at(int r, int c) const { return px[static_cast<size_t>(r) * kImageSize + c]; }
  int area() const {
    int n = 0;
    for (uint8_t v : px) n += v;
    return n;
  }
};

/// Binary 8-bit PGM (P5, maxval 255).
void save_pgm(const std::string& path, const std::vector<uint8_t>& bytes);
std::vector<uint8_t> load_pgm(const std::string& path);

void save_image_pgm(const std::string& path, const GrayImage& img);
GrayImage load_image_pgm(const std::string& path);
void save_mask_pgm(const std::string& path, const BinaryMask& mask);
BinaryMask load_mask_pgm(const std::string& path);

}  // namespace xplt
