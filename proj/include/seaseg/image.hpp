#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "seaseg/mask.hpp"
#include "seaseg/tensor.hpp"

namespace seaseg {

// 8-bit image, interleaved H×W×C.
struct Image8 {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<std::uint8_t> data;

  Image8() = default;
  Image8(int h, int w, int c) : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, 0) {}
  std::uint8_t& at(int r, int c, int ch) { return data[(static_cast<std::size_t>(r) * width + c) * channels + ch]; }
  std::uint8_t at(int r, int c, int ch) const { return data[(static_cast<std::size_t>(r) * width + c) * channels + ch]; }
  friend bool operator==(const Image8&, const Image8&) = default;
};

// 8-bit RGB PNG. Grey and palette files are expanded to RGB; alpha is dropped.
Image8 read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image8& image);

inline constexpr std::array<double, 3> kChannelMean{0.485, 0.456, 0.406};
inline constexpr std::array<double, 3> kChannelStd{0.229, 0.224, 0.225};

// C×H×W values in [0, 1].
Tensor<float> to_unit(const Image8& image);
// Rounds and clamps back to 8 bits.
Image8 from_unit(const Tensor<float>& unit);

// (x/255 - mean) / std per channel; requires 3 channels.
Tensor<float> normalize(const Image8& image);
Tensor<float> normalize_unit(const Tensor<float>& unit);
// Inverse of normalize_unit.
Tensor<float> denormalize(const Tensor<float>& normalized);

// Bilinear resize of a C×H×W tensor, half-pixel centres, edges clamped.
Tensor<float> resize_bilinear(const Tensor<float>& image, int out_h, int out_w);
// Nearest-neighbour resize, sampling the source pixel under each output centre.
BinaryMask resize_nearest(const BinaryMask& mask, int out_h, int out_w);

}  // namespace seaseg
