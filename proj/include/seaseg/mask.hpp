#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "seaseg/tensor.hpp"

namespace seaseg {

// Row-major binary raster with fixed, positive dimensions.
class BinaryMask {
 public:
  BinaryMask(int height, int width);
  BinaryMask(int height, int width, std::vector<std::uint8_t> bits);

  int height() const { return height_; }
  int width() const { return width_; }
  std::int64_t size() const { return static_cast<std::int64_t>(bits_.size()); }

  bool get(int row, int col) const { return bits_[index(row, col)] != 0; }
  void set(int row, int col, bool on = true) { bits_[index(row, col)] = on ? 1 : 0; }
  bool operator[](std::int64_t i) const { return bits_[static_cast<std::size_t>(i)] != 0; }
  std::span<const std::uint8_t> bits() const { return bits_; }

  std::int64_t popcount() const;
  bool none() const { return popcount() == 0; }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(col);
  }

  int height_;
  int width_;
  std::vector<std::uint8_t> bits_;
};

// Instances of one image: pairwise disjoint, each nonempty, all with the image dimensions.
struct InstanceSet {
  int height = 0;
  int width = 0;
  std::vector<BinaryMask> instances;

  void validate() const;
  BinaryMask union_mask() const;
};

// Space-separated 1-indexed (start, length) pairs over the column-major flattening.
std::string rle_encode(const BinaryMask& mask);

// Throws ParseError naming the offending token for malformed, out-of-range or overlapping runs.
BinaryMask rle_decode(std::string_view text, int height, int width);

// Maximal 4- or 8-connected foreground regions, ordered by their first pixel in row-major order.
InstanceSet connected_components(const BinaryMask& mask, int connectivity = 8);

// Dihedral group of the square. Element e applies a horizontal mirror when e >= 4, then e % 4
// counter-clockwise quarter turns. Element 6 is the vertical mirror.
constexpr int kD8Size = 8;
int d8_inverse(int element);
// Element equal to applying a, then b.
int d8_compose(int a, int b);
BinaryMask transform_d8(const BinaryMask& mask, int element);
// Transforms the last two dimensions of a rank-2, 3 or 4 tensor.
template <typename T>
Tensor<T> transform_d8(const Tensor<T>& x, int element);

}  // namespace seaseg
