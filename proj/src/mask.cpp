#include "seaseg/mask.hpp"

#include <charconv>
#include <numeric>

namespace seaseg {

namespace {

void check_dims(int height, int width) {
  if (height <= 0 || width <= 0) {
    throw ValidationError("mask dimensions must be positive, got " + std::to_string(height) + "x" +
                          std::to_string(width));
  }
}

void check_element(int e) {
  if (e < 0 || e >= kD8Size) throw ValidationError("D8 element must lie in [0,8), got " + std::to_string(e));
}

// Source coordinate in an h×w plane for output coordinate (i, j) under element e. Output is
// w×h for odd rotation counts.
struct D8Map {
  int e, h, w;

  int out_h() const { return (e % 2) ? w : h; }
  int out_w() const { return (e % 2) ? h : w; }

  std::pair<int, int> source(int i, int j) const {
    // Undo the rotations one quarter turn at a time. A CCW turn producing an rh×rw plane
    // reads out(i, j) from in(j, rh-1-i).
    int r = i, c = j;
    int rh = out_h(), rw = out_w();
    for (int k = 0; k < e % 4; ++k) {
      const int nr = c, nc = rh - 1 - r;
      r = nr;
      c = nc;
      std::swap(rh, rw);
    }
    if (e >= 4) c = w - 1 - c;
    return {r, c};
  }
};

class DisjointSet {
 public:
  int make() {
    parent_.push_back(static_cast<int>(parent_.size()));
    return parent_.back();
  }
  int find(int x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    // The smaller label stays the root so the first-seen label names the component.
    if (b < a) std::swap(a, b);
    parent_[b] = a;
  }

 private:
  std::vector<int> parent_;
};

}  // namespace

BinaryMask::BinaryMask(int height, int width) : height_(height), width_(width) {
  check_dims(height, width);
  bits_.assign(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), 0);
}

BinaryMask::BinaryMask(int height, int width, std::vector<std::uint8_t> bits)
    : height_(height), width_(width), bits_(std::move(bits)) {
  check_dims(height, width);
  if (bits_.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width)) {
    throw ShapeError("mask bit count " + std::to_string(bits_.size()) + " does not match " + std::to_string(height) +
                     "x" + std::to_string(width));
  }
  for (auto& b : bits_) b = b ? 1 : 0;
}

std::int64_t BinaryMask::popcount() const {
  return std::accumulate(bits_.begin(), bits_.end(), std::int64_t{0});
}

void InstanceSet::validate() const {
  check_dims(height, width);
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(height) * width, 0);
  for (std::size_t k = 0; k < instances.size(); ++k) {
    const BinaryMask& m = instances[k];
    if (m.height() != height || m.width() != width) {
      throw ShapeError("instance " + std::to_string(k) + " has dimensions " + std::to_string(m.height()) + "x" +
                       std::to_string(m.width()) + ", image is " + std::to_string(height) + "x" + std::to_string(width));
    }
    if (m.none()) throw ValidationError("instance " + std::to_string(k) + " is empty");
    for (std::int64_t i = 0; i < m.size(); ++i) {
      if (!m[i]) continue;
      if (seen[i]) throw ValidationError("instance " + std::to_string(k) + " overlaps an earlier instance");
      seen[i] = 1;
    }
  }
}

BinaryMask InstanceSet::union_mask() const {
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(height) * width, 0);
  for (const auto& m : instances) {
    for (std::int64_t i = 0; i < m.size(); ++i) bits[i] |= m.bits()[i];
  }
  return BinaryMask(height, width, std::move(bits));
}

std::string rle_encode(const BinaryMask& mask) {
  std::string out;
  const int h = mask.height(), w = mask.width();
  std::int64_t run_start = -1;
  const std::int64_t total = static_cast<std::int64_t>(h) * w;
  for (std::int64_t k = 0; k <= total; ++k) {
    const bool on = k < total && mask.get(static_cast<int>(k % h), static_cast<int>(k / h));
    if (on && run_start < 0) {
      run_start = k;
    } else if (!on && run_start >= 0) {
      if (!out.empty()) out += ' ';
      out += std::to_string(run_start + 1) + ' ' + std::to_string(k - run_start);
      run_start = -1;
    }
  }
  return out;
}

BinaryMask rle_decode(std::string_view text, int height, int width) {
  check_dims(height, width);
  std::vector<std::int64_t> values;
  std::size_t pos = 0;
  while (true) {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
    if (pos >= text.size()) break;
    std::size_t end = pos;
    while (end < text.size() && !std::isspace(static_cast<unsigned char>(text[end]))) ++end;
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + end, v);
    if (ec != std::errc() || ptr != text.data() + end) {
      throw ParseError("RLE token '" + std::string(text.substr(pos, end - pos)) + "' is not an integer", values.size());
    }
    values.push_back(v);
    pos = end;
  }
  if (values.size() % 2 != 0) throw ParseError("RLE has an odd number of tokens", values.size() - 1);

  const std::int64_t total = static_cast<std::int64_t>(height) * width;
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(total), 0);
  for (std::size_t t = 0; t < values.size(); t += 2) {
    const std::int64_t start = values[t];
    const std::int64_t len = values[t + 1];
    if (start < 1 || start > total) {
      throw ParseError("RLE start " + std::to_string(start) + " outside [1," + std::to_string(total) + "]", t);
    }
    if (len < 1) throw ParseError("RLE run length must be positive", t + 1);
    if (len > total - start + 1) {
      throw ParseError("RLE run " + std::to_string(start) + "+" + std::to_string(len) + " passes the last pixel " +
                           std::to_string(total), t + 1);
    }
    for (std::int64_t k = start - 1; k < start - 1 + len; ++k) {
      const std::size_t idx = static_cast<std::size_t>(k % height) * width + static_cast<std::size_t>(k / height);
      if (bits[idx]) throw ParseError("RLE run starting at " + std::to_string(start) + " overlaps an earlier run", t);
      bits[idx] = 1;
    }
  }
  return BinaryMask(height, width, std::move(bits));
}

InstanceSet connected_components(const BinaryMask& mask, int connectivity) {
  if (connectivity != 4 && connectivity != 8) throw ValidationError("connectivity must be 4 or 8");
  const int h = mask.height(), w = mask.width();
  std::vector<int> label(static_cast<std::size_t>(h) * w, -1);
  DisjointSet sets;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!mask.get(r, c)) continue;
      const std::size_t idx = static_cast<std::size_t>(r) * w + c;
      int mine = -1;
      auto link = [&](int rr, int cc) {
        if (rr < 0 || cc < 0 || cc >= w) return;
        const int other = label[static_cast<std::size_t>(rr) * w + cc];
        if (other < 0) return;
        if (mine < 0) mine = other;
        else sets.unite(mine, other);
      };
      link(r, c - 1);
      link(r - 1, c);
      if (connectivity == 8) {
        link(r - 1, c - 1);
        link(r - 1, c + 1);
      }
      label[idx] = mine >= 0 ? mine : sets.make();
    }
  }

  InstanceSet out{h, w, {}};
  std::vector<int> slot_of_root;
  for (std::size_t idx = 0; idx < label.size(); ++idx) {
    if (label[idx] < 0) continue;
    const int root = sets.find(label[idx]);
    if (static_cast<std::size_t>(root) >= slot_of_root.size()) slot_of_root.resize(root + 1, -1);
    if (slot_of_root[root] < 0) {
      slot_of_root[root] = static_cast<int>(out.instances.size());
      out.instances.emplace_back(h, w);
    }
    out.instances[slot_of_root[root]].set(static_cast<int>(idx / w), static_cast<int>(idx % w));
  }
  return out;
}

int d8_inverse(int element) {
  check_element(element);
  return element < 4 ? (4 - element) % 4 : element;
}

int d8_compose(int a, int b) {
  check_element(a);
  check_element(b);
  // R^rb F^fb R^ra F^fa, using F R = R^-1 F.
  const int ra = a % 4, fa = a / 4, rb = b % 4, fb = b / 4;
  const int r = ((fb ? -ra : ra) + rb + 8) % 4;
  return (fa ^ fb) * 4 + r;
}

BinaryMask transform_d8(const BinaryMask& mask, int element) {
  check_element(element);
  const D8Map map{element, mask.height(), mask.width()};
  BinaryMask out(map.out_h(), map.out_w());
  for (int i = 0; i < out.height(); ++i) {
    for (int j = 0; j < out.width(); ++j) {
      auto [r, c] = map.source(i, j);
      out.set(i, j, mask.get(r, c));
    }
  }
  return out;
}

template <typename T>
Tensor<T> transform_d8(const Tensor<T>& x, int element) {
  check_element(element);
  if (x.rank() < 2 || x.rank() > 4) throw ShapeError("transform_d8 needs rank 2-4, got " + shape_str(x.shape()));
  const int h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  const D8Map map{element, h, w};
  Shape shape = x.shape();
  shape[shape.size() - 2] = map.out_h();
  shape[shape.size() - 1] = map.out_w();
  Tensor<T> out(shape);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  const std::int64_t planes = plane ? x.numel() / plane : 0;
  std::vector<std::int64_t> source(static_cast<std::size_t>(plane));
  for (int i = 0; i < map.out_h(); ++i) {
    for (int j = 0; j < map.out_w(); ++j) {
      auto [r, c] = map.source(i, j);
      source[static_cast<std::size_t>(i) * map.out_w() + j] = static_cast<std::int64_t>(r) * w + c;
    }
  }
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* src = x.ptr() + p * plane;
    T* dst = out.ptr() + p * plane;
    for (std::int64_t k = 0; k < plane; ++k) dst[k] = src[source[k]];
  }
  return out;
}

template Tensor<float> transform_d8(const Tensor<float>&, int);
template Tensor<double> transform_d8(const Tensor<double>&, int);
template Tensor<std::uint8_t> transform_d8(const Tensor<std::uint8_t>&, int);
template Tensor<std::int32_t> transform_d8(const Tensor<std::int32_t>&, int);

}  // namespace seaseg
