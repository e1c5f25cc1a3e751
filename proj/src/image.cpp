#include "seaseg/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace seaseg {

namespace {

struct AxisTaps {
  std::vector<int> lo, hi;
  std::vector<double> frac;
};

AxisTaps bilinear_taps(int in, int out) {
  AxisTaps t;
  const double ratio = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    const double src = std::clamp((i + 0.5) * ratio - 0.5, 0.0, static_cast<double>(in - 1));
    const int lo = static_cast<int>(std::floor(src));
    t.lo.push_back(lo);
    t.hi.push_back(std::min(lo + 1, in - 1));
    t.frac.push_back(src - lo);
  }
  return t;
}

void check_chw3(const Tensor<float>& t, const char* what) {
  if (t.rank() != 3 || t.dim(0) != 3) {
    throw ShapeError(std::string(what) + ": expected a 3×H×W tensor, got " + shape_str(t.shape()));
  }
}

}  // namespace

Image8 read_png(const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw RuntimeError("cannot read PNG " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  Image8 out(static_cast<int>(img.height), static_cast<int>(img.width), 3);
  if (!png_image_finish_read(&img, nullptr, out.data.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw RuntimeError("cannot decode PNG " + path.string() + ": " + msg);
  }
  return out;
}

void write_png(const std::filesystem::path& path, const Image8& image) {
  if (image.channels != 3 && image.channels != 1) throw ValidationError("write_png supports 1 or 3 channels");
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.data.data(), 0, nullptr)) {
    throw RuntimeError("cannot write PNG " + path.string() + ": " + img.message);
  }
}

Tensor<float> to_unit(const Image8& image) {
  Tensor<float> t(Shape{image.channels, image.height, image.width});
  for (int ch = 0; ch < image.channels; ++ch) {
    for (int r = 0; r < image.height; ++r) {
      for (int c = 0; c < image.width; ++c) {
        t[(static_cast<std::int64_t>(ch) * image.height + r) * image.width + c] = image.at(r, c, ch) / 255.0f;
      }
    }
  }
  return t;
}

Image8 from_unit(const Tensor<float>& unit) {
  if (unit.rank() != 3) throw ShapeError("from_unit: expected C×H×W, got " + shape_str(unit.shape()));
  Image8 img(unit.dim(1), unit.dim(2), unit.dim(0));
  for (int ch = 0; ch < img.channels; ++ch) {
    for (int r = 0; r < img.height; ++r) {
      for (int c = 0; c < img.width; ++c) {
        const float v = unit[(static_cast<std::int64_t>(ch) * img.height + r) * img.width + c];
        img.at(r, c, ch) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
      }
    }
  }
  return img;
}

Tensor<float> normalize_unit(const Tensor<float>& unit) {
  check_chw3(unit, "normalize");
  Tensor<float> out(unit.shape());
  const std::int64_t plane = static_cast<std::int64_t>(unit.dim(1)) * unit.dim(2);
  for (int ch = 0; ch < 3; ++ch) {
    for (std::int64_t i = 0; i < plane; ++i) {
      out[ch * plane + i] = static_cast<float>((unit[ch * plane + i] - kChannelMean[ch]) / kChannelStd[ch]);
    }
  }
  return out;
}

Tensor<float> normalize(const Image8& image) {
  if (image.channels != 3) throw ShapeError("normalize: expected 3 channels, got " + std::to_string(image.channels));
  return normalize_unit(to_unit(image));
}

Tensor<float> denormalize(const Tensor<float>& normalized) {
  check_chw3(normalized, "denormalize");
  Tensor<float> out(normalized.shape());
  const std::int64_t plane = static_cast<std::int64_t>(normalized.dim(1)) * normalized.dim(2);
  for (int ch = 0; ch < 3; ++ch) {
    for (std::int64_t i = 0; i < plane; ++i) {
      out[ch * plane + i] = static_cast<float>(normalized[ch * plane + i] * kChannelStd[ch] + kChannelMean[ch]);
    }
  }
  return out;
}

Tensor<float> resize_bilinear(const Tensor<float>& image, int out_h, int out_w) {
  if (image.rank() != 3) throw ShapeError("resize_bilinear: expected C×H×W, got " + shape_str(image.shape()));
  if (out_h <= 0 || out_w <= 0 || image.dim(1) <= 0 || image.dim(2) <= 0) {
    throw ValidationError("resize_bilinear: sizes must be positive");
  }
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (out_h == h && out_w == w) return image;
  const AxisTaps ty = bilinear_taps(h, out_h), tx = bilinear_taps(w, out_w);
  Tensor<float> out(Shape{c, out_h, out_w});
  for (int ch = 0; ch < c; ++ch) {
    const float* src = image.ptr() + static_cast<std::int64_t>(ch) * h * w;
    float* dst = out.ptr() + static_cast<std::int64_t>(ch) * out_h * out_w;
    for (int i = 0; i < out_h; ++i) {
      const float* r0 = src + static_cast<std::int64_t>(ty.lo[i]) * w;
      const float* r1 = src + static_cast<std::int64_t>(ty.hi[i]) * w;
      const double fy = ty.frac[i];
      for (int j = 0; j < out_w; ++j) {
        const double fx = tx.frac[j];
        const double top = r0[tx.lo[j]] * (1 - fx) + r0[tx.hi[j]] * fx;
        const double bot = r1[tx.lo[j]] * (1 - fx) + r1[tx.hi[j]] * fx;
        dst[static_cast<std::int64_t>(i) * out_w + j] = static_cast<float>(top * (1 - fy) + bot * fy);
      }
    }
  }
  return out;
}

BinaryMask resize_nearest(const BinaryMask& mask, int out_h, int out_w) {
  BinaryMask out(out_h, out_w);
  const int h = mask.height(), w = mask.width();
  for (int i = 0; i < out_h; ++i) {
    const int r = std::min(h - 1, static_cast<int>(std::floor((i + 0.5) * h / out_h)));
    for (int j = 0; j < out_w; ++j) {
      const int c = std::min(w - 1, static_cast<int>(std::floor((j + 0.5) * w / out_w)));
      out.set(i, j, mask.get(r, c));
    }
  }
  return out;
}

}  // namespace seaseg
