#include <algorithm>
#include <cmath>

#include "seaseg/datapipe.hpp"
#include "seaseg/error.hpp"

namespace seaseg {

namespace {

Tensor<float> crop_tensor(const Tensor<float>& image, int top, int left, int size) {
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor<float> out(Shape{c, size, size});
  for (int ch = 0; ch < c; ++ch) {
    for (int r = 0; r < size; ++r) {
      const float* src = image.ptr() + (static_cast<std::int64_t>(ch) * h + top + r) * w + left;
      std::copy(src, src + size, out.ptr() + (static_cast<std::int64_t>(ch) * size + r) * size);
    }
  }
  return out;
}

BinaryMask crop_mask(const BinaryMask& mask, int top, int left, int size) {
  BinaryMask out(size, size);
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) out.set(r, c, mask.get(top + r, left + c));
  }
  return out;
}

bool finite(double v) { return std::isfinite(v); }

}  // namespace

Sample load_sample(const Dataset& data, const std::string& image_id, bool half_scale) {
  const Image8 raw = read_png(data.image_path(image_id));
  Sample s{image_id, to_unit(raw), data.manifest.instances(image_id, raw.height, raw.width)};
  if (!half_scale) return s;
  const int h = std::max(1, raw.height / 2), w = std::max(1, raw.width / 2);
  s.image = resize_bilinear(s.image, h, w);
  InstanceSet halved{h, w, {}};
  for (const auto& m : s.instances.instances) {
    BinaryMask small = resize_nearest(m, h, w);
    if (!small.none()) halved.instances.push_back(std::move(small));
  }
  s.instances = std::move(halved);
  return s;
}

void ScaleCropConfig::validate() const {
  if (!(scale_min > 0.0 && scale_min <= scale_max && finite(scale_max))) {
    throw ValidationError("scale jitter range must satisfy 0 < min <= max");
  }
}

Crop smart_scale_crop(const Tensor<float>& image, const InstanceSet& instances, int crop_size, Rng& rng,
                      const ScaleCropConfig& config) {
  config.validate();
  if (image.rank() != 3) throw ShapeError("smart_scale_crop: expected C×H×W, got " + shape_str(image.shape()));
  const int h = image.dim(1), w = image.dim(2);
  if (instances.height != h || instances.width != w) {
    throw ShapeError("smart_scale_crop: instances do not match the image dimensions");
  }
  if (crop_size < 1 || crop_size > h || crop_size > w) {
    throw ValidationError("crop size " + std::to_string(crop_size) + " does not fit a " + std::to_string(h) + "x" +
                          std::to_string(w) + " image");
  }
  const BinaryMask full = instances.union_mask();
  Tensor<float> scaled = image;
  BinaryMask mask = full;
  if (config.jitter) {
    const double s = uniform_real(rng, config.scale_min, config.scale_max);
    const int sh = std::max(crop_size, static_cast<int>(std::lround(h * s)));
    const int sw = std::max(crop_size, static_cast<int>(std::lround(w * s)));
    BinaryMask m = resize_nearest(full, sh, sw);
    // Downscaling can drop a tiny ship entirely; keep the original scale then.
    if (full.none() || !m.none()) {
      scaled = resize_bilinear(image, sh, sw);
      mask = std::move(m);
    }
  }
  const int sh = mask.height(), sw = mask.width();
  int top, left;
  if (mask.none()) {
    top = uniform_int(rng, 0, sh - crop_size);
    left = uniform_int(rng, 0, sw - crop_size);
  } else {
    std::vector<std::int64_t> ships;
    for (std::int64_t i = 0; i < mask.size(); ++i) {
      if (mask[i]) ships.push_back(i);
    }
    const std::int64_t p = ships[uniform_index(rng, ships.size())];
    const int r = static_cast<int>(p / sw), c = static_cast<int>(p % sw);
    top = uniform_int(rng, std::max(0, r - crop_size + 1), std::min(r, sh - crop_size));
    left = uniform_int(rng, std::max(0, c - crop_size + 1), std::min(c, sw - crop_size));
  }
  return {crop_tensor(scaled, top, left, crop_size), crop_mask(mask, top, left, crop_size)};
}

int stratum_of(int ship_count) { return std::clamp(ship_count, 0, kNumStrata - 1); }

std::vector<int> stratify(const Manifest& manifest, const std::vector<std::string>& ids) {
  std::vector<int> strata;
  strata.reserve(ids.size());
  for (const auto& id : ids) strata.push_back(stratum_of(manifest.ship_count(id)));
  return strata;
}

StratifiedSampler::StratifiedSampler(std::vector<int> strata, std::uint64_t seed)
    : seed_(seed), members_(kNumStrata), order_(kNumStrata), pos_(kNumStrata, 0), pass_(kNumStrata, 0) {
  for (std::size_t i = 0; i < strata.size(); ++i) {
    if (strata[i] < 0 || strata[i] >= kNumStrata) {
      throw ValidationError("stratum " + std::to_string(strata[i]) + " out of range for item " + std::to_string(i));
    }
    members_[strata[i]].push_back(i);
  }
  for (int s = 0; s < kNumStrata; ++s) {
    if (members_[s].empty()) {
      empty_.push_back(s);
    } else {
      active_.push_back(s);
      refill(s);
    }
  }
  if (active_.empty()) throw ValidationError("sampler: every stratum is empty");
}

void StratifiedSampler::refill(int stratum) {
  order_[stratum] = members_[stratum];
  Rng rng(derive_seed(seed_, {static_cast<std::uint64_t>(stratum), pass_[stratum]}));
  shuffle(order_[stratum], rng);
  ++pass_[stratum];
  pos_[stratum] = 0;
}

std::size_t StratifiedSampler::next() {
  const int s = active_[cursor_];
  cursor_ = (cursor_ + 1) % active_.size();
  if (pos_[s] == order_[s].size()) refill(s);
  ++draws_;
  return order_[s][pos_[s]++];
}

void StratifiedSampler::advance_to(std::uint64_t n) {
  if (n < draws_) throw ValidationError("sampler cannot rewind");
  while (draws_ < n) next();
}

void AugmentParams::validate() const {
  if (!finite(brightness) || !(contrast > 0.0 && finite(contrast)) || !(gamma > 0.0 && finite(gamma))) {
    throw ValidationError("augment: brightness must be finite, contrast and gamma positive");
  }
  if (d8 < 0 || d8 >= kD8Size) throw ValidationError("augment: D8 element must be in [0, 8)");
}

void AugmentConfig::validate() const {
  if (!(brightness >= 0.0 && brightness <= 1.0)) throw ValidationError("augment: brightness range must be in [0, 1]");
  if (!(contrast >= 0.0 && contrast < 1.0)) throw ValidationError("augment: contrast range must be in [0, 1)");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ValidationError("augment: gamma range must be in [0, 1)");
}

AugmentParams sample_augment(Rng& rng, const AugmentConfig& config) {
  config.validate();
  AugmentParams p;
  p.brightness = uniform_real(rng, -config.brightness, config.brightness);
  p.contrast = uniform_real(rng, 1.0 - config.contrast, 1.0 + config.contrast);
  p.gamma = uniform_real(rng, 1.0 - config.gamma, 1.0 + config.gamma);
  const int e = static_cast<int>(uniform_index(rng, kD8Size));
  p.d8 = config.d8 ? e : 0;
  return p;
}

Crop augment(const Crop& input, const AugmentParams& params) {
  params.validate();
  if (input.image.rank() != 3 || input.image.dim(1) != input.mask.height() || input.image.dim(2) != input.mask.width()) {
    throw ShapeError("augment: image " + shape_str(input.image.shape()) + " does not match its mask");
  }
  Tensor<float> img = input.image;
  const double c = params.contrast, b = params.brightness, g = params.gamma;
  if (c != 1.0 || b != 0.0 || g != 1.0) {
    for (std::int64_t i = 0; i < img.numel(); ++i) {
      double v = std::clamp(img[i] * c + 0.5 * (1.0 - c) + b, 0.0, 1.0);
      if (g != 1.0) v = std::pow(v, g);
      img[i] = static_cast<float>(v);
    }
  }
  return {transform_d8(img, params.d8), transform_d8(input.mask, params.d8)};
}

}  // namespace seaseg
