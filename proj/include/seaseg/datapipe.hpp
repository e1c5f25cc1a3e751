#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "seaseg/image.hpp"
#include "seaseg/manifest.hpp"
#include "seaseg/mask.hpp"
#include "seaseg/rng.hpp"
#include "seaseg/tensor.hpp"

namespace seaseg {

// ---- synthetic corpus -------------------------------------------------------

struct SynthConfig {
  int n = 100;
  double empty_frac = 0.6;
  int size = 64;
  int max_ships = 15;
  std::uint64_t seed = 0;
  // Ship length as a fraction of the image side.
  double min_length = 0.04;
  double max_length = 0.25;
  void validate() const;
};

struct SynthImage {
  std::string image_id;
  Image8 image;
  InstanceSet instances;
};

std::string synth_image_id(int index);

// Exactly round(n * empty_frac) images are empty; which ones is a seeded shuffle.
std::vector<bool> synth_empty_plan(const SynthConfig& config);

// Image `index` of the corpus, independent of every other image.
SynthImage synth_image(const SynthConfig& config, int index, bool empty);

// Writes out/images/<id>.png and out/manifest.csv. Returns the manifest.
Manifest synth_generate(const SynthConfig& config, const std::filesystem::path& out, int workers = 1);

// ---- loading and preprocessing --------------------------------------------------

struct Sample {
  std::string image_id;
  Tensor<float> image;  // 3×H×W in [0, 1]
  InstanceSet instances;
};

// Reads an image and its instances; half_scale halves both (bilinear / nearest), dropping
// instances that vanish.
Sample load_sample(const Dataset& data, const std::string& image_id, bool half_scale = false);

struct ScaleCropConfig {
  double scale_min = 0.8;
  double scale_max = 1.25;
  bool jitter = true;
  void validate() const;
};

struct Crop {
  Tensor<float> image;
  BinaryMask mask;
};

// Rescales by a random factor, then cuts a crop_size square that contains at least one ship pixel
// when the image has any.
Crop smart_scale_crop(const Tensor<float>& image, const InstanceSet& instances, int crop_size, Rng& rng,
                      const ScaleCropConfig& config = {});

// ---- stratified sampling --------------------------------------------------------

inline constexpr int kNumStrata = 10;

int stratum_of(int ship_count);
std::vector<int> stratify(const Manifest& manifest, const std::vector<std::string>& ids);

// Strict round-robin over the nonempty strata; within a stratum, a seeded permutation drawn
// without replacement and redrawn on exhaustion. The state is a function of the draw count.
class StratifiedSampler {
 public:
  // strata[i] is the stratum of item i.
  StratifiedSampler(std::vector<int> strata, std::uint64_t seed);
  std::size_t next();
  std::uint64_t draws() const { return draws_; }
  // Replays draws until draws() == n; n must not be smaller than draws().
  void advance_to(std::uint64_t n);
  const std::vector<int>& empty_strata() const { return empty_; }
  const std::vector<int>& active_strata() const { return active_; }

 private:
  void refill(int stratum);

  std::uint64_t seed_;
  std::vector<std::vector<std::size_t>> members_;
  std::vector<std::vector<std::size_t>> order_;
  std::vector<std::size_t> pos_;
  std::vector<std::uint64_t> pass_;
  std::vector<int> active_;
  std::vector<int> empty_;
  std::size_t cursor_ = 0;
  std::uint64_t draws_ = 0;
};

// ---- augmentation ----------------------------------------------------------------

struct AugmentParams {
  double brightness = 0.0;
  double contrast = 1.0;
  double gamma = 1.0;
  int d8 = 0;
  void validate() const;
};

struct AugmentConfig {
  double brightness = 0.2;
  double contrast = 0.2;
  double gamma = 0.2;
  bool d8 = true;
  void validate() const;
};

AugmentParams sample_augment(Rng& rng, const AugmentConfig& config = {});

// Photometric changes on the [0, 1] image: contrast about 0.5, brightness shift, clamp, then gamma.
// The D8 element is applied to both image and mask.
Crop augment(const Crop& input, const AugmentParams& params);

}  // namespace seaseg
