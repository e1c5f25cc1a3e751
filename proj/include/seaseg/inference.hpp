#pragma once

#include <functional>
#include <string>
#include <vector>

#include "seaseg/datapipe.hpp"
#include "seaseg/manifest.hpp"
#include "seaseg/mask.hpp"
#include "seaseg/model.hpp"

namespace seaseg {

enum class TtaMean { kArithmetic, kGeometric };

struct TtaConfig {
  // D8 elements; the identity must be present.
  std::vector<int> elements{0};
  TtaMean mean = TtaMean::kArithmetic;
  void validate() const;
};

// Named element sets: "off" {identity}, "d4" (four rotations), "flips" (identity and both
// mirrors), "d4+flips" (rotations and both mirrors, the default) and "full" (all eight).
std::vector<int> tta_elements(const std::string& name);
inline const char* kDefaultTta = "d4+flips";

TtaMean parse_tta_mean(const std::string& name);

// Maps a normalized N×C×H×W batch to N×K×H×W class probabilities.
using Predictor = std::function<Tensor<float>(const Tensor<float>&)>;

// Averages inverse-transformed predictions over the elements, visited in ascending order so the
// result does not depend on how the set was listed. The geometric mean is renormalized per pixel.
// H and W must be divisible by 16.
Tensor<float> tta_predict(const Predictor& predictor, const Tensor<float>& batch, const TtaConfig& tta,
                          int workers = 1);
Tensor<float> tta_predict(const SeUNet& model, const Tensor<float>& batch, const TtaConfig& tta, int workers = 1);

struct PostprocessConfig {
  double prob_threshold = 0.5;
  int min_instance_area = 4;
  void validate() const;
};

// Ship probability above the threshold, 8-connected components, small components dropped.
// probs: 2×H×W or 1×2×H×W.
InstanceSet probs_to_instances(const Tensor<float>& probs, const PostprocessConfig& config = {});

// Normalizes, predicts and post-processes every listed image of the dataset, one image at a time.
Manifest predict_dataset(const SeUNet& model, const Dataset& data, const std::vector<std::string>& ids,
                         const TtaConfig& tta = {}, const PostprocessConfig& post = {}, bool half_scale = false,
                         int workers = 1);

}  // namespace seaseg
