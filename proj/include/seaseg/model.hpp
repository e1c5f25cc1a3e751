#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "seaseg/nn.hpp"

namespace seaseg {

struct ModelConfig {
  int in_channels = 3;
  int num_classes = 2;
  int base_channels = 8;
  std::vector<int> stage_blocks{1, 1, 1, 1};
  bool use_se = true;
  // Only meaningful with use_se.
  bool decoder_se = true;
  SeConfig se{4, SeFusion::kSum};

  // base 8, one block per stage.
  static ModelConfig toy();
  // base 64, ResNet-34 stage layout [3,4,6,3], reduction 16.
  static ModelConfig paper();

  void validate() const;
  std::vector<int> stage_channels() const;
  bool operator==(const ModelConfig&) const = default;
};

// U-Net with a residual encoder: a stride-1 3x3 stem, four stages that each halve the
// resolution, four decoder blocks fed by the stem and stage skips, and a 1x1 softmax head.
// Input H and W must be divisible by 16.
class SeUNet {
 public:
  static SeUNet build(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParamStore<float>& params() { return params_; }
  const ParamStore<float>& params() const { return params_; }
  std::int64_t parameter_count() const { return params_.parameter_count(); }

  // Records the network on the binder's tape. The binder must wrap params(). Returns per-pixel
  // class probabilities (N, num_classes, H, W).
  Var<float> forward(ParamBinder<float>& binder, Var<float> x, BnMode mode, const BnOptions& bn = {}) const;

  // Eval-mode forward without gradients. Safe to call concurrently.
  Tensor<float> predict(const Tensor<float>& batch) const;

  void check_input(const Shape& shape) const;

 private:
  SeUNet(ModelConfig config) : config_(std::move(config)) {}

  ModelConfig config_;
  ParamStore<float> params_;
};

// Same seed, same config except for the SE switches. Weights outside the SE blocks share their
// paths and therefore their initial values.
std::pair<SeUNet, SeUNet> ablation_pair(std::uint64_t seed, ModelConfig base = ModelConfig::toy());

}  // namespace seaseg
