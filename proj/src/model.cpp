#include "seaseg/model.hpp"

#include <string>

namespace seaseg {

namespace {

constexpr int kStages = 4;

std::string stage_path(int stage) { return "enc" + std::to_string(stage); }

std::string block_path(int stage, int block) {
  return stage_path(stage) + ".block" + std::to_string(block);
}

}  // namespace

ModelConfig ModelConfig::toy() { return ModelConfig{}; }

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.base_channels = 64;
  c.stage_blocks = {3, 4, 6, 3};
  c.se = SeConfig{16, SeFusion::kSum};
  return c;
}

void ModelConfig::validate() const {
  if (in_channels <= 0) throw ValidationError("in_channels must be positive");
  if (num_classes < 2) throw ValidationError("num_classes must be at least 2");
  if (base_channels <= 0) throw ValidationError("base_channels must be positive");
  if (static_cast<int>(stage_blocks.size()) != kStages) {
    throw ValidationError("stage_blocks must list exactly 4 stages");
  }
  for (int b : stage_blocks) {
    if (b < 1) throw ValidationError("every stage needs at least one block");
  }
  if (use_se) {
    if (se.reduction <= 0) throw ValidationError("SE reduction ratio must be positive");
    if (base_channels % se.reduction != 0) {
      throw ValidationError("base_channels " + std::to_string(base_channels) +
                            " is not divisible by the SE reduction ratio " + std::to_string(se.reduction));
    }
  }
}

std::vector<int> ModelConfig::stage_channels() const {
  return {base_channels, 2 * base_channels, 4 * base_channels, 8 * base_channels};
}

SeUNet SeUNet::build(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  SeUNet model(config);
  ParamStore<float>& p = model.params_;
  const int r = config.se.reduction;
  const std::vector<int> ch = config.stage_channels();

  init_conv(p, "stem.conv", config.base_channels, config.in_channels, 3, false, seed);
  init_bn(p, "stem.bn", config.base_channels);
  if (config.use_se) init_scse(p, "stem.se", config.base_channels, r, seed);

  int in_ch = config.base_channels;
  for (int s = 0; s < kStages; ++s) {
    for (int b = 0; b < config.stage_blocks[s]; ++b) {
      init_basic_block(p, block_path(s + 1, b), in_ch, ch[s], b == 0 ? 2 : 1, seed);
      in_ch = ch[s];
    }
    if (config.use_se) init_scse(p, stage_path(s + 1) + ".se", ch[s], r, seed);
  }

  // Skip channels: stem (base), stage 1..3. Each decoder block outputs its skip's width.
  const std::vector<int> skip_ch = {config.base_channels, ch[0], ch[1], ch[2]};
  const bool dec_se = config.use_se && config.decoder_se;
  for (int d = kStages; d >= 1; --d) {
    const int out = skip_ch[d - 1];
    init_decoder_block(p, "dec" + std::to_string(d), in_ch, skip_ch[d - 1], out, dec_se, r, seed);
    in_ch = out;
  }
  init_conv(p, "head", config.num_classes, in_ch, 1, true, seed);
  return model;
}

void SeUNet::check_input(const Shape& shape) const {
  if (shape.size() != 4) throw ShapeError("model input must be N×C×H×W, got " + shape_str(shape));
  if (shape[0] < 1) throw ShapeError("model input batch is empty");
  if (shape[1] != config_.in_channels) {
    throw ShapeError("model expects " + std::to_string(config_.in_channels) + " input channels, got " +
                     shape_str(shape));
  }
  if (shape[2] < 16 || shape[3] < 16 || shape[2] % 16 != 0 || shape[3] % 16 != 0) {
    throw ValidationError("input spatial size " + std::to_string(shape[2]) + "x" + std::to_string(shape[3]) +
                          " must be a positive multiple of 16");
  }
}

Var<float> SeUNet::forward(ParamBinder<float>& binder, Var<float> x, BnMode mode, const BnOptions& bn) const {
  check_input(x.shape());
  LayerContext<float> ctx{binder, mode, bn};
  const SeConfig& se = config_.se;

  std::vector<Var<float>> skips;
  Var<float> y = conv_bn_elu(ctx, "stem", x, 1, 1);
  if (config_.use_se) y = scse_forward(ctx, "stem.se", y, se);
  skips.push_back(y);
  for (int s = 0; s < kStages; ++s) {
    for (int b = 0; b < config_.stage_blocks[s]; ++b) {
      y = basic_block_forward(ctx, block_path(s + 1, b), y, b == 0 ? 2 : 1);
    }
    if (config_.use_se) y = scse_forward(ctx, stage_path(s + 1) + ".se", y, se);
    if (s + 1 < kStages) skips.push_back(y);
  }
  for (int d = kStages; d >= 1; --d) {
    y = decoder_block_forward(ctx, "dec" + std::to_string(d), y, skips[d - 1], se);
  }
  Var<float> logits = conv2d(y, binder("head.w"), binder("head.b"), 1, 0);
  return softmax_channels(logits);
}

Tensor<float> SeUNet::predict(const Tensor<float>& batch) const {
  Tape<float> tape;
  tape.set_grad_enabled(false);
  // Eval-mode batch norm only reads the running statistics, so the store is never written.
  ParamBinder<float> binder(tape, const_cast<ParamStore<float>&>(params_), false);
  return forward(binder, tape.leaf(batch), BnMode::kEval).value();
}

std::pair<SeUNet, SeUNet> ablation_pair(std::uint64_t seed, ModelConfig base) {
  ModelConfig with = base;
  with.use_se = true;
  with.decoder_se = true;
  ModelConfig without = base;
  without.use_se = false;
  without.decoder_se = false;
  return {SeUNet::build(with, seed), SeUNet::build(without, seed)};
}

}  // namespace seaseg
