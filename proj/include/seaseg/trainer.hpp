#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "seaseg/datapipe.hpp"
#include "seaseg/inference.hpp"
#include "seaseg/losses.hpp"
#include "seaseg/model.hpp"
#include "seaseg/optim.hpp"

namespace seaseg {

struct TrainConfig {
  ModelConfig model = ModelConfig::toy();
  LossConfig loss;
  AdamWConfig optim;
  // Phase 1: step decay. Phase 2: SGDR with an SWA snapshot at the end of every cycle.
  StepSchedule phase1{1e-3, 0.1, 7, 20};
  SgdrSchedule phase2{1e-5, 1e-7, 2.0, 12};
  int batch_size = 8;
  // 0 trains on whole images without scale-crop.
  int crop_size = 0;
  // 0 means ceil(training images / batch size).
  int steps_per_epoch = 0;
  bool augment = true;
  AugmentConfig augment_config;
  ScaleCropConfig scale_crop;
  // Bilinear ×2 downscale of every image before cropping.
  bool half_scale = false;
  bool bn_recalibration = true;
  // Share of images held out for validation when no explicit split is given.
  double val_fraction = 0.2;
  PostprocessConfig postprocess;
  std::uint64_t seed = 0;
  int workers = 1;

  // 20 step-decay epochs (÷10 every 7) and 12 SGDR epochs with 2-epoch cycles on the toy model.
  static TrainConfig toy();
  // 60 + 36 epochs, ÷10 every 20, 6-epoch cycles, the full-size model and half-scale inputs.
  static TrainConfig paper();
  void validate() const;
  int total_epochs() const { return phase1.epochs + phase2.epochs; }
};

struct TrainSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
};

// Seeded shuffle; round(n * val_fraction) images go to validation. Both lists keep manifest order.
TrainSplit split_ids(const Manifest& manifest, double val_fraction, std::uint64_t seed);

struct LogRow {
  int epoch = 0;
  std::string phase;  // "step", "sgdr" or "swa"
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> val_mean_f2;
};

std::string log_header();
std::string format_log_row(const LogRow& row);

// Output files derived from the final checkpoint path P: P itself (the SWA model when phase 2
// ran, otherwise the best phase-1 model), P.best, P.last (resume state) and P.log.csv.
struct TrainPaths {
  std::filesystem::path final_checkpoint;
  bool enabled() const { return !final_checkpoint.empty(); }
  std::filesystem::path best() const;
  std::filesystem::path last() const;
  std::filesystem::path log() const;
};

struct TrainRunOptions {
  // Continue from P.last when it exists.
  bool resume = false;
  // Stop after this many epochs in total (counting resumed ones); negative runs to the end.
  int epoch_limit = -1;
  // Called for every log row as it is produced.
  std::function<void(const LogRow&)> on_row;
};

struct TrainResult {
  SeUNet model;  // final model
  std::vector<LogRow> log;
  std::optional<double> best_val_f2;
  std::int64_t steps = 0;
  bool finished = false;
};

// Mean F2 of the model's plain predictions against the instances of each sample.
double mean_f2_on(const SeUNet& model, const std::vector<Sample>& samples, const PostprocessConfig& post,
                  int workers = 1);

TrainResult train(const TrainConfig& config, const Dataset& data, const TrainSplit& split,
                  const TrainPaths& paths = {}, const TrainRunOptions& run = {});

// Convenience overload splitting by config.val_fraction.
TrainResult train(const TrainConfig& config, const Dataset& data, const TrainPaths& paths = {},
                  const TrainRunOptions& run = {});

}  // namespace seaseg
