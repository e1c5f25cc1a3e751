#include "seaseg/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "seaseg/checkpoint.hpp"
#include "seaseg/error.hpp"
#include "seaseg/metrics.hpp"
#include "seaseg/parallel.hpp"

namespace seaseg {

namespace {

constexpr std::uint64_t kTagSplit = 0x73706c6974ULL;
constexpr std::uint64_t kTagSampler = 0x73616d70ULL;
constexpr std::uint64_t kTagBatch = 0x6261746368ULL;
constexpr std::uint64_t kTagInit = 0x696e6974ULL;
constexpr std::uint64_t kTagRecal = 0x726563616cULL;

std::filesystem::path with_suffix(const std::filesystem::path& p, const char* suffix) {
  return std::filesystem::path(p.string() + suffix);
}

Tensor<float> as_batch(const std::vector<Tensor<float>>& images) {
  const Shape& s = images.front().shape();
  Tensor<float> out(Shape{static_cast<int>(images.size()), s[0], s[1], s[2]});
  std::int64_t off = 0;
  for (const auto& img : images) {
    if (img.shape() != s) {
      throw ShapeError("cannot batch images of shapes " + shape_str(s) + " and " + shape_str(img.shape()) +
                       "; set a crop size");
    }
    std::copy(img.ptr(), img.ptr() + img.numel(), out.ptr() + off);
    off += img.numel();
  }
  return out;
}

std::vector<Sample> load_all(const Dataset& data, const std::vector<std::string>& ids, bool half_scale, int workers) {
  std::vector<Sample> out(ids.size());
  parallel_for(ids.size(), workers, [&](std::size_t i) { out[i] = load_sample(data, ids[i], half_scale); });
  return out;
}

nlohmann::json log_to_json(const std::vector<LogRow>& log) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : log) {
    rows.push_back({r.epoch, r.phase, r.lr, r.train_loss,
                    r.val_mean_f2 ? nlohmann::json(*r.val_mean_f2) : nlohmann::json(nullptr)});
  }
  return rows;
}

std::vector<LogRow> log_from_json(const nlohmann::json& rows) {
  std::vector<LogRow> log;
  for (const auto& r : rows) {
    LogRow row{r.at(0).get<int>(), r.at(1).get<std::string>(), r.at(2).get<double>(), r.at(3).get<double>(), {}};
    if (!r.at(4).is_null()) row.val_mean_f2 = r.at(4).get<double>();
    log.push_back(row);
  }
  return log;
}

void write_log(const std::filesystem::path& path, const std::vector<LogRow>& log) {
  const auto tmp = with_suffix(path, ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeError("cannot write training log " + tmp.string());
    out << log_header() << '\n';
    for (const auto& r : log) out << format_log_row(r) << '\n';
    if (!out) throw RuntimeError("failed writing training log " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

class Loop {
 public:
  std::function<void(const LogRow&)> on_row_;

  Loop(const TrainConfig& cfg, const Dataset& data, const TrainSplit& split, const TrainPaths& paths)
      : cfg_(cfg),
        paths_(paths),
        train_(load_all(data, split.train, cfg.half_scale, cfg.workers)),
        val_(load_all(data, split.val, cfg.half_scale, cfg.workers)),
        model_(SeUNet::build(cfg.model, derive_seed(cfg.seed, {kTagInit}))),
        best_(model_),
        opt_(cfg.optim),
        sampler_(stratify(data.manifest, split.train), derive_seed(cfg.seed, {kTagSampler})) {
    spe_ = cfg.steps_per_epoch > 0
               ? cfg.steps_per_epoch
               : static_cast<int>((train_.size() + static_cast<std::size_t>(cfg.batch_size) - 1) / cfg.batch_size);
  }

  void resume(const std::filesystem::path& last) {
    LoadedCheckpoint ck = load_checkpoint(last);
    if (!(ck.model.config() == cfg_.model)) throw ValidationError("resume checkpoint has a different model config");
    const auto& meta = ck.extras.meta;
    try {
      if (meta.at("seed").get<std::uint64_t>() != cfg_.seed) throw ValidationError("resume checkpoint has another seed");
      epoch_ = meta.at("next_epoch").get<int>();
      step_ = meta.at("step").get<std::int64_t>();
      sampler_.advance_to(meta.at("sampler_draws").get<std::uint64_t>());
      if (!meta.at("best_val_f2").is_null()) best_f2_ = meta.at("best_val_f2").get<double>();
      log_ = log_from_json(meta.at("log"));
      std::map<std::string, Tensor<double>> avg;
      for (auto& [name, t] : ck.extras.f64) {
        if (name.rfind("swa/", 0) == 0) avg.emplace(name.substr(4), std::move(t));
      }
      swa_.restore(std::move(avg), meta.at("swa_count").get<std::int64_t>());
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("malformed resume state: ") + e.what());
    }
    opt_.load_state(ck.extras.optimizer, ck.extras.f32);
    model_ = std::move(ck.model);
    best_ = std::filesystem::exists(paths_.best()) ? load_checkpoint(paths_.best()).model : model_;
  }

  TrainResult run(int epoch_limit) {
    const int total = cfg_.total_epochs();
    const int stop = epoch_limit < 0 ? total : std::min(total, epoch_limit);
    for (; epoch_ < stop; ++epoch_) run_epoch();
    const bool finished = epoch_ >= total;
    SeUNet final_model = finished ? finish() : model_;
    TrainResult result{std::move(final_model), log_, best_f2_, step_, finished};
    if (finished) {
      if (paths_.enabled()) {
        save_checkpoint(paths_.final_checkpoint, result.model, final_extras());
        write_log(paths_.log(), log_);
      }
    }
    return result;
  }

 private:
  void run_epoch() {
    const bool phase1 = epoch_ < cfg_.phase1.epochs;
    const double epoch_lr = phase1 ? step_lr(epoch_, cfg_.phase1) : sgdr_lr(cycle_pos(0), cfg_.phase2);
    double loss_sum = 0.0;
    for (int s = 0; s < spe_; ++s) {
      const double lr = phase1 ? epoch_lr : sgdr_lr(cycle_pos(s), cfg_.phase2);
      loss_sum += train_step(lr, s);
    }
    LogRow row{epoch_, phase1 ? "step" : "sgdr", epoch_lr, loss_sum / spe_, validate(model_)};
    log_.push_back(row);
    if (on_row_) on_row_(row);

    if (phase1) {
      if (!best_f2_ || !row.val_mean_f2 || *row.val_mean_f2 > *best_f2_) {
        if (row.val_mean_f2) best_f2_ = row.val_mean_f2;
        best_ = model_;
        if (paths_.enabled()) save_checkpoint(paths_.best(), best_, {});
      }
    } else {
      const double t = epoch_ - cfg_.phase1.epochs;
      if (std::floor((t + 1) / cfg_.phase2.cycle) > std::floor(t / cfg_.phase2.cycle)) swa_.absorb(model_.params());
    }
    if (paths_.enabled()) {
      save_checkpoint(paths_.last(), model_, resume_extras());
      write_log(paths_.log(), log_);
    }
  }

  double cycle_pos(int step_in_epoch) const {
    const double t = (epoch_ - cfg_.phase1.epochs) + static_cast<double>(step_in_epoch) / spe_;
    return std::fmod(t, cfg_.phase2.cycle);
  }

  struct Batch {
    Tensor<float> x;
    LabelMap labels;
  };

  // Draws batch_size items from the sampler and prepares them with a random stream keyed by
  // (tag, index), so a batch never depends on worker scheduling.
  Batch make_batch(std::uint64_t tag, std::uint64_t index) {
    const int bsz = cfg_.batch_size;
    std::vector<std::size_t> picks(static_cast<std::size_t>(bsz));
    for (auto& p : picks) p = sampler_.next();
    std::vector<std::optional<Crop>> crops(picks.size());
    parallel_for(picks.size(), cfg_.workers, [&](std::size_t b) {
      Rng rng(derive_seed(cfg_.seed, {tag, index, b}));
      const Sample& s = train_[picks[b]];
      Crop c = cfg_.crop_size > 0 ? smart_scale_crop(s.image, s.instances, cfg_.crop_size, rng, cfg_.scale_crop)
                                  : Crop{s.image, s.instances.union_mask()};
      if (cfg_.augment) c = augment(c, sample_augment(rng, cfg_.augment_config));
      c.image = normalize_unit(c.image);
      crops[b] = std::move(c);
    });
    std::vector<Tensor<float>> images;
    for (const auto& c : crops) images.push_back(c->image);
    Batch batch{as_batch(images), {}};
    const std::int64_t hw = static_cast<std::int64_t>(batch.x.dim(2)) * batch.x.dim(3);
    batch.labels = LabelMap(Shape{bsz, batch.x.dim(2), batch.x.dim(3)});
    for (int b = 0; b < bsz; ++b) {
      for (std::int64_t i = 0; i < hw; ++i) batch.labels[b * hw + i] = crops[b]->mask[i] ? 1 : 0;
    }
    return batch;
  }

  double train_step(double lr, int step_in_epoch) {
    const Batch batch = make_batch(kTagBatch, static_cast<std::uint64_t>(step_));
    const Tensor<float>& x = batch.x;
    const LabelMap& labels = batch.labels;
    Tape<float> tape;
    ParamBinder<float> binder(tape, model_.params());
    const Var<float> probs = model_.forward(binder, tape.leaf(x), BnMode::kTrain);
    const Var<float> loss = combined_loss(probs, labels, cfg_.loss);
    const double value = loss.value().item();
    if (!std::isfinite(value)) {
      throw RuntimeError("non-finite loss at epoch " + std::to_string(epoch_) + ", step " +
                         std::to_string(step_in_epoch) + " (global step " + std::to_string(step_) + ")");
    }
    try {
      opt_.step(model_.params(), binder.gradients(tape.backward(loss)), lr);
    } catch (const RuntimeError& e) {
      throw RuntimeError(std::string(e.what()) + " at epoch " + std::to_string(epoch_) + ", step " +
                         std::to_string(step_in_epoch));
    }
    ++step_;
    return value;
  }

  std::optional<double> validate(const SeUNet& model) const {
    if (val_.empty()) return std::nullopt;
    return mean_f2_on(model, val_, cfg_.postprocess, cfg_.workers);
  }

  SeUNet finish() {
    if (swa_.count() == 0) return best_;
    SeUNet avg = model_;
    swa_.install(avg.params());
    if (cfg_.bn_recalibration) {
      // One epoch of batches from the training pipeline, so the statistics match what the
      // weights were trained on.
      std::vector<Tensor<float>> batches;
      for (int s = 0; s < spe_; ++s) batches.push_back(make_batch(kTagRecal, static_cast<std::uint64_t>(s)).x);
      bn_recalibrate(avg, batches);
    }
    // The averaged model is not trained further, so its row reports the eval-mode loss on the
    // training images at zero learning rate.
    log_.push_back({cfg_.total_epochs(), "swa", 0.0, eval_loss(avg), validate(avg)});
    if (on_row_) on_row_(log_.back());
    return avg;
  }

  double eval_loss(const SeUNet& model) const {
    double total = 0.0;
    for (const auto& s : train_) {
      const Tensor<float> x = normalize_unit(s.image);
      const int h = x.dim(1), w = x.dim(2);
      Tape<float> tape;
      tape.set_grad_enabled(false);
      const Var<float> probs = tape.leaf(model.predict(as_batch({x})));
      const BinaryMask m = s.instances.union_mask();
      LabelMap labels(Shape{1, h, w});
      for (std::int64_t i = 0; i < labels.numel(); ++i) labels[i] = m[i] ? 1 : 0;
      total += combined_loss(probs, labels, cfg_.loss).value().item();
    }
    return total / static_cast<double>(train_.size());
  }

  CheckpointExtras resume_extras() const {
    CheckpointExtras ex;
    ex.meta = {{"seed", cfg_.seed},
               {"next_epoch", epoch_ + 1},
               {"step", step_},
               {"sampler_draws", sampler_.draws()},
               {"best_val_f2", best_f2_ ? nlohmann::json(*best_f2_) : nlohmann::json(nullptr)},
               {"swa_count", swa_.count()},
               {"log", log_to_json(log_)}};
    ex.optimizer = opt_.state_json();
    ex.f32 = opt_.state_arrays();
    for (const auto& [name, t] : swa_.average()) ex.f64.emplace("swa/" + name, t);
    return ex;
  }

  CheckpointExtras final_extras() const {
    CheckpointExtras ex;
    ex.meta = {{"seed", cfg_.seed},
               {"steps", step_},
               {"swa_snapshots", swa_.count()},
               {"half_scale", cfg_.half_scale},
               {"val_fraction", cfg_.val_fraction},
               {"best_val_f2", best_f2_ ? nlohmann::json(*best_f2_) : nlohmann::json(nullptr)}};
    return ex;
  }

  TrainConfig cfg_;
  TrainPaths paths_;
  std::vector<Sample> train_;
  std::vector<Sample> val_;
  SeUNet model_;
  SeUNet best_;
  AdamW<float> opt_;
  StratifiedSampler sampler_;
  SwaState swa_;
  std::vector<LogRow> log_;
  std::optional<double> best_f2_;
  int spe_ = 1;
  int epoch_ = 0;
  std::int64_t step_ = 0;
};

}  // namespace

TrainConfig TrainConfig::toy() { return TrainConfig{}; }

TrainConfig TrainConfig::paper() {
  TrainConfig c;
  c.model = ModelConfig::paper();
  c.phase1 = {1e-3, 0.1, 20, 60};
  c.phase2 = {1e-5, 1e-7, 6.0, 36};
  c.half_scale = true;
  return c;
}

void TrainConfig::validate() const {
  model.validate();
  loss.validate();
  optim.validate();
  phase1.validate();
  phase2.validate();
  scale_crop.validate();
  augment_config.validate();
  postprocess.validate();
  if (model.num_classes != 2) throw ValidationError("training expects a two-class (sea, ship) model");
  if (batch_size < 1) throw ValidationError("batch size must be at least 1");
  if (crop_size < 0 || crop_size % 16 != 0) throw ValidationError("crop size must be 0 or a positive multiple of 16");
  if (steps_per_epoch < 0) throw ValidationError("steps per epoch must be >= 0");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ValidationError("validation fraction must be in [0, 1)");
  if (workers < 1) throw ValidationError("workers must be at least 1");
  if (total_epochs() < 1) throw ValidationError("at least one epoch is required");
}

TrainSplit split_ids(const Manifest& manifest, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ValidationError("validation fraction must be in [0, 1)");
  const auto& ids = manifest.image_ids();
  std::vector<std::size_t> order(ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, {kTagSplit}));
  shuffle(order, rng);
  const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(ids.size()) * val_fraction));
  std::vector<bool> is_val(ids.size(), false);
  for (std::size_t k = 0; k < n_val; ++k) is_val[order[k]] = true;
  TrainSplit split;
  for (std::size_t i = 0; i < ids.size(); ++i) (is_val[i] ? split.val : split.train).push_back(ids[i]);
  return split;
}

std::string log_header() { return "epoch,phase,lr,train_loss,val_mean_f2"; }

std::string format_log_row(const LogRow& row) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d,%s,%.6e,%.6f,", row.epoch, row.phase.c_str(), row.lr, row.train_loss);
  std::string s = buf;
  if (row.val_mean_f2) {
    std::snprintf(buf, sizeof buf, "%.6f", *row.val_mean_f2);
    s += buf;
  }
  return s;
}

std::filesystem::path TrainPaths::best() const { return with_suffix(final_checkpoint, ".best"); }
std::filesystem::path TrainPaths::last() const { return with_suffix(final_checkpoint, ".last"); }
std::filesystem::path TrainPaths::log() const { return with_suffix(final_checkpoint, ".log.csv"); }

double mean_f2_on(const SeUNet& model, const std::vector<Sample>& samples, const PostprocessConfig& post, int workers) {
  if (samples.empty()) throw ValidationError("mean F2 needs at least one sample");
  std::vector<double> scores(samples.size());
  parallel_for(samples.size(), workers, [&](std::size_t i) {
    const Sample& s = samples[i];
    const Tensor<float> x = normalize_unit(s.image);
    const Tensor<float> probs =
        model.predict(Tensor<float>(Shape{1, x.dim(0), x.dim(1), x.dim(2)}, std::vector<float>(x.data().begin(), x.data().end())));
    scores[i] = mean_f2(probs_to_instances(probs, post), s.instances);
  });
  double total = 0.0;
  for (double v : scores) total += v;
  return total / static_cast<double>(scores.size());
}

TrainResult train(const TrainConfig& config, const Dataset& data, const TrainSplit& split, const TrainPaths& paths,
                  const TrainRunOptions& run) {
  config.validate();
  if (split.train.empty()) throw ValidationError("training split is empty");
  Loop loop(config, data, split, paths);
  loop.on_row_ = run.on_row;
  if (run.resume) {
    if (!paths.enabled()) throw ValidationError("resuming needs an output checkpoint path");
    if (std::filesystem::exists(paths.last())) loop.resume(paths.last());
  }
  return loop.run(run.epoch_limit);
}

TrainResult train(const TrainConfig& config, const Dataset& data, const TrainPaths& paths, const TrainRunOptions& run) {
  config.validate();
  return train(config, data, split_ids(data.manifest, config.val_fraction, config.seed), paths, run);
}

}  // namespace seaseg
