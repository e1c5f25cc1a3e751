#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "seaseg/model.hpp"

namespace seaseg {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  // Global-norm gradient clipping; 0 disables it.
  double clip_norm = 0.0;
  void validate() const;
};

// Adam with decoupled weight decay:
//   m ← β1·m + (1−β1)·g,  v ← β2·v + (1−β2)·g²,  θ ← θ − lr·m̂/(√v̂+ε) − lr·λ·θ
// Moments live in the parameter precision; the update itself is computed in double.
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {});

  // Updates every parameter that has a gradient. Throws RuntimeError naming the parameter
  // when a gradient is not finite; nothing is modified in that case.
  void step(ParamStore<T>& params, const std::map<std::string, Tensor<T>>& grads, double lr);

  const AdamWConfig& config() const { return config_; }
  std::int64_t steps() const { return steps_; }
  const std::map<std::string, Tensor<T>>& first_moments() const { return m_; }
  const std::map<std::string, Tensor<T>>& second_moments() const { return v_; }

  nlohmann::json state_json() const;
  // Moment arrays keyed "adam.m/<path>" and "adam.v/<path>".
  std::map<std::string, Tensor<T>> state_arrays() const;
  void load_state(const nlohmann::json& state, const std::map<std::string, Tensor<T>>& arrays);

 private:
  AdamWConfig config_;
  std::int64_t steps_ = 0;
  std::map<std::string, Tensor<T>> m_;
  std::map<std::string, Tensor<T>> v_;
};

// Piecewise-constant decay: base, then ×factor every `every` epochs.
struct StepSchedule {
  double base = 1e-3;
  double factor = 0.1;
  int every = 20;
  int epochs = 60;
  void validate() const;
};

// Cosine annealing with warm restarts.
struct SgdrSchedule {
  double eta_max = 1e-5;
  double eta_min = 1e-7;
  double cycle = 6.0;
  int epochs = 36;
  void validate() const;
};

double step_lr(int epoch, const StepSchedule& s = {});
// t is the position inside the current cycle, in epochs; values past a cycle boundary restart.
double sgdr_lr(double t, const SgdrSchedule& s = {});

// Running mean of parameter snapshots in double precision.
class SwaState {
 public:
  void absorb(const ParamStore<float>& params);
  void absorb(const std::map<std::string, Tensor<double>>& weights);
  std::int64_t count() const { return count_; }
  const std::map<std::string, Tensor<double>>& average() const { return avg_; }
  // Copies the average into the parameters (running BN statistics are untouched).
  void install(ParamStore<float>& params) const;
  void restore(std::map<std::string, Tensor<double>> avg, std::int64_t count);

 private:
  std::map<std::string, Tensor<double>> avg_;
  std::int64_t count_ = 0;
};

// Recomputes every batch-norm running statistic as the average over the given batches in train
// mode. Weights are not touched. A single batch yields exactly that batch's statistics.
void bn_recalibrate(SeUNet& model, const std::vector<Tensor<float>>& batches);

}  // namespace seaseg
