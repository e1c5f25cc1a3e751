#include "seaseg/optim.hpp"

#include <cmath>

#include "seaseg/error.hpp"

namespace seaseg {

namespace {

constexpr double kPi = 3.14159265358979323846;

bool positive(double v) { return v > 0.0 && std::isfinite(v); }

}  // namespace

void AdamWConfig::validate() const {
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ValidationError("AdamW betas must be in [0, 1)");
  }
  if (!positive(eps)) throw ValidationError("AdamW epsilon must be positive");
  if (!(weight_decay >= 0.0 && std::isfinite(weight_decay))) throw ValidationError("weight decay must be >= 0");
  if (!(clip_norm >= 0.0 && std::isfinite(clip_norm))) throw ValidationError("clip norm must be >= 0");
}

template <typename T>
AdamW<T>::AdamW(AdamWConfig config) : config_(config) {
  config_.validate();
}

template <typename T>
void AdamW<T>::step(ParamStore<T>& params, const std::map<std::string, Tensor<T>>& grads, double lr) {
  if (!positive(lr)) throw ValidationError("learning rate must be positive");
  double sq = 0.0;
  for (const auto& [path, g] : grads) {
    if (g.shape() != params.at(path).shape()) {
      throw ShapeError("gradient for " + path + " has shape " + shape_str(g.shape()) + ", parameter has " +
                       shape_str(params.at(path).shape()));
    }
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      if (!std::isfinite(static_cast<double>(g[i]))) throw RuntimeError("non-finite gradient in " + path);
      sq += static_cast<double>(g[i]) * g[i];
    }
  }
  const double norm = std::sqrt(sq);
  const double clip = config_.clip_norm > 0.0 && norm > config_.clip_norm ? config_.clip_norm / norm : 1.0;

  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (const auto& [path, g] : grads) {
    auto theta = params.values(path);
    T* m = m_.try_emplace(path, g.shape()).first->second.ptr();
    T* v = v_.try_emplace(path, g.shape()).first->second.ptr();
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      const double gi = static_cast<double>(g[i]) * clip;
      const double mi = b1 * m[i] + (1.0 - b1) * gi;
      const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double th = theta[i];
      theta[i] = static_cast<T>(th - lr * (mi / c1) / (std::sqrt(vi / c2) + config_.eps) - lr * config_.weight_decay * th);
    }
  }
}

template <typename T>
nlohmann::json AdamW<T>::state_json() const {
  return {{"type", "adamw"},
          {"steps", steps_},
          {"beta1", config_.beta1},
          {"beta2", config_.beta2},
          {"eps", config_.eps},
          {"weight_decay", config_.weight_decay},
          {"clip_norm", config_.clip_norm}};
}

template <typename T>
std::map<std::string, Tensor<T>> AdamW<T>::state_arrays() const {
  std::map<std::string, Tensor<T>> out;
  for (const auto& [path, m] : m_) out.emplace("adam.m/" + path, m);
  for (const auto& [path, v] : v_) out.emplace("adam.v/" + path, v);
  return out;
}

template <typename T>
void AdamW<T>::load_state(const nlohmann::json& state, const std::map<std::string, Tensor<T>>& arrays) {
  try {
    if (state.at("type").get<std::string>() != "adamw") throw ValidationError("optimizer state is not AdamW");
    AdamWConfig cfg;
    cfg.beta1 = state.at("beta1").get<double>();
    cfg.beta2 = state.at("beta2").get<double>();
    cfg.eps = state.at("eps").get<double>();
    cfg.weight_decay = state.at("weight_decay").get<double>();
    cfg.clip_norm = state.at("clip_norm").get<double>();
    cfg.validate();
    config_ = cfg;
    steps_ = state.at("steps").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed optimizer state: ") + e.what());
  }
  m_.clear();
  v_.clear();
  for (const auto& [name, t] : arrays) {
    if (name.rfind("adam.m/", 0) == 0) m_.emplace(name.substr(7), t);
    if (name.rfind("adam.v/", 0) == 0) v_.emplace(name.substr(7), t);
  }
}

template class AdamW<float>;
template class AdamW<double>;

void StepSchedule::validate() const {
  if (!positive(base) || !positive(factor) || every < 1 || epochs < 0) {
    throw ValidationError("step schedule needs base > 0, factor > 0, every >= 1 and epochs >= 0");
  }
}

void SgdrSchedule::validate() const {
  if (!positive(eta_max) || !positive(eta_min) || eta_min > eta_max || !positive(cycle) || epochs < 0) {
    throw ValidationError("SGDR needs 0 < eta_min <= eta_max, a positive cycle and epochs >= 0");
  }
}

double step_lr(int epoch, const StepSchedule& s) {
  s.validate();
  if (epoch < 0 || epoch >= s.epochs) {
    throw ValidationError("epoch " + std::to_string(epoch) + " outside the step schedule [0, " +
                          std::to_string(s.epochs) + ")");
  }
  // Repeated division by 1/factor lands exactly on 1e-4 and 1e-5 in binary64.
  double lr = s.base;
  for (int k = 0; k < epoch / s.every; ++k) lr /= 1.0 / s.factor;
  return lr;
}

double sgdr_lr(double t, const SgdrSchedule& s) {
  s.validate();
  if (!(t >= 0.0) || !std::isfinite(t)) throw ValidationError("SGDR position must be finite and >= 0");
  const double u = std::fmod(t, s.cycle);
  return s.eta_min + 0.5 * (s.eta_max - s.eta_min) * (1.0 + std::cos(kPi * u / s.cycle));
}

void SwaState::absorb(const ParamStore<float>& params) {
  std::map<std::string, Tensor<double>> w;
  for (const auto& name : params.names()) w.emplace(name, params.at(name).cast<double>());
  absorb(w);
}

void SwaState::absorb(const std::map<std::string, Tensor<double>>& weights) {
  if (count_ > 0) {
    if (weights.size() != avg_.size()) throw ShapeError("SWA snapshot has a different parameter set");
    for (const auto& [name, w] : weights) {
      auto it = avg_.find(name);
      if (it == avg_.end() || it->second.shape() != w.shape()) {
        throw ShapeError("SWA snapshot does not match the average at " + name);
      }
    }
  }
  const double n1 = static_cast<double>(count_ + 1);
  for (const auto& [name, w] : weights) {
    if (count_ == 0) {
      avg_.insert_or_assign(name, w);
      continue;
    }
    Tensor<double>& a = avg_.at(name);
    for (std::int64_t i = 0; i < w.numel(); ++i) a[i] += (w[i] - a[i]) / n1;
  }
  ++count_;
}

void SwaState::install(ParamStore<float>& params) const {
  if (count_ == 0) throw ValidationError("SWA average is empty");
  for (const auto& [name, a] : avg_) params.assign(name, a.cast<float>());
}

void SwaState::restore(std::map<std::string, Tensor<double>> avg, std::int64_t count) {
  if (count < 0 || (count == 0) != avg.empty()) throw ValidationError("inconsistent SWA state");
  avg_ = std::move(avg);
  count_ = count;
}

void bn_recalibrate(SeUNet& model, const std::vector<Tensor<float>>& batches) {
  if (batches.empty()) throw ValidationError("batch-norm recalibration needs at least one batch");
  for (const auto& name : model.params().bn_names()) model.params().bn_stats(name).reset();
  BnOptions bn;
  bn.cumulative = true;
  for (const auto& batch : batches) {
    model.check_input(batch.shape());
    Tape<float> tape;
    tape.set_grad_enabled(false);
    ParamBinder<float> binder(tape, model.params(), false);
    model.forward(binder, tape.leaf(batch), BnMode::kTrain, bn);
  }
}

}  // namespace seaseg
