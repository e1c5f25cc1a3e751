#pragma once

// Central finite-difference oracle. Independent of the tape: it only evaluates the forward
// function on perturbed copies of its inputs.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <vector>

#include "seaseg/autodiff.hpp"
#include "seaseg/nn.hpp"
#include "seaseg/tensor.hpp"

namespace seaseg::testing {

inline Tensor<double> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -2.0,
                                    double hi = 2.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<double> t(shape);
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
  return t;
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps entries whose true derivative
// is ~0 from dividing round-off by round-off.
inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// f builds a scalar on a fresh tape from leaves holding `inputs`. Compares tape gradients for
// every input element against central differences with step h.
inline GradCheckResult gradcheck(
    const std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>& f,
    std::vector<Tensor<double>> inputs, double h = 1e-5) {
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& t : inputs) vars.push_back(tape.leaf(t, true));
    Var<double> out = f(tape, vars);
    Gradients<double> grads = tape.backward(out);
    for (const auto& v : vars) analytic.push_back(grads.of(v));
  }
  auto eval = [&](const std::vector<Tensor<double>>& xs) {
    Tape<double> tape;
    tape.set_grad_enabled(false);
    std::vector<Var<double>> vars;
    for (const auto& t : xs) vars.push_back(tape.leaf(t, false));
    return f(tape, vars).value().item();
  };
  GradCheckResult result;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::int64_t i = 0; i < inputs[k].numel(); ++i) {
      const double orig = inputs[k][i];
      inputs[k][i] = orig + h;
      const double fp = eval(inputs);
      inputs[k][i] = orig - h;
      const double fm = eval(inputs);
      inputs[k][i] = orig;
      const double numeric = (fp - fm) / (2 * h);
      const double a = analytic[k][i];
      result.max_rel_error = std::max(result.max_rel_error, rel_error(a, numeric));
      result.max_abs_error = std::max(result.max_abs_error, std::abs(a - numeric));
    }
  }
  return result;
}

using LayerFn = std::function<Var<double>(LayerContext<double>&, Var<double>)>;

inline Tensor<double> projection_weights(const Shape& shape) {
  std::mt19937_64 rng(99);
  return random_tensor(shape, rng, -1.0, 1.0);
}

// Finite differences over the input and every parameter of `store`, perturbing store entries
// in place. The layer output is scalarised by a fixed random projection.
inline double layer_grad_error(ParamStore<double>& store, const LayerFn& layer, Tensor<double> x,
                        double h = 1e-5) {
  auto run = [&](const Tensor<double>& input, bool grad, std::map<std::string, Tensor<double>>* pg,
                 Tensor<double>* xg) {
    Tape<double> tape;
    tape.set_grad_enabled(grad);
    ParamBinder<double> binder(tape, store, grad);
    for (const auto& name : store.names()) binder(name);
    LayerContext<double> ctx{binder};
    Var<double> xv = tape.leaf(input, grad);
    Var<double> y = layer(ctx, xv);
    Var<double> loss = weighted_sum(y, projection_weights(y.shape()));
    if (grad) {
      Gradients<double> g = tape.backward(loss);
      *pg = binder.gradients(g);
      *xg = g.of(xv);
    }
    return loss.value().item();
  };
  std::map<std::string, Tensor<double>> param_grads;
  Tensor<double> x_grad;
  run(x, true, &param_grads, &x_grad);

  double worst = 0.0;
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double fp = run(x, false, nullptr, nullptr);
    x[i] = orig - h;
    const double fm = run(x, false, nullptr, nullptr);
    x[i] = orig;
    worst = std::max(worst, rel_error(x_grad[i], (fp - fm) / (2 * h)));
  }
  for (const auto& name : store.names()) {
    auto values = store.values(name);
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      values[i] = orig + h;
      const double fp = run(x, false, nullptr, nullptr);
      values[i] = orig - h;
      const double fm = run(x, false, nullptr, nullptr);
      values[i] = orig;
      worst = std::max(worst, rel_error(param_grads.at(name)[i], (fp - fm) / (2 * h)));
    }
  }
  return worst;
}

// Overwrites every parameter with uniform noise so biases and BN affine terms are exercised.
inline void randomize(ParamStore<double>& store, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (const auto& name : store.names()) {
    store.assign(name, random_tensor(store.at(name).shape(), rng, -0.8, 0.8));
  }
}

}  // namespace seaseg::testing
