#pragma once

#include <optional>
#include <type_traits>

#include "seaseg/autodiff.hpp"

// Differentiable operations recorded on a Tape. Binary elementwise ops accept a second operand
// that is either the same shape, a single element, or rank-4 with every dimension equal to the
// first operand's or 1 (per-channel N×C×1×1, per-pixel N×1×H×W, ...).
namespace seaseg {

template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T factor);
template <typename T> Var<T> elu(Var<T> a, T alpha = T(1));
template <typename T> Var<T> sigmoid(Var<T> a);
template <typename T> Var<T> maximum(Var<T> a, Var<T> b);

// x re-weighted by a broadcast gate (N×C×1×1 or N×1×H×W). Same maths as mul(); recorded as
// OpKind::kGate so attention blocks are visible in the graph.
template <typename T> Var<T> gate(Var<T> x, Var<T> weights);

// x: N×C×H×W, w: O×C×K×K, bias: O. Output spatial size floor((H + 2p - K)/stride) + 1.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, std::optional<std::type_identity_t<Var<T>>> bias, int stride,
              int padding);

template <typename T> Var<T> maxpool2x2(Var<T> x);
template <typename T> Var<T> global_avg_pool(Var<T> x);
// Half-pixel convention (align_corners = false), edges clamped.
template <typename T> Var<T> upsample_bilinear2x(Var<T> x);

enum class BnMode { kTrain, kEval };

template <typename T>
struct BnRunning {
  Tensor<T> mean;
  Tensor<T> var;
  // Batches absorbed since the last reset; used by cumulative averaging.
  long long batches = 0;

  explicit BnRunning(int channels = 0) : mean(Shape{channels}, T(0)), var(Shape{channels}, T(1)) {}
  void reset() {
    mean.fill(T(0));
    var.fill(T(1));
    batches = 0;
  }
};

struct BnOptions {
  double eps = 1e-5;
  double momentum = 0.1;
  // Running stats become the arithmetic mean of all batch statistics since reset().
  bool cumulative = false;
};

// Train mode normalises with biased batch statistics and updates `running`; eval mode uses
// `running`. gamma, beta: shape (C).
template <typename T>
Var<T> batchnorm(Var<T> x, Var<T> gamma, Var<T> beta, BnRunning<T>& running, BnMode mode,
                 const BnOptions& options = {});

template <typename T> Var<T> concat_channels(Var<T> a, Var<T> b);
template <typename T> Var<T> softmax_channels(Var<T> x);
template <typename T> Var<T> sum(Var<T> x);
// Σ w ⊙ x for a constant weight tensor of x's shape.
template <typename T> Var<T> weighted_sum(Var<T> x, const Tensor<T>& weights);

}  // namespace seaseg
