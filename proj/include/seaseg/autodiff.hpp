#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "seaseg/tensor.hpp"

namespace seaseg {

enum class OpKind {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kScale,
  kElu,
  kSigmoid,
  kMaximum,
  kGate,  // squeeze-and-excitation re-weighting
  kConv2d,
  kMaxPool,
  kGlobalAvgPool,
  kUpsample,
  kBatchNorm,
  kConcat,
  kSoftmax,
  kSum,
  kWeightedSum,
  kCrossEntropy,
  kSoftJaccard,
  kLovasz,
};

const char* op_name(OpKind kind);

template <typename T>
class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
};

// Accumulators for the inputs of one node during backward. get(k) returns nullptr when
// input k needs no gradient; otherwise a zero-initialised buffer shaped like the input.
template <typename T>
class GradSlots {
 public:
  GradSlots(std::vector<Tensor<T>*> slots, std::vector<const Tensor<T>*> inputs, const Tensor<T>* output)
      : slots_(std::move(slots)), inputs_(std::move(inputs)), output_(output) {}
  // Gradient accumulator for input k; null when that input does not require a gradient.
  Tensor<T>* get(std::size_t k) const { return slots_[k]; }
  // Forward value of input k.
  const Tensor<T>& input(std::size_t k) const { return *inputs_[k]; }
  // Forward value of the node being differentiated.
  const Tensor<T>& output() const { return *output_; }

 private:
  std::vector<Tensor<T>*> slots_;
  std::vector<const Tensor<T>*> inputs_;
  const Tensor<T>* output_;
};

template <typename T>
using BackwardFn = std::function<void(const Tensor<T>& grad_out, const GradSlots<T>& slots)>;

// Gradients of every requires-grad leaf, indexed by node id.
template <typename T>
class Gradients {
 public:
  Gradients(std::vector<Tensor<T>> grads, std::vector<bool> present)
      : grads_(std::move(grads)), present_(std::move(present)) {}

  bool has(Var<T> v) const {
    return v.id >= 0 && static_cast<std::size_t>(v.id) < present_.size() && present_[v.id];
  }
  // Gradient for v; zeros when v did not receive any.
  Tensor<T> of(Var<T> v) const;

 private:
  std::vector<Tensor<T>> grads_;
  std::vector<bool> present_;
};

// Append-only record of operations. Node ids increase and every input id is smaller than the
// id of the node consuming it, so reverse id order is a valid topological order.
template <typename T>
class Tape {
 public:
  struct Node {
    OpKind kind = OpKind::kLeaf;
    std::vector<int> inputs;
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    bool requires_grad = false;
    BackwardFn<T> backward;

    const Tensor<T>& value() const { return external ? *external : owned; }
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // When disabled, no backward closures are kept (inference).
  void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
  bool grad_enabled() const { return grad_enabled_; }

  Var<T> leaf(Tensor<T> value, bool requires_grad = false);
  // Non-owning leaf; `value` must outlive the tape.
  Var<T> param(const Tensor<T>& value, bool requires_grad = true);

  Var<T> record(OpKind kind, std::vector<int> inputs, Tensor<T> value, BackwardFn<T> backward);

  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  const Tensor<T>& value(int id) const { return node(id).value(); }
  std::size_t size() const { return nodes_.size(); }
  std::size_t count(OpKind kind) const;

  // Reverse sweep from a scalar. The tape is left untouched, so calling this twice gives
  // identical results.
  Gradients<T> backward(Var<T> loss) const;

 private:
  std::deque<Node> nodes_;
  bool grad_enabled_ = true;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape->value(id);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape->node(id).requires_grad;
}

extern template class Tape<float>;
extern template class Tape<double>;
extern template class Gradients<float>;
extern template class Gradients<double>;

}  // namespace seaseg
