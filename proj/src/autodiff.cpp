#include "seaseg/autodiff.hpp"

#include <algorithm>

namespace seaseg {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kElu: return "elu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kMaximum: return "maximum";
    case OpKind::kGate: return "gate";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kMaxPool: return "maxpool2x2";
    case OpKind::kGlobalAvgPool: return "global_avg_pool";
    case OpKind::kUpsample: return "upsample_bilinear2x";
    case OpKind::kBatchNorm: return "batchnorm";
    case OpKind::kConcat: return "concat_channels";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kSum: return "sum";
    case OpKind::kWeightedSum: return "weighted_sum";
    case OpKind::kCrossEntropy: return "cross_entropy";
    case OpKind::kSoftJaccard: return "soft_jaccard";
    case OpKind::kLovasz: return "lovasz_softmax";
  }
  return "?";
}

template <typename T>
Tensor<T> Gradients<T>::of(Var<T> v) const {
  if (has(v)) return grads_[static_cast<std::size_t>(v.id)];
  return Tensor<T>(v.shape());
}

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  Node& n = nodes_.emplace_back();
  n.kind = OpKind::kLeaf;
  n.owned = std::move(value);
  n.requires_grad = requires_grad;
  return {this, static_cast<int>(nodes_.size() - 1)};
}

template <typename T>
Var<T> Tape<T>::param(const Tensor<T>& value, bool requires_grad) {
  Node& n = nodes_.emplace_back();
  n.kind = OpKind::kLeaf;
  n.external = &value;
  n.requires_grad = requires_grad;
  return {this, static_cast<int>(nodes_.size() - 1)};
}

template <typename T>
Var<T> Tape<T>::record(OpKind kind, std::vector<int> inputs, Tensor<T> value, BackwardFn<T> backward) {
  const int id = static_cast<int>(nodes_.size());
  bool needs = false;
  for (int in : inputs) {
    if (in < 0 || in >= id) throw ValidationError("tape input id out of order");
    needs = needs || nodes_[static_cast<std::size_t>(in)].requires_grad;
  }
  Node& n = nodes_.emplace_back();
  n.kind = kind;
  n.inputs = std::move(inputs);
  n.owned = std::move(value);
  n.requires_grad = needs && grad_enabled_;
  if (n.requires_grad) n.backward = std::move(backward);
  return {this, id};
}

template <typename T>
std::size_t Tape<T>::count(OpKind kind) const {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [kind](const Node& n) { return n.kind == kind; }));
}

template <typename T>
Gradients<T> Tape<T>::backward(Var<T> loss) const {
  if (loss.tape != this) throw ValidationError("backward: loss belongs to a different tape");
  const Node& root = node(loss.id);
  if (root.value().numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + shape_str(root.value().shape()));
  }
  const std::size_t count = static_cast<std::size_t>(loss.id) + 1;
  std::vector<Tensor<T>> grads(count);
  std::vector<bool> present(count, false);
  if (!root.requires_grad) return Gradients<T>(std::move(grads), std::move(present));

  grads[count - 1] = Tensor<T>(root.value().shape(), T(1));
  present[count - 1] = true;

  for (int id = loss.id; id >= 0; --id) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!present[id] || n.kind == OpKind::kLeaf || !n.backward) continue;
    std::vector<Tensor<T>*> slots(n.inputs.size(), nullptr);
    std::vector<const Tensor<T>*> inputs(n.inputs.size());
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      const int in = n.inputs[k];
      inputs[k] = &value(in);
      if (!nodes_[static_cast<std::size_t>(in)].requires_grad) continue;
      if (!present[in]) {
        grads[in] = Tensor<T>(value(in).shape());
        present[in] = true;
      }
      slots[k] = &grads[in];
    }
    n.backward(grads[id], GradSlots<T>(std::move(slots), std::move(inputs), &n.value()));
    // Interior gradients are no longer needed once propagated.
    grads[id] = Tensor<T>();
    present[id] = false;
  }
  return Gradients<T>(std::move(grads), std::move(present));
}

template class Tape<float>;
template class Tape<double>;
template class Gradients<float>;
template class Gradients<double>;

}  // namespace seaseg
