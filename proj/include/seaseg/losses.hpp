#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "seaseg/ops.hpp"

namespace seaseg {

// Per-pixel class indices, shape N×H×W.
using LabelMap = Tensor<std::int32_t>;

enum class IouTerm { kJaccard, kLovasz, kNone };

struct LossConfig {
  double alpha = 0.7;
  IouTerm iou_term = IouTerm::kLovasz;
  double epsilon = 1e-7;

  void validate() const;
};

// Mean over pixels of -log(max(p_true, 1e-12)). probs: N×C×H×W.
template <typename T>
Var<T> cross_entropy(Var<T> probs, const LabelMap& labels);

// 1 - mean_c J_c with J_c = (Σ y·p + eps) / (Σ (y + p - y·p) + eps), sums over every pixel of
// the batch.
template <typename T>
Var<T> soft_jaccard_loss(Var<T> probs, const LabelMap& labels, double eps = 1e-7);

template <typename T>
std::vector<T> soft_jaccard_per_class(const Tensor<T>& probs, const LabelMap& labels, double eps = 1e-7);

// Lovász extension of the per-class Jaccard loss over sorted errors, averaged over the classes
// that occur in the labels. Pixels of the whole batch form one set. Ties in the error sort keep
// pixel order. An empty label map gives 0.
template <typename T>
Var<T> lovasz_softmax(Var<T> probs, const LabelMap& labels);

// Per-class Lovász losses; nullopt for classes absent from the labels.
template <typename T>
std::vector<std::optional<T>> lovasz_per_class(const Tensor<T>& probs, const LabelMap& labels);

// alpha·IoU term + (1 - alpha)·CE. With IouTerm::kNone the result is CE alone.
template <typename T>
Var<T> combined_loss(Var<T> probs, const LabelMap& labels, const LossConfig& config);

}  // namespace seaseg
