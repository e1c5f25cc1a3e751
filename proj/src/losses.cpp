#include "seaseg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace seaseg {

namespace {

constexpr double kProbFloor = 1e-12;

// Validates probs against labels and returns (classes, pixels per sample).
template <typename T>
std::pair<int, std::int64_t> check_pair(const Tensor<T>& probs, const LabelMap& labels, const char* what) {
  if (probs.rank() != 4 || labels.rank() != 3 || probs.dim(0) != labels.dim(0) || probs.dim(2) != labels.dim(1) ||
      probs.dim(3) != labels.dim(2)) {
    throw ShapeError(std::string(what) + ": probabilities " + shape_str(probs.shape()) + " do not match labels " +
                     shape_str(labels.shape()));
  }
  const int c = probs.dim(1);
  for (std::int64_t i = 0; i < labels.numel(); ++i) {
    if (labels[i] < 0 || labels[i] >= c) {
      throw ValidationError(std::string(what) + ": label " + std::to_string(labels[i]) + " outside [0," +
                            std::to_string(c) + ")");
    }
  }
  return {c, static_cast<std::int64_t>(probs.dim(2)) * probs.dim(3)};
}

// Index of pixel i's class-c probability in an N×C×H×W buffer, i running over N×H×W.
inline std::int64_t prob_index(std::int64_t i, int c, int classes, std::int64_t hw) {
  return (i / hw * classes + c) * hw + i % hw;
}

// Sorted order and Jaccard-extension weights for one class. Returns false when the class is
// absent from the labels.
template <typename T>
bool lovasz_class(const Tensor<T>& probs, const LabelMap& labels, int c, int classes, std::int64_t hw,
                  std::vector<std::int64_t>& order, std::vector<double>& weights, std::vector<double>& errors) {
  const std::int64_t n = labels.numel();
  std::int64_t positives = 0;
  for (std::int64_t i = 0; i < n; ++i) positives += labels[i] == c;
  if (positives == 0) return false;
  errors.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const double p = probs[prob_index(i, c, classes, hw)];
    errors[i] = labels[i] == c ? 1.0 - p : p;
  }
  order.resize(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) { return errors[a] > errors[b]; });
  weights.resize(static_cast<std::size_t>(n));
  double cum_fg = 0.0, cum_bg = 0.0, prev = 0.0;
  for (std::int64_t k = 0; k < n; ++k) {
    if (labels[order[k]] == c) cum_fg += 1; else cum_bg += 1;
    const double inter = static_cast<double>(positives) - cum_fg;
    const double uni = static_cast<double>(positives) + cum_bg;
    const double jac = 1.0 - inter / uni;
    weights[k] = jac - prev;
    prev = jac;
  }
  return true;
}

}  // namespace

void LossConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("loss alpha must lie in [0,1]");
  if (!(epsilon > 0.0)) throw ValidationError("loss epsilon must be positive");
}

template <typename T>
Var<T> cross_entropy(Var<T> probs, const LabelMap& labels) {
  const Tensor<T>& p = probs.value();
  auto [classes, hw] = check_pair(p, labels, "cross_entropy");
  const std::int64_t n = labels.numel();
  double total = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    total -= std::log(std::max(static_cast<double>(p[prob_index(i, labels[i], classes, hw)]), kProbFloor));
  }
  const T value = n ? static_cast<T>(total / n) : T(0);
  return probs.tape->record(OpKind::kCrossEntropy, {probs.id}, Tensor<T>::scalar(value),
                            [labels, classes, hw, n](const Tensor<T>& g, const GradSlots<T>& slots) {
                              Tensor<T>* dp = slots.get(0);
                              if (!dp) return;
                              const Tensor<T>& pv = slots.input(0);
                              const double scale = g.item() / static_cast<double>(n);
                              for (std::int64_t i = 0; i < n; ++i) {
                                const std::int64_t k = prob_index(i, labels[i], classes, hw);
                                if (pv[k] > kProbFloor) (*dp)[k] -= static_cast<T>(scale / pv[k]);
                              }
                            });
}

template <typename T>
std::vector<T> soft_jaccard_per_class(const Tensor<T>& probs, const LabelMap& labels, double eps) {
  auto [classes, hw] = check_pair(probs, labels, "soft_jaccard");
  std::vector<T> out;
  for (int c = 0; c < classes; ++c) {
    double inter = 0.0, uni = 0.0;
    for (std::int64_t i = 0; i < labels.numel(); ++i) {
      const double p = probs[prob_index(i, c, classes, hw)];
      const double y = labels[i] == c ? 1.0 : 0.0;
      inter += y * p;
      uni += y + p - y * p;
    }
    out.push_back(static_cast<T>((inter + eps) / (uni + eps)));
  }
  return out;
}

template <typename T>
Var<T> soft_jaccard_loss(Var<T> probs, const LabelMap& labels, double eps) {
  const Tensor<T>& p = probs.value();
  auto [classes, hw] = check_pair(p, labels, "soft_jaccard");
  const std::int64_t n = labels.numel();
  std::vector<double> inter(classes, 0.0), uni(classes, 0.0);
  for (int c = 0; c < classes; ++c) {
    for (std::int64_t i = 0; i < n; ++i) {
      const double pv = p[prob_index(i, c, classes, hw)];
      const double y = labels[i] == c ? 1.0 : 0.0;
      inter[c] += y * pv;
      uni[c] += y + pv - y * pv;
    }
  }
  double mean_j = 0.0;
  for (int c = 0; c < classes; ++c) mean_j += (inter[c] + eps) / (uni[c] + eps);
  mean_j /= classes;
  return probs.tape->record(
      OpKind::kSoftJaccard, {probs.id}, Tensor<T>::scalar(static_cast<T>(1.0 - mean_j)),
      [labels, classes, hw, n, inter, uni, eps](const Tensor<T>& g, const GradSlots<T>& slots) {
        Tensor<T>* dp = slots.get(0);
        if (!dp) return;
        const double scale = -g.item() / classes;
        for (int c = 0; c < classes; ++c) {
          const double a = inter[c] + eps;
          const double b = uni[c] + eps;
          // dJ/dp = (y·b - a·(1 - y)) / b²
          const double d_pos = scale * (1.0 / b);
          const double d_neg = scale * (-a / (b * b));
          for (std::int64_t i = 0; i < n; ++i) {
            (*dp)[prob_index(i, c, classes, hw)] += static_cast<T>(labels[i] == c ? d_pos : d_neg);
          }
        }
      });
}

template <typename T>
std::vector<std::optional<T>> lovasz_per_class(const Tensor<T>& probs, const LabelMap& labels) {
  auto [classes, hw] = check_pair(probs, labels, "lovasz_softmax");
  std::vector<std::optional<T>> out(classes);
  std::vector<std::int64_t> order;
  std::vector<double> weights, errors;
  for (int c = 0; c < classes; ++c) {
    if (!lovasz_class(probs, labels, c, classes, hw, order, weights, errors)) continue;
    double loss = 0.0;
    for (std::size_t k = 0; k < order.size(); ++k) loss += errors[order[k]] * weights[k];
    out[c] = static_cast<T>(loss);
  }
  return out;
}

template <typename T>
Var<T> lovasz_softmax(Var<T> probs, const LabelMap& labels) {
  const Tensor<T>& p = probs.value();
  auto [classes, hw] = check_pair(p, labels, "lovasz_softmax");
  const std::int64_t n = labels.numel();
  // Per present class: pixel -> weight of its sorted position.
  std::vector<std::pair<int, std::vector<double>>> pixel_weights;
  std::vector<std::int64_t> order;
  std::vector<double> weights, errors;
  double total = 0.0;
  for (int c = 0; c < classes; ++c) {
    if (!lovasz_class(p, labels, c, classes, hw, order, weights, errors)) continue;
    std::vector<double> w(static_cast<std::size_t>(n));
    for (std::int64_t k = 0; k < n; ++k) {
      total += errors[order[k]] * weights[k];
      w[order[k]] = weights[k];
    }
    pixel_weights.emplace_back(c, std::move(w));
  }
  const double present = static_cast<double>(pixel_weights.size());
  const T value = present > 0 ? static_cast<T>(total / present) : T(0);
  return probs.tape->record(OpKind::kLovasz, {probs.id}, Tensor<T>::scalar(value),
                            [labels, classes, hw, n, present, pw = std::move(pixel_weights)](
                                const Tensor<T>& g, const GradSlots<T>& slots) {
                              Tensor<T>* dp = slots.get(0);
                              if (!dp || present == 0) return;
                              const double scale = g.item() / present;
                              for (const auto& [c, w] : pw) {
                                for (std::int64_t i = 0; i < n; ++i) {
                                  // error = 1 - p on the class, p elsewhere
                                  const double sign = labels[i] == c ? -1.0 : 1.0;
                                  (*dp)[prob_index(i, c, classes, hw)] += static_cast<T>(scale * sign * w[i]);
                                }
                              }
                            });
}

template <typename T>
Var<T> combined_loss(Var<T> probs, const LabelMap& labels, const LossConfig& config) {
  config.validate();
  if (config.iou_term == IouTerm::kNone || config.alpha == 0.0) return cross_entropy(probs, labels);
  Var<T> iou = config.iou_term == IouTerm::kJaccard ? soft_jaccard_loss(probs, labels, config.epsilon)
                                                    : lovasz_softmax(probs, labels);
  if (config.alpha == 1.0) return iou;
  return add(scale(iou, static_cast<T>(config.alpha)), scale(cross_entropy(probs, labels), static_cast<T>(1.0 - config.alpha)));
}

#define SEASEG_INSTANTIATE_LOSSES(T)                                                              \
  template Var<T> cross_entropy(Var<T>, const LabelMap&);                                         \
  template Var<T> soft_jaccard_loss(Var<T>, const LabelMap&, double);                             \
  template std::vector<T> soft_jaccard_per_class(const Tensor<T>&, const LabelMap&, double);      \
  template Var<T> lovasz_softmax(Var<T>, const LabelMap&);                                        \
  template std::vector<std::optional<T>> lovasz_per_class(const Tensor<T>&, const LabelMap&);     \
  template Var<T> combined_loss(Var<T>, const LabelMap&, const LossConfig&);

SEASEG_INSTANTIATE_LOSSES(float)
SEASEG_INSTANTIATE_LOSSES(double)

}  // namespace seaseg
