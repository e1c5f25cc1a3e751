#include "seaseg/inference.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "seaseg/error.hpp"
#include "seaseg/parallel.hpp"

namespace seaseg {

void TtaConfig::validate() const {
  std::set<int> seen;
  for (int e : elements) {
    if (e < 0 || e >= kD8Size) throw ValidationError("TTA element " + std::to_string(e) + " is not in [0, 8)");
    if (!seen.insert(e).second) throw ValidationError("TTA element " + std::to_string(e) + " listed twice");
  }
  if (!seen.count(0)) throw ValidationError("TTA elements must include the identity");
}

std::vector<int> tta_elements(const std::string& name) {
  if (name == "off") return {0};
  if (name == "d4") return {0, 1, 2, 3};
  if (name == "flips") return {0, 4, 6};
  if (name == "d4+flips") return {0, 1, 2, 3, 4, 6};
  if (name == "full") return {0, 1, 2, 3, 4, 5, 6, 7};
  throw ValidationError("unknown TTA set '" + name + "' (expected off, d4, flips, d4+flips or full)");
}

TtaMean parse_tta_mean(const std::string& name) {
  if (name == "arith") return TtaMean::kArithmetic;
  if (name == "geom") return TtaMean::kGeometric;
  throw ValidationError("unknown TTA mean '" + name + "' (expected arith or geom)");
}

Tensor<float> tta_predict(const Predictor& predictor, const Tensor<float>& batch, const TtaConfig& tta, int workers) {
  tta.validate();
  if (batch.rank() != 4) throw ShapeError("tta_predict: expected N×C×H×W, got " + shape_str(batch.shape()));
  if (batch.dim(2) % 16 != 0 || batch.dim(3) % 16 != 0 || batch.dim(2) == 0 || batch.dim(3) == 0) {
    throw ValidationError("tta_predict: H and W must be positive multiples of 16, got " + shape_str(batch.shape()));
  }
  std::vector<int> elements = tta.elements;
  std::sort(elements.begin(), elements.end());

  std::vector<Tensor<float>> outs(elements.size());
  parallel_for(elements.size(), workers, [&](std::size_t k) {
    const int e = elements[k];
    outs[k] = transform_d8(predictor(transform_d8(batch, e)), d8_inverse(e));
  });
  const Shape shape = outs[0].shape();
  for (const auto& o : outs) {
    if (o.shape() != shape || o.rank() != 4 || o.dim(0) != batch.dim(0) || o.dim(2) != batch.dim(2) ||
        o.dim(3) != batch.dim(3)) {
      throw ShapeError("tta_predict: predictor returned " + shape_str(o.shape()) + " for input " +
                       shape_str(batch.shape()));
    }
  }

  const double k = static_cast<double>(outs.size());
  Tensor<float> result(shape);
  if (tta.mean == TtaMean::kArithmetic) {
    for (std::int64_t i = 0; i < result.numel(); ++i) {
      double acc = 0.0;
      for (const auto& o : outs) acc += o[i];
      result[i] = static_cast<float>(acc / k);
    }
    return result;
  }

  const int n = shape[0], classes = shape[1];
  const std::int64_t hw = static_cast<std::int64_t>(shape[2]) * shape[3];
  std::vector<double> g(static_cast<std::size_t>(classes));
  for (int b = 0; b < n; ++b) {
    for (std::int64_t p = 0; p < hw; ++p) {
      double total = 0.0;
      for (int c = 0; c < classes; ++c) {
        const std::int64_t i = (static_cast<std::int64_t>(b) * classes + c) * hw + p;
        double logs = 0.0;
        for (const auto& o : outs) logs += std::log(std::max(static_cast<double>(o[i]), 1e-30));
        g[c] = std::exp(logs / k);
        total += g[c];
      }
      for (int c = 0; c < classes; ++c) {
        result[(static_cast<std::int64_t>(b) * classes + c) * hw + p] = static_cast<float>(g[c] / total);
      }
    }
  }
  return result;
}

Tensor<float> tta_predict(const SeUNet& model, const Tensor<float>& batch, const TtaConfig& tta, int workers) {
  model.check_input(batch.shape());
  return tta_predict([&model](const Tensor<float>& x) { return model.predict(x); }, batch, tta, workers);
}

void PostprocessConfig::validate() const {
  if (!(prob_threshold > 0.0 && prob_threshold < 1.0)) throw ValidationError("probability threshold must be in (0, 1)");
  if (min_instance_area < 1) throw ValidationError("minimum instance area must be at least 1");
}

InstanceSet probs_to_instances(const Tensor<float>& probs, const PostprocessConfig& config) {
  config.validate();
  const bool batched = probs.rank() == 4;
  if (!((probs.rank() == 3 && probs.dim(0) == 2) || (batched && probs.dim(0) == 1 && probs.dim(1) == 2))) {
    throw ShapeError("probs_to_instances: expected 2×H×W or 1×2×H×W, got " + shape_str(probs.shape()));
  }
  const int h = probs.dim(batched ? 2 : 1), w = probs.dim(batched ? 3 : 2);
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  std::vector<std::uint8_t> fg(static_cast<std::size_t>(hw));
  for (std::int64_t i = 0; i < hw; ++i) fg[i] = probs[hw + i] > config.prob_threshold ? 1 : 0;
  InstanceSet all = connected_components(BinaryMask(h, w, std::move(fg)), 8);
  InstanceSet kept{h, w, {}};
  for (auto& m : all.instances) {
    if (m.popcount() >= config.min_instance_area) kept.instances.push_back(std::move(m));
  }
  return kept;
}

Manifest predict_dataset(const SeUNet& model, const Dataset& data, const std::vector<std::string>& ids,
                         const TtaConfig& tta, const PostprocessConfig& post, bool half_scale, int workers) {
  tta.validate();
  post.validate();
  std::vector<InstanceSet> found(ids.size());
  parallel_for(ids.size(), workers, [&](std::size_t i) {
    const Sample s = load_sample(data, ids[i], half_scale);
    const int h = s.image.dim(1), w = s.image.dim(2);
    Tensor<float> x = normalize_unit(s.image);
    x = Tensor<float>(Shape{1, 3, h, w}, std::vector<float>(x.data().begin(), x.data().end()));
    Tensor<float> probs = tta_predict(model, x, tta);
    probs = Tensor<float>(Shape{2, h, w}, std::vector<float>(probs.data().begin(), probs.data().end()));
    if (half_scale) {
      const Image8 raw = read_png(data.image_path(ids[i]));
      probs = resize_bilinear(probs, raw.height, raw.width);
    }
    found[i] = probs_to_instances(probs, post);
  });
  Manifest out;
  for (std::size_t i = 0; i < ids.size(); ++i) out.add_image(ids[i], found[i]);
  return out;
}

}  // namespace seaseg
