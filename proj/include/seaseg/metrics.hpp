#pragma once

#include <array>
#include <iosfwd>
#include <string>
#include <vector>

#include "seaseg/manifest.hpp"

namespace seaseg {

struct MatchCounts {
  int tp = 0;
  int fp = 0;
  int fn = 0;

  friend bool operator==(const MatchCounts&, const MatchCounts&) = default;
};

// 0.50, 0.55, ..., 0.95.
const std::array<double, 10>& iou_thresholds();

// |A∩B| / |A∪B|, 0 when both are empty.
double iou(const BinaryMask& a, const BinaryMask& b);

// ious[p][g] for every prediction/ground-truth pair.
std::vector<std::vector<double>> iou_matrix(const InstanceSet& preds, const InstanceSet& gts);

// Greedy one-to-one matching by descending IoU over pairs with IoU strictly above t. Equal IoUs
// are taken in (prediction, ground truth) index order.
MatchCounts match_ious(const std::vector<std::vector<double>>& ious, std::size_t num_gts, double t);
MatchCounts match_instances(const InstanceSet& preds, const InstanceSet& gts, double t);

// (1+β²)TP / ((1+β²)TP + β²FN + FP); 1 when TP = FP = FN = 0.
double f_beta(const MatchCounts& counts, double beta = 2.0);

// Mean of F2 over the threshold grid.
double mean_f2(const InstanceSet& preds, const InstanceSet& gts);

struct EvalRow {
  std::string image_id;
  double mean_f2 = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;  // sorted by image_id
  double aggregate = 0.0;
};

// Scores every ground-truth image. Images missing from `preds` count as having no predictions;
// prediction ids absent from the ground truth are rejected.
EvalReport evaluate(const Manifest& preds, const Manifest& gts, int height, int width, int workers = 1);

// `image_id,mean_f2` rows followed by `__aggregate__,<mean>`.
void write_eval_csv(std::ostream& out, const EvalReport& report);
void write_eval_json(std::ostream& out, const EvalReport& report);

struct CorpusReport {
  int images = 0;
  int empty = 0;
  int non_empty = 0;
  // histogram[k] = images with k ships; at least 16 bins (0..15).
  std::vector<int> histogram;
};

CorpusReport corpus_report(const Manifest& manifest);
// `ships,images` rows for every histogram bin.
void write_corpus_csv(std::ostream& out, const CorpusReport& report);
void write_corpus_json(std::ostream& out, const CorpusReport& report);

}  // namespace seaseg
