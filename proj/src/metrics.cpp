#include "seaseg/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>

#include <json.hpp>

#include "seaseg/parallel.hpp"

namespace seaseg {

namespace {

std::string fixed6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

const std::array<double, 10>& iou_thresholds() {
  static const std::array<double, 10> grid = [] {
    std::array<double, 10> g{};
    for (int k = 0; k < 10; ++k) g[k] = (50 + 5 * k) / 100.0;
    return g;
  }();
  return grid;
}

double iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw ShapeError("iou: masks are " + std::to_string(a.height()) + "x" + std::to_string(a.width()) + " and " +
                     std::to_string(b.height()) + "x" + std::to_string(b.width()));
  }
  std::int64_t inter = 0, uni = 0;
  const auto x = a.bits();
  const auto y = b.bits();
  for (std::size_t i = 0; i < x.size(); ++i) {
    inter += x[i] & y[i];
    uni += x[i] | y[i];
  }
  return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

std::vector<std::vector<double>> iou_matrix(const InstanceSet& preds, const InstanceSet& gts) {
  if (preds.height != gts.height || preds.width != gts.width) {
    throw ShapeError("prediction and ground-truth image dimensions differ");
  }
  std::vector<std::vector<double>> m(preds.instances.size(), std::vector<double>(gts.instances.size()));
  for (std::size_t p = 0; p < preds.instances.size(); ++p) {
    for (std::size_t g = 0; g < gts.instances.size(); ++g) m[p][g] = iou(preds.instances[p], gts.instances[g]);
  }
  return m;
}

MatchCounts match_ious(const std::vector<std::vector<double>>& ious, std::size_t num_gts, double t) {
  struct Pair {
    double iou;
    std::size_t p, g;
  };
  std::vector<Pair> pairs;
  for (std::size_t p = 0; p < ious.size(); ++p) {
    for (std::size_t g = 0; g < num_gts; ++g) {
      if (ious[p][g] > t) pairs.push_back({ious[p][g], p, g});
    }
  }
  std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.iou > b.iou; });
  std::vector<bool> pred_used(ious.size(), false), gt_used(num_gts, false);
  int tp = 0;
  for (const auto& pr : pairs) {
    if (pred_used[pr.p] || gt_used[pr.g]) continue;
    pred_used[pr.p] = gt_used[pr.g] = true;
    ++tp;
  }
  return {tp, static_cast<int>(ious.size()) - tp, static_cast<int>(num_gts) - tp};
}

MatchCounts match_instances(const InstanceSet& preds, const InstanceSet& gts, double t) {
  return match_ious(iou_matrix(preds, gts), gts.instances.size(), t);
}

double f_beta(const MatchCounts& c, double beta) {
  if (c.tp == 0 && c.fp == 0 && c.fn == 0) return 1.0;
  const double b2 = beta * beta;
  return (1 + b2) * c.tp / ((1 + b2) * c.tp + b2 * c.fn + c.fp);
}

double mean_f2(const InstanceSet& preds, const InstanceSet& gts) {
  const auto ious = iou_matrix(preds, gts);
  double total = 0.0;
  for (double t : iou_thresholds()) total += f_beta(match_ious(ious, gts.instances.size(), t), 2.0);
  return total / static_cast<double>(iou_thresholds().size());
}

EvalReport evaluate(const Manifest& preds, const Manifest& gts, int height, int width, int workers) {
  for (const auto& id : preds.image_ids()) {
    if (!gts.contains(id)) throw ValidationError("prediction for unknown image '" + id + "'");
  }
  std::vector<std::string> ids = gts.image_ids();
  std::sort(ids.begin(), ids.end());
  EvalReport report;
  report.rows.resize(ids.size());
  parallel_for(ids.size(), workers, [&](std::size_t i) {
    const InstanceSet gt = gts.instances(ids[i], height, width);
    const InstanceSet pr = preds.contains(ids[i]) ? preds.instances(ids[i], height, width) : InstanceSet{height, width, {}};
    report.rows[i] = {ids[i], mean_f2(pr, gt)};
  });
  double total = 0.0;
  for (const auto& r : report.rows) total += r.mean_f2;
  report.aggregate = report.rows.empty() ? 0.0 : total / static_cast<double>(report.rows.size());
  return report;
}

void write_eval_csv(std::ostream& out, const EvalReport& report) {
  out << "image_id,mean_f2\n";
  for (const auto& r : report.rows) out << r.image_id << ',' << fixed6(r.mean_f2) << '\n';
  out << "__aggregate__," << fixed6(report.aggregate) << '\n';
}

void write_eval_json(std::ostream& out, const EvalReport& report) {
  nlohmann::ordered_json j;
  j["aggregate"] = report.aggregate;
  j["images"] = nlohmann::ordered_json::array();
  for (const auto& r : report.rows) j["images"].push_back({{"image_id", r.image_id}, {"mean_f2", r.mean_f2}});
  out << j.dump(2) << '\n';
}

CorpusReport corpus_report(const Manifest& manifest) {
  CorpusReport r;
  r.histogram.assign(16, 0);
  for (const auto& id : manifest.image_ids()) {
    const int ships = manifest.ship_count(id);
    if (ships >= static_cast<int>(r.histogram.size())) r.histogram.resize(ships + 1, 0);
    ++r.histogram[ships];
    ++r.images;
    if (ships == 0) ++r.empty;
    else ++r.non_empty;
  }
  return r;
}

void write_corpus_csv(std::ostream& out, const CorpusReport& report) {
  out << "ships,images\n";
  for (std::size_t k = 0; k < report.histogram.size(); ++k) out << k << ',' << report.histogram[k] << '\n';
}

void write_corpus_json(std::ostream& out, const CorpusReport& report) {
  nlohmann::ordered_json j;
  j["images"] = report.images;
  j["empty"] = report.empty;
  j["non_empty"] = report.non_empty;
  j["empty_share"] = report.images ? static_cast<double>(report.empty) / report.images : 0.0;
  j["histogram"] = report.histogram;
  out << j.dump(2) << '\n';
}

}  // namespace seaseg
