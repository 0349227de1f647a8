#include "borderflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace borderflow {
namespace {

// Tie groups in descending score order with per-group outlier/inlier counts.
struct Group {
  std::uint64_t pos = 0;
  std::uint64_t neg = 0;
};

struct Sweep {
  std::vector<Group> groups;
  std::uint64_t pos = 0;
  std::uint64_t neg = 0;
};

Sweep sweep(const ScoreSet& set) {
  if (set.scores.size() != set.labels.size()) throw MetricError("score set: scores and labels differ in length");
  std::vector<std::pair<double, bool>> kept;
  kept.reserve(set.scores.size());
  for (std::size_t i = 0; i < set.scores.size(); ++i) {
    if (set.labels[i] == Label::ignore) continue;
    if (std::isnan(set.scores[i])) throw MetricError("score set: NaN score");
    kept.emplace_back(set.scores[i], set.labels[i] == Label::outlier);
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  Sweep s;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (i == 0 || kept[i].first != kept[i - 1].first) s.groups.emplace_back();
    if (kept[i].second) {
      ++s.groups.back().pos;
      ++s.pos;
    } else {
      ++s.groups.back().neg;
      ++s.neg;
    }
  }
  return s;
}

Sweep ranking_sweep(const ScoreSet& set) {
  Sweep s = sweep(set);
  if (s.pos == 0) throw MetricError("metric needs at least one outlier");
  if (s.neg == 0) throw MetricError("metric needs at least one inlier");
  return s;
}

}  // namespace

void ScoreSet::append(const ScoreSet& other) {
  scores.insert(scores.end(), other.scores.begin(), other.scores.end());
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
}

double auroc(const ScoreSet& set) {
  const Sweep s = ranking_sweep(set);
  // Walk upwards from the lowest score, counting inliers strictly below.
  double wins = 0.0;
  std::uint64_t neg_below = 0;
  for (auto it = s.groups.rbegin(); it != s.groups.rend(); ++it) {
    wins += static_cast<double>(it->pos * neg_below) + 0.5 * static_cast<double>(it->pos * it->neg);
    neg_below += it->neg;
  }
  return wins / (static_cast<double>(s.pos) * static_cast<double>(s.neg));
}

double average_precision(const ScoreSet& set) {
  const Sweep s = sweep(set);
  if (s.pos == 0) throw MetricError("average precision needs at least one outlier");
  double ap = 0.0;
  std::uint64_t tp = 0, fp = 0;
  for (const Group& g : s.groups) {
    tp += g.pos;
    fp += g.neg;
    if (g.pos == 0) continue;
    ap += static_cast<double>(g.pos) / static_cast<double>(s.pos) *
          (static_cast<double>(tp) / static_cast<double>(tp + fp));
  }
  return ap;
}

double fpr_at_tpr(const ScoreSet& set, double tpr_target) {
  if (!(tpr_target > 0.0 && tpr_target <= 1.0)) throw MetricError("tpr target must lie in (0, 1]");
  const Sweep s = ranking_sweep(set);
  std::uint64_t tp = 0, fp = 0;
  for (const Group& g : s.groups) {
    tp += g.pos;
    fp += g.neg;
    if (static_cast<double>(tp) / static_cast<double>(s.pos) >= tpr_target)
      return static_cast<double>(fp) / static_cast<double>(s.neg);
  }
  return 1.0;
}

double tnr_at_tpr(const ScoreSet& set, double tpr_target) { return 1.0 - fpr_at_tpr(set, tpr_target); }

double detection_accuracy(const ScoreSet& set) {
  const Sweep s = ranking_sweep(set);
  double best = 0.5;  // threshold +inf: TPR 0, TNR 1
  std::uint64_t tp = 0, fp = 0;
  for (const Group& g : s.groups) {
    tp += g.pos;
    fp += g.neg;
    const double tpr = static_cast<double>(tp) / static_cast<double>(s.pos);
    const double tnr = 1.0 - static_cast<double>(fp) / static_cast<double>(s.neg);
    best = std::max(best, 0.5 * (tpr + tnr));
  }
  return best;
}

double per_image_mean_ap(const std::vector<ScoreSet>& per_image) {
  double total = 0.0;
  std::size_t used = 0;
  for (const ScoreSet& s : per_image) {
    bool has_outlier = false;
    for (Label l : s.labels) has_outlier |= l == Label::outlier;
    if (!has_outlier) continue;
    total += average_precision(s);
    ++used;
  }
  if (used == 0) throw MetricError("per-image AP: no image contains an outlier");
  return total / static_cast<double>(used);
}

ConfusionAccumulator::ConfusionAccumulator(int classes)
    : classes_(classes), inter_(classes), pred_(classes), truth_(classes) {
  if (classes < 1) throw MetricError("confusion accumulator needs at least one class");
}

void ConfusionAccumulator::add(const std::vector<int>& predicted, const std::vector<int>& truth, int ignore) {
  if (predicted.size() != truth.size()) throw MetricError("confusion: prediction and truth differ in length");
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i], p = predicted[i];
    if (t == ignore) continue;
    if (t < 0 || t >= classes_) throw MetricError("confusion: truth label " + std::to_string(t) + " out of range");
    if (p < 0 || p >= classes_) throw MetricError("confusion: predicted label " + std::to_string(p) + " out of range");
    ++truth_[t];
    ++pred_[p];
    if (p == t) ++inter_[t];
  }
}

void ConfusionAccumulator::merge(const ConfusionAccumulator& other) {
  if (other.classes_ != classes_) throw MetricError("confusion: class count mismatch in merge");
  for (int c = 0; c < classes_; ++c) {
    inter_[c] += other.inter_[c];
    pred_[c] += other.pred_[c];
    truth_[c] += other.truth_[c];
  }
}

double miou(const ConfusionAccumulator& acc) {
  double total = 0.0;
  int present = 0;
  for (int c = 0; c < acc.classes(); ++c) {
    const std::uint64_t u = acc.union_count(c);
    if (u == 0) continue;
    total += static_cast<double>(acc.intersection(c)) / static_cast<double>(u);
    ++present;
  }
  if (present == 0) throw MetricError("mIoU: every class has an empty union");
  return total / present;
}

}  // namespace borderflow
