#pragma once

// Outlier-detection and segmentation metrics.
//
// Outliers are the positive class and higher scores mean "more outlier".
// A threshold d classifies score >= d as outlier; the sweep includes d = +inf
// (nothing flagged). Ignore-labelled entries are dropped before any metric.

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace borderflow {

enum class Label : std::uint8_t { inlier = 0, outlier = 1, ignore = 2 };

struct ScoreSet {
  std::vector<double> scores;
  std::vector<Label> labels;

  void add(double score, Label label) {
    scores.push_back(score);
    labels.push_back(label);
  }
  void append(const ScoreSet& other);
  std::size_t size() const { return scores.size(); }
};

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// P(s_out > s_in) + 0.5 P(s_out == s_in).
double auroc(const ScoreSet& set);
// sum over descending unique thresholds of (dTP / P) * precision; ties share one threshold.
double average_precision(const ScoreSet& set);
// Smallest FPR among thresholds whose TPR reaches the target.
double fpr_at_tpr(const ScoreSet& set, double tpr_target);
double tnr_at_tpr(const ScoreSet& set, double tpr_target);
// Best balanced accuracy 0.5 * (TPR + TNR) over thresholds.
double detection_accuracy(const ScoreSet& set);
// Mean AP over sets containing at least one outlier.
double per_image_mean_ap(const std::vector<ScoreSet>& per_image);

class ConfusionAccumulator {
 public:
  explicit ConfusionAccumulator(int classes);

  int classes() const { return classes_; }
  // Pixels whose truth equals `ignore` are skipped.
  void add(const std::vector<int>& predicted, const std::vector<int>& truth, int ignore = 255);
  void merge(const ConfusionAccumulator& other);

  std::uint64_t intersection(int c) const { return inter_[c]; }
  std::uint64_t union_count(int c) const { return pred_[c] + truth_[c] - inter_[c]; }
  std::uint64_t pixels(int c) const { return truth_[c]; }

 private:
  int classes_;
  std::vector<std::uint64_t> inter_, pred_, truth_;
};

// Mean IoU over classes with a non-zero union.
double miou(const ConfusionAccumulator& acc);

}  // namespace borderflow
