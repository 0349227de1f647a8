#pragma once

// Joint training of an open-set classifier and a flow that generates
// synthetic outliers.
//
// Each iteration updates the classifier on its compound loss first, then the
// flow on its negative log-likelihood plus whatever part of the classifier
// loss reached the flow through the generated samples.

#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "borderflow/autodiff.hpp"
#include "borderflow/checkpoint.hpp"
#include "borderflow/classifier.hpp"
#include "borderflow/data.hpp"
#include "borderflow/flow.hpp"
#include "borderflow/optim.hpp"

namespace borderflow {

// ---------------------------------------------------------------------------
// Losses

// KL(U || P) per row or pixel, from probabilities. Throws DomainError if any P_c is 0.
Array kl_uniform(const Posterior& p);
// KL(U || softmax(logits)) per row or pixel, via log_softmax: -log C - mean_c log P_c.
Var kl_uniform_logits(Var logits);
// Per-sample cross-entropy of [N,C] logits; labels must lie in [0, C).
Var cross_entropy(Var logits, const std::vector<int>& labels);

struct CompoundLoss {
  Var total;
  Var ce;
  Var kl;  // mean KL on the outliers, before the lambda factor
  Var outliers;
};

// Mean cross-entropy on the inlier batch plus lambda times mean KL on n_out flow samples
// drawn at the classifier's input size.
CompoundLoss classifier_compound_loss(Tape& tape, const ClassifierModel& classifier, const FlowModel& flow,
                                      const Array& x, const std::vector<int>& y, std::size_t n_out, double lambda,
                                      Rng& noise);

// -mean log p(x).
Var flow_nll_loss(Tape& tape, const FlowModel& flow, const Array& x);

struct PastePosition {
  std::size_t top = 0;
  std::size_t left = 0;
};

// Uniform over [0, H-h] x [0, W-w].
PastePosition draw_paste_position(std::size_t height, std::size_t width, std::size_t h, std::size_t w, Rng& rng);

struct PasteResult {
  Array x_pasted;                // [C,H,W]
  std::vector<std::uint8_t> s;   // H*W, 1 inside the pasted rectangle
  Array replaced_patch;          // [C,h,w], original content under the paste
  PastePosition position;
};

PasteResult paste_outlier(const Array& crop, const Array& sample, Rng& rng);
PasteResult paste_outlier_at(const Array& crop, const Array& sample, PastePosition pos);

struct DenseLoss {
  Var total;
  Var ce;  // mean over s=0 pixels with a valid label
  Var kl;  // mean over s=1 pixels with a valid label, before the lambda factor
};

// Cross-entropy over unpasted pixels plus lambda-weighted KL-to-uniform over pasted pixels.
// Pixels labelled kIgnoreLabel are excluded from both terms.
DenseLoss dense_openset_loss(Var logits, const std::vector<int>& labels, const std::vector<std::uint8_t>& s,
                             double lambda);
DenseLoss dense_openset_loss(Tape& tape, const ClassifierModel& model, const Array& x_pasted,
                             const std::vector<int>& labels, const std::vector<std::uint8_t>& s, double lambda);

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double lambda = 1.0;
  std::size_t batch_size = 32;
  long iterations = 2000;
  // Image-wide: flow samples per batch (0 means batch_size).
  std::size_t n_out = 0;
  // Dense: side lengths of pasted square outliers, one drawn per iteration.
  std::vector<std::size_t> outlier_sizes{8, 10, 12, 14, 16};
  bool joint = true;   // false trains the classifier alone on cross-entropy
  bool paste = true;   // dense only
  std::uint64_t seed = 1;
  double classifier_lr = 1e-3;
  double classifier_lr_min = 1e-5;
  double flow_lr = 1e-3;

  void validate(const FlowConfig* flow, std::size_t crop_h, std::size_t crop_w) const;
};

// Labelled training data: image-wide inputs [N,...] with one label each, or
// dense inputs [N,3,H,W] with H*W labels per image.
struct LabeledData {
  Array inputs;
  std::vector<int> labels;
};

struct LogRow {
  long iteration = 0;
  double loss = 0.0;
  double ce = 0.0;
  double kl_term = 0.0;  // lambda * KL
  double nll = 0.0;
  double lr_classifier = 0.0;
  double lr_flow = 0.0;
  std::size_t outlier_h = 0;
  std::size_t outlier_w = 0;
  // Mean over the batch of the pasted share of each crop (dense only).
  double pasted_fraction = 0.0;
};

using LogSink = std::function<void(const LogRow&)>;

struct JointState {
  ClassifierModel classifier;
  std::optional<FlowModel> flow;
  OptimizerState opt_classifier;
  OptimizerState opt_flow;
  Rng data_rng;
  Rng noise_rng;
  Rng dequant_rng;
  long iteration = 0;

  void save(Checkpoint& ckpt) const;
  // Optimizer hyperparameters come from the config; everything else from the checkpoint.
  static JointState load(const Checkpoint& ckpt, const TrainConfig& config);
};

JointState init_joint_state(const TrainConfig& config, const ClassifierConfig& classifier,
                            const std::optional<FlowConfig>& flow);

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(long iteration, const std::string& what)
      : std::runtime_error(what + " at iteration " + std::to_string(iteration)), iteration_(iteration) {}
  long iteration() const { return iteration_; }

 private:
  long iteration_;
};

LogRow imagewide_step(const TrainConfig& config, JointState& state, const LabeledData& data);
LogRow dense_step(const TrainConfig& config, JointState& state, const LabeledData& data);

// Runs steps until state.iteration reaches `until` (config.iterations when negative).
void train_imagewide(const TrainConfig& config, JointState& state, const LabeledData& data, const LogSink& sink,
                     long until = -1);
void train_dense(const TrainConfig& config, JointState& state, const LabeledData& data, const LogSink& sink,
                 long until = -1);

AdamConfig classifier_adam(const TrainConfig& config);
AdamConfig flow_adam(const TrainConfig& config);

// Minibatch indices drawn with replacement.
std::vector<std::size_t> draw_batch(std::size_t dataset_size, std::size_t batch, Rng& rng);

}  // namespace borderflow
