#pragma once

// Discriminative models and softmax-based outlier scores.
//
// Posteriors and logits keep the class axis at position 1: [N,C] for
// image-wide models, [N,C,H,W] for dense ones. Scores drop that axis.

#include <map>
#include <string>

#include "borderflow/autodiff.hpp"
#include "borderflow/checkpoint.hpp"
#include "borderflow/params.hpp"

namespace borderflow {

enum class Architecture {
  points_mlp,      // [N,D] -> [N,C], two hidden ELU layers
  imagewide_conv,  // [N,3,H,W] -> [N,C], three strided convs, global mean pool, linear
  dense,           // [N,3,H,W] -> [N,C,H,W], stride-8 encoder, ladder decoder, bilinear upsampling
};

struct ClassifierConfig {
  Architecture arch = Architecture::dense;
  int in_channels = 3;
  int classes = 5;
  int width = 8;

  void validate() const;
  bool is_dense() const { return arch == Architecture::dense; }
  std::size_t output_stride() const { return arch == Architecture::dense ? 8 : 1; }
  std::map<std::string, std::string> to_meta() const;
  static ClassifierConfig from_meta(const std::map<std::string, std::string>& meta, const std::string& prefix);
};

std::string architecture_name(Architecture a);
Architecture parse_architecture(const std::string& s);

class ClassifierModel {
 public:
  ClassifierModel(ClassifierConfig config, std::uint64_t init_seed);

  const ClassifierConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  // Parameter holding the last layer's weight, for tests that pin the output.
  std::string final_layer() const { return "head"; }

  Var logits(Tape& tape, Var x) const;
  Array predict_logits(const Array& x) const;

  void save(Checkpoint& ckpt, const std::string& prefix) const;
  static ClassifierModel load(const Checkpoint& ckpt, const std::string& prefix);

 private:
  Var conv(Tape& tape, const std::string& name, Var x, std::size_t stride, std::size_t pad) const;
  Var dense_layer(Tape& tape, const std::string& name, Var x) const;
  void check_input(const Shape& s) const;

  ClassifierConfig config_;
  mutable ParameterSet params_;
};

struct Posterior {
  Array probs;
  double temperature = 1.0;
};

enum class Scoring { msp, entropy };
std::string scoring_name(Scoring s);
Scoring parse_scoring(const std::string& s);
int scoring_id(Scoring s);

// softmax(logits / T) along axis 1 with the max shift. Throws std::invalid_argument for T <= 0.
Posterior softmax_with_temperature(const Array& logits, double temperature);
// Class index per sample or pixel; ties go to the lowest index.
std::vector<int> argmax_classes(const Array& scores);

// 1 - max_c P(c|x).
Array msp_score(const Posterior& p);
// -sum_c P log P in nats, with 0 log 0 = 0.
Array entropy_score(const Posterior& p);
Array score(const Posterior& p, Scoring scoring);

// Per-pixel score [N,H,W]; requires a dense model.
Array dense_score_map(const ClassifierModel& model, const Array& x, Scoring scoring, double temperature);

}  // namespace borderflow
