#pragma once

// Run configuration, on-disk corpora and the commands behind the CLI.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "borderflow/classifier.hpp"
#include "borderflow/data.hpp"
#include "borderflow/flow.hpp"
#include "borderflow/io.hpp"
#include "borderflow/joint.hpp"

namespace borderflow {

enum class RunMode { imagewide, dense };
std::string mode_name(RunMode m);
RunMode parse_mode(const std::string& s);

struct RunConfig {
  RunMode mode = RunMode::imagewide;
  std::uint64_t seed = 1;

  // Corpus generation. Image-wide corpora are 2-D points; dense corpora are scenes.
  std::string data_dir;  // corpus read by train and eval
  std::size_t train_count = 0;
  std::size_t eval_count = 0;
  std::size_t eval_outlier_count = 0;  // image-wide only
  std::string point_kind = "gaussians";
  double point_sigma = 0.5;
  double moon_noise = 0.1;
  double shell_inner = 1.5;
  double shell_outer = 3.0;
  std::size_t scene_size = 64;

  TrainConfig train;
  long checkpoint_every = 0;
  ClassifierConfig classifier;
  FlowConfig flow;

  std::vector<Scoring> scorings{Scoring::msp, Scoring::entropy};
  std::vector<double> temperatures{1.0, 2.0, 10.0};
  bool export_scores = true;

  std::size_t sample_count = 4;
  std::vector<std::size_t> sample_sizes{8, 16};

  // Mode-dependent defaults; `overrides` may set any schema key, others are rejected.
  static RunConfig defaults(RunMode mode);
  static RunConfig from_key_values(const KeyValues& kv);
  KeyValues to_key_values() const;
};

// Every key the config format accepts.
const std::vector<std::string>& config_keys();

// Corpus on disk: <dir>/manifest.txt, <dir>/train/*.bin, <dir>/eval/*.bin.
struct Corpus {
  RunMode mode = RunMode::imagewide;
  int classes = 0;
  LabeledData train;             // scenes in [0,1]
  Array eval_inputs;
  std::vector<int> eval_labels;  // kIgnoreLabel on outliers
  std::vector<std::uint8_t> eval_outlier;
};

void write_corpus(const std::filesystem::path& dir, const RunConfig& config);
Corpus read_corpus(const std::filesystem::path& dir);

// Metrics for one (scoring, T) pair.
struct ReportBlock {
  Scoring scoring = Scoring::msp;
  double temperature = 1.0;
  double auroc = 0.0;
  double ap = 0.0;
  double fpr95 = 0.0;
  double tnr95 = 0.0;
  double det_acc = 0.0;
  double miou = 0.0;
  std::optional<double> per_image_ap;  // dense only
  double accuracy = 0.0;               // inlier classification accuracy
};

std::string format_report(RunMode mode, const std::vector<ReportBlock>& blocks);
std::vector<ReportBlock> parse_report(const std::string& text);

// Scores are rounded to float32 before any metric so the report matches the exported maps.
std::vector<ReportBlock> evaluate(const ClassifierModel& model, const Corpus& corpus, const std::vector<Scoring>& scorings,
                                  const std::vector<double>& temperatures,
                                  const std::filesystem::path& export_dir = {});

// Commands. Each returns the process exit code and writes progress to `log`.
struct CommandOptions {
  std::filesystem::path out;
  std::optional<std::filesystem::path> checkpoint;
  std::ostream* log = nullptr;
};

int cmd_gen_data(const RunConfig& config, const CommandOptions& opt);
int cmd_train(const RunConfig& config, const CommandOptions& opt);
int cmd_eval(const RunConfig& config, const CommandOptions& opt);
int cmd_sample(const RunConfig& config, const CommandOptions& opt);

struct GradcheckResult {
  std::string loss;
  double max_rel_error = 0.0;
  std::size_t coords = 0;
  bool passed = false;
};

// Finite-difference checks of the three training losses on tiny models.
// `corrupt` perturbs every analytic gradient before comparison.
std::vector<GradcheckResult> run_gradchecks(double tolerance, bool corrupt);
int cmd_gradcheck(const CommandOptions& opt, bool corrupt);

}  // namespace borderflow
