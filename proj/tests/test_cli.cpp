#include <set>
#include <sstream>

#include "borderflow/checkpoint.hpp"
#include "borderflow/metrics.hpp"
#include "borderflow/run.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace borderflow;
using borderflow::testing::TempDir;
namespace fs = std::filesystem;

namespace {

RunConfig small_imagewide(const fs::path& data) {
  return RunConfig::from_key_values({{"data.dir", data.string()},
                                     {"data.train_count", "200"},
                                     {"data.eval_count", "100"},
                                     {"data.eval_outlier_count", "100"},
                                     {"train.batch_size", "16"},
                                     {"train.iterations", "10"},
                                     {"flow.final_couplings", "2"},
                                     {"flow.features", "8"},
                                     {"classifier.width", "8"}});
}

RunConfig small_dense(const fs::path& data) {
  return RunConfig::from_key_values({{"mode", "dense"},
                                     {"data.dir", data.string()},
                                     {"data.scene_size", "32"},
                                     {"data.train_count", "6"},
                                     {"data.eval_count", "3"},
                                     {"train.batch_size", "2"},
                                     {"train.iterations", "6"},
                                     {"train.outlier_sizes", "4,6,8"},
                                     {"flow.couplings_per_scale", "1"},
                                     {"flow.final_couplings", "2"},
                                     {"flow.features", "4"},
                                     {"classifier.width", "2"}});
}

CommandOptions at(const fs::path& out, std::optional<fs::path> ckpt = std::nullopt) {
  CommandOptions o;
  o.out = out;
  o.checkpoint = std::move(ckpt);
  return o;
}

std::string bytes(const fs::path& p) { return read_text(p); }

}  // namespace

TEST_CASE("gen-data writes reproducible corpora that satisfy the data invariants") {
  TempDir dir("cli_gen");
  for (const RunConfig& c : {small_imagewide(dir / "pts"), small_dense(dir / "sc")}) {
    REQUIRE(cmd_gen_data(c, at(c.data_dir)) == 0);
    CHECK(fs::exists(fs::path(c.data_dir) / "manifest.txt"));
    const std::string again = c.data_dir + "_again";
    REQUIRE(cmd_gen_data(c, at(again)) == 0);
    for (const char* f : {"manifest.txt", "train/labels.bin", "eval/labels.bin", "eval/masks.bin"})
      CHECK(bytes(fs::path(c.data_dir) / f) == bytes(fs::path(again) / f));

    const Corpus corpus = read_corpus(c.data_dir);
    CHECK(corpus.mode == c.mode);
    std::set<int> seen(corpus.train.labels.begin(), corpus.train.labels.end());
    CHECK(static_cast<int>(seen.size()) == corpus.classes);
    CHECK(*seen.rbegin() < corpus.classes);
    for (std::size_t i = 0; i < corpus.eval_labels.size(); ++i) {
      const int y = corpus.eval_labels[i];
      CHECK((y == kIgnoreLabel) == (corpus.eval_outlier[i] == 1));
      if (y != kIgnoreLabel) CHECK((y >= 0 && y < corpus.classes));
    }
    if (c.mode == RunMode::dense) {
      CHECK(bytes(fs::path(c.data_dir) / "train/images.bin") == bytes(fs::path(again) / "train/images.bin"));
      for (double v : corpus.train.inputs.values()) CHECK((v >= 0.0 && v <= 1.0));
      // Images round-trip through 8-bit levels exactly.
      const Scene s0 = gen_scene(c.seed, default_inlier_bank(), [&] {
        SceneSpec spec;
        spec.height = spec.width = c.scene_size;
        return spec;
      }());
      for (std::size_t i = 0; i < s0.image.size(); ++i) CHECK(corpus.train.inputs[i] == s0.image[i]);
      const std::size_t hw = c.scene_size * c.scene_size;
      for (std::size_t k = 0; k < c.eval_count; ++k) {
        const auto first = corpus.eval_outlier.begin() + static_cast<long>(k * hw);
        const double share = static_cast<double>(std::count(first, first + static_cast<long>(hw), 1)) / hw;
        CHECK(share > 0.0);
      }
    }
  }
  RunConfig bad = small_imagewide(dir / "x");
  CHECK(cmd_gen_data(bad, at("/proc/borderflow_unwritable")) != 0);
}

TEST_CASE("train: smoke run, lambda = 0, resume equivalence") {
  TempDir dir("cli_train");
  for (RunConfig c : {small_imagewide(dir / "pts"), small_dense(dir / "sc")}) {
    REQUIRE(cmd_gen_data(c, at(c.data_dir)) == 0);
    const fs::path run = dir / (mode_name(c.mode) + "_run");
    REQUIRE(cmd_train(c, at(run)) == 0);
    const auto rows = read_training_log(run / "train_log.csv");
    CHECK(rows.size() == static_cast<std::size_t>(c.train.iterations));
    const Checkpoint ck = load_checkpoint(run / "model.ckpt");
    CHECK(JointState::load(ck, c.train).iteration == c.train.iterations);
    CHECK(RunConfig::from_key_values(read_key_values(run / "config.txt")).to_key_values() == c.to_key_values());

    RunConfig zero = c;
    zero.train.lambda = 0.0;
    REQUIRE(cmd_train(zero, at(dir / "zero")) == 0);
    for (const LogRow& r : read_training_log(dir / "zero" / "train_log.csv")) CHECK(r.kl_term == 0.0);

    RunConfig chk = c;
    chk.checkpoint_every = 3;
    REQUIRE(cmd_train(chk, at(dir / "full")) == 0);
    REQUIRE(cmd_train(chk, at(dir / "part")) == 0);
    REQUIRE(cmd_train(chk, at(dir / "part", dir / "part" / "checkpoints" / "iter_3.ckpt")) == 0);
    CHECK(bytes(dir / "full" / "train_log.csv") == bytes(dir / "part" / "train_log.csv"));
    CHECK(bytes(dir / "full" / "model.ckpt") == bytes(dir / "part" / "model.ckpt"));
    CHECK(bytes(dir / "full" / "model.ckpt") == bytes(run / "model.ckpt"));
    // A fresh directory resumed from the same checkpoint holds only the remaining rows.
    REQUIRE(cmd_train(chk, at(dir / "tail", dir / "full" / "checkpoints" / "iter_3.ckpt")) == 0);
    CHECK(read_training_log(dir / "tail" / "train_log.csv").front().iteration == 3);
    CHECK(bytes(dir / "tail" / "model.ckpt") == bytes(dir / "full" / "model.ckpt"));
    for (const char* d : {"zero", "full", "part", "tail"}) fs::remove_all(dir / d);
  }
  RunConfig missing = small_imagewide(dir / "nowhere");
  CHECK(cmd_train(missing, at(dir / "r")) != 0);
}

TEST_CASE("eval: blocks, determinism, recomputation from exported maps, mode mismatch") {
  TempDir dir("cli_eval");
  RunConfig iw = small_imagewide(dir / "pts");
  RunConfig dn = small_dense(dir / "sc");
  for (RunConfig* c : {&iw, &dn}) {
    REQUIRE(cmd_gen_data(*c, at(c->data_dir)) == 0);
    REQUIRE(cmd_train(*c, at(dir / (mode_name(c->mode) + "_run"))) == 0);
  }
  for (RunConfig* c : {&iw, &dn}) {
    const fs::path ckpt = dir / (mode_name(c->mode) + "_run") / "model.ckpt";
    c->temperatures = {1.0, 10.0};
    REQUIRE(cmd_eval(*c, at(dir / "e1", ckpt)) == 0);
    REQUIRE(cmd_eval(*c, at(dir / "e2", ckpt)) == 0);
    const std::string report = read_text(dir / "e1" / "report.txt");
    CHECK(report == read_text(dir / "e2" / "report.txt"));
    const auto blocks = parse_report(report);
    REQUIRE(blocks.size() == 4);
    CHECK(blocks[0].scoring == Scoring::msp);
    CHECK(blocks[1].temperature == 10.0);
    CHECK(blocks[3].scoring == Scoring::entropy);

    const Array mask = read_score_map(dir / "e1" / "scores" / "outlier_mask.bin").values;
    for (const ReportBlock& b : blocks) {
      const ScoreMapFile f = read_score_map(dir / "e1" / "scores" /
                                            (scoring_name(b.scoring) + "_T" + format_double(b.temperature) + ".bin"));
      CHECK(f.header.scoring_id == scoring_id(b.scoring));
      CHECK(f.header.temperature_milli == static_cast<int>(b.temperature * 1000));
      ScoreSet set;
      std::vector<ScoreSet> per_image(f.values.dim(0));
      const std::size_t hw = f.values.size() / f.values.dim(0);
      for (std::size_t i = 0; i < f.values.size(); ++i) {
        const Label l = mask[i] == 1.0 ? Label::outlier : Label::inlier;
        set.add(f.values[i], l);
        per_image[i / hw].add(f.values[i], l);
      }
      CHECK(b.auroc == auroc(set));
      CHECK(b.ap == average_precision(set));
      CHECK(b.fpr95 == fpr_at_tpr(set, 0.95));
      CHECK(b.tnr95 == tnr_at_tpr(set, 0.95));
      CHECK(b.det_acc == detection_accuracy(set));
      if (c->mode == RunMode::dense) CHECK(*b.per_image_ap == per_image_mean_ap(per_image));
      else CHECK_FALSE(b.per_image_ap.has_value());
    }
    fs::remove_all(dir / "e1");
    fs::remove_all(dir / "e2");
  }
  RunConfig crossed = iw;
  crossed.data_dir = dn.data_dir;
  CHECK(cmd_eval(crossed, at(dir / "x", dir / "imagewide_run" / "model.ckpt")) != 0);
  CHECK(cmd_eval(iw, at(dir / "x")) != 0);
}

TEST_CASE("sample: sizes, determinism, pixel range, divisibility") {
  TempDir dir("cli_sample");
  RunConfig c = small_dense(dir / "sc");
  REQUIRE(cmd_gen_data(c, at(c.data_dir)) == 0);
  REQUIRE(cmd_train(c, at(dir / "run")) == 0);
  const fs::path ckpt = dir / "run" / "model.ckpt";
  c.sample_count = 2;
  c.sample_sizes = {8, 16};
  REQUIRE(cmd_sample(c, at(dir / "s1", ckpt)) == 0);
  REQUIRE(cmd_sample(c, at(dir / "s2", ckpt)) == 0);
  for (const char* f : {"size8_0.ppm", "size8_1.ppm", "size16_0.ppm", "size16_1.ppm"}) {
    REQUIRE(fs::exists(dir / "s1" / "samples" / f));
    CHECK(bytes(dir / "s1" / "samples" / f) == bytes(dir / "s2" / "samples" / f));
    const Array img = read_ppm(dir / "s1" / "samples" / f);
    for (double v : img.values()) CHECK((v >= 0.0 && v <= 1.0));
  }
  CHECK(read_ppm(dir / "s1" / "samples" / "size16_0.ppm").shape() == Shape{3, 16, 16});
  c.sample_sizes = {9};
  CHECK(cmd_sample(c, at(dir / "s3", ckpt)) != 0);

  RunConfig solo = c;
  solo.train.joint = false;
  REQUIRE(cmd_train(solo, at(dir / "solo")) == 0);
  CHECK(cmd_sample(solo, at(dir / "s4", dir / "solo" / "model.ckpt")) != 0);
}

TEST_CASE("gradcheck command") {
  std::ostringstream log;
  CommandOptions o;
  o.log = &log;
  CHECK(cmd_gradcheck(o, false) == 0);
  const std::string text = log.str();
  for (const char* loss : {"classifier_compound/flow", "flow_nll/images", "dense_openset/flow"})
    CHECK(text.find(loss) != std::string::npos);
  CHECK(text.find("max_rel_error") != std::string::npos);
  CHECK(cmd_gradcheck(o, true) != 0);
}
