#include <cmath>
#include <fstream>
#include <limits>

#include "borderflow/io.hpp"
#include "borderflow/run.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace borderflow;
using borderflow::testing::random_array;
using borderflow::testing::TempDir;

TEST_CASE("score-map binary round trip and header") {
  TempDir dir("io_scoremap");
  Rng rng(1);
  Array a = random_array({2, 3, 4, 5}, rng);
  for (double& v : a.values()) v = static_cast<float>(v);
  write_score_map(dir / "a.bin", a, 1, 2.0);
  const ScoreMapFile f = read_score_map(dir / "a.bin");
  CHECK(f.values == a);
  CHECK(f.header.n == 2);
  CHECK(f.header.channels == 3);
  CHECK(f.header.height == 4);
  CHECK(f.header.width == 5);
  CHECK(f.header.scoring_id == 1);
  CHECK(f.header.temperature_milli == 2000);
  CHECK(std::filesystem::file_size(dir / "a.bin") == 32 + 4 * a.size());

  // Raw bytes: little-endian int32 header, then float32 payload.
  std::ifstream in(dir / "a.bin", std::ios::binary);
  unsigned char head[8];
  in.read(reinterpret_cast<char*>(head), 8);
  CHECK(head[0] == 0x42);
  CHECK(head[3] == 0x50);
  CHECK(head[4] == 1);

  const Array maps = random_array({3, 2, 2}, rng);
  write_score_map(dir / "b.bin", maps);
  const ScoreMapFile g = read_score_map(dir / "b.bin");
  CHECK(g.values.shape() == Shape{3, 1, 2, 2});
  CHECK(g.header.scoring_id == kNoScoring);
  for (std::size_t i = 0; i < maps.size(); ++i) CHECK(g.values[i] == static_cast<float>(maps[i]));

  Array bad({1, 1, 1, 1}, std::numeric_limits<double>::infinity());
  CHECK_THROWS_AS(write_score_map(dir / "c.bin", bad), DomainError);
  CHECK_THROWS_AS(write_score_map(dir / "c.bin", Array({4})), ShapeError);
  std::filesystem::resize_file(dir / "a.bin", 40);
  CHECK_THROWS_AS(read_score_map(dir / "a.bin"), FormatError);
  write_text(dir / "d.bin", std::string(64, 'x'));
  CHECK_THROWS_AS(read_score_map(dir / "d.bin"), FormatError);
  write_score_map(dir / "e.bin", maps);
  std::ofstream(dir / "e.bin", std::ios::app | std::ios::binary) << 'z';
  CHECK_THROWS_AS(read_score_map(dir / "e.bin"), FormatError);
}

TEST_CASE("csv export keeps every double exactly") {
  TempDir dir("io_csv");
  Rng rng(2);
  const Array a = random_array({7, 3}, rng, -1e6, 1e6);
  write_csv(dir / "a.csv", a);
  CHECK(read_csv(dir / "a.csv") == a);
  const Array col = Array::from({0.1, -2.5, 1e-300});
  write_csv(dir / "b.csv", col);
  CHECK(read_csv(dir / "b.csv").storage() == col.storage());
  write_text(dir / "c.csv", "1,2\n3\n");
  CHECK_THROWS_AS(read_csv(dir / "c.csv"), FormatError);
}

TEST_CASE("ppm writer maps [0,1] to 8-bit levels") {
  TempDir dir("io_ppm");
  Array img({3, 2, 3});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(i) / 17.0;
  img[0] = -0.5;
  img[1] = 1.7;
  write_ppm(dir / "a.ppm", img);
  const std::string raw = read_text(dir / "a.ppm");
  CHECK(raw.rfind("P6\n3 2\n255\n", 0) == 0);
  CHECK(raw.size() == 11 + 18);
  const Array back = read_ppm(dir / "a.ppm");
  CHECK(back[0] == 0.0);
  CHECK(back[1] == 1.0);
  for (std::size_t i = 2; i < img.size(); ++i) CHECK(back[i] == std::round(img[i] * 255.0) / 255.0);
  CHECK_THROWS_AS(write_ppm(dir / "b.ppm", Array({1, 2, 2})), ShapeError);
}

TEST_CASE("training log: header, append, truncate on resume") {
  TempDir dir("io_log");
  const auto path = dir / "log.csv";
  std::vector<LogRow> rows;
  {
    TrainingLog log(path);
    for (long i = 0; i < 5; ++i) {
      LogRow r;
      r.iteration = i;
      r.loss = 1.0 / (i + 3);
      r.ce = 0.1 * i;
      r.kl_term = 1e-17 * i;
      r.nll = -3.25;
      r.lr_classifier = 1e-3;
      r.lr_flow = 2e-3;
      r.outlier_h = r.outlier_w = 8 + i;
      log.append(r);
      rows.push_back(r);
    }
  }
  CHECK(read_text(path).rfind(std::string(TrainingLog::kHeader) + "\n", 0) == 0);
  const auto back = read_training_log(path);
  REQUIRE(back.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(back[i].loss == rows[i].loss);
    CHECK(back[i].kl_term == rows[i].kl_term);
    CHECK(back[i].outlier_w == rows[i].outlier_w);
  }
  { TrainingLog resumed(path, 3); }
  CHECK(read_training_log(path).size() == 3);
  write_text(dir / "other.csv", "a,b\n");
  CHECK_THROWS_AS(TrainingLog(dir / "other.csv"), FormatError);
}

TEST_CASE("key-value config text") {
  const KeyValues kv = parse_key_values("# comment\n  a = 1 \n\nb=two words # trailing\nc =\na = 3\n");
  CHECK(kv.size() == 3);
  CHECK(kv.at("a") == "3");
  CHECK(kv.at("b") == "two words");
  CHECK(kv.at("c").empty());
  CHECK(parse_key_values(format_key_values(kv)) == kv);
  CHECK_THROWS_AS(parse_key_values("novalue\n"), FormatError);
  CHECK_THROWS_AS(parse_key_values(" = 3\n"), FormatError);
}

TEST_CASE("run config schema, defaults and echo round trip") {
  for (RunMode m : {RunMode::imagewide, RunMode::dense}) {
    const RunConfig d = RunConfig::from_key_values({{"mode", mode_name(m)}});
    const KeyValues echo = d.to_key_values();
    CHECK(RunConfig::from_key_values(echo).to_key_values() == echo);
    CHECK(echo.size() == config_keys().size());
  }
  const RunConfig dense = RunConfig::from_key_values({{"mode", "dense"}});
  CHECK(dense.train.lambda == 1e-3);
  CHECK(dense.train.iterations == 5000);
  CHECK(dense.train.outlier_sizes == std::vector<std::size_t>{8, 10, 12, 14, 16});
  const RunConfig iw = RunConfig::from_key_values({});
  CHECK(iw.train.lambda == 1.0);
  CHECK(iw.train.iterations == 2000);
  CHECK(iw.temperatures == std::vector<double>{1.0, 2.0, 10.0});

  const RunConfig c = RunConfig::from_key_values(
      {{"seed", "9"}, {"train.lambda", "0.25"}, {"eval.temperatures", "0.5, 4"}, {"eval.scorings", "entropy"}});
  CHECK(c.seed == 9);
  CHECK(c.train.seed == 9);
  CHECK(c.train.lambda == 0.25);
  CHECK(c.temperatures == std::vector<double>{0.5, 4.0});
  CHECK(c.scorings == std::vector<Scoring>{Scoring::entropy});

  CHECK_THROWS_AS(RunConfig::from_key_values({{"train.lamda", "1"}}), FormatError);
  CHECK_THROWS_AS(RunConfig::from_key_values({{"seed", "x"}}), FormatError);
  CHECK_THROWS_AS(RunConfig::from_key_values({{"mode", "pixels"}}), FormatError);
  CHECK_THROWS_AS(RunConfig::from_key_values({{"eval.temperatures", "0"}}), FormatError);
  CHECK_THROWS_AS(RunConfig::from_key_values({{"train.joint", "maybe"}}), FormatError);
  CHECK_THROWS(RunConfig::from_key_values({{"mode", "dense"}, {"train.outlier_sizes", "8,9"}}));
  CHECK_THROWS(RunConfig::from_key_values({{"mode", "dense"}, {"classifier.arch", "points_mlp"}}));
}
