#include "borderflow/run.hpp"

#include <charconv>
#include <cmath>
#include <ostream>
#include <sstream>

#include "borderflow/checkpoint.hpp"
#include "borderflow/gradcheck.hpp"
#include "borderflow/metrics.hpp"

namespace borderflow {
namespace {

namespace fs = std::filesystem;

std::ostream& out_of(const CommandOptions& opt) {
  static std::ostream discard(nullptr);
  return opt.log ? *opt.log : discard;
}

template <class T>
std::string join(const std::vector<T>& v, const auto& fmt) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v[i]);
  return s;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, ',')) {
    const auto b = cur.find_first_not_of(" \t"), e = cur.find_last_not_of(" \t");
    if (b == std::string::npos) throw FormatError("empty entry in list '" + s + "'");
    out.push_back(cur.substr(b, e - b + 1));
  }
  if (out.empty()) throw FormatError("empty list");
  return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& s) {
  T v{};
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw FormatError("config key '" + key + "': cannot parse '" + s + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw FormatError("config key '" + key + "': expected true or false, got '" + s + "'");
}

std::string bool_text(bool b) { return b ? "true" : "false"; }
std::string size_text(std::size_t v) { return std::to_string(v); }

PointSpec point_spec(const RunConfig& c) {
  if (c.point_kind == "gaussians") return PointSpec::two_gaussians(c.point_sigma);
  if (c.point_kind == "moons") return PointSpec::two_moons(c.moon_noise);
  throw FormatError("data.point_kind must be gaussians or moons");
}

std::string texture_text(const Texture& t) {
  std::ostringstream os;
  os << format_double(t.base[0]) << ' ' << format_double(t.base[1]) << ' ' << format_double(t.base[2]) << ' '
     << format_double(t.noise) << ' ' << t.stripe_period << ' ' << t.stripe_orientation << ' '
     << format_double(t.stripe_amplitude);
  return os.str();
}

Array labels_array(const std::vector<int>& labels, std::size_t n, std::size_t h, std::size_t w) {
  Array a({n, 1, h, w});
  for (std::size_t i = 0; i < labels.size(); ++i) a[i] = labels[i];
  return a;
}

std::vector<int> labels_from(const Array& a) {
  std::vector<int> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = static_cast<int>(a[i]);
  return out;
}

double to_float32(double v) { return static_cast<double>(static_cast<float>(v)); }

Checkpoint read_run_checkpoint(const CommandOptions& opt) {
  if (!opt.checkpoint) throw std::invalid_argument("--checkpoint is required");
  if (!fs::exists(*opt.checkpoint)) throw std::invalid_argument("checkpoint not found: " + opt.checkpoint->string());
  return load_checkpoint(*opt.checkpoint);
}

void echo_config(const RunConfig& config, const CommandOptions& opt) {
  write_text(opt.out / "config.txt", format_key_values(config.to_key_values()));
}

int fail(const CommandOptions& opt, const std::string& what, int code = 1) {
  out_of(opt) << "error: " << what << '\n';
  return code;
}

}  // namespace

std::string mode_name(RunMode m) { return m == RunMode::imagewide ? "imagewide" : "dense"; }

RunMode parse_mode(const std::string& s) {
  if (s == "imagewide") return RunMode::imagewide;
  if (s == "dense") return RunMode::dense;
  throw FormatError("mode must be imagewide or dense, got '" + s + "'");
}

RunConfig RunConfig::defaults(RunMode mode) {
  RunConfig c;
  c.mode = mode;
  if (mode == RunMode::imagewide) {
    c.train_count = 2000;
    c.eval_count = 1000;
    c.eval_outlier_count = 1000;
    c.train.batch_size = 64;
    c.train.iterations = 2000;
    c.train.lambda = 1.0;
    c.classifier = {Architecture::points_mlp, 2, 2, 32};
    c.flow = FlowConfig::points2d();
  } else {
    c.train_count = 200;
    c.eval_count = 50;
    c.train.batch_size = 4;
    c.train.iterations = 5000;
    c.train.lambda = 1e-3;
    c.classifier = {Architecture::dense, 3, 5, 8};
    c.flow = FlowConfig::scenes();
  }
  c.train.seed = c.seed;
  return c;
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys{
      "mode",
      "seed",
      "data.dir",
      "data.train_count",
      "data.eval_count",
      "data.eval_outlier_count",
      "data.point_kind",
      "data.point_sigma",
      "data.moon_noise",
      "data.shell_inner",
      "data.shell_outer",
      "data.scene_size",
      "train.lambda",
      "train.batch_size",
      "train.iterations",
      "train.n_out",
      "train.outlier_sizes",
      "train.joint",
      "train.paste",
      "train.classifier_lr",
      "train.classifier_lr_min",
      "train.flow_lr",
      "train.checkpoint_every",
      "classifier.arch",
      "classifier.width",
      "classifier.classes",
      "flow.squeeze_count",
      "flow.couplings_per_scale",
      "flow.final_couplings",
      "flow.res_blocks",
      "flow.features",
      "flow.dequant_levels",
      "flow.logit_alpha",
      "eval.scorings",
      "eval.temperatures",
      "eval.export_scores",
      "sample.count",
      "sample.sizes",
  };
  return keys;
}

RunConfig RunConfig::from_key_values(const KeyValues& kv) {
  const auto& keys = config_keys();
  for (const auto& [k, v] : kv)
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) throw FormatError("unknown config key '" + k + "'");
  auto mode_it = kv.find("mode");
  RunConfig c = defaults(mode_it == kv.end() ? RunMode::imagewide : parse_mode(mode_it->second));
  auto get = [&](const char* key) -> const std::string* {
    auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };
  auto num = [&]<class T>(const char* key, T& field) {
    if (auto s = get(key)) field = parse_number<T>(key, *s);
  };
  num("seed", c.seed);
  if (auto s = get("data.dir")) c.data_dir = *s;
  num("data.train_count", c.train_count);
  num("data.eval_count", c.eval_count);
  num("data.eval_outlier_count", c.eval_outlier_count);
  if (auto s = get("data.point_kind")) c.point_kind = *s;
  num("data.point_sigma", c.point_sigma);
  num("data.moon_noise", c.moon_noise);
  num("data.shell_inner", c.shell_inner);
  num("data.shell_outer", c.shell_outer);
  num("data.scene_size", c.scene_size);
  num("train.lambda", c.train.lambda);
  num("train.batch_size", c.train.batch_size);
  num("train.iterations", c.train.iterations);
  num("train.n_out", c.train.n_out);
  if (auto s = get("train.outlier_sizes")) {
    c.train.outlier_sizes.clear();
    for (const auto& e : split_list(*s)) c.train.outlier_sizes.push_back(parse_number<std::size_t>("train.outlier_sizes", e));
  }
  if (auto s = get("train.joint")) c.train.joint = parse_bool("train.joint", *s);
  if (auto s = get("train.paste")) c.train.paste = parse_bool("train.paste", *s);
  num("train.classifier_lr", c.train.classifier_lr);
  num("train.classifier_lr_min", c.train.classifier_lr_min);
  num("train.flow_lr", c.train.flow_lr);
  num("train.checkpoint_every", c.checkpoint_every);
  if (auto s = get("classifier.arch")) c.classifier.arch = parse_architecture(*s);
  num("classifier.width", c.classifier.width);
  num("classifier.classes", c.classifier.classes);
  num("flow.squeeze_count", c.flow.squeeze_count);
  num("flow.couplings_per_scale", c.flow.couplings_per_scale);
  num("flow.final_couplings", c.flow.final_couplings);
  num("flow.res_blocks", c.flow.res_blocks);
  num("flow.features", c.flow.features);
  num("flow.dequant_levels", c.flow.dequant_levels);
  num("flow.logit_alpha", c.flow.logit_alpha);
  if (auto s = get("eval.scorings")) {
    c.scorings.clear();
    for (const auto& e : split_list(*s)) c.scorings.push_back(parse_scoring(e));
  }
  if (auto s = get("eval.temperatures")) {
    c.temperatures.clear();
    for (const auto& e : split_list(*s)) c.temperatures.push_back(parse_number<double>("eval.temperatures", e));
  }
  if (auto s = get("eval.export_scores")) c.export_scores = parse_bool("eval.export_scores", *s);
  num("sample.count", c.sample_count);
  if (auto s = get("sample.sizes")) {
    c.sample_sizes.clear();
    for (const auto& e : split_list(*s)) c.sample_sizes.push_back(parse_number<std::size_t>("sample.sizes", e));
  }
  c.train.seed = c.seed;

  point_spec(c);
  if (c.mode == RunMode::imagewide && c.classifier.arch != Architecture::points_mlp)
    throw FormatError("imagewide mode trains on 2-D points and needs classifier.arch = points_mlp");
  if (c.mode == RunMode::dense && c.classifier.arch != Architecture::dense)
    throw FormatError("dense mode needs classifier.arch = dense");
  for (double t : c.temperatures)
    if (!(t > 0.0)) throw FormatError("eval.temperatures must be positive");
  c.classifier.validate();
  c.flow.validate();
  c.train.validate(&c.flow, c.mode == RunMode::dense ? c.scene_size : 0, c.mode == RunMode::dense ? c.scene_size : 0);
  return c;
}

KeyValues RunConfig::to_key_values() const {
  auto fmt_d = [](double v) { return format_double(v); };
  return {
      {"mode", mode_name(mode)},
      {"seed", std::to_string(seed)},
      {"data.dir", data_dir},
      {"data.train_count", size_text(train_count)},
      {"data.eval_count", size_text(eval_count)},
      {"data.eval_outlier_count", size_text(eval_outlier_count)},
      {"data.point_kind", point_kind},
      {"data.point_sigma", format_double(point_sigma)},
      {"data.moon_noise", format_double(moon_noise)},
      {"data.shell_inner", format_double(shell_inner)},
      {"data.shell_outer", format_double(shell_outer)},
      {"data.scene_size", size_text(scene_size)},
      {"train.lambda", format_double(train.lambda)},
      {"train.batch_size", size_text(train.batch_size)},
      {"train.iterations", std::to_string(train.iterations)},
      {"train.n_out", size_text(train.n_out)},
      {"train.outlier_sizes", join(train.outlier_sizes, size_text)},
      {"train.joint", bool_text(train.joint)},
      {"train.paste", bool_text(train.paste)},
      {"train.classifier_lr", format_double(train.classifier_lr)},
      {"train.classifier_lr_min", format_double(train.classifier_lr_min)},
      {"train.flow_lr", format_double(train.flow_lr)},
      {"train.checkpoint_every", std::to_string(checkpoint_every)},
      {"classifier.arch", architecture_name(classifier.arch)},
      {"classifier.width", std::to_string(classifier.width)},
      {"classifier.classes", std::to_string(classifier.classes)},
      {"flow.squeeze_count", std::to_string(flow.squeeze_count)},
      {"flow.couplings_per_scale", std::to_string(flow.couplings_per_scale)},
      {"flow.final_couplings", std::to_string(flow.final_couplings)},
      {"flow.res_blocks", std::to_string(flow.res_blocks)},
      {"flow.features", std::to_string(flow.features)},
      {"flow.dequant_levels", std::to_string(flow.dequant_levels)},
      {"flow.logit_alpha", format_double(flow.logit_alpha)},
      {"eval.scorings", join(scorings, scoring_name)},
      {"eval.temperatures", join(temperatures, fmt_d)},
      {"eval.export_scores", bool_text(export_scores)},
      {"sample.count", size_text(sample_count)},
      {"sample.sizes", join(sample_sizes, size_text)},
  };
}

void write_corpus(const fs::path& dir, const RunConfig& c) {
  KeyValues manifest{{"mode", mode_name(c.mode)},
                     {"seed", std::to_string(c.seed)},
                     {"train_count", size_text(c.train_count)},
                     {"eval_count", size_text(c.eval_count)}};
  if (c.mode == RunMode::imagewide) {
    const PointSpec spec = point_spec(c);
    const PointDataset train = gen_point_dataset(spec, c.train_count, c.seed);
    const PointDataset eval = gen_point_dataset(spec, c.eval_count, c.seed + 1);
    const Array outliers = c.point_kind == "gaussians"
                               ? gen_shell_outliers(spec, c.shell_inner, c.shell_outer, c.eval_outlier_count, c.seed + 2)
                               : Array({0, 2});
    if (c.point_kind != "gaussians" && c.eval_outlier_count > 0)
      throw std::invalid_argument("held-out outlier shells need data.point_kind = gaussians");
    const std::size_t ne = c.eval_count + c.eval_outlier_count;
    Array inputs({ne, 2, 1, 1});
    std::vector<int> labels(ne, kIgnoreLabel);
    Array mask({ne, 1, 1, 1});
    std::copy_n(eval.points.data(), eval.points.size(), inputs.data());
    std::copy_n(outliers.data(), outliers.size(), inputs.data() + eval.points.size());
    std::copy(eval.labels.begin(), eval.labels.end(), labels.begin());
    for (std::size_t i = c.eval_count; i < ne; ++i) mask[i] = 1.0;
    write_score_map(dir / "train" / "inputs.bin", train.points.reshaped({c.train_count, 2, 1, 1}));
    write_score_map(dir / "train" / "labels.bin", labels_array(train.labels, c.train_count, 1, 1));
    write_score_map(dir / "eval" / "inputs.bin", inputs);
    write_score_map(dir / "eval" / "labels.bin", labels_array(labels, ne, 1, 1));
    write_score_map(dir / "eval" / "masks.bin", mask);
    manifest["classes"] = std::to_string(train.classes);
    manifest["channels"] = "2";
    manifest["height"] = manifest["width"] = "1";
    manifest["eval_outlier_count"] = size_text(c.eval_outlier_count);
    manifest["point_kind"] = c.point_kind;
    manifest["point_sigma"] = format_double(c.point_sigma);
    manifest["moon_noise"] = format_double(c.moon_noise);
    manifest["shell_inner"] = format_double(c.shell_inner);
    manifest["shell_outer"] = format_double(c.shell_outer);
    manifest["seed.train"] = std::to_string(c.seed);
    manifest["seed.eval"] = std::to_string(c.seed + 1);
    manifest["seed.outliers"] = std::to_string(c.seed + 2);
  } else {
    SceneSpec spec;
    spec.height = spec.width = c.scene_size;
    const TextureBank in = default_inlier_bank(), out = default_outlier_bank();
    const std::size_t hw = c.scene_size * c.scene_size;
    auto generate = [&](std::size_t n, std::uint64_t first_seed, bool with_outlier, const fs::path& split) {
      Array images({n, 3, c.scene_size, c.scene_size});
      Array labels({n, 1, c.scene_size, c.scene_size});
      Array masks({n, 1, c.scene_size, c.scene_size});
#pragma omp parallel for schedule(dynamic)
      for (long k = 0; k < static_cast<long>(n); ++k) {
        const std::size_t i = static_cast<std::size_t>(k);
        const Scene s = with_outlier ? gen_eval_scene_with_outlier(first_seed + i, in, out, spec)
                                     : gen_scene(first_seed + i, in, spec);
        for (std::size_t p = 0; p < 3 * hw; ++p) images[i * 3 * hw + p] = std::round(s.image[p] * 255.0);
        for (std::size_t p = 0; p < hw; ++p) {
          labels[i * hw + p] = s.labels[p];
          masks[i * hw + p] = s.outlier[p];
        }
      }
      write_score_map(split / "images.bin", images);
      write_score_map(split / "labels.bin", labels);
      if (with_outlier) write_score_map(split / "masks.bin", masks);
    };
    generate(c.train_count, c.seed, false, dir / "train");
    generate(c.eval_count, c.seed + c.train_count, true, dir / "eval");
    manifest["classes"] = std::to_string(spec.classes);
    manifest["channels"] = "3";
    manifest["height"] = manifest["width"] = size_text(c.scene_size);
    manifest["image_scale"] = "255";
    manifest["seed.train_first"] = std::to_string(c.seed);
    manifest["seed.eval_first"] = std::to_string(c.seed + c.train_count);
    for (std::size_t i = 0; i < in.size(); ++i) manifest["bank.inlier." + std::to_string(i)] = texture_text(in[i]);
    for (std::size_t i = 0; i < out.size(); ++i) manifest["bank.outlier." + std::to_string(i)] = texture_text(out[i]);
  }
  write_text(dir / "manifest.txt", format_key_values(manifest));
}

Corpus read_corpus(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.txt")) throw std::invalid_argument("no corpus manifest in " + dir.string());
  const KeyValues m = read_key_values(dir / "manifest.txt");
  Corpus c;
  c.mode = parse_mode(m.at("mode"));
  c.classes = std::stoi(m.at("classes"));
  if (c.mode == RunMode::imagewide) {
    const Array train = read_score_map(dir / "train" / "inputs.bin").values;
    c.train.inputs = train.reshaped({train.dim(0), 2});
    c.train.labels = labels_from(read_score_map(dir / "train" / "labels.bin").values);
    const Array eval = read_score_map(dir / "eval" / "inputs.bin").values;
    c.eval_inputs = eval.reshaped({eval.dim(0), 2});
  } else {
    auto scaled = [&](const fs::path& p) {
      Array a = read_score_map(p).values;
      for (double& v : a.values()) v /= 255.0;
      return a;
    };
    c.train.inputs = scaled(dir / "train" / "images.bin");
    c.train.labels = labels_from(read_score_map(dir / "train" / "labels.bin").values);
    c.eval_inputs = scaled(dir / "eval" / "images.bin");
  }
  c.eval_labels = labels_from(read_score_map(dir / "eval" / "labels.bin").values);
  const Array mask = read_score_map(dir / "eval" / "masks.bin").values;
  c.eval_outlier.assign(mask.values().begin(), mask.values().end());
  return c;
}

std::string format_report(RunMode mode, const std::vector<ReportBlock>& blocks) {
  std::ostringstream os;
  os << "mode = " << mode_name(mode) << '\n';
  for (const ReportBlock& b : blocks) {
    os << '\n' << '[' << scoring_name(b.scoring) << " T=" << format_double(b.temperature) << "]\n";
    os << "auroc = " << format_double(b.auroc) << '\n';
    os << "ap = " << format_double(b.ap) << '\n';
    os << "fpr95 = " << format_double(b.fpr95) << '\n';
    os << "tnr95 = " << format_double(b.tnr95) << '\n';
    os << "det_acc = " << format_double(b.det_acc) << '\n';
    os << "miou = " << format_double(b.miou) << '\n';
    os << "per_image_ap = " << (b.per_image_ap ? format_double(*b.per_image_ap) : "na") << '\n';
    os << "accuracy = " << format_double(b.accuracy) << '\n';
  }
  return os.str();
}

std::vector<ReportBlock> parse_report(const std::string& text) {
  std::vector<ReportBlock> blocks;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line.front() == '[') {
      const auto sp = line.find(" T=");
      if (sp == std::string::npos || line.back() != ']') throw FormatError("report: malformed block header");
      ReportBlock b;
      b.scoring = parse_scoring(line.substr(1, sp - 1));
      b.temperature = parse_number<double>("T", line.substr(sp + 3, line.size() - sp - 4));
      blocks.push_back(b);
      continue;
    }
    const auto kv = parse_key_values(line, "report");
    const auto& [k, v] = *kv.begin();
    if (blocks.empty()) continue;
    ReportBlock& b = blocks.back();
    if (k == "per_image_ap") {
      if (v != "na") b.per_image_ap = parse_number<double>(k, v);
      continue;
    }
    const double x = parse_number<double>(k, v);
    if (k == "auroc") b.auroc = x;
    else if (k == "ap") b.ap = x;
    else if (k == "fpr95") b.fpr95 = x;
    else if (k == "tnr95") b.tnr95 = x;
    else if (k == "det_acc") b.det_acc = x;
    else if (k == "miou") b.miou = x;
    else if (k == "accuracy") b.accuracy = x;
    else throw FormatError("report: unknown field '" + k + "'");
  }
  return blocks;
}

std::vector<ReportBlock> evaluate(const ClassifierModel& model, const Corpus& corpus,
                                  const std::vector<Scoring>& scorings, const std::vector<double>& temperatures,
                                  const fs::path& export_dir) {
  const bool dense = corpus.mode == RunMode::dense;
  if (dense != model.config().is_dense()) throw std::invalid_argument("checkpoint and corpus disagree on the mode");
  if (model.config().classes != corpus.classes) throw std::invalid_argument("checkpoint and corpus disagree on C");
  const std::size_t n = corpus.eval_inputs.dim(0);
  const std::size_t h = dense ? corpus.eval_inputs.dim(2) : 1, w = dense ? corpus.eval_inputs.dim(3) : 1;
  const std::size_t c = static_cast<std::size_t>(corpus.classes), hw = h * w;

  Array logits({n, c, h, w});
  const std::size_t chunk = dense ? 8 : n;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t m = std::min(chunk, n - start);
    const std::size_t stride = corpus.eval_inputs.size() / n;
    Shape s = corpus.eval_inputs.shape();
    s[0] = m;
    Array x(s, std::vector<double>(corpus.eval_inputs.data() + start * stride,
                                   corpus.eval_inputs.data() + (start + m) * stride));
    const Array l = model.predict_logits(x);
    std::copy_n(l.data(), l.size(), logits.data() + start * c * hw);
  }

  // Segmentation quality on inlier pixels; argmax does not depend on T.
  ConfusionAccumulator acc(c);
  const std::vector<int> pred = argmax_classes(logits);
  std::size_t correct = 0, counted = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int y = corpus.eval_labels[i];
    if (y == kIgnoreLabel) continue;
    ++counted;
    correct += pred[i] == y;
  }
  acc.add(pred, corpus.eval_labels, kIgnoreLabel);
  const double seg_miou = miou(acc);
  const double accuracy = static_cast<double>(correct) / static_cast<double>(counted);

  if (!export_dir.empty()) write_score_map(export_dir / "outlier_mask.bin",
                                           labels_array({corpus.eval_outlier.begin(), corpus.eval_outlier.end()}, n, h, w));
  std::vector<ReportBlock> blocks;
  for (Scoring scoring : scorings)
    for (double t : temperatures) {
      Array s = score(softmax_with_temperature(logits, t), scoring);
      for (double& v : s.values()) v = to_float32(v);
      if (!export_dir.empty())
        write_score_map(export_dir / (scoring_name(scoring) + "_T" + format_double(t) + ".bin"),
                        s.reshaped({n, h, w}), scoring_id(scoring), t);
      ScoreSet all;
      std::vector<ScoreSet> per_image(n);
      for (std::size_t i = 0; i < n * hw; ++i) {
        const Label l = corpus.eval_outlier[i] ? Label::outlier : Label::inlier;
        all.add(s[i], l);
        per_image[i / hw].add(s[i], l);
      }
      ReportBlock b;
      b.scoring = scoring;
      b.temperature = t;
      b.auroc = auroc(all);
      b.ap = average_precision(all);
      b.fpr95 = fpr_at_tpr(all, 0.95);
      b.tnr95 = tnr_at_tpr(all, 0.95);
      b.det_acc = detection_accuracy(all);
      b.miou = seg_miou;
      b.accuracy = accuracy;
      if (dense) b.per_image_ap = per_image_mean_ap(per_image);
      blocks.push_back(b);
    }
  return blocks;
}

int cmd_gen_data(const RunConfig& config, const CommandOptions& opt) {
  try {
    write_corpus(opt.out, config);
    echo_config(config, opt);
    out_of(opt) << "corpus written to " << opt.out.string() << '\n';
    return 0;
  } catch (const std::exception& e) {
    return fail(opt, e.what());
  }
}

int cmd_train(const RunConfig& config, const CommandOptions& opt) {
  std::ostream& log = out_of(opt);
  try {
    if (config.data_dir.empty()) return fail(opt, "data.dir is not set");
    const Corpus corpus = read_corpus(config.data_dir);
    if (corpus.mode != config.mode) return fail(opt, "corpus mode " + mode_name(corpus.mode) + " does not match");
    if (corpus.classes != config.classifier.classes)
      return fail(opt, "classifier.classes does not match the corpus (" + std::to_string(corpus.classes) + ")");
    const std::optional<FlowConfig> flow_cfg =
        config.train.joint ? std::optional<FlowConfig>(config.flow) : std::nullopt;
    JointState state = [&] {
      if (!opt.checkpoint) return init_joint_state(config.train, config.classifier, flow_cfg);
      const Checkpoint ck = read_run_checkpoint(opt);
      if (ck.meta_at("run.mode") != mode_name(config.mode)) throw std::invalid_argument("checkpoint mode mismatch");
      return JointState::load(ck, config.train);
    }();
    fs::create_directories(opt.out);
    echo_config(config, opt);
    TrainingLog csv(opt.out / "train_log.csv", state.iteration);
    auto save = [&](const fs::path& path) {
      Checkpoint ck;
      ck.meta["run.mode"] = mode_name(config.mode);
      state.save(ck);
      fs::create_directories(path.parent_path());
      save_checkpoint(path, ck);
    };
    const LogSink sink = [&](const LogRow& row) {
      csv.append(row);
      if (state.iteration % 100 == 0 || state.iteration == config.train.iterations)
        log << "iter " << state.iteration << " loss " << row.loss << " nll " << row.nll << '\n';
      if (config.checkpoint_every > 0 && state.iteration % config.checkpoint_every == 0)
        save(opt.out / "checkpoints" / ("iter_" + std::to_string(state.iteration) + ".ckpt"));
    };
    if (config.mode == RunMode::imagewide) train_imagewide(config.train, state, corpus.train, sink);
    else train_dense(config.train, state, corpus.train, sink);
    save(opt.out / "model.ckpt");
    log << "final checkpoint " << (opt.out / "model.ckpt").string() << '\n';
    return 0;
  } catch (const TrainingDiverged& e) {
    return fail(opt, e.what(), 3);
  } catch (const std::exception& e) {
    return fail(opt, e.what());
  }
}

int cmd_eval(const RunConfig& config, const CommandOptions& opt) {
  try {
    if (config.data_dir.empty()) return fail(opt, "data.dir is not set");
    const Checkpoint ck = read_run_checkpoint(opt);
    const Corpus corpus = read_corpus(config.data_dir);
    if (ck.meta_at("run.mode") != mode_name(corpus.mode))
      return fail(opt, "checkpoint mode " + ck.meta_at("run.mode") + " does not match the corpus", 2);
    const ClassifierModel model = ClassifierModel::load(ck, "cls.");
    fs::create_directories(opt.out);
    echo_config(config, opt);
    const auto blocks = evaluate(model, corpus, config.scorings, config.temperatures,
                                 config.export_scores ? opt.out / "scores" : fs::path());
    const std::string report = format_report(corpus.mode, blocks);
    write_text(opt.out / "report.txt", report);
    out_of(opt) << report;
    return 0;
  } catch (const std::exception& e) {
    return fail(opt, e.what());
  }
}

int cmd_sample(const RunConfig& config, const CommandOptions& opt) {
  try {
    const Checkpoint ck = read_run_checkpoint(opt);
    if (ck.meta_at("state.has_flow") != "1") return fail(opt, "checkpoint holds no flow");
    const FlowModel flow = FlowModel::load(ck, "flow.");
    fs::create_directories(opt.out);
    echo_config(config, opt);
    Rng rng(config.seed);
    if (flow.config().domain == FlowDomain::points) {
      Tape t;
      const Array x = flow.to_data_range(t, t.constant(flow.sample(config.sample_count, 1, 1, rng))).value();
      write_csv(opt.out / "samples" / "points.csv", x);
      return 0;
    }
    for (std::size_t size : config.sample_sizes) {
      if (size == 0 || size % flow.config().extent_divisor() != 0)
        return fail(opt, "sample size " + std::to_string(size) + " is not divisible by " +
                             std::to_string(flow.config().extent_divisor()));
    }
    for (std::size_t size : config.sample_sizes) {
      Tape t;
      const Array x =
          flow.to_data_range(t, t.constant(flow.sample(config.sample_count, size, size, rng))).value();
      const std::size_t per = 3 * size * size;
      for (std::size_t k = 0; k < config.sample_count; ++k) {
        Array img({3, size, size}, std::vector<double>(x.data() + k * per, x.data() + (k + 1) * per));
        write_ppm(opt.out / "samples" / ("size" + std::to_string(size) + "_" + std::to_string(k) + ".ppm"), img);
      }
    }
    out_of(opt) << "samples written to " << (opt.out / "samples").string() << '\n';
    return 0;
  } catch (const std::exception& e) {
    return fail(opt, e.what());
  }
}

std::vector<GradcheckResult> run_gradchecks(double tolerance, bool corrupt) {
  GradCheckOptions options;
  options.tolerance = tolerance;
  options.max_coords_per_param = 6;
  if (corrupt)
    options.analytic_hook = [](ParameterSet& params) {
      for (auto& [name, p] : params)
        for (double& g : p.grad.values()) g = g * 1.01 + 1e-3;
    };
  std::vector<GradcheckResult> results;
  auto record = [&](const std::string& name, const GradCheckReport& r) {
    results.push_back({name, r.max_rel_error, r.coords_checked, r.passed() && r.max_rel_error < tolerance});
  };

  Rng rng(2024);
  // Image-wide classifier loss, both parameter sets.
  {
    ClassifierModel cls({Architecture::points_mlp, 2, 3, 6}, 1);
    FlowModel flow([] {
      FlowConfig f = FlowConfig::points2d();
      f.final_couplings = 2;
      f.res_blocks = 1;
      f.features = 5;
      return f;
    }(), 2);
    for (auto& [name, p] : flow.params()) {
      std::normal_distribution<double> g(0.0, 0.2);
      for (double& v : p.value.values()) v += g(rng);
    }
    const PointDataset d = gen_point_dataset(PointSpec::two_gaussians(0.5), 6, 3);
    const std::vector<int> y{0, 1, 2, 0, 1, 2};
    Program program = [&](Tape& t) {
      Rng noise(5);
      return classifier_compound_loss(t, cls, flow, d.points, y, 4, 1.0, noise).total;
    };
    record("classifier_compound/classifier", finite_difference_check(program, cls.params(), options));
    record("classifier_compound/flow", finite_difference_check(program, flow.params(), options));
    Program nll = [&](Tape& t) { return flow_nll_loss(t, flow, d.points); };
    record("flow_nll/points", finite_difference_check(nll, flow.params(), options));
  }
  // Dense loss with pasted flow samples, and the image flow likelihood.
  {
    ClassifierModel cls({Architecture::dense, 3, 3, 2}, 4);
    FlowConfig fc = FlowConfig::scenes();
    fc.couplings_per_scale = 1;
    fc.final_couplings = 1;
    fc.features = 3;
    FlowModel flow(fc, 6);
    for (auto& [name, p] : flow.params()) {
      std::normal_distribution<double> g(0.0, 0.05);
      for (double& v : p.value.values()) v += g(rng);
    }
    Array x({1, 3, 8, 8});
    std::uniform_real_distribution<double> u(0.05, 0.95);
    for (double& v : x.values()) v = u(rng);
    std::vector<int> labels(64);
    for (std::size_t i = 0; i < 64; ++i) labels[i] = static_cast<int>(i % 3);
    const std::size_t top = 2, left = 3, size = 4;
    Array keep({1, 1, 8, 8}, 1.0);
    std::vector<std::uint8_t> s(64, 0);
    for (std::size_t yy = 0; yy < size; ++yy)
      for (std::size_t xx = 0; xx < size; ++xx) {
        s[(top + yy) * 8 + left + xx] = 1;
        keep[(top + yy) * 8 + left + xx] = 0.0;
      }
    Program program = [&](Tape& t) {
      Rng noise(7);
      Var sample = flow.to_data_range(t, flow.sample(t, 1, size, size, noise));
      Var pasted = add(mul(t.constant(x), t.constant(keep)), pad_into(sample, 8, 8, {top}, {left}));
      return dense_openset_loss(cls.logits(t, pasted), labels, s, 0.5).total;
    };
    record("dense_openset/classifier", finite_difference_check(program, cls.params(), options));
    record("dense_openset/flow", finite_difference_check(program, flow.params(), options));
    Rng dq(8);
    const Array xq = flow.prepare_data(x, dq);
    Program nll = [&](Tape& t) { return flow_nll_loss(t, flow, xq); };
    record("flow_nll/images", finite_difference_check(nll, flow.params(), options));
  }
  return results;
}

int cmd_gradcheck(const CommandOptions& opt, bool corrupt) {
  try {
    const auto results = run_gradchecks(1e-4, corrupt);
    std::ostringstream os;
    bool ok = true;
    for (const auto& r : results) {
      os << r.loss << " max_rel_error = " << format_double(r.max_rel_error) << " coords = " << r.coords << ' '
         << (r.passed ? "PASS" : "FAIL") << '\n';
      ok = ok && r.passed;
    }
    os << (ok ? "all checks passed" : "gradient check FAILED") << '\n';
    if (!opt.out.empty()) write_text(opt.out / "gradcheck.txt", os.str());
    out_of(opt) << os.str();
    return ok ? 0 : 1;
  } catch (const std::exception& e) {
    return fail(opt, e.what());
  }
}

}  // namespace borderflow
