#include "borderflow/classifier.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace borderflow {
namespace {

struct AxisLayout {
  std::size_t outer, classes, inner;
};

AxisLayout layout_of(const Shape& s) {
  if (s.size() < 2) throw ShapeError("expected class axis at position 1, got " + shape_string(s));
  return {s[0], s[1], shape_size(s) / (s[0] * s[1])};
}

Shape drop_class_axis(const Shape& s) {
  Shape out{s[0]};
  out.insert(out.end(), s.begin() + 2, s.end());
  return out;
}

}  // namespace

std::string architecture_name(Architecture a) {
  switch (a) {
    case Architecture::points_mlp: return "points_mlp";
    case Architecture::imagewide_conv: return "imagewide_conv";
    case Architecture::dense: return "dense";
  }
  return "?";
}

Architecture parse_architecture(const std::string& s) {
  if (s == "points_mlp") return Architecture::points_mlp;
  if (s == "imagewide_conv") return Architecture::imagewide_conv;
  if (s == "dense") return Architecture::dense;
  throw std::invalid_argument("unknown architecture '" + s + "'");
}

void ClassifierConfig::validate() const {
  if (classes < 2) throw std::invalid_argument("classifier: need at least 2 classes");
  if (in_channels <= 0 || width <= 0) throw std::invalid_argument("classifier: counts must be positive");
}

std::map<std::string, std::string> ClassifierConfig::to_meta() const {
  return {{"arch", architecture_name(arch)},
          {"in_channels", std::to_string(in_channels)},
          {"classes", std::to_string(classes)},
          {"width", std::to_string(width)}};
}

ClassifierConfig ClassifierConfig::from_meta(const std::map<std::string, std::string>& meta,
                                             const std::string& prefix) {
  auto get = [&](const char* key) -> const std::string& {
    auto it = meta.find(prefix + key);
    if (it == meta.end()) throw std::invalid_argument("classifier config: missing '" + prefix + key + "'");
    return it->second;
  };
  ClassifierConfig c;
  c.arch = parse_architecture(get("arch"));
  c.in_channels = std::stoi(get("in_channels"));
  c.classes = std::stoi(get("classes"));
  c.width = std::stoi(get("width"));
  c.validate();
  return c;
}

ClassifierModel::ClassifierModel(ClassifierConfig config, std::uint64_t init_seed) : config_(config) {
  config_.validate();
  Rng rng(init_seed);
  const std::size_t in = static_cast<std::size_t>(config_.in_channels);
  const std::size_t c = static_cast<std::size_t>(config_.classes);
  const std::size_t w = static_cast<std::size_t>(config_.width);
  auto add_fc = [&](const std::string& name, std::size_t out, std::size_t fan_in) {
    params_.add(name + ".w", glorot_uniform({out, fan_in}, fan_in, out, rng));
    params_.add(name + ".b", Array({out}));
  };
  auto add_conv = [&](const std::string& name, std::size_t out, std::size_t fan_in, std::size_t k) {
    params_.add(name + ".w", glorot_uniform({out, fan_in, k, k}, fan_in * k * k, out * k * k, rng));
    params_.add(name + ".b", Array({out}));
  };
  switch (config_.arch) {
    case Architecture::points_mlp:
      add_fc("fc1", w, in);
      add_fc("fc2", w, w);
      add_fc("head", c, w);
      break;
    case Architecture::imagewide_conv:
      add_conv("conv1", w, in, 3);
      add_conv("conv2", 2 * w, w, 3);
      add_conv("conv3", 4 * w, 2 * w, 3);
      add_fc("head", c, 4 * w);
      break;
    case Architecture::dense:
      add_conv("enc1", w, in, 3);
      add_conv("enc2", 2 * w, w, 3);
      add_conv("enc3", 4 * w, 2 * w, 3);
      add_conv("enc4", 4 * w, 4 * w, 3);
      add_conv("lat4", 2 * w, 4 * w, 1);
      add_conv("lat3", 2 * w, 4 * w, 1);
      add_conv("lat2", 2 * w, 2 * w, 1);
      add_conv("dec3", 2 * w, 2 * w, 3);
      add_conv("dec2", 2 * w, 2 * w, 3);
      add_conv("head", c, 2 * w, 1);
      break;
  }
}

Var ClassifierModel::conv(Tape& tape, const std::string& name, Var x, std::size_t stride, std::size_t pad) const {
  return conv2d(x, tape.parameter(params_.at(name + ".w")), tape.parameter(params_.at(name + ".b")), stride, pad);
}

Var ClassifierModel::dense_layer(Tape& tape, const std::string& name, Var x) const {
  return linear(x, tape.parameter(params_.at(name + ".w")), tape.parameter(params_.at(name + ".b")));
}

void ClassifierModel::check_input(const Shape& s) const {
  const std::size_t in = static_cast<std::size_t>(config_.in_channels);
  if (config_.arch == Architecture::points_mlp) {
    if (s.size() != 2 || s[1] != in) throw ShapeError("classifier: expected [N," + std::to_string(in) + "], got " + shape_string(s));
    return;
  }
  if (s.size() != 4 || s[1] != in)
    throw ShapeError("classifier: expected [N," + std::to_string(in) + ",H,W], got " + shape_string(s));
  const std::size_t d = config_.arch == Architecture::dense ? 8 : 1;
  if (s[2] == 0 || s[3] == 0 || s[2] % d != 0 || s[3] % d != 0)
    throw ShapeError("classifier: spatial extent " + shape_string(s) + " not divisible by " + std::to_string(d));
}

Var ClassifierModel::logits(Tape& tape, Var x) const {
  check_input(x.shape());
  switch (config_.arch) {
    case Architecture::points_mlp: {
      Var h = elu(dense_layer(tape, "fc1", x));
      h = elu(dense_layer(tape, "fc2", h));
      return dense_layer(tape, "head", h);
    }
    case Architecture::imagewide_conv: {
      Var h = elu(conv(tape, "conv1", x, 2, 1));
      h = elu(conv(tape, "conv2", h, 2, 1));
      h = elu(conv(tape, "conv3", h, 2, 1));
      const std::size_t n = h.dim(0), c = h.dim(1), area = h.dim(2) * h.dim(3);
      Var pooled = scale(sum_per_sample(reshape(h, {n * c, area})), 1.0 / static_cast<double>(area));
      return dense_layer(tape, "head", reshape(pooled, {n, c}));
    }
    case Architecture::dense: {
      const std::size_t hh = x.dim(2), ww = x.dim(3);
      Var e1 = elu(conv(tape, "enc1", x, 1, 1));
      Var e2 = elu(conv(tape, "enc2", e1, 2, 1));
      Var e3 = elu(conv(tape, "enc3", e2, 2, 1));
      Var e4 = elu(conv(tape, "enc4", e3, 2, 1));
      Var d = upsample_bilinear(conv(tape, "lat4", e4, 1, 0), hh / 4, ww / 4);
      d = elu(conv(tape, "dec3", add(d, conv(tape, "lat3", e3, 1, 0)), 1, 1));
      d = upsample_bilinear(d, hh / 2, ww / 2);
      d = elu(conv(tape, "dec2", add(d, conv(tape, "lat2", e2, 1, 0)), 1, 1));
      return upsample_bilinear(conv(tape, "head", d, 1, 0), hh, ww);
    }
  }
  throw std::logic_error("unreachable");
}

Array ClassifierModel::predict_logits(const Array& x) const {
  Tape tape;
  return logits(tape, tape.constant(x)).value();
}

void ClassifierModel::save(Checkpoint& ckpt, const std::string& prefix) const {
  for (const auto& [key, value] : config_.to_meta()) ckpt.meta[prefix + "config." + key] = value;
  ckpt.put_params(prefix, params_);
}

ClassifierModel ClassifierModel::load(const Checkpoint& ckpt, const std::string& prefix) {
  ClassifierModel model(ClassifierConfig::from_meta(ckpt.meta, prefix + "config."), 0);
  ckpt.get_params(prefix, model.params_);
  return model;
}

std::string scoring_name(Scoring s) { return s == Scoring::msp ? "msp" : "entropy"; }

Scoring parse_scoring(const std::string& s) {
  if (s == "msp") return Scoring::msp;
  if (s == "entropy") return Scoring::entropy;
  throw std::invalid_argument("unknown scoring '" + s + "'");
}

int scoring_id(Scoring s) { return s == Scoring::msp ? 0 : 1; }

Posterior softmax_with_temperature(const Array& logits, double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw std::invalid_argument("softmax_with_temperature: temperature must be positive");
  if (!logits.all_finite()) throw DomainError("softmax_with_temperature: non-finite logits");
  const AxisLayout l = layout_of(logits.shape());
  Posterior p{Array(logits.shape()), temperature};
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t i = 0; i < l.inner; ++i) {
      const std::size_t base = o * l.classes * l.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < l.classes; ++c) mx = std::max(mx, logits[base + c * l.inner] / temperature);
      double total = 0.0;
      for (std::size_t c = 0; c < l.classes; ++c) total += std::exp(logits[base + c * l.inner] / temperature - mx);
      const double lse = mx + std::log(total);
      for (std::size_t c = 0; c < l.classes; ++c)
        p.probs[base + c * l.inner] = std::exp(logits[base + c * l.inner] / temperature - lse);
    }
  return p;
}

std::vector<int> argmax_classes(const Array& scores) {
  const AxisLayout l = layout_of(scores.shape());
  std::vector<int> out(l.outer * l.inner);
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t i = 0; i < l.inner; ++i) {
      const std::size_t base = o * l.classes * l.inner + i;
      std::size_t best = 0;
      for (std::size_t c = 1; c < l.classes; ++c)
        if (scores[base + c * l.inner] > scores[base + best * l.inner]) best = c;
      out[o * l.inner + i] = static_cast<int>(best);
    }
  return out;
}

Array msp_score(const Posterior& p) {
  const AxisLayout l = layout_of(p.probs.shape());
  Array out(drop_class_axis(p.probs.shape()));
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t i = 0; i < l.inner; ++i) {
      double mx = 0.0;
      for (std::size_t c = 0; c < l.classes; ++c) mx = std::max(mx, p.probs[(o * l.classes + c) * l.inner + i]);
      out[o * l.inner + i] = 1.0 - mx;
    }
  return out;
}

Array entropy_score(const Posterior& p) {
  const AxisLayout l = layout_of(p.probs.shape());
  Array out(drop_class_axis(p.probs.shape()));
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t i = 0; i < l.inner; ++i) {
      double h = 0.0;
      for (std::size_t c = 0; c < l.classes; ++c) {
        const double q = p.probs[(o * l.classes + c) * l.inner + i];
        if (q > 0.0) h -= q * std::log(q);
      }
      out[o * l.inner + i] = h;
    }
  return out;
}

Array score(const Posterior& p, Scoring scoring) {
  return scoring == Scoring::msp ? msp_score(p) : entropy_score(p);
}

Array dense_score_map(const ClassifierModel& model, const Array& x, Scoring scoring, double temperature) {
  if (!model.config().is_dense()) throw std::invalid_argument("dense_score_map: model is not dense");
  return score(softmax_with_temperature(model.predict_logits(x), temperature), scoring);
}

}  // namespace borderflow
