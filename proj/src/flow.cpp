#include "borderflow/flow.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

namespace borderflow {
namespace {

const char* domain_name(FlowDomain d) { return d == FlowDomain::points ? "points" : "images"; }

FlowDomain parse_domain(const std::string& s) {
  if (s == "points") return FlowDomain::points;
  if (s == "images") return FlowDomain::images;
  throw std::invalid_argument("unknown flow domain '" + s + "'");
}

std::string coupling_name(std::size_t k) {
  std::string s = std::to_string(k);
  return "c" + std::string(s.size() < 2 ? 2 - s.size() : 0, '0') + s;
}

bool is_channel_mask(MaskKind m) { return m == MaskKind::channel_first_half || m == MaskKind::channel_second_half; }

}  // namespace

void FlowConfig::validate() const {
  if (in_channels <= 0 || couplings_per_scale <= 0 || final_couplings <= 0 || res_blocks < 0 || features <= 0)
    throw std::invalid_argument("flow config: counts must be positive");
  if (squeeze_count < 0 || squeeze_count > 8) throw std::invalid_argument("flow config: squeeze count out of range");
  if (domain == FlowDomain::points && squeeze_count != 0)
    throw std::invalid_argument("flow config: point flows cannot squeeze");
  if (dequant_levels < 0 || dequant_levels == 1) throw std::invalid_argument("flow config: dequant levels must be 0 or >= 2");
  if (!(logit_alpha >= 0.0 && logit_alpha < 0.5)) throw std::invalid_argument("flow config: logit alpha must be in [0, 0.5)");
}

std::map<std::string, std::string> FlowConfig::to_meta() const {
  char alpha[32];
  std::snprintf(alpha, sizeof alpha, "%.17g", logit_alpha);
  return {{"domain", domain_name(domain)},
          {"in_channels", std::to_string(in_channels)},
          {"squeeze_count", std::to_string(squeeze_count)},
          {"couplings_per_scale", std::to_string(couplings_per_scale)},
          {"final_couplings", std::to_string(final_couplings)},
          {"res_blocks", std::to_string(res_blocks)},
          {"features", std::to_string(features)},
          {"dequant_levels", std::to_string(dequant_levels)},
          {"logit_alpha", alpha}};
}

FlowConfig FlowConfig::from_meta(const std::map<std::string, std::string>& meta, const std::string& prefix) {
  auto get = [&](const char* key) -> const std::string& {
    auto it = meta.find(prefix + key);
    if (it == meta.end()) throw std::invalid_argument("flow config: missing '" + prefix + key + "'");
    return it->second;
  };
  FlowConfig c;
  c.domain = parse_domain(get("domain"));
  c.in_channels = std::stoi(get("in_channels"));
  c.squeeze_count = std::stoi(get("squeeze_count"));
  c.couplings_per_scale = std::stoi(get("couplings_per_scale"));
  c.final_couplings = std::stoi(get("final_couplings"));
  c.res_blocks = std::stoi(get("res_blocks"));
  c.features = std::stoi(get("features"));
  c.dequant_levels = std::stoi(get("dequant_levels"));
  c.logit_alpha = std::stod(get("logit_alpha"));
  c.validate();
  return c;
}

FlowConfig FlowConfig::points2d() {
  FlowConfig c;
  c.domain = FlowDomain::points;
  c.in_channels = 2;
  c.squeeze_count = 0;
  c.final_couplings = 6;
  c.res_blocks = 2;
  c.features = 32;
  return c;
}

FlowConfig FlowConfig::scenes() {
  FlowConfig c;
  c.domain = FlowDomain::images;
  c.in_channels = 3;
  c.squeeze_count = 1;
  c.couplings_per_scale = 3;
  c.final_couplings = 4;
  c.res_blocks = 1;
  c.features = 16;
  c.dequant_levels = 256;
  c.logit_alpha = 0.05;
  return c;
}

std::vector<FlowStep> flow_schedule(const FlowConfig& config) {
  config.validate();
  std::vector<FlowStep> steps;
  int channels = config.in_channels;
  if (config.domain == FlowDomain::points) {
    for (int k = 0; k < config.final_couplings; ++k)
      steps.push_back({FlowStep::Kind::coupling,
                       k % 2 == 0 ? MaskKind::channel_first_half : MaskKind::channel_second_half, channels});
    return steps;
  }
  for (int s = 0; s < config.squeeze_count; ++s) {
    for (int k = 0; k < config.couplings_per_scale; ++k)
      steps.push_back({FlowStep::Kind::coupling,
                       k % 2 == 0 ? MaskKind::checkerboard_even : MaskKind::checkerboard_odd, channels});
    steps.push_back({FlowStep::Kind::squeeze, MaskKind::checkerboard_even, channels});
    channels *= 4;
    for (int k = 0; k < config.couplings_per_scale; ++k)
      steps.push_back({FlowStep::Kind::coupling,
                       k % 2 == 0 ? MaskKind::channel_first_half : MaskKind::channel_second_half, channels});
  }
  for (int k = 0; k < config.final_couplings; ++k)
    steps.push_back({FlowStep::Kind::coupling,
                     k % 2 == 0 ? MaskKind::checkerboard_even : MaskKind::checkerboard_odd, channels});
  return steps;
}

std::vector<MaskKind> mask_schedule(const FlowConfig& config) {
  std::vector<MaskKind> masks;
  for (const FlowStep& s : flow_schedule(config))
    if (s.kind == FlowStep::Kind::coupling) masks.push_back(s.mask);
  return masks;
}

Array coupling_mask(MaskKind kind, std::size_t channels, std::size_t height, std::size_t width, bool points) {
  if (points && !is_channel_mask(kind)) throw std::invalid_argument("coupling_mask: point flows use channel masks");
  const std::size_t h = points ? 1 : height, w = points ? 1 : width;
  Array m(points ? Shape{1, channels} : Shape{1, channels, height, width});
  const std::size_t half = channels / 2;
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        bool keep = false;
        switch (kind) {
          case MaskKind::checkerboard_even: keep = (y + x) % 2 == 0; break;
          case MaskKind::checkerboard_odd: keep = (y + x) % 2 == 1; break;
          case MaskKind::channel_first_half: keep = c < half; break;
          case MaskKind::channel_second_half: keep = c >= half; break;
        }
        m[(c * h + y) * w + x] = keep ? 1.0 : 0.0;
      }
  return m;
}

FlowModel::FlowModel(FlowConfig config, std::uint64_t init_seed)
    : config_(config), schedule_(flow_schedule(config)) {
  Rng rng(init_seed);
  const bool points = config_.domain == FlowDomain::points;
  const std::size_t f = static_cast<std::size_t>(config_.features);
  auto weight = [&](std::size_t out, std::size_t in) {
    if (points) return glorot_uniform({out, in}, in, out, rng);
    return glorot_uniform({out, in, 3, 3}, in * 9, out * 9, rng);
  };
  std::size_t k = 0;
  for (const FlowStep& step : schedule_) {
    if (step.kind != FlowStep::Kind::coupling) continue;
    const std::size_t c = static_cast<std::size_t>(step.channels);
    const std::string p = coupling_name(k++) + ".";
    params_.add(p + "in.w", weight(f, c));
    params_.add(p + "in.b", Array({f}));
    for (int r = 0; r < config_.res_blocks; ++r) {
      const std::string rb = p + "res" + std::to_string(r) + ".";
      params_.add(rb + "a.w", weight(f, f));
      params_.add(rb + "a.b", Array({f}));
      params_.add(rb + "b.w", weight(f, f));
      params_.add(rb + "b.b", Array({f}));
    }
    params_.add(p + "out.w", Array(points ? Shape{2 * c, f} : Shape{2 * c, f, 3, 3}));
    params_.add(p + "out.b", Array({2 * c}));
    params_.add(p + "scale", Array(points ? Shape{c} : Shape{c, 1, 1}, 1.0));
  }
}

Var FlowModel::layer(Tape& tape, const std::string& name, Var x) const {
  Var w = tape.parameter(params_.at(name + ".w"));
  Var b = tape.parameter(params_.at(name + ".b"));
  if (config_.domain == FlowDomain::points) return linear(x, w, b);
  return conv2d(x, w, b, 1, 1);
}

FlowModel::ShiftScale FlowModel::coupling_net(Tape& tape, std::size_t layer_index, Var conditioner, Var inv_mask,
                                              int channels) const {
  const std::string p = coupling_name(layer_index) + ".";
  Var h = layer(tape, p + "in", conditioner);
  for (int r = 0; r < config_.res_blocks; ++r) {
    const std::string rb = p + "res" + std::to_string(r) + ".";
    Var inner = layer(tape, rb + "a", elu(h));
    inner = layer(tape, rb + "b", elu(inner));
    h = add(h, inner);
  }
  Var out = layer(tape, p + "out", elu(h));
  const std::size_t c = static_cast<std::size_t>(channels);
  Var raw = slice_channels(out, 0, c);
  Var shift = slice_channels(out, c, 2 * c);
  Var log_scale = mul(mul(tanh(raw), tape.parameter(params_.at(p + "scale"))), inv_mask);
  return {log_scale, mul(shift, inv_mask)};
}

void FlowModel::check_input(const Shape& shape, const char* what) const {
  const std::size_t c = static_cast<std::size_t>(config_.in_channels);
  if (config_.domain == FlowDomain::points) {
    if (shape.size() != 2 || shape[1] != c)
      throw ShapeError(std::string(what) + ": expected [N," + std::to_string(c) + "], got " + shape_string(shape));
    return;
  }
  if (shape.size() != 4 || shape[1] != c)
    throw ShapeError(std::string(what) + ": expected [N," + std::to_string(c) + ",H,W], got " + shape_string(shape));
  const std::size_t d = config_.extent_divisor();
  if (shape[2] % d != 0 || shape[3] % d != 0 || shape[2] == 0 || shape[3] == 0)
    throw ShapeError(std::string(what) + ": spatial extent " + shape_string(shape) + " not divisible by " +
                     std::to_string(d));
}

FlowForward FlowModel::forward(Tape& tape, Var x) const {
  check_input(x.shape(), "flow forward");
  if (!x.value().all_finite()) throw DomainError("flow forward: non-finite input");
  const bool points = config_.domain == FlowDomain::points;
  FlowForward out;
  Var h = x;
  std::size_t k = 0;
  for (const FlowStep& step : schedule_) {
    if (step.kind == FlowStep::Kind::squeeze) {
      h = squeeze2x2(h);
      continue;
    }
    const Array mask_arr = coupling_mask(step.mask, h.dim(1), points ? 1 : h.dim(2), points ? 1 : h.dim(3), points);
    Array inv_arr = mask_arr;
    for (double& v : inv_arr.values()) v = 1.0 - v;
    Var mask = tape.constant(mask_arr);
    Var inv_mask = tape.constant(std::move(inv_arr));
    Var kept = mul(h, mask);
    ShiftScale ss = coupling_net(tape, k++, kept, inv_mask, step.channels);
    h = add(kept, mul(inv_mask, add(mul(h, exp(ss.log_scale)), ss.shift)));
    Var ld = sum_per_sample(ss.log_scale);
    out.layer_log_dets.push_back(ld);
    out.log_det = out.log_det.valid() ? add(out.log_det, ld) : ld;
  }
  out.z = h;
  return out;
}

Shape FlowModel::latent_shape(std::size_t n, std::size_t height, std::size_t width) const {
  const std::size_t c = static_cast<std::size_t>(config_.in_channels);
  if (config_.domain == FlowDomain::points) return {n, c};
  const std::size_t d = config_.extent_divisor();
  if (height == 0 || width == 0 || height % d != 0 || width % d != 0)
    throw ShapeError("flow: spatial size " + std::to_string(height) + "x" + std::to_string(width) +
                     " not divisible by " + std::to_string(d));
  return {n, c * d * d, height / d, width / d};
}

FlowInverse FlowModel::inverse(Tape& tape, Var z) const {
  const Shape& zs = z.shape();
  const bool points = config_.domain == FlowDomain::points;
  const std::size_t d = config_.extent_divisor();
  if (points) {
    check_input(zs, "flow inverse");
  } else if (zs.size() != 4 || zs[1] != static_cast<std::size_t>(config_.in_channels) * d * d) {
    throw ShapeError("flow inverse: incompatible latent shape " + shape_string(zs));
  }
  FlowInverse out;
  Var h = z;
  std::size_t k = 0;
  for (const FlowStep& s : schedule_)
    if (s.kind == FlowStep::Kind::coupling) ++k;
  for (auto it = schedule_.rbegin(); it != schedule_.rend(); ++it) {
    if (it->kind == FlowStep::Kind::squeeze) {
      h = unsqueeze2x2(h);
      continue;
    }
    const Array mask_arr = coupling_mask(it->mask, h.dim(1), points ? 1 : h.dim(2), points ? 1 : h.dim(3), points);
    Array inv_arr = mask_arr;
    for (double& v : inv_arr.values()) v = 1.0 - v;
    Var mask = tape.constant(mask_arr);
    Var inv_mask = tape.constant(std::move(inv_arr));
    Var kept = mul(h, mask);
    ShiftScale ss = coupling_net(tape, --k, kept, inv_mask, it->channels);
    h = add(kept, mul(inv_mask, mul(sub(h, ss.shift), exp(neg(ss.log_scale)))));
    Var ld = neg(sum_per_sample(ss.log_scale));
    out.log_det = out.log_det.valid() ? add(out.log_det, ld) : ld;
  }
  out.x = h;
  return out;
}

Var FlowModel::prior_log_prob(Tape& tape, Var z) const {
  (void)tape;
  const double dims = static_cast<double>(z.value().size() / z.dim(0));
  return add_scalar(scale(sum_per_sample(mul(z, z)), -0.5), -0.5 * dims * std::log(2.0 * std::numbers::pi));
}

Var FlowModel::log_likelihood(Tape& tape, Var x) const {
  Var y = x;
  Var logit_ld;
  if (config_.logit_alpha > 0.0) {
    const double a = config_.logit_alpha;
    Var p = add_scalar(scale(x, 1.0 - 2.0 * a), a);
    Var log_p = log(p);
    Var log_q = log(add_scalar(neg(p), 1.0));
    y = sub(log_p, log_q);
    const double dims = static_cast<double>(x.value().size() / x.dim(0));
    logit_ld = add_scalar(neg(sum_per_sample(add(log_p, log_q))), dims * std::log(1.0 - 2.0 * a));
  }
  FlowForward f = forward(tape, y);
  Var ll = add(prior_log_prob(tape, f.z), f.log_det);
  return logit_ld.valid() ? add(ll, logit_ld) : ll;
}

Var FlowModel::to_data_range(Tape& tape, Var y) const {
  (void)tape;
  if (config_.logit_alpha <= 0.0) return y;
  const double a = config_.logit_alpha;
  return scale(add_scalar(sigmoid(y), -a), 1.0 / (1.0 - 2.0 * a));
}

Var FlowModel::sample(Tape& tape, std::size_t n, std::size_t height, std::size_t width, Rng& rng) const {
  Var z = tape.constant(standard_normal(latent_shape(n, height, width), rng));
  return inverse(tape, z).x;
}

std::pair<Array, Array> FlowModel::forward_transform(const Array& x) const {
  Tape tape;
  FlowForward f = forward(tape, tape.constant(x));
  return {f.z.value(), f.log_det.value()};
}

Array FlowModel::inverse_transform(const Array& z) const {
  Tape tape;
  return inverse(tape, tape.constant(z)).x.value();
}

Array FlowModel::log_likelihood(const Array& x) const {
  Tape tape;
  return log_likelihood(tape, tape.constant(x)).value();
}

Array FlowModel::sample(std::size_t n, std::size_t height, std::size_t width, Rng& rng) const {
  Tape tape;
  return sample(tape, n, height, width, rng).value();
}

Array FlowModel::prepare_data(const Array& x01, Rng& rng) const {
  if (config_.dequant_levels == 0) return x01;
  const double top = config_.dequant_levels - 1;
  Array k = x01;
  for (double& v : k.values()) v = std::clamp(std::round(v * top), 0.0, top);
  return dequantize(k, config_.dequant_levels, rng);
}

void FlowModel::save(Checkpoint& ckpt, const std::string& prefix) const {
  for (const auto& [key, value] : config_.to_meta()) ckpt.meta[prefix + "config." + key] = value;
  ckpt.put_params(prefix, params_);
}

FlowModel FlowModel::load(const Checkpoint& ckpt, const std::string& prefix) {
  FlowModel model(FlowConfig::from_meta(ckpt.meta, prefix + "config."), 0);
  ckpt.get_params(prefix, model.params_);
  return model;
}

Array dequantize(const Array& x_discrete, int levels, Rng& rng) {
  if (levels < 2) throw std::invalid_argument("dequantize: levels must be >= 2");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Array out = x_discrete;
  for (double& v : out.values()) {
    if (!(v >= 0.0 && v < levels) || v != std::floor(v))
      throw DomainError("dequantize: value " + std::to_string(v) + " outside the integers of [0, " +
                        std::to_string(levels) + ")");
    v = (v + std::min(unit(rng), std::nextafter(1.0, 0.0))) / levels;
  }
  return out;
}

}  // namespace borderflow
