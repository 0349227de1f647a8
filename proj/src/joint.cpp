#include "borderflow/joint.hpp"

#include <cmath>
#include <sstream>

namespace borderflow {
namespace {

Rng stream(std::uint64_t seed, std::uint32_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), purpose};
  return Rng(seq);
}

std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

Rng parse_rng(const std::string& s) {
  Rng rng;
  std::istringstream is(s);
  is >> rng;
  if (!is) throw CheckpointError("malformed RNG state in checkpoint");
  return rng;
}

std::vector<std::size_t> class_positions(const std::vector<int>& labels, std::size_t classes, std::size_t n,
                                          std::size_t inner) {
  std::vector<std::size_t> idx(labels.size());
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t i = 0; i < inner; ++i) {
      const int y = labels[s * inner + i];
      if (y < 0 || static_cast<std::size_t>(y) >= classes)
        throw std::invalid_argument("class label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
      idx[s * inner + i] = (s * classes + static_cast<std::size_t>(y)) * inner + i;
    }
  return idx;
}

struct Batch {
  Array x;
  std::vector<int> y;
};

Batch gather_batch(const LabeledData& data, const std::vector<std::size_t>& idx) {
  const std::size_t n = data.inputs.dim(0);
  const std::size_t stride = data.inputs.size() / n;
  const std::size_t per_label = data.labels.size() / n;
  Shape shape = data.inputs.shape();
  shape[0] = idx.size();
  Batch b{Array(shape), std::vector<int>(idx.size() * per_label)};
  for (std::size_t k = 0; k < idx.size(); ++k) {
    std::copy_n(data.inputs.data() + idx[k] * stride, stride, b.x.data() + k * stride);
    std::copy_n(data.labels.begin() + static_cast<long>(idx[k] * per_label), per_label,
                b.y.begin() + static_cast<long>(k * per_label));
  }
  return b;
}

void guard(long iteration, double value, const char* what) {
  if (!std::isfinite(value)) throw TrainingDiverged(iteration, std::string("non-finite ") + what);
}

}  // namespace

Array kl_uniform(const Posterior& p) {
  const Shape& s = p.probs.shape();
  if (s.size() < 2) throw ShapeError("kl_uniform: expected class axis at position 1");
  const std::size_t n = s[0], c = s[1], inner = p.probs.size() / (n * c);
  Shape os{n};
  os.insert(os.end(), s.begin() + 2, s.end());
  Array out(os);
  const double log_c = std::log(static_cast<double>(c));
  for (std::size_t o = 0; o < n; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      double acc = 0.0;
      for (std::size_t k = 0; k < c; ++k) {
        const double q = p.probs[(o * c + k) * inner + i];
        if (!(q > 0.0)) throw DomainError("kl_uniform: zero probability makes the divergence infinite");
        acc += std::log(q);
      }
      out[o * inner + i] = -log_c - acc / static_cast<double>(c);
    }
  return out;
}

Var kl_uniform_logits(Var logits) {
  const std::size_t c = logits.dim(1);
  Var lsm = log_softmax(logits, 1);
  Var class_sum;
  if (logits.rank() == 2) {
    class_sum = sum_per_sample(lsm);
  } else if (logits.rank() == 4) {
    Tape& t = logits.tape();
    Var ones = t.constant(Array({1, c, 1, 1}, 1.0));
    Var zero = t.constant(Array({1}));
    Var summed = conv2d(lsm, ones, zero, 1, 0);
    class_sum = reshape(summed, {logits.dim(0), logits.dim(2), logits.dim(3)});
  } else {
    throw ShapeError("kl_uniform_logits: expected rank 2 or 4, got " + shape_string(logits.shape()));
  }
  return add_scalar(scale(class_sum, -1.0 / static_cast<double>(c)), -std::log(static_cast<double>(c)));
}

Var cross_entropy(Var logits, const std::vector<int>& labels) {
  if (logits.rank() != 2 || labels.size() != logits.dim(0))
    throw ShapeError("cross_entropy: expected [N,C] logits and N labels");
  auto idx = std::make_shared<std::vector<std::size_t>>(class_positions(labels, logits.dim(1), logits.dim(0), 1));
  return neg(gather(log_softmax(logits, 1), {logits.dim(0)}, idx));
}

CompoundLoss classifier_compound_loss(Tape& tape, const ClassifierModel& classifier, const FlowModel& flow,
                                      const Array& x, const std::vector<int>& y, std::size_t n_out, double lambda,
                                      Rng& noise) {
  if (n_out == 0) throw std::invalid_argument("classifier_compound_loss: n_out must be positive");
  if (!(lambda >= 0.0)) throw std::invalid_argument("classifier_compound_loss: lambda must be non-negative");
  CompoundLoss out;
  out.ce = mean(cross_entropy(classifier.logits(tape, tape.constant(x)), y));
  const std::size_t h = x.rank() == 4 ? x.dim(2) : 1, w = x.rank() == 4 ? x.dim(3) : 1;
  out.outliers = flow.to_data_range(tape, flow.sample(tape, n_out, h, w, noise));
  out.kl = mean(kl_uniform_logits(classifier.logits(tape, out.outliers)));
  out.total = add(out.ce, scale(out.kl, lambda));
  return out;
}

Var flow_nll_loss(Tape& tape, const FlowModel& flow, const Array& x) {
  return neg(mean(flow.log_likelihood(tape, tape.constant(x))));
}

PastePosition draw_paste_position(std::size_t height, std::size_t width, std::size_t h, std::size_t w, Rng& rng) {
  if (h > height || w > width || h == 0 || w == 0)
    throw std::invalid_argument("paste: sample " + std::to_string(h) + "x" + std::to_string(w) +
                                " does not fit into " + std::to_string(height) + "x" + std::to_string(width));
  std::uniform_int_distribution<std::size_t> top(0, height - h), left(0, width - w);
  const std::size_t t = top(rng);
  return {t, left(rng)};
}

PasteResult paste_outlier_at(const Array& crop, const Array& sample, PastePosition pos) {
  if (crop.rank() != 3 || sample.rank() != 3 || crop.dim(0) != sample.dim(0))
    throw ShapeError("paste: expected [C,H,W] crop and [C,h,w] sample, got " + shape_string(crop.shape()) + " and " +
                     shape_string(sample.shape()));
  const std::size_t c = crop.dim(0), hh = crop.dim(1), ww = crop.dim(2), h = sample.dim(1), w = sample.dim(2);
  if (pos.top + h > hh || pos.left + w > ww) throw std::invalid_argument("paste: sample exceeds the crop");
  PasteResult r{crop, std::vector<std::uint8_t>(hh * ww, 0), Array({c, h, w}), pos};
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t dst = (ch * hh + pos.top + y) * ww + pos.left + x;
        r.replaced_patch[(ch * h + y) * w + x] = crop[dst];
        r.x_pasted[dst] = sample[(ch * h + y) * w + x];
        r.s[(pos.top + y) * ww + pos.left + x] = 1;
      }
  return r;
}

PasteResult paste_outlier(const Array& crop, const Array& sample, Rng& rng) {
  if (crop.rank() != 3 || sample.rank() != 3) throw ShapeError("paste: expected rank-3 crop and sample");
  return paste_outlier_at(crop, sample, draw_paste_position(crop.dim(1), crop.dim(2), sample.dim(1), sample.dim(2), rng));
}

DenseLoss dense_openset_loss(Var logits, const std::vector<int>& labels, const std::vector<std::uint8_t>& s,
                             double lambda) {
  if (logits.rank() != 4) throw ShapeError("dense loss: expected [N,C,H,W] logits");
  if (!(lambda >= 0.0)) throw std::invalid_argument("dense loss: lambda must be non-negative");
  const std::size_t n = logits.dim(0), c = logits.dim(1), inner = logits.dim(2) * logits.dim(3);
  if (labels.size() != n * inner || s.size() != n * inner)
    throw ShapeError("dense loss: labels and mask must hold one entry per pixel");
  auto ce_idx = std::make_shared<std::vector<std::size_t>>();
  auto kl_idx = std::make_shared<std::vector<std::size_t>>();
  std::size_t kl_pixels = 0;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < inner; ++i) {
      const int y = labels[b * inner + i];
      if (y == kIgnoreLabel) continue;
      if (s[b * inner + i]) {
        ++kl_pixels;
        for (std::size_t k = 0; k < c; ++k) kl_idx->push_back((b * c + k) * inner + i);
        continue;
      }
      if (y < 0 || static_cast<std::size_t>(y) >= c)
        throw std::invalid_argument("dense loss: unpasted pixel with label " + std::to_string(y) +
                                    " that is neither a class nor the ignore label");
      ce_idx->push_back((b * c + static_cast<std::size_t>(y)) * inner + i);
    }
  Tape& tape = logits.tape();
  Var lsm = log_softmax(logits, 1);
  DenseLoss out;
  if (ce_idx->empty()) {
    out.ce = tape.constant(Array::scalar(0.0));
  } else {
    const double count = static_cast<double>(ce_idx->size());
    out.ce = scale(sum(gather(lsm, {ce_idx->size()}, ce_idx)), -1.0 / count);
  }
  if (kl_pixels == 0) {
    out.kl = tape.constant(Array::scalar(0.0));
  } else {
    const double denom = static_cast<double>(kl_pixels * c);
    out.kl = add_scalar(scale(sum(gather(lsm, {kl_idx->size()}, kl_idx)), -1.0 / denom),
                        -std::log(static_cast<double>(c)));
  }
  out.total = add(out.ce, scale(out.kl, lambda));
  return out;
}

DenseLoss dense_openset_loss(Tape& tape, const ClassifierModel& model, const Array& x_pasted,
                             const std::vector<int>& labels, const std::vector<std::uint8_t>& s, double lambda) {
  return dense_openset_loss(model.logits(tape, tape.constant(x_pasted)), labels, s, lambda);
}

void TrainConfig::validate(const FlowConfig* flow, std::size_t crop_h, std::size_t crop_w) const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("train config: lambda must be >= 0");
  if (batch_size == 0) throw std::invalid_argument("train config: batch size must be positive");
  if (iterations <= 0) throw std::invalid_argument("train config: iterations must be positive");
  if (!(classifier_lr > 0.0) || !(flow_lr > 0.0) || classifier_lr_min < 0.0 || classifier_lr_min > classifier_lr)
    throw std::invalid_argument("train config: bad learning rates");
  if (joint && flow == nullptr) throw std::invalid_argument("train config: joint training needs a flow");
  if (flow != nullptr && flow->domain == FlowDomain::images) {
    if (outlier_sizes.empty()) throw std::invalid_argument("train config: empty outlier size set");
    for (std::size_t sz : outlier_sizes) {
      if (sz == 0 || sz % flow->extent_divisor() != 0)
        throw std::invalid_argument("train config: outlier size " + std::to_string(sz) + " not divisible by " +
                                    std::to_string(flow->extent_divisor()));
      if (crop_h != 0 && (sz >= crop_h || sz >= crop_w))
        throw std::invalid_argument("train config: outlier size " + std::to_string(sz) + " not smaller than the crop");
    }
  }
}

AdamConfig classifier_adam(const TrainConfig& config) {
  AdamConfig a;
  a.schedule = LrSchedule::cosine(config.classifier_lr, config.classifier_lr_min, config.iterations);
  return a;
}

AdamConfig flow_adam(const TrainConfig& config) {
  AdamConfig a;
  a.schedule = LrSchedule::constant_lr(config.flow_lr);
  return a;
}

JointState init_joint_state(const TrainConfig& config, const ClassifierConfig& classifier,
                            const std::optional<FlowConfig>& flow) {
  Rng init = stream(config.seed, 0);
  const std::uint64_t cls_seed = init();
  const std::uint64_t flow_seed = init();
  JointState st{ClassifierModel(classifier, cls_seed), std::nullopt, {}, {}, stream(config.seed, 1),
                stream(config.seed, 2), stream(config.seed, 3), 0};
  st.opt_classifier = OptimizerState(st.classifier.params(), classifier_adam(config));
  if (config.joint) {
    if (!flow) throw std::invalid_argument("joint training needs a flow configuration");
    st.flow.emplace(*flow, flow_seed);
    st.opt_flow = OptimizerState(st.flow->params(), flow_adam(config));
  }
  return st;
}

void JointState::save(Checkpoint& ckpt) const {
  ckpt.meta["state.iteration"] = std::to_string(iteration);
  ckpt.meta["state.rng.data"] = rng_state(data_rng);
  ckpt.meta["state.rng.noise"] = rng_state(noise_rng);
  ckpt.meta["state.rng.dequant"] = rng_state(dequant_rng);
  ckpt.meta["state.has_flow"] = flow ? "1" : "0";
  classifier.save(ckpt, "cls.");
  ckpt.put_optimizer("opt_cls.", opt_classifier);
  if (flow) {
    flow->save(ckpt, "flow.");
    ckpt.put_optimizer("opt_flow.", opt_flow);
  }
}

JointState JointState::load(const Checkpoint& ckpt, const TrainConfig& config) {
  JointState st{ClassifierModel::load(ckpt, "cls."),
                std::nullopt,
                {},
                {},
                parse_rng(ckpt.meta_at("state.rng.data")),
                parse_rng(ckpt.meta_at("state.rng.noise")),
                parse_rng(ckpt.meta_at("state.rng.dequant")),
                std::stol(ckpt.meta_at("state.iteration"))};
  st.opt_classifier = OptimizerState(st.classifier.params(), classifier_adam(config));
  ckpt.get_optimizer("opt_cls.", st.opt_classifier);
  if (ckpt.meta_at("state.has_flow") == "1") {
    st.flow.emplace(FlowModel::load(ckpt, "flow."));
    st.opt_flow = OptimizerState(st.flow->params(), flow_adam(config));
    ckpt.get_optimizer("opt_flow.", st.opt_flow);
  }
  return st;
}

std::vector<std::size_t> draw_batch(std::size_t dataset_size, std::size_t batch, Rng& rng) {
  if (dataset_size == 0) throw std::invalid_argument("draw_batch: empty dataset");
  std::uniform_int_distribution<std::size_t> pick(0, dataset_size - 1);
  std::vector<std::size_t> idx(batch);
  for (auto& i : idx) i = pick(rng);
  return idx;
}

LogRow imagewide_step(const TrainConfig& config, JointState& st, const LabeledData& data) {
  const long it = st.iteration;
  const Batch b = gather_batch(data, draw_batch(data.inputs.dim(0), config.batch_size, st.data_rng));
  LogRow row;
  row.iteration = it;
  row.lr_classifier = current_lr(st.opt_classifier);
  st.classifier.params().zero_grad();

  Tape tape;
  Var total, ce, kl;
  if (config.joint) {
    FlowModel& flow = *st.flow;
    row.lr_flow = current_lr(st.opt_flow);
    flow.params().zero_grad();
    const std::size_t n_out = config.n_out == 0 ? config.batch_size : config.n_out;
    CompoundLoss l = classifier_compound_loss(tape, st.classifier, flow, b.x, b.y, n_out, config.lambda, st.noise_rng);
    total = l.total;
    ce = l.ce;
    kl = l.kl;
    if (b.x.rank() == 4) row.outlier_h = b.x.dim(2), row.outlier_w = b.x.dim(3);
  } else {
    ce = mean(cross_entropy(st.classifier.logits(tape, tape.constant(b.x)), b.y));
    total = ce;
  }
  row.loss = total.value().item();
  row.ce = ce.value().item();
  row.kl_term = kl.valid() ? config.lambda * kl.value().item() : 0.0;
  guard(it, row.loss, "classifier loss");
  tape.backward(total);
  adam_step(st.classifier.params(), st.opt_classifier);

  if (config.joint) {
    FlowModel& flow = *st.flow;
    Tape ftape;
    Var nll = flow_nll_loss(ftape, flow, flow.prepare_data(b.x, st.dequant_rng));
    row.nll = nll.value().item();
    guard(it, row.nll, "flow loss");
    ftape.backward(nll);
    adam_step(flow.params(), st.opt_flow);
  }
  ++st.iteration;
  return row;
}

LogRow dense_step(const TrainConfig& config, JointState& st, const LabeledData& data) {
  const long it = st.iteration;
  const Batch b = gather_batch(data, draw_batch(data.inputs.dim(0), config.batch_size, st.data_rng));
  const std::size_t n = b.x.dim(0), ch = b.x.dim(1), hh = b.x.dim(2), ww = b.x.dim(3);
  LogRow row;
  row.iteration = it;
  row.lr_classifier = current_lr(st.opt_classifier);
  st.classifier.params().zero_grad();

  std::vector<std::uint8_t> s(n * hh * ww, 0);
  std::vector<PastePosition> pos;
  std::size_t size = 0;
  Tape tape;
  Var x = tape.constant(b.x);
  if (config.joint) {
    FlowModel& flow = *st.flow;
    row.lr_flow = current_lr(st.opt_flow);
    flow.params().zero_grad();
    std::uniform_int_distribution<std::size_t> pick(0, config.outlier_sizes.size() - 1);
    size = config.outlier_sizes[pick(st.noise_rng)];
    row.outlier_h = row.outlier_w = size;
    for (std::size_t k = 0; k < n; ++k) pos.push_back(draw_paste_position(hh, ww, size, size, st.noise_rng));
    if (config.paste) {
      Var sample = flow.to_data_range(tape, flow.sample(tape, n, size, size, st.noise_rng));
      Array keep({n, 1, hh, ww}, 1.0);
      std::vector<std::size_t> tops, lefts;
      for (std::size_t k = 0; k < n; ++k) {
        tops.push_back(pos[k].top);
        lefts.push_back(pos[k].left);
        for (std::size_t y = 0; y < size; ++y)
          for (std::size_t xx = 0; xx < size; ++xx) {
            const std::size_t p = (pos[k].top + y) * ww + pos[k].left + xx;
            s[k * hh * ww + p] = 1;
            keep[k * hh * ww + p] = 0.0;
          }
      }
      x = add(mul(x, tape.constant(std::move(keep))), pad_into(sample, hh, ww, tops, lefts));
      row.pasted_fraction = static_cast<double>(std::count(s.begin(), s.end(), 1)) / static_cast<double>(n * hh * ww);
    }
  }
  DenseLoss l = dense_openset_loss(st.classifier.logits(tape, x), b.y, s, config.lambda);
  row.loss = l.total.value().item();
  row.ce = l.ce.value().item();
  row.kl_term = config.lambda * l.kl.value().item();
  guard(it, row.loss, "segmentation loss");
  tape.backward(l.total);
  adam_step(st.classifier.params(), st.opt_classifier);

  if (config.joint) {
    FlowModel& flow = *st.flow;
    Array patches({n, ch, size, size});
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t y = 0; y < size; ++y)
          for (std::size_t xx = 0; xx < size; ++xx)
            patches[((k * ch + c) * size + y) * size + xx] =
                b.x[((k * ch + c) * hh + pos[k].top + y) * ww + pos[k].left + xx];
    Tape ftape;
    Var nll = flow_nll_loss(ftape, flow, flow.prepare_data(patches, st.dequant_rng));
    row.nll = nll.value().item();
    guard(it, row.nll, "flow loss");
    ftape.backward(nll);
    adam_step(flow.params(), st.opt_flow);
  }
  ++st.iteration;
  return row;
}

void train_imagewide(const TrainConfig& config, JointState& state, const LabeledData& data, const LogSink& sink,
                     long until) {
  config.validate(state.flow ? &state.flow->config() : nullptr, 0, 0);
  const long stop = until < 0 ? config.iterations : std::min(until, config.iterations);
  while (state.iteration < stop) {
    const LogRow row = imagewide_step(config, state, data);
    if (sink) sink(row);
  }
}

void train_dense(const TrainConfig& config, JointState& state, const LabeledData& data, const LogSink& sink,
                 long until) {
  if (data.inputs.rank() != 4) throw ShapeError("train_dense: expected [N,3,H,W] inputs");
  config.validate(state.flow ? &state.flow->config() : nullptr, data.inputs.dim(2), data.inputs.dim(3));
  const long stop = until < 0 ? config.iterations : std::min(until, config.iterations);
  while (state.iteration < stop) {
    const LogRow row = dense_step(config, state, data);
    if (sink) sink(row);
  }
}

}  // namespace borderflow
