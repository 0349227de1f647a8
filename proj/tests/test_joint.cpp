#include <cmath>
#include <filesystem>
#include <numbers>

#include "borderflow/gradcheck.hpp"
#include "borderflow/joint.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace borderflow;
using borderflow::testing::max_abs_diff;
using borderflow::testing::perturb;
using borderflow::testing::random_array;

namespace {

FlowConfig tiny_flow_images() {
  FlowConfig c;
  c.domain = FlowDomain::images;
  c.in_channels = 3;
  c.squeeze_count = 1;
  c.couplings_per_scale = 1;
  c.final_couplings = 2;
  c.res_blocks = 1;
  c.features = 3;
  c.dequant_levels = 256;
  c.logit_alpha = 0.05;
  return c;
}

FlowConfig tiny_flow_points() {
  FlowConfig c = FlowConfig::points2d();
  c.final_couplings = 2;
  c.res_blocks = 1;
  c.features = 6;
  return c;
}

LabeledData point_data(std::size_t n, std::uint64_t seed) {
  PointDataset d = gen_point_dataset(PointSpec::two_gaussians(0.5), n, seed);
  return {d.points, d.labels};
}

LabeledData scene_data(std::size_t n, std::size_t side) {
  SceneSpec spec;
  spec.height = spec.width = side;
  spec.min_side = 4;
  spec.max_side = side / 2;
  LabeledData d{Array({n, 3, side, side}), {}};
  for (std::size_t k = 0; k < n; ++k) {
    Scene s = gen_scene(k, default_inlier_bank(), spec);
    std::copy_n(s.image.data(), s.image.size(), d.inputs.data() + k * s.image.size());
    d.labels.insert(d.labels.end(), s.labels.begin(), s.labels.end());
  }
  return d;
}

// One bias-corrected Adam step from zero moments: theta - lr * g / (|g| + eps).
void first_adam_step(ParameterSet& params, const std::map<std::string, Array>& grads, double lr) {
  for (auto& [name, p] : params) {
    const Array& g = grads.at(name);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double m = (1 - 0.9) * g[i], v = (1 - 0.999) * g[i] * g[i];
      const double mhat = m / (1 - 0.9), vhat = v / (1 - 0.999);
      p.value[i] -= lr * mhat / (std::sqrt(vhat) + 1e-8);
    }
  }
}

std::map<std::string, Array> grads_of(const ParameterSet& params) {
  std::map<std::string, Array> g;
  for (const auto& [name, p] : params) g.emplace(name, p.grad);
  return g;
}

double max_param_diff(const ParameterSet& a, const ParameterSet& b) {
  double m = 0.0;
  for (const auto& [name, p] : a) m = std::max(m, max_abs_diff(p.value, b.at(name).value));
  return m;
}

bool params_equal(const ParameterSet& a, const ParameterSet& b) {
  for (const auto& [name, p] : a)
    if (!(p.value == b.at(name).value)) return false;
  return true;
}

}  // namespace

TEST_CASE("kl_uniform: hand values, direct summation and the entropy cross-check") {
  CHECK(kl_uniform({Array({1, 5}, 0.2), 1.0})[0] == doctest::Approx(0.0).epsilon(1e-15));
  const Array two = kl_uniform({Array({1, 2}, std::vector<double>{0.75, 0.25}), 1.0});
  CHECK(two[0] == doctest::Approx(-std::log(2.0) - 0.5 * (std::log(0.75) + std::log(0.25))).epsilon(1e-15));
  CHECK(std::abs(two[0] - 0.1438) < 1e-4);
  CHECK_THROWS_AS(kl_uniform({Array({1, 2}, std::vector<double>{1.0, 0.0}), 1.0}), DomainError);

  Rng rng(1);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t c = 2 + trial % 8;
    const Posterior p = softmax_with_temperature(random_array({1, c}, rng, -4, 4), 1.0);
    double kl_up = 0.0, kl_pu = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      const double u = 1.0 / c;
      kl_up += u * std::log(u / p.probs[k]);
      kl_pu += p.probs[k] * std::log(p.probs[k] / u);
    }
    CHECK(std::abs(kl_uniform(p)[0] - kl_up) < 1e-10);
    CHECK(std::abs(std::log(static_cast<double>(c)) - entropy_score(p)[0] - kl_pu) < 1e-10);

    // The graph version agrees with the value version.
    Tape t;
    Var logits = t.constant(random_array({1, c}, rng, -4, 4));
    const double graph = kl_uniform_logits(logits).value()[0];
    CHECK(std::abs(graph - kl_uniform(softmax_with_temperature(logits.value(), 1.0))[0]) < 1e-10);
  }
}

TEST_CASE("compound classifier loss") {
  ClassifierModel cls({Architecture::points_mlp, 2, 2, 8}, 3);
  FlowModel flow(tiny_flow_points(), 4);
  Rng prng(5);
  perturb(flow.params(), prng, 0.3);
  const LabeledData d = point_data(8, 6);

  SUBCASE("lambda = 0 is plain cross-entropy") {
    Tape t;
    Rng noise(1);
    CompoundLoss l = classifier_compound_loss(t, cls, flow, d.inputs, d.labels, 8, 0.0, noise);
    Tape t2;
    const double ce = mean(cross_entropy(cls.logits(t2, t2.constant(d.inputs)), d.labels)).value().item();
    CHECK(l.total.value().item() == ce);
  }
  SUBCASE("uniform outlier predictions zero the KL term for any lambda") {
    ClassifierModel flat = cls;
    flat.params().at("head.w").value.fill(0.0);
    flat.params().at("head.b").value.fill(0.0);
    for (double lambda : {0.5, 1.0, 100.0}) {
      Tape t;
      Rng noise(2);
      CompoundLoss l = classifier_compound_loss(t, flat, flow, d.inputs, d.labels, 8, lambda, noise);
      CHECK(std::abs(l.kl.value().item()) < 1e-15);
      CHECK(l.total.value().item() == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    }
  }
  SUBCASE("flow-parameter gradients match finite differences") {
    Program program = [&](Tape& t) {
      Rng noise(9);
      return classifier_compound_loss(t, cls, flow, d.inputs, d.labels, 8, 1.0, noise).total;
    };
    const GradCheckReport r = finite_difference_check(program, flow.params());
    CHECK(r.max_rel_error < 1e-4);
    CHECK(r.coords_checked > 0);
  }
  SUBCASE("labels outside the class range are rejected") {
    Tape t;
    Rng noise(1);
    std::vector<int> bad = d.labels;
    bad[0] = 2;
    CHECK_THROWS_AS(classifier_compound_loss(t, cls, flow, d.inputs, bad, 8, 1.0, noise), std::invalid_argument);
  }
}

TEST_CASE("gradient flow from the classifier loss into the flow") {
  ClassifierModel cls({Architecture::points_mlp, 2, 3, 8}, 7);
  FlowModel flow(tiny_flow_points(), 8);
  Rng prng(9);
  perturb(flow.params(), prng, 0.3);
  const LabeledData d = point_data(9, 2);
  const std::vector<int> labels{0, 1, 2, 0, 1, 2, 0, 1, 2};
  for (double lambda : {0.0, 0.5}) {
    flow.params().zero_grad();
    Tape t;
    Rng noise(3);
    t.backward(classifier_compound_loss(t, cls, flow, d.inputs, labels, 6, lambda, noise).total);
    double total = 0.0;
    for (const auto& [name, p] : flow.params())
      for (double g : p.grad.values()) total += std::abs(g);
    if (lambda == 0.0) CHECK(total == 0.0);
    else CHECK(total > 0.0);
  }
}

TEST_CASE("flow negative log-likelihood") {
  const FlowModel identity(tiny_flow_points(), 1);
  Tape t;
  CHECK(flow_nll_loss(t, identity, Array({4, 2})).value().item() ==
        doctest::Approx(std::log(2.0 * std::numbers::pi)).epsilon(1e-14));

  FlowModel flow(tiny_flow_points(), 2);
  Rng prng(3);
  perturb(flow.params(), prng, 0.2);
  const LabeledData d = point_data(16, 4);
  Tape t2;
  const double nll = flow_nll_loss(t2, flow, d.inputs).value().item();
  const Array ll = flow.log_likelihood(d.inputs);
  double m = 0.0;
  for (double v : ll.values()) m += v;
  CHECK(std::abs(nll + m / 16.0) < 1e-12);

  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    FlowModel f(FlowConfig::points2d(), seed);
    OptimizerState opt(f.params(), AdamConfig{});
    const LabeledData data = point_data(2000, 100 + seed);
    Rng rng(seed);
    double first = 0.0, last = 0.0;
    for (int step = 0; step < 500; ++step) {
      const auto idx = draw_batch(2000, 64, rng);
      Array x({64, 2});
      for (std::size_t k = 0; k < 64; ++k) {
        x[2 * k] = data.inputs[2 * idx[k]];
        x[2 * k + 1] = data.inputs[2 * idx[k] + 1];
      }
      Tape tape;
      Var loss = flow_nll_loss(tape, f, x);
      if (step == 0) first = flow_nll_loss(tape, f, data.inputs).value().item();
      tape.backward(loss);
      adam_step(f.params(), opt);
    }
    Tape tape;
    last = flow_nll_loss(tape, f, data.inputs).value().item();
    CHECK(last < first);
  }
}

TEST_CASE("paste_outlier geometry, conservation and determinism") {
  Rng rng(1);
  const Array crop = random_array({3, 12, 10}, rng);
  const Array full = random_array({3, 12, 10}, rng);
  Rng r0(0);
  const PasteResult all = paste_outlier(crop, full, r0);
  CHECK(all.x_pasted == full);
  CHECK(all.replaced_patch == crop);
  for (auto v : all.s) CHECK(v == 1);

  const Array sample = random_array({3, 4, 6}, rng);
  Rng a(7), b(7);
  const PasteResult p = paste_outlier(crop, sample, a);
  const PasteResult q = paste_outlier(crop, sample, b);
  CHECK(p.position.top == q.position.top);
  CHECK(p.position.left == q.position.left);
  CHECK(std::count(p.s.begin(), p.s.end(), 1) == 24);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 120; ++i)
      if (!p.s[i]) CHECK(p.x_pasted[c * 120 + i] == crop[c * 120 + i]);
      else CHECK(std::find(sample.values().begin(), sample.values().end(), p.x_pasted[c * 120 + i]) != sample.values().end());
  const PasteResult back = paste_outlier_at(p.x_pasted, p.replaced_patch, p.position);
  CHECK(back.x_pasted == crop);
  CHECK_THROWS_AS(paste_outlier(crop, random_array({3, 13, 2}, rng), a), std::invalid_argument);
}

TEST_CASE("paste positions are uniform over valid offsets") {
  Rng rng(2024);
  const std::size_t cells = 57 * 57, n = 10000;
  std::vector<double> counts(cells, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const PastePosition p = draw_paste_position(64, 64, 8, 8, rng);
    REQUIRE(p.top <= 56);
    REQUIRE(p.left <= 56);
    counts[p.top * 57 + p.left] += 1.0;
  }
  const double expected = static_cast<double>(n) / cells;
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  // Wilson-Hilferty normal approximation of the chi-square upper tail.
  const double k = static_cast<double>(cells - 1);
  const double z = (std::cbrt(chi2 / k) - (1.0 - 2.0 / (9.0 * k))) / std::sqrt(2.0 / (9.0 * k));
  const double p_value = 0.5 * std::erfc(z / std::sqrt(2.0));
  INFO("chi2 " << chi2 << " p " << p_value);
  CHECK(p_value > 0.01);
}

TEST_CASE("dense open-set loss") {
  Rng rng(3);
  const std::size_t n = 2, c = 4, h = 5, w = 6, px = n * h * w;
  const Array logits_arr = random_array({n, c, h, w}, rng, -3, 3);
  std::vector<int> labels(px);
  std::uniform_int_distribution<int> cls(0, 3), coin(0, 9);
  for (auto& l : labels) l = coin(rng) == 0 ? kIgnoreLabel : cls(rng);

  SUBCASE("empty mask equals closed-set cross-entropy") {
    Tape t;
    const std::vector<std::uint8_t> none(px, 0);
    const DenseLoss l = dense_openset_loss(t.constant(logits_arr), labels, none, 0.7);
    double ce = 0.0;
    int count = 0;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = 0; i < h * w; ++i) {
        const int y = labels[b * h * w + i];
        if (y == kIgnoreLabel) continue;
        double mx = -1e300;
        for (std::size_t k = 0; k < c; ++k) mx = std::max(mx, logits_arr[(b * c + k) * h * w + i]);
        double z = 0.0;
        for (std::size_t k = 0; k < c; ++k) z += std::exp(logits_arr[(b * c + k) * h * w + i] - mx);
        ce -= logits_arr[(b * c + y) * h * w + i] - mx - std::log(z);
        ++count;
      }
    CHECK(std::abs(l.total.value().item() - ce / count) < 1e-12);
  }
  SUBCASE("full mask with uniform predictions is zero") {
    Tape t;
    const DenseLoss l = dense_openset_loss(t.constant(Array({n, c, h, w}, 1.5)), labels,
                                           std::vector<std::uint8_t>(px, 1), 2.0);
    CHECK(std::abs(l.total.value().item()) < 1e-13);
  }
  SUBCASE("double-loop oracle on random instances") {
    for (int trial = 0; trial < 50; ++trial) {
      const Array lg = random_array({n, c, h, w}, rng, -4, 4);
      std::vector<std::uint8_t> s(px);
      for (auto& v : s) v = coin(rng) < 3;
      const double lambda = trial % 2 ? 1e-3 : 0.8;
      double ce = 0.0, kl = 0.0;
      int nce = 0, nkl = 0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t j = 0; j < w; ++j) {
            const std::size_t p = b * h * w + i * w + j;
            if (labels[p] == kIgnoreLabel) continue;
            double z = 0.0;
            for (std::size_t k = 0; k < c; ++k) z += std::exp(lg[((b * c + k) * h + i) * w + j]);
            auto logp = [&](std::size_t k) { return lg[((b * c + k) * h + i) * w + j] - std::log(z); };
            if (s[p] == 0) {
              ce -= logp(static_cast<std::size_t>(labels[p]));
              ++nce;
            } else {
              for (std::size_t k = 0; k < c; ++k) kl += (1.0 / c) * std::log((1.0 / c) / std::exp(logp(k)));
              ++nkl;
            }
          }
      const double oracle = (nce ? ce / nce : 0.0) + lambda * (nkl ? kl / nkl : 0.0);
      Tape t;
      CHECK(std::abs(dense_openset_loss(t.constant(lg), labels, s, lambda).total.value().item() - oracle) < 1e-10);
    }
  }
  SUBCASE("unpasted pixel without a valid label is an error") {
    std::vector<int> bad = labels;
    bad[3] = 7;
    Tape t;
    CHECK_THROWS_AS(dense_openset_loss(t.constant(logits_arr), bad, std::vector<std::uint8_t>(px, 0), 1.0),
                    std::invalid_argument);
    std::vector<std::uint8_t> s(px, 0);
    s[3] = 1;
    CHECK_NOTHROW(dense_openset_loss(t.constant(logits_arr), bad, s, 1.0));
  }
  SUBCASE("gradients match finite differences") {
    ClassifierModel m({Architecture::dense, 3, 3, 2}, 4);
    const Array x = random_array({1, 3, 8, 8}, rng, 0, 1);
    std::vector<int> lab(64);
    for (auto& l : lab) l = cls(rng) % 3;
    std::vector<std::uint8_t> s(64, 0);
    for (std::size_t i = 18; i < 30; ++i) s[i] = 1;
    Program program = [&](Tape& t) { return dense_openset_loss(t, m, x, lab, s, 0.5).total; };
    GradCheckOptions opt;
    opt.max_coords_per_param = 8;
    CHECK(finite_difference_check(program, m.params(), opt).max_rel_error < 1e-6);
  }
}

TEST_CASE("image-wide step equals a hand-rolled two-optimizer update") {
  TrainConfig cfg;
  cfg.batch_size = 6;
  cfg.iterations = 10;
  cfg.lambda = 1.0;
  cfg.seed = 5;
  const LabeledData data = point_data(40, 3);
  JointState st = init_joint_state(cfg, {Architecture::points_mlp, 2, 2, 8}, tiny_flow_points());
  Rng pr(1);
  perturb(st.flow->params(), pr, 0.2);

  // Replay outside the loop on copies.
  ClassifierModel cls = st.classifier;
  FlowModel flow = *st.flow;
  Rng data_rng = st.data_rng, noise_rng = st.noise_rng;
  const auto idx = draw_batch(40, 6, data_rng);
  Array x({6, 2});
  std::vector<int> y(6);
  for (std::size_t k = 0; k < 6; ++k) {
    x[2 * k] = data.inputs[2 * idx[k]];
    x[2 * k + 1] = data.inputs[2 * idx[k] + 1];
    y[k] = data.labels[idx[k]];
  }
  cls.params().zero_grad();
  flow.params().zero_grad();
  Tape t1;
  t1.backward(classifier_compound_loss(t1, cls, flow, x, y, 6, 1.0, noise_rng).total);
  const auto g_cls = grads_of(cls.params());
  auto g_flow = grads_of(flow.params());
  Tape t2;
  t2.backward(flow_nll_loss(t2, flow, x));
  for (auto& [name, g] : g_flow) g = flow.params().at(name).grad;
  first_adam_step(cls.params(), g_cls, 1e-3);
  first_adam_step(flow.params(), g_flow, 1e-3);

  const LogRow row = imagewide_step(cfg, st, data);
  CHECK(row.iteration == 0);
  CHECK(st.iteration == 1);
  CHECK(max_param_diff(st.classifier.params(), cls.params()) < 1e-12);
  CHECK(max_param_diff(st.flow->params(), flow.params()) < 1e-12);
}

TEST_CASE("dense step equals a hand-rolled two-optimizer update") {
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.iterations = 10;
  cfg.lambda = 0.5;
  cfg.outlier_sizes = {4, 6};
  cfg.seed = 8;
  const LabeledData data = scene_data(4, 16);
  JointState st = init_joint_state(cfg, {Architecture::dense, 3, 5, 2}, tiny_flow_images());
  Rng pr(2);
  perturb(st.flow->params(), pr, 0.05);

  ClassifierModel cls = st.classifier;
  FlowModel flow = *st.flow;
  Rng data_rng = st.data_rng, noise_rng = st.noise_rng, dq_rng = st.dequant_rng;
  const auto idx = draw_batch(4, 2, data_rng);
  std::uniform_int_distribution<std::size_t> pick(0, 1);
  const std::size_t size = cfg.outlier_sizes[pick(noise_rng)];
  std::vector<PastePosition> pos;
  for (int k = 0; k < 2; ++k) pos.push_back(draw_paste_position(16, 16, size, size, noise_rng));
  cls.params().zero_grad();
  flow.params().zero_grad();

  Tape tape;
  Var smp = flow.to_data_range(tape, flow.sample(tape, 2, size, size, noise_rng));
  Array clean({2, 3, 16, 16});
  std::vector<int> labels;
  for (std::size_t k = 0; k < 2; ++k) {
    std::copy_n(data.inputs.data() + idx[k] * 768, 768, clean.data() + k * 768);
    labels.insert(labels.end(), data.labels.begin() + static_cast<long>(idx[k] * 256),
                  data.labels.begin() + static_cast<long>((idx[k] + 1) * 256));
  }
  // Per-crop value-level pastes give the expected input and masks.
  Array pasted({2, 3, 16, 16}), patches({2, 3, size, size});
  std::vector<std::uint8_t> s;
  Array keep({2, 1, 16, 16}, 1.0);
  for (std::size_t k = 0; k < 2; ++k) {
    Array crop({3, 16, 16}), sample({3, size, size});
    std::copy_n(clean.data() + k * 768, 768, crop.data());
    std::copy_n(smp.value().data() + k * 3 * size * size, 3 * size * size, sample.data());
    const PasteResult r = paste_outlier_at(crop, sample, pos[k]);
    std::copy_n(r.x_pasted.data(), 768, pasted.data() + k * 768);
    std::copy_n(r.replaced_patch.data(), 3 * size * size, patches.data() + k * 3 * size * size);
    s.insert(s.end(), r.s.begin(), r.s.end());
    for (std::size_t i = 0; i < 256; ++i)
      if (r.s[i]) keep[k * 256 + i] = 0.0;
  }
  Var xp = add(mul(tape.constant(clean), tape.constant(keep)),
               pad_into(smp, 16, 16, {pos[0].top, pos[1].top}, {pos[0].left, pos[1].left}));
  CHECK(xp.value() == pasted);
  tape.backward(dense_openset_loss(cls.logits(tape, xp), labels, s, 0.5).total);
  const auto g_cls = grads_of(cls.params());
  auto g_flow = grads_of(flow.params());
  Tape t2;
  t2.backward(flow_nll_loss(t2, flow, flow.prepare_data(patches, dq_rng)));
  for (auto& [name, g] : g_flow) g = flow.params().at(name).grad;
  first_adam_step(cls.params(), g_cls, 1e-3);
  first_adam_step(flow.params(), g_flow, 1e-3);

  const LogRow row = dense_step(cfg, st, data);
  CHECK(row.outlier_h == size);
  CHECK(row.pasted_fraction == doctest::Approx(static_cast<double>(size * size) / 256.0));
  CHECK(max_param_diff(st.classifier.params(), cls.params()) < 1e-8);
  CHECK(max_param_diff(st.flow->params(), flow.params()) < 1e-8);
}

TEST_CASE("lambda = 0 decouples the classifier from the flow") {
  const LabeledData data = point_data(60, 11);
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.iterations = 20;
  cfg.lambda = 0.0;
  cfg.seed = 3;
  JointState joint = init_joint_state(cfg, {Architecture::points_mlp, 2, 2, 8}, tiny_flow_points());
  TrainConfig alone = cfg;
  alone.joint = false;
  JointState solo = init_joint_state(alone, {Architecture::points_mlp, 2, 2, 8}, std::nullopt);
  train_imagewide(cfg, joint, data, {});
  train_imagewide(alone, solo, data, {});
  CHECK(params_equal(joint.classifier.params(), solo.classifier.params()));
}

TEST_CASE("training is deterministic and resumes exactly from a checkpoint") {
  const std::filesystem::path dir = std::filesystem::temp_directory_path() / "borderflow_test_joint";
  std::filesystem::create_directories(dir);
  SUBCASE("image-wide") {
    const LabeledData data = point_data(50, 12);
    TrainConfig cfg;
    cfg.batch_size = 5;
    cfg.iterations = 12;
    cfg.seed = 21;
    const ClassifierConfig cc{Architecture::points_mlp, 2, 2, 8};
    JointState a = init_joint_state(cfg, cc, tiny_flow_points());
    JointState b = init_joint_state(cfg, cc, tiny_flow_points());
    std::vector<double> la, lb;
    train_imagewide(cfg, a, data, [&](const LogRow& r) { la.push_back(r.loss); });
    train_imagewide(cfg, b, data, [&](const LogRow& r) { lb.push_back(r.loss); }, 5);
    Checkpoint ck;
    b.save(ck);
    save_checkpoint(dir / "iw.ckpt", ck);
    JointState c = JointState::load(load_checkpoint(dir / "iw.ckpt"), cfg);
    CHECK(c.iteration == 5);
    train_imagewide(cfg, c, data, [&](const LogRow& r) { lb.push_back(r.loss); });
    CHECK(la == lb);
    CHECK(params_equal(a.classifier.params(), c.classifier.params()));
    CHECK(params_equal(a.flow->params(), c.flow->params()));
  }
  SUBCASE("dense") {
    const LabeledData data = scene_data(3, 16);
    TrainConfig cfg;
    cfg.batch_size = 2;
    cfg.iterations = 4;
    cfg.outlier_sizes = {4, 6};
    cfg.seed = 2;
    const ClassifierConfig cc{Architecture::dense, 3, 5, 2};
    JointState a = init_joint_state(cfg, cc, tiny_flow_images());
    JointState b = init_joint_state(cfg, cc, tiny_flow_images());
    train_dense(cfg, a, data, {});
    train_dense(cfg, b, data, {}, 2);
    Checkpoint ck;
    b.save(ck);
    save_checkpoint(dir / "dense.ckpt", ck);
    JointState c = JointState::load(load_checkpoint(dir / "dense.ckpt"), cfg);
    train_dense(cfg, c, data, {});
    CHECK(params_equal(a.classifier.params(), c.classifier.params()));
    CHECK(params_equal(a.flow->params(), c.flow->params()));
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("pasted share of default crops") {
  const LabeledData data = scene_data(2, 64);
  TrainConfig cfg;
  cfg.batch_size = 1;
  cfg.iterations = 10;
  cfg.lambda = 0.0;
  FlowConfig fc = tiny_flow_images();
  JointState st = init_joint_state(cfg, {Architecture::dense, 3, 5, 2}, fc);
  std::vector<double> shares;
  train_dense(cfg, st, data, [&](const LogRow& r) { shares.push_back(r.pasted_fraction); });
  for (double f : shares) {
    CHECK(f >= 0.015);
    CHECK(f <= 0.08);
  }
  TrainConfig bad = cfg;
  bad.outlier_sizes = {7};
  CHECK_THROWS_AS(bad.validate(&fc, 64, 64), std::invalid_argument);
  bad.outlier_sizes = {64};
  CHECK_THROWS_AS(bad.validate(&fc, 64, 64), std::invalid_argument);
}

TEST_CASE("non-finite losses stop training") {
  LabeledData data = point_data(10, 1);
  data.inputs[3] = std::numeric_limits<double>::quiet_NaN();
  TrainConfig cfg;
  cfg.batch_size = 10;
  cfg.iterations = 50;
  JointState st = init_joint_state(cfg, {Architecture::points_mlp, 2, 2, 8}, tiny_flow_points());
  CHECK_THROWS_AS(train_imagewide(cfg, st, data, {}), TrainingDiverged);
}
