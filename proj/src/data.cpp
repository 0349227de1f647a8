#include "borderflow/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "borderflow/params.hpp"

namespace borderflow {
namespace {

// Independent stream for a (seed, purpose) pair.
Rng stream(std::uint64_t seed, std::uint64_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(purpose)};
  return Rng(seq);
}

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

struct Rect {
  std::size_t top, left, h, w;
};

Rect random_rect(Rng& rng, std::size_t height, std::size_t width, std::size_t min_side, std::size_t max_side) {
  std::uniform_int_distribution<std::size_t> side(min_side, std::min({max_side, height, width}));
  const std::size_t h = side(rng), w = side(rng);
  std::uniform_int_distribution<std::size_t> top(0, height - h), left(0, width - w);
  const std::size_t t = top(rng);
  return {t, left(rng), h, w};
}

void render(Array& image, std::size_t y, std::size_t x, const Texture& t, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  const std::array<double, 3> noise{g(rng), g(rng), g(rng)};
  const auto px = texture_pixel(t, y, x, noise);
  const std::size_t h = image.dim(1), w = image.dim(2);
  for (std::size_t c = 0; c < 3; ++c) image[(c * h + y) * w + x] = quantize(px[c]);
}

}  // namespace

PointSpec PointSpec::two_gaussians(double sigma) {
  PointSpec s;
  s.kind = Kind::mixture;
  const double v = sigma * sigma;
  s.components = {{{-2.0, 0.0}, {v, 0, 0, v}}, {{2.0, 0.0}, {v, 0, 0, v}}};
  return s;
}

PointSpec PointSpec::two_moons(double noise) {
  PointSpec s;
  s.kind = Kind::moons;
  s.moon_noise = noise;
  return s;
}

PointDataset gen_point_dataset(const PointSpec& spec, std::size_t n, std::uint64_t seed) {
  const int c = spec.classes();
  if (c < 1) throw std::invalid_argument("point spec: no classes");
  if (n < static_cast<std::size_t>(c)) throw std::invalid_argument("point dataset: need at least one point per class");
  // Cholesky factors, rejecting covariances that are not positive definite.
  std::vector<std::array<double, 3>> chol;
  for (const auto& comp : spec.components) {
    const auto& k = comp.cov;
    if (k[1] != k[2]) throw std::invalid_argument("point spec: covariance not symmetric");
    if (!(k[0] > 0.0)) throw std::invalid_argument("point spec: degenerate covariance");
    const double l00 = std::sqrt(k[0]);
    const double l10 = k[2] / l00;
    const double rest = k[3] - l10 * l10;
    if (!(rest > 1e-12 * k[3])) throw std::invalid_argument("point spec: degenerate covariance");
    chol.push_back({l00, l10, std::sqrt(rest)});
  }
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  PointDataset d{Array({n, 2}), std::vector<int>(n), c};
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % static_cast<std::size_t>(c));
    d.labels[i] = label;
    double x, y;
    if (spec.kind == PointSpec::Kind::mixture) {
      const auto& m = spec.components[label].mean;
      const auto& l = chol[label];
      const double u = g(rng), v = g(rng);
      x = m[0] + l[0] * u;
      y = m[1] + l[1] * u + l[2] * v;
    } else {
      const double t = angle(rng);
      x = label == 0 ? std::cos(t) : 1.0 - std::cos(t);
      y = label == 0 ? std::sin(t) : 0.5 - std::sin(t);
      x += spec.moon_noise * g(rng);
      y += spec.moon_noise * g(rng);
    }
    d.points[2 * i] = x;
    d.points[2 * i + 1] = y;
  }
  return d;
}

Array gen_shell_outliers(const PointSpec& spec, double r_inner, double r_outer, std::size_t n, std::uint64_t seed) {
  if (spec.kind != PointSpec::Kind::mixture || spec.components.empty())
    throw std::invalid_argument("shell outliers need a mixture spec");
  if (!(r_inner >= 0.0 && r_outer > r_inner)) throw std::invalid_argument("shell outliers: bad radii");
  double lo_x = 1e300, hi_x = -1e300, lo_y = 1e300, hi_y = -1e300;
  for (const auto& c : spec.components) {
    lo_x = std::min(lo_x, c.mean[0] - r_outer);
    hi_x = std::max(hi_x, c.mean[0] + r_outer);
    lo_y = std::min(lo_y, c.mean[1] - r_outer);
    hi_y = std::max(hi_y, c.mean[1] + r_outer);
  }
  Rng rng(seed);
  std::uniform_real_distribution<double> ux(lo_x, hi_x), uy(lo_y, hi_y);
  Array out({n, 2});
  for (std::size_t i = 0; i < n;) {
    const double x = ux(rng), y = uy(rng);
    double nearest = 1e300;
    for (const auto& c : spec.components) nearest = std::min(nearest, std::hypot(x - c.mean[0], y - c.mean[1]));
    if (nearest < r_inner || nearest > r_outer) continue;
    out[2 * i] = x;
    out[2 * i + 1] = y;
    ++i;
  }
  return out;
}

TextureBank default_inlier_bank() {
  return {
      {{0.35, 0.55, 0.30}, 0.05, 0, 0, 0.0},
      {{0.55, 0.55, 0.58}, 0.03, 4, 0, 0.06},
      {{0.70, 0.35, 0.25}, 0.04, 3, 1, 0.08},
      {{0.25, 0.35, 0.70}, 0.05, 0, 0, 0.0},
      {{0.85, 0.80, 0.45}, 0.04, 5, 2, 0.07},
  };
}

TextureBank default_outlier_bank() {
  return {
      {{0.80, 0.25, 0.75}, 0.06, 2, 2, 0.10},
      {{0.20, 0.80, 0.80}, 0.08, 2, 0, 0.12},
      {{0.95, 0.95, 0.95}, 0.02, 6, 1, 0.15},
      {{0.10, 0.10, 0.10}, 0.03, 0, 0, 0.0},
  };
}

bool banks_disjoint(const TextureBank& a, const TextureBank& b) {
  for (const Texture& t : a)
    if (std::find(b.begin(), b.end(), t) != b.end()) return false;
  return true;
}

std::array<double, 3> texture_pixel(const Texture& t, std::size_t y, std::size_t x,
                                    const std::array<double, 3>& noise) {
  double stripe = 0.0;
  if (t.stripe_period > 0) {
    const std::size_t coord = t.stripe_orientation == 0 ? y : t.stripe_orientation == 1 ? x : x + y;
    stripe = (coord / static_cast<std::size_t>(t.stripe_period)) % 2 == 0 ? t.stripe_amplitude : -t.stripe_amplitude;
  }
  std::array<double, 3> px{};
  for (std::size_t c = 0; c < 3; ++c) px[c] = std::clamp(t.base[c] + stripe + t.noise * noise[c], 0.0, 1.0);
  return px;
}

Scene gen_scene(std::uint64_t seed, const TextureBank& bank, const SceneSpec& spec) {
  if (bank.empty()) throw std::invalid_argument("gen_scene: empty texture bank");
  if (static_cast<int>(bank.size()) < spec.classes)
    throw std::invalid_argument("gen_scene: texture bank smaller than class count");
  if (spec.min_shapes < 0 || spec.max_shapes < spec.min_shapes) throw std::invalid_argument("gen_scene: bad shape counts");
  const std::size_t h = spec.height, w = spec.width;
  Rng layout = stream(seed, 0);
  Rng pixels = stream(seed, 1);
  std::uniform_int_distribution<int> cls(0, spec.classes - 1);
  std::uniform_int_distribution<int> count(spec.min_shapes, spec.max_shapes);

  Scene s{Array({3, h, w}), std::vector<int>(h * w, cls(layout)), std::vector<std::uint8_t>(h * w, 0)};
  const int shapes = count(layout);
  for (int k = 0; k < shapes; ++k) {
    const Rect r = random_rect(layout, h, w, spec.min_side, spec.max_side);
    const int c = cls(layout);
    for (std::size_t y = r.top; y < r.top + r.h; ++y)
      for (std::size_t x = r.left; x < r.left + r.w; ++x) s.labels[y * w + x] = c;
  }
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) render(s.image, y, x, bank[s.labels[y * w + x]], pixels);
  return s;
}

Scene gen_eval_scene_with_outlier(std::uint64_t seed, const TextureBank& inlier_bank, const TextureBank& outlier_bank,
                                  const SceneSpec& spec) {
  if (outlier_bank.empty()) throw std::invalid_argument("gen_eval_scene_with_outlier: empty outlier bank");
  if (!banks_disjoint(inlier_bank, outlier_bank))
    throw std::invalid_argument("gen_eval_scene_with_outlier: inlier and outlier banks share a texture");
  Scene s = gen_scene(seed, inlier_bank, spec);
  Rng rng = stream(seed, 2);
  const Rect r = random_rect(rng, spec.height, spec.width, spec.outlier_min_side, spec.outlier_max_side);
  std::uniform_int_distribution<std::size_t> pick(0, outlier_bank.size() - 1);
  const Texture& t = outlier_bank[pick(rng)];
  for (std::size_t y = r.top; y < r.top + r.h; ++y)
    for (std::size_t x = r.left; x < r.left + r.w; ++x) {
      s.labels[y * spec.width + x] = kIgnoreLabel;
      s.outlier[y * spec.width + x] = 1;
      render(s.image, y, x, t, rng);
    }
  return s;
}

}  // namespace borderflow
