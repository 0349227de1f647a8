#include <cmath>
#include <set>

#include "borderflow/data.hpp"
#include "doctest.h"

using namespace borderflow;

TEST_CASE("two Gaussian dataset: class means, balance and determinism") {
  const PointSpec spec = PointSpec::two_gaussians(0.5);
  const PointDataset d = gen_point_dataset(spec, 10000, 17);
  double mx[2] = {0, 0}, my[2] = {0, 0};
  int counts[2] = {0, 0};
  for (std::size_t i = 0; i < 10000; ++i) {
    const int l = d.labels[i];
    mx[l] += d.points[2 * i];
    my[l] += d.points[2 * i + 1];
    ++counts[l];
  }
  CHECK(std::abs(counts[0] - counts[1]) <= 1);
  CHECK(std::abs(mx[0] / counts[0] + 2.0) < 0.1);
  CHECK(std::abs(my[0] / counts[0]) < 0.1);
  CHECK(std::abs(mx[1] / counts[1] - 2.0) < 0.1);
  CHECK(std::abs(my[1] / counts[1]) < 0.1);

  const PointDataset again = gen_point_dataset(spec, 10000, 17);
  CHECK(again.points == d.points);
  CHECK(again.labels == d.labels);
  CHECK(d.points.all_finite());
}

TEST_CASE("point datasets: edge cases and errors") {
  const PointDataset one = gen_point_dataset(PointSpec::two_gaussians(), 2, 1);
  CHECK(one.labels == std::vector<int>{0, 1});
  const PointDataset odd = gen_point_dataset(PointSpec::two_moons(0.1), 101, 1);
  CHECK(std::count(odd.labels.begin(), odd.labels.end(), 0) == 51);
  CHECK_THROWS_AS(gen_point_dataset(PointSpec::two_gaussians(), 1, 1), std::invalid_argument);
  PointSpec bad = PointSpec::two_gaussians();
  bad.components[1].cov = {1.0, 1.0, 1.0, 1.0};
  CHECK_THROWS_AS(gen_point_dataset(bad, 10, 1), std::invalid_argument);
  bad.components[1].cov = {0.0, 0.0, 0.0, 1.0};
  CHECK_THROWS_AS(gen_point_dataset(bad, 10, 1), std::invalid_argument);

  // Correlated covariance: empirical covariance follows the spec.
  PointSpec corr;
  corr.components = {{{0, 0}, {1.0, 0.6, 0.6, 0.5}}};
  const PointDataset c = gen_point_dataset(corr, 20000, 3);
  double sxy = 0, syy = 0;
  for (std::size_t i = 0; i < 20000; ++i) {
    sxy += c.points[2 * i] * c.points[2 * i + 1];
    syy += c.points[2 * i + 1] * c.points[2 * i + 1];
  }
  CHECK(std::abs(sxy / 20000 - 0.6) < 0.03);
  CHECK(std::abs(syy / 20000 - 0.5) < 0.03);
}

TEST_CASE("shell outliers respect their radii") {
  const PointSpec spec = PointSpec::two_gaussians();
  const Array o = gen_shell_outliers(spec, 1.5, 3.0, 500, 4);
  for (std::size_t i = 0; i < 500; ++i) {
    const double d = std::min(std::hypot(o[2 * i] + 2, o[2 * i + 1]), std::hypot(o[2 * i] - 2, o[2 * i + 1]));
    CHECK(d >= 1.5);
    CHECK(d <= 3.0);
  }
}

TEST_CASE("scenes: label geometry, value ranges, determinism") {
  const TextureBank bank = default_inlier_bank();
  SceneSpec flat;
  flat.min_shapes = flat.max_shapes = 0;
  const Scene single = gen_scene(3, bank, flat);
  for (int l : single.labels) CHECK(l == single.labels[0]);

  const Scene a = gen_scene(42, bank);
  const Scene b = gen_scene(42, bank);
  CHECK(a.image == b.image);
  CHECK(a.labels == b.labels);
  CHECK(a.image.shape() == Shape{3, 64, 64});
  for (double v : a.image.values()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(std::round(v * 255.0) == doctest::Approx(v * 255.0).epsilon(1e-12));
  }
  for (auto m : a.outlier) CHECK(m == 0);
  CHECK_THROWS_AS(gen_scene(1, TextureBank{}), std::invalid_argument);
}

TEST_CASE("scene corpus covers every class") {
  const TextureBank bank = default_inlier_bank();
  std::set<int> seen;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const Scene sc = gen_scene(s, bank);
    seen.insert(sc.labels.begin(), sc.labels.end());
  }
  CHECK(seen == std::set<int>{0, 1, 2, 3, 4});
}

TEST_CASE("evaluation scenes with one outlier object") {
  const TextureBank in = default_inlier_bank(), out = default_outlier_bank();
  CHECK(banks_disjoint(in, out));
  CHECK_THROWS_AS(gen_eval_scene_with_outlier(1, in, TextureBank{in[2]}), std::invalid_argument);
  double min_share = 1.0, max_share = 0.0;
  for (std::uint64_t s = 0; s < 500; ++s) {
    const Scene base = gen_scene(s, in);
    const Scene e = gen_eval_scene_with_outlier(s, in, out);
    std::size_t area = 0;
    std::size_t top = 64, bottom = 0, left = 64, right = 0;
    for (std::size_t i = 0; i < e.outlier.size(); ++i) {
      if (e.outlier[i]) {
        ++area;
        top = std::min(top, i / 64);
        bottom = std::max(bottom, i / 64);
        left = std::min(left, i % 64);
        right = std::max(right, i % 64);
        CHECK(e.labels[i] == kIgnoreLabel);
      } else {
        CHECK(e.labels[i] == base.labels[i]);
        for (std::size_t c = 0; c < 3; ++c) CHECK(e.image[c * 4096 + i] == base.image[c * 4096 + i]);
      }
    }
    // The mask is exactly one filled rectangle.
    CHECK(area == (bottom - top + 1) * (right - left + 1));
    const double share = static_cast<double>(area) / 4096.0;
    min_share = std::min(min_share, share);
    max_share = std::max(max_share, share);
  }
  CHECK(min_share >= 0.005);
  CHECK(max_share <= 0.08);
}
