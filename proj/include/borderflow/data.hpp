#pragma once

// Procedural datasets: labelled 2-D point clouds and textured "shapes world"
// scenes with per-pixel labels. Every generator is a pure function of its
// arguments and seed.

#include <array>
#include <cstdint>
#include <vector>

#include "borderflow/array.hpp"

namespace borderflow {

inline constexpr int kIgnoreLabel = 255;

// ---------------------------------------------------------------------------
// Points

struct GaussianComponent {
  std::array<double, 2> mean{};
  std::array<double, 4> cov{1, 0, 0, 1};  // row-major 2x2
};

struct PointSpec {
  enum class Kind { mixture, moons };
  Kind kind = Kind::mixture;
  std::vector<GaussianComponent> components;  // one per class for mixtures
  double moon_noise = 0.1;

  int classes() const { return kind == Kind::moons ? 2 : static_cast<int>(components.size()); }

  // Gaussians at (+-2, 0) with isotropic standard deviation sigma.
  static PointSpec two_gaussians(double sigma = 0.5);
  static PointSpec two_moons(double noise);
};

struct PointDataset {
  Array points;             // [N,2]
  std::vector<int> labels;  // class per point
  int classes = 0;
};

// Point i belongs to class i mod C, so classes are balanced within one point.
// Throws std::invalid_argument for n < C or a covariance that is not positive definite.
PointDataset gen_point_dataset(const PointSpec& spec, std::size_t n, std::uint64_t seed);

// Uniform points whose distance to the nearest mixture mean lies in [r_inner, r_outer].
Array gen_shell_outliers(const PointSpec& spec, double r_inner, double r_outer, std::size_t n, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Scenes

struct Texture {
  std::array<double, 3> base{};
  double noise = 0.0;        // per-pixel Gaussian standard deviation
  int stripe_period = 0;     // 0 disables stripes
  int stripe_orientation = 0;  // 0 horizontal, 1 vertical, 2 diagonal
  double stripe_amplitude = 0.0;

  auto operator<=>(const Texture&) const = default;
};

using TextureBank = std::vector<Texture>;

TextureBank default_inlier_bank();   // 5 class textures
TextureBank default_outlier_bank();  // held out from training
bool banks_disjoint(const TextureBank& a, const TextureBank& b);

struct SceneSpec {
  std::size_t height = 64;
  std::size_t width = 64;
  int classes = 5;
  int min_shapes = 2;
  int max_shapes = 5;
  std::size_t min_side = 12;
  std::size_t max_side = 32;
  std::size_t outlier_min_side = 6;
  std::size_t outlier_max_side = 16;
};

struct Scene {
  Array image;                       // [3,H,W], values k/255
  std::vector<int> labels;           // H*W, class or kIgnoreLabel
  std::vector<std::uint8_t> outlier; // H*W, 1 on outlier pixels
};

// Renders one texture pixel in [0,1] before quantization; noise is the caller's draw.
std::array<double, 3> texture_pixel(const Texture& t, std::size_t y, std::size_t x, const std::array<double, 3>& noise);

// Background plus min_shapes..max_shapes axis-aligned rectangles of random classes.
Scene gen_scene(std::uint64_t seed, const TextureBank& inlier_bank, const SceneSpec& spec = {});
// gen_scene(seed) occluded by one rectangle textured from the outlier bank, labelled kIgnoreLabel.
Scene gen_eval_scene_with_outlier(std::uint64_t seed, const TextureBank& inlier_bank, const TextureBank& outlier_bank,
                                  const SceneSpec& spec = {});

}  // namespace borderflow
