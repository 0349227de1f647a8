#pragma once

// Real NVP bijection built from affine coupling layers.
//
// Image-domain flows act on [N,C,H,W]: every scale runs checkerboard
// couplings, a 2x2 squeeze, then channel couplings; the last scale runs
// checkerboard couplings only. Coupling nets are residual 3x3 convolutions,
// so one model accepts any spatial size divisible by 2^squeeze_count.
// Point-domain flows act on [N,C] with fully connected coupling nets and
// alternating channel masks.
//
// No latent factor-out: every dimension reaches the final latent, which has
// a unit Gaussian prior.

#include <map>
#include <string>
#include <vector>

#include "borderflow/autodiff.hpp"
#include "borderflow/checkpoint.hpp"
#include "borderflow/params.hpp"

namespace borderflow {

enum class FlowDomain { points, images };

enum class MaskKind { checkerboard_even, checkerboard_odd, channel_first_half, channel_second_half };

struct FlowConfig {
  FlowDomain domain = FlowDomain::images;
  int in_channels = 3;
  int squeeze_count = 2;
  int couplings_per_scale = 3;
  int final_couplings = 4;
  int res_blocks = 3;
  int features = 32;
  // 0 disables dequantization (continuous data).
  int dequant_levels = 0;
  // 0 disables the logit pre-transform; image data uses 0.05.
  double logit_alpha = 0.0;

  void validate() const;
  std::size_t extent_divisor() const { return std::size_t{1} << squeeze_count; }

  std::map<std::string, std::string> to_meta() const;
  static FlowConfig from_meta(const std::map<std::string, std::string>& meta, const std::string& prefix);

  // Desk-scale presets.
  static FlowConfig points2d();
  static FlowConfig scenes();
};

// One entry per step in application order (forward direction).
struct FlowStep {
  enum class Kind { coupling, squeeze };
  Kind kind = Kind::coupling;
  MaskKind mask = MaskKind::checkerboard_even;
  int channels = 0;  // channel count seen by the coupling
};

std::vector<FlowStep> flow_schedule(const FlowConfig& config);
// Masks of the coupling layers only, in forward order.
std::vector<MaskKind> mask_schedule(const FlowConfig& config);

// 1 marks conditioning coordinates (passed through), 0 marks transformed ones.
// Images: shape [1,C,H,W]; points: shape [1,C].
Array coupling_mask(MaskKind kind, std::size_t channels, std::size_t height, std::size_t width, bool points);

struct FlowForward {
  Var z;
  Var log_det;                      // [N]
  std::vector<Var> layer_log_dets;  // one [N] entry per coupling
};

struct FlowInverse {
  Var x;
  Var log_det;  // [N], log|det dx/dz|
};

class FlowModel {
 public:
  FlowModel(FlowConfig config, std::uint64_t init_seed);

  const FlowConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  // Graph builders. x and z live in the flow domain (after any logit pre-transform).
  FlowForward forward(Tape& tape, Var x) const;
  FlowInverse inverse(Tape& tape, Var z) const;
  // log N(z; 0, I) per sample.
  Var prior_log_prob(Tape& tape, Var z) const;
  // log p(x) for x in the data domain: logit pre-transform (when enabled) plus change of variables.
  Var log_likelihood(Tape& tape, Var x) const;
  // Maps flow-domain values back to the data range (inverse logit); identity without pre-transform.
  Var to_data_range(Tape& tape, Var y) const;

  Shape latent_shape(std::size_t n, std::size_t height, std::size_t width) const;
  Var sample(Tape& tape, std::size_t n, std::size_t height, std::size_t width, Rng& rng) const;

  // Value-level conveniences on a private tape.
  std::pair<Array, Array> forward_transform(const Array& x) const;
  Array inverse_transform(const Array& z) const;
  Array log_likelihood(const Array& x) const;
  Array sample(std::size_t n, std::size_t height, std::size_t width, Rng& rng) const;

  // Quantizes [0,1] data to dequant_levels bins and adds uniform noise; identity when disabled.
  Array prepare_data(const Array& x01, Rng& rng) const;

  void save(Checkpoint& ckpt, const std::string& prefix) const;
  static FlowModel load(const Checkpoint& ckpt, const std::string& prefix);

 private:
  struct ShiftScale {
    Var log_scale;  // already masked and bounded
    Var shift;      // already masked
  };
  ShiftScale coupling_net(Tape& tape, std::size_t layer, Var conditioner, Var inv_mask, int channels) const;
  Var layer(Tape& tape, const std::string& name, Var x) const;
  void check_input(const Shape& shape, const char* what) const;

  FlowConfig config_;
  std::vector<FlowStep> schedule_;
  // Graph construction binds parameters to tapes without modifying them.
  mutable ParameterSet params_;
};

// (x + u) / levels with u ~ U[0,1); x must hold integers in [0, levels).
Array dequantize(const Array& x_discrete, int levels, Rng& rng);

}  // namespace borderflow
