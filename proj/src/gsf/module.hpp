#pragma once

#include <cstdint>
#include <vector>

#include "core/param.hpp"
#include "core/rng.hpp"
#include "core/tape.hpp"
#include "core/tensor.hpp"
#include "gsf/config.hpp"

namespace gsf {

// Wall-clock breakdown of one forward pass, microseconds per stage.
struct GsfStageTimes {
  double pre_us = 0, gate_us = 0, gating_us = 0, shift_us = 0;
  double fusion_weight_us = 0, fuse_us = 0, post_us = 0;
  double total_us() const {
    return pre_us + gate_us + gating_us + shift_us + fusion_weight_us +
           fuse_us + post_us;
  }
};

// The gate-shift-fuse block. The leading gated_channels() channels are split
// into two groups; each group is spatially gated by a tanh plane from a
// grouped 3D convolution, the gated features are time-shifted (group one
// toward the future frame, group two toward the past), and shifted features
// are recombined with the residual either by learned per-(channel,time)
// convex weights or by plain summation. Remaining channels pass through
// untouched.
//
// Kernels initialize to zero: a fresh block gates nothing, so with sum
// fusion it is exactly the identity and with learned fusion it halves the
// processed channels against a zero shift.
class GsfModule {
 public:
  explicit GsfModule(GsfConfig cfg);

  const GsfConfig& config() const { return cfg_; }

  // Learnable gating+fusion scalar count; normalization parameters are
  // reported separately via norm_param_count().
  int64_t param_count() const;
  int64_t norm_param_count() const;

  Tensor forward(const Tensor& x, Tape* tape = nullptr) const;

  // Same computation, but times each stage. For benchmarking only.
  Tensor forward_timed(const Tensor& x, GsfStageTimes* times) const;

  // Gate planes in (-1,1), shape B x 2 x T x H x W, from the raw processed
  // slab. Requires a learned gate.
  Tensor gate_maps(const Tensor& slab, Tape* tape = nullptr) const;

  // Convex fusion weights in (0,1), shape B x (Cg/2) x T, for group 0 or 1.
  // Requires learned fusion.
  Tensor fusion_weights(int group, const Tensor& y_shift,
                        const Tensor& residual, Tape* tape = nullptr) const;

  void randomize(Rng& rng, double stddev);
  std::vector<Param> params();

  // weights; public so tests and serialization can reach them directly
  Tensor gate_kernel;   // 2 x (Cg/2) x 3 x 3 x 3 (grouped, one plane each)
  Tensor fuse_kernel1;  // 1 x 2 x 3 x 3
  Tensor fuse_kernel2;  // 1 x 2 x 3 x 3
  Tensor norm_scale;    // Cg (used when pre_gate_norm)
  Tensor norm_offset;   // Cg

 private:
  Tensor forward_impl(const Tensor& x, Tape* tape, GsfStageTimes* times) const;
  GsfConfig cfg_;
};

}  // namespace gsf
