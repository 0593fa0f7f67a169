#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gsf/config.hpp"

namespace gsf {

class GsfModule;

namespace oracle {

// Brute-force references used to validate the fast paths. Everything here is
// written as literal nested loops over raw buffers in 64-bit arithmetic and
// deliberately shares no kernel code with the implementations it checks.

// Direct 2D cross-correlation.
// x: b*cin*h*w, k: cout*cin*kh*kw -> b*cout*ho*wo (ho/wo from stride/pad).
std::vector<double> conv2d_ref(const float* x, int b, int cin, int h, int w,
                               const float* k, int cout, int kh, int kw,
                               int stride, int pad);

// Grouped 3D cross-correlation, one output plane per group, stride 1.
std::vector<double> conv3d_group_plane_ref(const float* x, int b, int c, int t,
                                           int h, int w, const float* k,
                                           int groups, int kt, int kh, int kw,
                                           std::array<int, 3> pad);

// Spatial mean: b*c*t*h*w -> b*c*t.
std::vector<double> mean_hw_ref(const float* x, int64_t slices, int64_t hw);

// Temporal shift on b*c*t*h*w, zero padded. delta=+1 pulls the next frame,
// delta=-1 the previous one. When split_groups is true the leading half of
// the channels shifts by delta and the trailing half by -delta.
std::vector<double> shift_ref(const float* x, int b, int c, int t, int64_t hw,
                              int delta, bool split_groups);

// Weights for the scalar pipeline reference, all 64-bit copies.
struct GsfRefWeights {
  std::vector<double> gate_kernel;  // 2*(cg/2)*27, learned gate only
  std::vector<double> fuse1;        // 18, learned fusion only
  std::vector<double> fuse2;        // 18
  std::vector<double> norm_scale;   // cg, pre-gate norm only
  std::vector<double> norm_offset;  // cg
};

// 64-bit copies of a module's weights, ready for the scalar pipeline.
GsfRefWeights ref_weights(const GsfModule& m);

// Equation-by-equation scalar transcription of the full block: split, gate,
// residual, opposite time shifts, pooled fusion weights, convex blend,
// pass-through of untouched channels.
std::vector<double> gsf_forward_ref(const GsfConfig& cfg,
                                    const GsfRefWeights& weights,
                                    const float* x, int b, int c, int t, int h,
                                    int w);

// Double-precision variant for finite-difference probing of the weights.
std::vector<double> gsf_forward_ref64(const GsfConfig& cfg,
                                      const GsfRefWeights& weights,
                                      const std::vector<double>& x, int b,
                                      int c, int t, int h, int w);

struct OracleReport {
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;  // over components above the magnitude floor
  int64_t worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;

  // Relative error with absolute fallback below the floor.
  bool passed(double tol) const { return effective_err() <= tol; }
  double effective_err() const { return effective_; }

  double effective_ = 0.0;
};

// Central-difference check of an analytic gradient against a 64-bit scalar
// function of the parameter vector.
OracleReport grad_check(
    const std::function<double(const std::vector<double>&)>& f,
    const std::vector<double>& theta, const std::vector<double>& analytic,
    double eps = 1e-3, double floor = 1e-6);

// Runs every oracle suite, logging one line per suite. Returns the number of
// failed suites. Budgeted to finish well under a minute.
int run_selftest(const std::function<void(const std::string&)>& log);

}  // namespace oracle
}  // namespace gsf
