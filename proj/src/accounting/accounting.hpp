#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gsf/config.hpp"
#include "nets/backbone.hpp"

namespace gsf {

// One insertion site in a reference backbone: channel width, processed
// fraction, and the temporal/spatial resolution at that depth.
struct ManifestSite {
  int channels = 0;
  double fraction = 1.0;
  int t = 0, h = 0, w = 0;
};

// Cost-accounting description of a backbone that is never executed: baseline
// totals plus the sites where a block would be inserted.
struct BackboneManifest {
  std::string name;
  double baseline_params = 0;
  double baseline_macs = 0;
  std::vector<ManifestSite> sites;

  // Text format: '#' comments, then `baseline_params=` and `baseline_flops=`
  // header lines, then one `C fraction T H W` line per site.
  static BackboneManifest load(const std::string& path);
  void validate() const;
};

// Added learnable scalars for one block of `gated` processed channels.
int64_t gsf_param_delta(int gated, GateMode gate = GateMode::Learned,
                        FusionMode fusion = FusionMode::Learned);

// Multiply-accumulates of one forward pass over a T-frame clip: the gating
// convolution (27 taps per plane pixel), the gating multiply, the residual
// subtract, the 2-in 3x3 fusion convolution on pooled maps, and the
// three-op convex blend. The gating convolution dominates.
double gsf_macs(int gated, int t, int h, int w,
                GateMode gate = GateMode::Learned,
                FusionMode fusion = FusionMode::Learned);

struct SiteCost {
  ManifestSite site;
  int gated = 0;
  int64_t param_delta = 0;
  double mac_delta = 0;
};

struct CostReport {
  std::string name;
  double baseline_params = 0;
  double baseline_macs = 0;
  std::vector<SiteCost> sites;

  int64_t total_param_delta() const;
  double total_mac_delta() const;
  double param_overhead() const;  // delta / baseline
  double mac_overhead() const;
};

CostReport report(const BackboneManifest& manifest);

// Whole-model cost of a toy classifier, per clip of model.frames frames at
// the given input resolution. Matches the MacCounterScope convention, so an
// instrumented forward pass of batch 1 reproduces `macs` exactly.
struct ToyNetCost {
  int64_t params = 0;
  double macs = 0;
  int64_t gsf_params = 0;
  double gsf_macs = 0;
};
ToyNetCost toy_net_cost(const VideoClassifier& model, int h, int w);

}  // namespace gsf
