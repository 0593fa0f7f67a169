#pragma once

#include <cmath>
#include <string>

#include "core/errors.hpp"

namespace gsf {

// Spatial gate: a learned single-plane map in (-1,1) per channel group, or a
// hard-wired constant. The constants reproduce the classic degenerate blocks:
// +1 is a pure channel time-shift, -1 is shift-and-difference, 0 disables
// temporal mixing entirely.
enum class GateMode { Learned, FixedPlusOne, FixedMinusOne, FixedZero };

// Shifted features and residual are blended with learned per-(channel,time)
// convex weights, or simply summed.
enum class FusionMode { Learned, Sum };

inline float gate_constant(GateMode m) {
  switch (m) {
    case GateMode::FixedPlusOne: return 1.0f;
    case GateMode::FixedMinusOne: return -1.0f;
    case GateMode::FixedZero: return 0.0f;
    default: throw UsageError("gate_constant: gate is learned");
  }
}

struct GsfConfig {
  int channels = 0;       // channel count of the incoming tensor
  double fraction = 1.0;  // fraction of leading channels processed
  GateMode gate = GateMode::Learned;
  FusionMode fusion = FusionMode::Learned;
  bool pre_gate_norm = true;  // standardize+rectify before the gate conv

  // Processed channel count: floor(fraction*channels) rounded down to even
  // so the two groups split equally.
  int gated_channels() const {
    int cg = static_cast<int>(std::floor(fraction * channels + 1e-9));
    return cg - (cg % 2);
  }

  void validate() const {
    if (channels < 2) {
      throw ConfigError("gsf: need at least 2 channels, got " +
                        std::to_string(channels));
    }
    static constexpr double kAllowed[] = {0.125, 0.25, 0.5, 0.75, 1.0};
    bool ok = false;
    for (double f : kAllowed) ok = ok || std::abs(fraction - f) < 1e-9;
    if (!ok) {
      throw ConfigError(
          "gsf: fraction must be one of 0.125, 0.25, 0.5, 0.75, 1.0");
    }
    if (gated_channels() < 2) {
      throw ConfigError("gsf: fraction " + std::to_string(fraction) + " of " +
                        std::to_string(channels) +
                        " channels leaves no even group split");
    }
  }
};

inline const char* gate_mode_name(GateMode m) {
  switch (m) {
    case GateMode::Learned: return "learned";
    case GateMode::FixedPlusOne: return "+1";
    case GateMode::FixedMinusOne: return "-1";
    case GateMode::FixedZero: return "0";
  }
  return "?";
}

inline const char* fusion_mode_name(FusionMode m) {
  return m == FusionMode::Learned ? "learned" : "sum";
}

}  // namespace gsf
