#pragma once

#include <optional>
#include <string>
#include <vector>

#include "core/param.hpp"
#include "core/rng.hpp"
#include "core/tape.hpp"
#include "core/tensor.hpp"
#include "gsf/module.hpp"

namespace gsf {

// conv -> per-frame spatial standardization -> rectifier, spatial-preserving.
struct ConvStage {
  Tensor kernel;  // cout x cin x k x k
  Tensor scale;   // cout
  Tensor offset;  // cout
  bool rectify = true;

  void init(Rng& rng, int cout, int cin, int k);
  Tensor forward(const Tensor& x4, Tape* tape) const;
  void collect(const std::string& prefix, std::vector<Param>& out);
  int64_t param_scalars() const;
};

enum class BackboneKind { InceptionToy, BottleneckToy };

// Which conv of a bottleneck the block's temporal module follows.
enum class BottleneckSite { AfterReduce, AfterMid, AfterExpand };

// Two-branch block: branch A is a lone 1x1 conv, branch B a 1x1 followed by
// a 3x3; outputs concatenate. The temporal slot sits on branch A, the branch
// with the fewest convolutions.
struct InceptionBlock {
  ConvStage branch_a;
  ConvStage branch_b1;
  ConvStage branch_b3;
  bool gsf_slot = true;
  std::optional<GsfModule> gsf;
};

// 1x1 reduce, 3x3, 1x1 expand with residual add; rectifier after the add.
struct BottleneckBlock {
  ConvStage reduce;
  ConvStage mid;
  ConvStage expand;  // rectify=false, activation comes after the residual
  bool gsf_slot = true;
  BottleneckSite site = BottleneckSite::AfterExpand;
  std::optional<GsfModule> gsf;
};

// Frame-wise 2D feature extractor: with no temporal module inserted, the
// features of frame t depend only on frame t.
class ToyBackbone {
 public:
  static ToyBackbone inception_toy(int in_channels, Rng& rng);
  static ToyBackbone bottleneck_toy(int in_channels, Rng& rng);

  // x4: (B*frames) x C x H x W, frames contiguous per batch item.
  Tensor forward(const Tensor& x4, int frames, Tape* tape) const;

  int out_channels() const;
  int in_channels() const;
  std::vector<Param> params();

  BackboneKind kind = BackboneKind::InceptionToy;
  ConvStage stem;
  std::vector<InceptionBlock> inception_blocks;
  std::vector<BottleneckBlock> bottleneck_blocks;
};

enum class InsertPolicy {
  InceptionLeastBranch,
  BottleneckAfterExpand,
  BottleneckAfterMid,
  BottleneckAfterReduce,
};

struct GsfInsertSpec {
  GateMode gate = GateMode::Learned;
  FusionMode fusion = FusionMode::Learned;
  double fraction = 0.0;  // <= 0 picks the policy default
  bool pre_gate_norm = true;
};

// Fills every flagged slot; the policy must match the backbone's block kind.
// Default fractions: all channels on the inception branch, a quarter of the
// expanded bottleneck width.
void insert_gsf(ToyBackbone& backbone, InsertPolicy policy,
                const GsfInsertSpec& spec);

// Applies a block to (B*frames) x C x H x W features by folding frames back
// into a temporal axis around the call.
Tensor apply_gsf_framewise(const GsfModule& module, const Tensor& x4,
                           int frames, Tape* tape);

// TSN-style wrapper: per-frame logits from the backbone, averaged over the
// clip.
class VideoClassifier {
 public:
  VideoClassifier(ToyBackbone backbone, int num_classes, int frames, Rng& rng);

  // clip: B x T x Cimg x H x W -> B x num_classes. Dropout is applied before
  // the classifier only when train is set.
  Tensor forward_video(const Tensor& clip, Tape* tape = nullptr,
                       bool train = false, float dropout_p = 0.0f,
                       Rng* dropout_rng = nullptr) const;

  std::vector<Param> params();

  ToyBackbone backbone;
  Tensor fc_weight;  // num_classes x backbone out channels
  Tensor fc_bias;
  int num_classes = 0;
  int frames = 0;
};

}  // namespace gsf
