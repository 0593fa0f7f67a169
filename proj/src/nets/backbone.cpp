#include "nets/backbone.hpp"

#include <cmath>

#include "core/errors.hpp"
#include "core/ops.hpp"

namespace gsf {

void ConvStage::init(Rng& rng, int cout, int cin, int k) {
  kernel = Tensor(Shape{cout, cin, k, k});
  const double stddev = std::sqrt(2.0 / (static_cast<double>(cin) * k * k));
  for (int64_t i = 0; i < kernel.numel(); ++i) {
    kernel[i] = static_cast<float>(rng.normal(0.0, stddev));
  }
  scale = Tensor(Shape{cout}, 1.0f);
  offset = Tensor(Shape{cout});
}

Tensor ConvStage::forward(const Tensor& x4, Tape* tape) const {
  const int k = kernel.dim(2);
  Tensor y = ops::conv2d(x4, kernel, 1, k / 2, tape);
  y = ops::spatial_norm(y, scale, offset, tape);
  return rectify ? ops::relu(y, tape) : y;
}

void ConvStage::collect(const std::string& prefix, std::vector<Param>& out) {
  out.push_back({prefix + ".kernel", &kernel});
  out.push_back({prefix + ".scale", &scale});
  out.push_back({prefix + ".offset", &offset});
}

int64_t ConvStage::param_scalars() const {
  return kernel.numel() + scale.numel() + offset.numel();
}

ToyBackbone ToyBackbone::inception_toy(int in_channels, Rng& rng) {
  ToyBackbone bb;
  bb.kind = BackboneKind::InceptionToy;
  bb.stem.init(rng, 16, in_channels, 3);
  bb.inception_blocks.resize(2);
  for (InceptionBlock& block : bb.inception_blocks) {
    block.branch_a.init(rng, 8, 16, 1);
    block.branch_b1.init(rng, 8, 16, 1);
    block.branch_b3.init(rng, 8, 8, 3);
  }
  return bb;
}

ToyBackbone ToyBackbone::bottleneck_toy(int in_channels, Rng& rng) {
  ToyBackbone bb;
  bb.kind = BackboneKind::BottleneckToy;
  bb.stem.init(rng, 32, in_channels, 3);
  bb.bottleneck_blocks.resize(2);
  for (BottleneckBlock& block : bb.bottleneck_blocks) {
    block.reduce.init(rng, 8, 32, 1);
    block.mid.init(rng, 8, 8, 3);
    block.expand.init(rng, 32, 8, 1);
    block.expand.rectify = false;
  }
  return bb;
}

int ToyBackbone::out_channels() const {
  return kind == BackboneKind::InceptionToy ? 16 : 32;
}

int ToyBackbone::in_channels() const {
  return stem.kernel.dim(1);
}

Tensor apply_gsf_framewise(const GsfModule& module, const Tensor& x4,
                           int frames, Tape* tape) {
  if (x4.dim(0) % frames != 0) {
    throw ShapeError("apply_gsf_framewise: row count not divisible by frames");
  }
  const int b = x4.dim(0) / frames;
  const Shape flat = x4.shape();
  Tensor x5 = ops::reshape(
      x4, Shape{b, frames, x4.dim(1), x4.dim(2), x4.dim(3)}, tape);
  x5 = ops::swap_axes12(x5, tape);  // B x C x T x H x W
  Tensor z = module.forward(x5, tape);
  z = ops::swap_axes12(z, tape);
  return ops::reshape(z, flat, tape);
}

Tensor ToyBackbone::forward(const Tensor& x4, int frames, Tape* tape) const {
  if (x4.rank() != 4) {
    throw ShapeError("backbone expects (B*T) x C x H x W, got " +
                     shape_str(x4.shape()));
  }
  Tensor h = stem.forward(x4, tape);
  if (kind == BackboneKind::InceptionToy) {
    for (const InceptionBlock& block : inception_blocks) {
      Tensor a = block.branch_a.forward(h, tape);
      if (block.gsf.has_value()) {
        a = apply_gsf_framewise(*block.gsf, a, frames, tape);
      }
      Tensor b1 = block.branch_b1.forward(h, tape);
      Tensor b3 = block.branch_b3.forward(b1, tape);
      h = ops::concat_channels({&a, &b3}, tape);
    }
  } else {
    for (const BottleneckBlock& block : bottleneck_blocks) {
      const Tensor residual = h;
      Tensor v = block.reduce.forward(h, tape);
      if (block.gsf.has_value() && block.site == BottleneckSite::AfterReduce) {
        v = apply_gsf_framewise(*block.gsf, v, frames, tape);
      }
      v = block.mid.forward(v, tape);
      if (block.gsf.has_value() && block.site == BottleneckSite::AfterMid) {
        v = apply_gsf_framewise(*block.gsf, v, frames, tape);
      }
      v = block.expand.forward(v, tape);
      if (block.gsf.has_value() && block.site == BottleneckSite::AfterExpand) {
        v = apply_gsf_framewise(*block.gsf, v, frames, tape);
      }
      h = ops::relu(ops::add(v, residual, tape), tape);
    }
  }
  return h;
}

std::vector<Param> ToyBackbone::params() {
  std::vector<Param> out;
  stem.collect("stem", out);
  auto add_gsf = [&out](std::optional<GsfModule>& gsf,
                        const std::string& prefix) {
    if (!gsf.has_value()) return;
    for (Param& p : gsf->params()) {
      out.push_back({prefix + "." + p.name, p.value});
    }
  };
  for (size_t i = 0; i < inception_blocks.size(); ++i) {
    const std::string prefix = "block" + std::to_string(i);
    InceptionBlock& block = inception_blocks[i];
    block.branch_a.collect(prefix + ".branch_a", out);
    block.branch_b1.collect(prefix + ".branch_b1", out);
    block.branch_b3.collect(prefix + ".branch_b3", out);
    add_gsf(block.gsf, prefix + ".gsf");
  }
  for (size_t i = 0; i < bottleneck_blocks.size(); ++i) {
    const std::string prefix = "block" + std::to_string(i);
    BottleneckBlock& block = bottleneck_blocks[i];
    block.reduce.collect(prefix + ".reduce", out);
    block.mid.collect(prefix + ".mid", out);
    block.expand.collect(prefix + ".expand", out);
    add_gsf(block.gsf, prefix + ".gsf");
  }
  return out;
}

void insert_gsf(ToyBackbone& backbone, InsertPolicy policy,
                const GsfInsertSpec& spec) {
  const bool inception = policy == InsertPolicy::InceptionLeastBranch;
  if (inception != (backbone.kind == BackboneKind::InceptionToy)) {
    throw ConfigError("insert_gsf: policy does not match the block kind");
  }
  auto make = [&spec](int channels, double default_fraction) {
    GsfConfig cfg;
    cfg.channels = channels;
    cfg.fraction = spec.fraction > 0.0 ? spec.fraction : default_fraction;
    cfg.gate = spec.gate;
    cfg.fusion = spec.fusion;
    cfg.pre_gate_norm = spec.pre_gate_norm;
    return GsfModule(cfg);
  };
  if (inception) {
    for (InceptionBlock& block : backbone.inception_blocks) {
      if (!block.gsf_slot) continue;
      block.gsf.emplace(make(block.branch_a.kernel.dim(0), 1.0));
    }
    return;
  }
  BottleneckSite site = BottleneckSite::AfterExpand;
  if (policy == InsertPolicy::BottleneckAfterMid) site = BottleneckSite::AfterMid;
  if (policy == InsertPolicy::BottleneckAfterReduce) {
    site = BottleneckSite::AfterReduce;
  }
  for (BottleneckBlock& block : backbone.bottleneck_blocks) {
    if (!block.gsf_slot) continue;
    int channels = block.expand.kernel.dim(0);
    if (site == BottleneckSite::AfterMid) channels = block.mid.kernel.dim(0);
    if (site == BottleneckSite::AfterReduce) {
      channels = block.reduce.kernel.dim(0);
    }
    block.site = site;
    block.gsf.emplace(make(channels, 0.25));
  }
}

VideoClassifier::VideoClassifier(ToyBackbone bb, int classes, int t, Rng& rng)
    : backbone(std::move(bb)), num_classes(classes), frames(t) {
  if (classes < 2) throw ConfigError("classifier needs at least 2 classes");
  if (t < 1) throw ConfigError("classifier needs at least 1 frame per clip");
  const int c = backbone.out_channels();
  fc_weight = Tensor(Shape{classes, c});
  const double stddev = std::sqrt(1.0 / c);
  for (int64_t i = 0; i < fc_weight.numel(); ++i) {
    fc_weight[i] = static_cast<float>(rng.normal(0.0, stddev));
  }
  fc_bias = Tensor(Shape{classes});
}

Tensor VideoClassifier::forward_video(const Tensor& clip, Tape* tape,
                                      bool train, float dropout_p,
                                      Rng* dropout_rng) const {
  if (clip.rank() != 5) {
    throw ShapeError("forward_video expects B x T x C x H x W, got " +
                     shape_str(clip.shape()));
  }
  if (clip.dim(1) != frames) {
    throw ShapeError("forward_video: model takes " + std::to_string(frames) +
                     " frames, clip has " + std::to_string(clip.dim(1)));
  }
  const int b = clip.dim(0);
  Tensor x4 = ops::reshape(
      clip, Shape{b * frames, clip.dim(2), clip.dim(3), clip.dim(4)}, tape);
  Tensor feats = backbone.forward(x4, frames, tape);
  feats = ops::mean_hw(feats, tape);  // (B*T) x C
  if (train && dropout_p > 0.0f) {
    if (dropout_rng == nullptr) {
      throw UsageError("forward_video: dropout requires an RNG");
    }
    feats = ops::dropout(feats, dropout_p, *dropout_rng, tape);
  }
  Tensor logits = ops::linear(feats, fc_weight, fc_bias, tape);
  return ops::mean_frames(logits, frames, tape);  // B x K
}

std::vector<Param> VideoClassifier::params() {
  std::vector<Param> out = backbone.params();
  out.push_back({"fc.weight", &fc_weight});
  out.push_back({"fc.bias", &fc_bias});
  return out;
}

}  // namespace gsf
