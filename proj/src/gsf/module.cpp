#include "gsf/module.hpp"

#include <chrono>

#include "core/errors.hpp"
#include "core/ops.hpp"

namespace gsf {

namespace {

class StageClock {
 public:
  explicit StageClock(GsfStageTimes* t) : t_(t) {
    if (t_ != nullptr) last_ = std::chrono::steady_clock::now();
  }
  void lap(double GsfStageTimes::* field) {
    if (t_ == nullptr) return;
    const auto now = std::chrono::steady_clock::now();
    t_->*field +=
        std::chrono::duration<double, std::micro>(now - last_).count();
    last_ = now;
  }

 private:
  GsfStageTimes* t_;
  std::chrono::steady_clock::time_point last_;
};

}  // namespace

GsfModule::GsfModule(GsfConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  const int cg = cfg_.gated_channels();
  gate_kernel = Tensor(Shape{2, cg / 2, 3, 3, 3});
  fuse_kernel1 = Tensor(Shape{1, 2, 3, 3});
  fuse_kernel2 = Tensor(Shape{1, 2, 3, 3});
  norm_scale = Tensor(Shape{cg}, 1.0f);
  norm_offset = Tensor(Shape{cg});
}

int64_t GsfModule::param_count() const {
  int64_t n = 0;
  if (cfg_.gate == GateMode::Learned) n += gate_kernel.numel();
  if (cfg_.fusion == FusionMode::Learned) {
    n += fuse_kernel1.numel() + fuse_kernel2.numel();
  }
  return n;
}

int64_t GsfModule::norm_param_count() const {
  const bool used = cfg_.pre_gate_norm && cfg_.gate == GateMode::Learned;
  return used ? norm_scale.numel() + norm_offset.numel() : 0;
}

Tensor GsfModule::gate_maps(const Tensor& slab, Tape* tape) const {
  if (cfg_.gate != GateMode::Learned) {
    throw UsageError("gate_maps: gate mode is fixed(" +
                     std::string(gate_mode_name(cfg_.gate)) + ")");
  }
  if (slab.rank() != 5 || slab.dim(1) != cfg_.gated_channels()) {
    throw ShapeError("gate_maps: expected B x " +
                     std::to_string(cfg_.gated_channels()) +
                     " x T x H x W slab, got " + shape_str(slab.shape()));
  }
  Tensor src = slab;
  if (cfg_.pre_gate_norm) {
    src = ops::relu(ops::spatial_norm(slab, norm_scale, norm_offset, tape),
                    tape);
  }
  return ops::tanh(ops::conv3d_group_plane(src, gate_kernel, {1, 1, 1}, tape),
                   tape);
}

Tensor GsfModule::fusion_weights(int group, const Tensor& y_shift,
                                 const Tensor& residual, Tape* tape) const {
  if (cfg_.fusion != FusionMode::Learned) {
    throw UsageError("fusion_weights: fusion mode is sum");
  }
  if (group != 0 && group != 1) {
    throw UsageError("fusion_weights: group must be 0 or 1");
  }
  if (y_shift.rank() != 5 || !y_shift.same_shape(residual)) {
    throw ShapeError("fusion_weights: operand shapes differ, " +
                     shape_str(y_shift.shape()) + " vs " +
                     shape_str(residual.shape()));
  }
  const int b = y_shift.dim(0), half = y_shift.dim(1), t = y_shift.dim(2);
  Tensor pooled_y = ops::mean_hw(y_shift, tape);   // B x half x T
  Tensor pooled_r = ops::mean_hw(residual, tape);  // B x half x T
  // 2-channel (channel,time) image; 3x3 conv with pad 1 keeps half x T.
  Tensor stacked = ops::stack2(pooled_y, pooled_r, tape);
  const Tensor& kernel = group == 0 ? fuse_kernel1 : fuse_kernel2;
  Tensor raw = ops::conv2d(stacked, kernel, 1, 1, tape);
  return ops::reshape(ops::sigmoid(raw, tape), Shape{b, half, t}, tape);
}

Tensor GsfModule::forward(const Tensor& x, Tape* tape) const {
  return forward_impl(x, tape, nullptr);
}

Tensor GsfModule::forward_timed(const Tensor& x, GsfStageTimes* times) const {
  return forward_impl(x, nullptr, times);
}

Tensor GsfModule::forward_impl(const Tensor& x, Tape* tape,
                               GsfStageTimes* times) const {
  if (x.rank() != 5) {
    throw ShapeError("gsf forward expects B x C x T x H x W, got " +
                     shape_str(x.shape()));
  }
  if (x.dim(1) != cfg_.channels) {
    throw ConfigError("gsf forward: module built for " +
                      std::to_string(cfg_.channels) + " channels, input has " +
                      std::to_string(x.dim(1)));
  }
  if (x.dim(2) < 1) throw ShapeError("gsf forward: empty temporal dim");

  const int b = x.dim(0), c = x.dim(1), t = x.dim(2), h = x.dim(3),
            w = x.dim(4);
  const int cg = cfg_.gated_channels();
  const int half = cg / 2;

  StageClock clock(times);
  const Tensor slab = cg == c ? x : ops::slice_channels(x, 0, cg, tape);
  Tensor gate_src = slab;
  if (cfg_.gate == GateMode::Learned && cfg_.pre_gate_norm) {
    gate_src = ops::relu(
        ops::spatial_norm(slab, norm_scale, norm_offset, tape), tape);
  }
  clock.lap(&GsfStageTimes::pre_us);

  Tensor gates;
  if (cfg_.gate == GateMode::Learned) {
    gates = ops::tanh(
        ops::conv3d_group_plane(gate_src, gate_kernel, {1, 1, 1}, tape), tape);
  } else {
    gates = Tensor(Shape{b, 2, t, h, w}, gate_constant(cfg_.gate));
  }
  clock.lap(&GsfStageTimes::gate_us);

  const Tensor x1 = ops::slice_channels(slab, 0, half, tape);
  const Tensor x2 = ops::slice_channels(slab, half, cg, tape);
  const Tensor g1 = ops::slice_channels(gates, 0, 1, tape);
  const Tensor g2 = ops::slice_channels(gates, 1, 2, tape);
  const Tensor y1 = ops::hadamard(g1, x1, tape);
  const Tensor y2 = ops::hadamard(g2, x2, tape);
  const Tensor r1 = ops::sub(x1, y1, tape);
  const Tensor r2 = ops::sub(x2, y2, tape);
  clock.lap(&GsfStageTimes::gating_us);

  const Tensor y1s = ops::shift_time_fw(y1, tape);
  const Tensor y2s = ops::shift_time_bw(y2, tape);
  clock.lap(&GsfStageTimes::shift_us);

  Tensor z1, z2;
  if (cfg_.fusion == FusionMode::Learned) {
    const Tensor f1 = fusion_weights(0, y1s, r1, tape);
    const Tensor f2 = fusion_weights(1, y2s, r2, tape);
    clock.lap(&GsfStageTimes::fusion_weight_us);
    const Tensor f1b = ops::reshape(f1, Shape{b, half, t, 1, 1}, tape);
    const Tensor f2b = ops::reshape(f2, Shape{b, half, t, 1, 1}, tape);
    z1 = ops::affine_combine(f1b, y1s, r1, tape);
    z2 = ops::affine_combine(f2b, y2s, r2, tape);
  } else {
    clock.lap(&GsfStageTimes::fusion_weight_us);
    z1 = ops::add(y1s, r1, tape);
    z2 = ops::add(y2s, r2, tape);
  }
  clock.lap(&GsfStageTimes::fuse_us);

  Tensor out;
  if (cg == c) {
    out = ops::concat_channels({&z1, &z2}, tape);
  } else {
    const Tensor rest = ops::slice_channels(x, cg, c, tape);
    out = ops::concat_channels({&z1, &z2, &rest}, tape);
  }
  clock.lap(&GsfStageTimes::post_us);
  return out;
}

void GsfModule::randomize(Rng& rng, double stddev) {
  for (int64_t i = 0; i < gate_kernel.numel(); ++i) {
    gate_kernel[i] = static_cast<float>(rng.normal(0.0, stddev));
  }
  for (int64_t i = 0; i < fuse_kernel1.numel(); ++i) {
    fuse_kernel1[i] = static_cast<float>(rng.normal(0.0, stddev));
  }
  for (int64_t i = 0; i < fuse_kernel2.numel(); ++i) {
    fuse_kernel2[i] = static_cast<float>(rng.normal(0.0, stddev));
  }
  for (int64_t i = 0; i < norm_scale.numel(); ++i) {
    norm_scale[i] = static_cast<float>(1.0 + rng.normal(0.0, stddev * 0.5));
    norm_offset[i] = static_cast<float>(rng.normal(0.0, stddev * 0.5));
  }
}

std::vector<Param> GsfModule::params() {
  std::vector<Param> out;
  if (cfg_.gate == GateMode::Learned) {
    out.push_back({"gate_kernel", &gate_kernel});
    if (cfg_.pre_gate_norm) {
      out.push_back({"norm_scale", &norm_scale});
      out.push_back({"norm_offset", &norm_offset});
    }
  }
  if (cfg_.fusion == FusionMode::Learned) {
    out.push_back({"fuse_kernel1", &fuse_kernel1});
    out.push_back({"fuse_kernel2", &fuse_kernel2});
  }
  return out;
}

}  // namespace gsf
