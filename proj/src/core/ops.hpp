#pragma once

#include <array>
#include <vector>

#include "core/rng.hpp"
#include "core/tape.hpp"
#include "core/tensor.hpp"

namespace gsf {
namespace ops {

// All ops allocate fresh outputs, accumulate reductions in 64-bit, and record
// themselves on `tape` when given one and at least one input is tracked.

// 2D cross-correlation. x: B x Cin x H x W, k: Cout x Cin x kh x kw with odd
// kh, kw. Output H' = (H + 2*pad - kh)/stride + 1, likewise W'.
Tensor conv2d(const Tensor& x, const Tensor& k, int stride, int pad,
              Tape* tape = nullptr);

// Grouped 3D cross-correlation with one output plane per group.
// x: B x C x T x H x W, k: G x (C/G) x kt x kh x kw -> B x G x T' x H' x W'
// (primed dims preserved when pad matches half the kernel extent).
Tensor conv3d_group_plane(const Tensor& x, const Tensor& k,
                          std::array<int, 3> pad, Tape* tape = nullptr);

// Mean over the trailing two (spatial) dims: rank-5 B x C x T x H x W ->
// B x C x T, rank-4 N x C x H x W -> N x C.
Tensor mean_hw(const Tensor& x, Tape* tape = nullptr);

Tensor tanh(const Tensor& x, Tape* tape = nullptr);
Tensor sigmoid(const Tensor& x, Tape* tape = nullptr);
Tensor relu(const Tensor& x, Tape* tape = nullptr);

// Binary elementwise ops broadcast per dim: same rank, each dim equal or 1
// on one side (a one-element tensor broadcasts against anything).
Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor sub(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor hadamard(const Tensor& a, const Tensor& b, Tape* tape = nullptr);

// f*a + (1-f)*b with f broadcastable to the common shape of a and b.
Tensor affine_combine(const Tensor& f, const Tensor& a, const Tensor& b,
                      Tape* tape = nullptr);

Tensor mul_scalar(const Tensor& x, float c, Tape* tape = nullptr);
Tensor sum_all(const Tensor& x, Tape* tape = nullptr);  // scalar, shape {1}

// Temporal shift on rank-5 tensors (axis 2), zero padded at the clip edge.
// shift_time_fw: out[t] = x[t+1]; shift_time_bw: out[t] = x[t-1].
Tensor shift_time_fw(const Tensor& x, Tape* tape = nullptr);
Tensor shift_time_bw(const Tensor& x, Tape* tape = nullptr);

// Channel (axis 1) slicing and concatenation.
Tensor slice_channels(const Tensor& x, int c0, int c1, Tape* tape = nullptr);
Tensor concat_channels(const std::vector<const Tensor*>& parts,
                       Tape* tape = nullptr);

// Stacks two B x C x T tensors into B x 2 x C x T.
Tensor stack2(const Tensor& a, const Tensor& b, Tape* tape = nullptr);

// Contiguous reinterpretation; element count must match.
Tensor reshape(const Tensor& x, Shape shape, Tape* tape = nullptr);

// Swaps axes 1 and 2 of a rank-5 tensor (B,T,C,H,W <-> B,C,T,H,W).
Tensor swap_axes12(const Tensor& x, Tape* tape = nullptr);

// Per-channel spatial standardization: for each slice over the trailing two
// dims, subtract its mean and divide by sqrt(var + eps), then apply the
// per-channel (axis 1) scale and offset. Rank 4 or 5.
Tensor spatial_norm(const Tensor& x, const Tensor& scale, const Tensor& offset,
                    Tape* tape = nullptr, float eps = 1e-5f);

// Dense layer: x N x C, w K x C, bias K -> N x K.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias,
              Tape* tape = nullptr);

// Mean over frames: x (B*frames) x K -> B x K.
Tensor mean_frames(const Tensor& x, int frames, Tape* tape = nullptr);

// Inverted dropout; identity when p == 0.
Tensor dropout(const Tensor& x, float p, Rng& rng, Tape* tape = nullptr);

// Mean softmax cross-entropy over the batch. logits: B x K. Throws
// NumericError if the result is not finite.
Tensor softmax_cross_entropy(const Tensor& logits,
                             const std::vector<int>& labels,
                             Tape* tape = nullptr);

}  // namespace ops
}  // namespace gsf
