#include "core/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "core/errors.hpp"
#include "core/macs.hpp"
#include "core/threading.hpp"

namespace gsf {
namespace ops {

namespace {

// Row-major strides with zero in broadcast (size-1) dims.
std::array<int64_t, 5> bcast_strides(const Shape& s, const Shape& out) {
  std::array<int64_t, 5> st{};
  int64_t stride = 1;
  for (int i = static_cast<int>(out.size()) - 1; i >= 0; --i) {
    const int d = s[static_cast<size_t>(i)];
    st[static_cast<size_t>(i)] = (d == 1) ? 0 : stride;
    stride *= d;
  }
  return st;
}

// Resolves the broadcast output shape of two operands. A one-element tensor
// broadcasts against anything; otherwise ranks must match and every dim must
// agree or be 1 on one side.
Shape bcast_shape(const Tensor& a, const Tensor& b, const char* opname) {
  if (a.numel() == 1) return b.shape();
  if (b.numel() == 1) return a.shape();
  if (a.rank() != b.rank()) {
    throw ShapeError(std::string(opname) + ": rank mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Shape out(a.shape());
  for (int i = 0; i < a.rank(); ++i) {
    const int da = a.dim(i), db = b.dim(i);
    if (da == db) {
      out[static_cast<size_t>(i)] = da;
    } else if (da == 1 || db == 1) {
      out[static_cast<size_t>(i)] = std::max(da, db);
    } else {
      throw ShapeError(std::string(opname) + ": shapes " +
                       shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                       " do not broadcast");
    }
  }
  return out;
}

// Pads a shape with leading 1s to the target rank (for one-element operands).
Shape rank_align(const Shape& s, size_t rank) {
  if (s.size() == rank) return s;
  Shape out(rank, 1);
  return out;
}

// Applies fn(out_index, a_index, b_index) over the broadcast iteration space.
template <typename Fn>
void bcast_iterate(const Shape& out, const Shape& sa, const Shape& sb,
                   Fn&& fn) {
  const size_t rank = out.size();
  const auto st_a = bcast_strides(rank_align(sa, rank), out);
  const auto st_b = bcast_strides(rank_align(sb, rank), out);
  std::array<int, 5> idx{};
  const int64_t n = shape_numel(out);
  int64_t ia = 0, ib = 0;
  for (int64_t i = 0; i < n; ++i) {
    fn(i, ia, ib);
    for (int d = static_cast<int>(rank) - 1; d >= 0; --d) {
      const size_t ud = static_cast<size_t>(d);
      ++idx[ud];
      ia += st_a[ud];
      ib += st_b[ud];
      if (idx[ud] < out[ud]) break;
      ia -= st_a[ud] * out[ud];
      ib -= st_b[ud] * out[ud];
      idx[ud] = 0;
    }
  }
}

// Sums a gradient down to an operand's shape (inverse of broadcasting).
Tensor reduce_to_shape(const Tensor& g, const Shape& target) {
  if (g.shape() == target) return g;
  if (shape_numel(target) == 1) {
    double acc = 0.0;
    for (int64_t i = 0; i < g.numel(); ++i) acc += g[i];
    return Tensor(target, static_cast<float>(acc));
  }
  std::vector<double> acc(static_cast<size_t>(shape_numel(target)), 0.0);
  bcast_iterate(g.shape(), target, target,
                [&](int64_t ig, int64_t it, int64_t) {
                  acc[static_cast<size_t>(it)] += g[ig];
                });
  Tensor out(target);
  for (size_t i = 0; i < acc.size(); ++i) {
    out[static_cast<int64_t>(i)] = static_cast<float>(acc[i]);
  }
  return out;
}

void require_rank(const Tensor& t, int rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " +
                     std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

template <typename Fwd, typename Dfn>
Tensor unary_pointwise(const Tensor& x, Tape* tape, Fwd fwd, Dfn dfn) {
  Tensor out(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) {
    out[i] = static_cast<float>(fwd(static_cast<double>(x[i])));
  }
  if (tape != nullptr && x.node >= 0) {
    Tensor xc = x, yc = out;
    out.node = tape->record({x.node}, [xc, yc, dfn](const Tensor& g) {
      Tensor gx(xc.shape());
      for (int64_t i = 0; i < gx.numel(); ++i) {
        gx[i] = static_cast<float>(dfn(xc[i], yc[i]) * g[i]);
      }
      return std::vector<Tensor>{std::move(gx)};
    });
  }
  return out;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& k, int stride, int pad,
              Tape* tape) {
  require_rank(x, 4, "conv2d input");
  require_rank(k, 4, "conv2d kernel");
  if (k.dim(1) != x.dim(1)) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(k.dim(1)) +
                     " input channels, tensor has " + std::to_string(x.dim(1)));
  }
  const int kh = k.dim(2), kw = k.dim(3);
  if (kh % 2 == 0 || kw % 2 == 0) {
    throw ConfigError("conv2d: kernel extents must be odd, got " +
                      std::to_string(kh) + "x" + std::to_string(kw));
  }
  if (pad < 0 || stride < 1) {
    throw ConfigError("conv2d: pad must be >= 0 and stride >= 1");
  }
  const int b = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int cout = k.dim(0);
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (w + 2 * pad - kw) / stride + 1;
  if (ho < 1 || wo < 1) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }

  Tensor out(Shape{b, cout, ho, wo});
  const int64_t taps = static_cast<int64_t>(cin) * kh * kw;
  const int64_t planes = static_cast<int64_t>(b) * cout;
  MacCounterScope::add(planes * ho * wo * taps);

  const float* xd = x.data();
  const float* kd = k.data();
  float* od = out.data();
  parallel_for(planes, planes * ho * wo * taps, [&](int64_t lo, int64_t hi) {
    for (int64_t p = lo; p < hi; ++p) {
      const int bi = static_cast<int>(p / cout);
      const int oc = static_cast<int>(p % cout);
      const float* kbase = kd + static_cast<int64_t>(oc) * cin * kh * kw;
      float* obase = od + p * ho * wo;
      for (int oh = 0; oh < ho; ++oh) {
        for (int ow = 0; ow < wo; ++ow) {
          double acc = 0.0;
          for (int ic = 0; ic < cin; ++ic) {
            const float* xplane =
                xd + (static_cast<int64_t>(bi) * cin + ic) * h * w;
            const float* kslice = kbase + static_cast<int64_t>(ic) * kh * kw;
            for (int i = 0; i < kh; ++i) {
              const int ih = oh * stride + i - pad;
              if (ih < 0 || ih >= h) continue;
              for (int j = 0; j < kw; ++j) {
                const int iw = ow * stride + j - pad;
                if (iw < 0 || iw >= w) continue;
                acc += static_cast<double>(xplane[ih * w + iw]) *
                       kslice[i * kw + j];
              }
            }
          }
          obase[oh * wo + ow] = static_cast<float>(acc);
        }
      }
    }
  });

  if (tape != nullptr && any_tracked({&x, &k})) {
    Tensor xc = x, kc = k;
    const bool need_x = x.node >= 0, need_k = k.node >= 0;
    out.node = tape->record(
        {x.node, k.node},
        [xc, kc, stride, pad, need_x, need_k](const Tensor& g) {
          const int b = xc.dim(0), cin = xc.dim(1), h = xc.dim(2),
                    w = xc.dim(3);
          const int cout = kc.dim(0), kh = kc.dim(2), kw = kc.dim(3);
          const int ho = g.dim(2), wo = g.dim(3);
          std::vector<double> dx(need_x ? static_cast<size_t>(xc.numel()) : 0);
          std::vector<double> dk(need_k ? static_cast<size_t>(kc.numel()) : 0);
          for (int bi = 0; bi < b; ++bi) {
            for (int oc = 0; oc < cout; ++oc) {
              for (int oh = 0; oh < ho; ++oh) {
                for (int ow = 0; ow < wo; ++ow) {
                  const double gv =
                      g[((static_cast<int64_t>(bi) * cout + oc) * ho + oh) *
                            wo +
                        ow];
                  if (gv == 0.0) continue;
                  for (int ic = 0; ic < cin; ++ic) {
                    for (int i = 0; i < kh; ++i) {
                      const int ih = oh * stride + i - pad;
                      if (ih < 0 || ih >= h) continue;
                      for (int j = 0; j < kw; ++j) {
                        const int iw = ow * stride + j - pad;
                        if (iw < 0 || iw >= w) continue;
                        const int64_t xi =
                            ((static_cast<int64_t>(bi) * cin + ic) * h + ih) *
                                w +
                            iw;
                        const int64_t ki =
                            ((static_cast<int64_t>(oc) * cin + ic) * kh + i) *
                                kw +
                            j;
                        if (need_x) dx[static_cast<size_t>(xi)] += gv * kc[ki];
                        if (need_k) dk[static_cast<size_t>(ki)] += gv * xc[xi];
                      }
                    }
                  }
                }
              }
            }
          }
          std::vector<Tensor> gin(2);
          if (need_x) {
            gin[0] = Tensor(xc.shape());
            for (int64_t i = 0; i < xc.numel(); ++i) {
              gin[0][i] = static_cast<float>(dx[static_cast<size_t>(i)]);
            }
          }
          if (need_k) {
            gin[1] = Tensor(kc.shape());
            for (int64_t i = 0; i < kc.numel(); ++i) {
              gin[1][i] = static_cast<float>(dk[static_cast<size_t>(i)]);
            }
          }
          return gin;
        });
  }
  return out;
}

Tensor conv3d_group_plane(const Tensor& x, const Tensor& k,
                          std::array<int, 3> pad, Tape* tape) {
  require_rank(x, 5, "conv3d_group_plane input");
  require_rank(k, 5, "conv3d_group_plane kernel");
  const int b = x.dim(0), c = x.dim(1), t = x.dim(2), h = x.dim(3),
            w = x.dim(4);
  const int groups = k.dim(0), cg = k.dim(1);
  const int kt = k.dim(2), kh = k.dim(3), kw = k.dim(4);
  if (groups < 1 || c % groups != 0) {
    throw ConfigError("conv3d_group_plane: " + std::to_string(c) +
                      " channels not divisible into " +
                      std::to_string(groups) + " groups");
  }
  if (cg != c / groups) {
    throw ShapeError("conv3d_group_plane: kernel group width " +
                     std::to_string(cg) + " != " + std::to_string(c / groups));
  }
  if (pad[0] < 0 || pad[1] < 0 || pad[2] < 0) {
    throw ConfigError("conv3d_group_plane: negative padding");
  }
  const int to = t + 2 * pad[0] - kt + 1;
  const int ho = h + 2 * pad[1] - kh + 1;
  const int wo = w + 2 * pad[2] - kw + 1;
  if (to < 1 || ho < 1 || wo < 1) {
    throw ShapeError("conv3d_group_plane: kernel larger than padded input");
  }

  Tensor out(Shape{b, groups, to, ho, wo});
  const int64_t taps = static_cast<int64_t>(cg) * kt * kh * kw;
  const int64_t planes = static_cast<int64_t>(b) * groups;
  const int64_t out_hw = static_cast<int64_t>(to) * ho * wo;
  MacCounterScope::add(planes * out_hw * taps);

  const float* xd = x.data();
  const float* kd = k.data();
  float* od = out.data();
  parallel_for(planes, planes * out_hw * taps, [&](int64_t lo, int64_t hi) {
    for (int64_t p = lo; p < hi; ++p) {
      const int bi = static_cast<int>(p / groups);
      const int gi = static_cast<int>(p % groups);
      const float* kbase = kd + static_cast<int64_t>(gi) * taps;
      float* obase = od + p * out_hw;
      for (int ot = 0; ot < to; ++ot) {
        for (int oh = 0; oh < ho; ++oh) {
          for (int ow = 0; ow < wo; ++ow) {
            double acc = 0.0;
            for (int ic = 0; ic < cg; ++ic) {
              const int64_t xoff =
                  (static_cast<int64_t>(bi) * c + gi * cg + ic) * t;
              const float* kslice =
                  kbase + static_cast<int64_t>(ic) * kt * kh * kw;
              for (int dt = 0; dt < kt; ++dt) {
                const int it = ot + dt - pad[0];
                if (it < 0 || it >= t) continue;
                const float* xplane =
                    xd + (xoff + it) * static_cast<int64_t>(h) * w;
                for (int i = 0; i < kh; ++i) {
                  const int ih = oh + i - pad[1];
                  if (ih < 0 || ih >= h) continue;
                  for (int j = 0; j < kw; ++j) {
                    const int iw = ow + j - pad[2];
                    if (iw < 0 || iw >= w) continue;
                    acc += static_cast<double>(xplane[ih * w + iw]) *
                           kslice[(dt * kh + i) * kw + j];
                  }
                }
              }
            }
            obase[(static_cast<int64_t>(ot) * ho + oh) * wo + ow] =
                static_cast<float>(acc);
          }
        }
      }
    }
  });

  if (tape != nullptr && any_tracked({&x, &k})) {
    Tensor xc = x, kc = k;
    const bool need_x = x.node >= 0, need_k = k.node >= 0;
    out.node = tape->record(
        {x.node, k.node}, [xc, kc, pad, need_x, need_k](const Tensor& g) {
          const int b = xc.dim(0), c = xc.dim(1), t = xc.dim(2),
                    h = xc.dim(3), w = xc.dim(4);
          const int groups = kc.dim(0), cg = kc.dim(1);
          const int kt = kc.dim(2), kh = kc.dim(3), kw = kc.dim(4);
          const int to = g.dim(2), ho = g.dim(3), wo = g.dim(4);
          std::vector<double> dx(need_x ? static_cast<size_t>(xc.numel()) : 0);
          std::vector<double> dk(need_k ? static_cast<size_t>(kc.numel()) : 0);
          for (int bi = 0; bi < b; ++bi) {
            for (int gi = 0; gi < groups; ++gi) {
              for (int ot = 0; ot < to; ++ot) {
                for (int oh = 0; oh < ho; ++oh) {
                  for (int ow = 0; ow < wo; ++ow) {
                    const double gv =
                        g[(((static_cast<int64_t>(bi) * groups + gi) * to +
                            ot) *
                               ho +
                           oh) *
                              wo +
                          ow];
                    if (gv == 0.0) continue;
                    for (int ic = 0; ic < cg; ++ic) {
                      for (int dt = 0; dt < kt; ++dt) {
                        const int it = ot + dt - pad[0];
                        if (it < 0 || it >= t) continue;
                        for (int i = 0; i < kh; ++i) {
                          const int ih = oh + i - pad[1];
                          if (ih < 0 || ih >= h) continue;
                          for (int j = 0; j < kw; ++j) {
                            const int iw = ow + j - pad[2];
                            if (iw < 0 || iw >= w) continue;
                            const int64_t xi =
                                (((static_cast<int64_t>(bi) * c + gi * cg +
                                   ic) *
                                      t +
                                  it) *
                                     h +
                                 ih) *
                                    w +
                                iw;
                            const int64_t ki =
                                (((static_cast<int64_t>(gi) * cg + ic) * kt +
                                  dt) *
                                     kh +
                                 i) *
                                    kw +
                                j;
                            if (need_x) {
                              dx[static_cast<size_t>(xi)] += gv * kc[ki];
                            }
                            if (need_k) {
                              dk[static_cast<size_t>(ki)] += gv * xc[xi];
                            }
                          }
                        }
                      }
                    }
                  }
                }
              }
            }
          }
          std::vector<Tensor> gin(2);
          if (need_x) {
            gin[0] = Tensor(xc.shape());
            for (int64_t i = 0; i < xc.numel(); ++i) {
              gin[0][i] = static_cast<float>(dx[static_cast<size_t>(i)]);
            }
          }
          if (need_k) {
            gin[1] = Tensor(kc.shape());
            for (int64_t i = 0; i < kc.numel(); ++i) {
              gin[1][i] = static_cast<float>(dk[static_cast<size_t>(i)]);
            }
          }
          return gin;
        });
  }
  return out;
}

Tensor mean_hw(const Tensor& x, Tape* tape) {
  if (x.rank() != 4 && x.rank() != 5) {
    throw ShapeError("mean_hw expects rank 4 or 5, got " +
                     shape_str(x.shape()));
  }
  const int h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  if (h < 1 || w < 1) throw ShapeError("mean_hw: empty spatial dims");
  Shape oshape(x.shape().begin(), x.shape().end() - 2);
  Tensor out(oshape);
  const int64_t hw = static_cast<int64_t>(h) * w;
  const double inv = 1.0 / static_cast<double>(hw);
  for (int64_t o = 0; o < out.numel(); ++o) {
    double acc = 0.0;
    const float* base = x.data() + o * hw;
    for (int64_t i = 0; i < hw; ++i) acc += base[i];
    out[o] = static_cast<float>(acc * inv);
  }
  if (tape != nullptr && x.node >= 0) {
    const Shape xshape = x.shape();
    out.node = tape->record({x.node}, [xshape, hw, inv](const Tensor& g) {
      Tensor gx(xshape);
      for (int64_t o = 0; o < g.numel(); ++o) {
        const float gv = static_cast<float>(g[o] * inv);
        float* base = gx.data() + o * hw;
        for (int64_t i = 0; i < hw; ++i) base[i] = gv;
      }
      return std::vector<Tensor>{std::move(gx)};
    });
  }
  return out;
}

Tensor tanh(const Tensor& x, Tape* tape) {
  return unary_pointwise(
      x, tape, [](double v) { return std::tanh(v); },
      [](float, float y) { return 1.0 - static_cast<double>(y) * y; });
}

Tensor sigmoid(const Tensor& x, Tape* tape) {
  return unary_pointwise(
      x, tape, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](float, float y) {
        return static_cast<double>(y) * (1.0 - static_cast<double>(y));
      });
}

Tensor relu(const Tensor& x, Tape* tape) {
  return unary_pointwise(
      x, tape, [](double v) { return v > 0.0 ? v : 0.0; },
      [](float xv, float) { return xv > 0.0f ? 1.0 : 0.0; });
}

namespace {

enum class BinKind { Add, Sub, Mul };

Tensor binary_op(const Tensor& a, const Tensor& b, BinKind kind, Tape* tape) {
  const char* name = kind == BinKind::Add   ? "add"
                     : kind == BinKind::Sub ? "sub"
                                            : "hadamard";
  Shape oshape = bcast_shape(a, b, name);
  Tensor out(oshape);
  bcast_iterate(oshape, a.shape(), b.shape(),
                [&](int64_t io, int64_t ia, int64_t ib) {
                  switch (kind) {
                    case BinKind::Add: out[io] = a[ia] + b[ib]; break;
                    case BinKind::Sub: out[io] = a[ia] - b[ib]; break;
                    case BinKind::Mul: out[io] = a[ia] * b[ib]; break;
                  }
                });
  if (kind == BinKind::Mul || kind == BinKind::Sub) {
    MacCounterScope::add(out.numel());
  }
  if (tape != nullptr && any_tracked({&a, &b})) {
    Tensor ac = a, bc = b;
    const bool need_a = a.node >= 0, need_b = b.node >= 0;
    out.node = tape->record(
        {a.node, b.node}, [ac, bc, kind, need_a, need_b](const Tensor& g) {
          std::vector<Tensor> gin(2);
          if (kind == BinKind::Mul) {
            if (need_a) {
              Tensor ga(g.shape());
              bcast_iterate(g.shape(), g.shape(), bc.shape(),
                            [&](int64_t io, int64_t, int64_t ib) {
                              ga[io] = g[io] * bc[ib];
                            });
              gin[0] = reduce_to_shape(ga, ac.shape());
            }
            if (need_b) {
              Tensor gb(g.shape());
              bcast_iterate(g.shape(), ac.shape(), g.shape(),
                            [&](int64_t io, int64_t ia, int64_t) {
                              gb[io] = g[io] * ac[ia];
                            });
              gin[1] = reduce_to_shape(gb, bc.shape());
            }
          } else {
            if (need_a) gin[0] = reduce_to_shape(g, ac.shape());
            if (need_b) {
              Tensor gb = reduce_to_shape(g, bc.shape());
              if (kind == BinKind::Sub) {
                for (int64_t i = 0; i < gb.numel(); ++i) gb[i] = -gb[i];
              }
              gin[1] = std::move(gb);
            }
          }
          return gin;
        });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
  return binary_op(a, b, BinKind::Add, tape);
}

Tensor sub(const Tensor& a, const Tensor& b, Tape* tape) {
  return binary_op(a, b, BinKind::Sub, tape);
}

Tensor hadamard(const Tensor& a, const Tensor& b, Tape* tape) {
  return binary_op(a, b, BinKind::Mul, tape);
}

Tensor affine_combine(const Tensor& f, const Tensor& a, const Tensor& b,
                      Tape* tape) {
  if (!a.same_shape(b)) {
    throw ShapeError("affine_combine: branch shapes differ, " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Shape oshape = bcast_shape(f, a, "affine_combine");
  if (oshape != a.shape()) {
    throw ShapeError("affine_combine: weight shape " + shape_str(f.shape()) +
                     " does not broadcast onto " + shape_str(a.shape()));
  }
  Tensor out(oshape);
  bcast_iterate(oshape, f.shape(), a.shape(),
                [&](int64_t io, int64_t ifx, int64_t iab) {
                  const float fv = f[ifx];
                  out[io] = fv * a[iab] + (1.0f - fv) * b[iab];
                });
  MacCounterScope::add(3 * out.numel());
  if (tape != nullptr && any_tracked({&f, &a, &b})) {
    Tensor fc = f, ac = a, bc = b;
    const bool need_f = f.node >= 0, need_a = a.node >= 0, need_b = b.node >= 0;
    out.node = tape->record(
        {f.node, a.node, b.node},
        [fc, ac, bc, need_f, need_a, need_b](const Tensor& g) {
          std::vector<Tensor> gin(3);
          if (need_f) {
            Tensor gf(g.shape());
            for (int64_t i = 0; i < g.numel(); ++i) {
              gf[i] = g[i] * (ac[i] - bc[i]);
            }
            gin[0] = reduce_to_shape(gf, fc.shape());
          }
          if (need_a || need_b) {
            Tensor ga(g.shape()), gb(g.shape());
            bcast_iterate(g.shape(), fc.shape(), g.shape(),
                          [&](int64_t io, int64_t ifx, int64_t) {
                            const float fv = fc[ifx];
                            ga[io] = g[io] * fv;
                            gb[io] = g[io] * (1.0f - fv);
                          });
            if (need_a) gin[1] = std::move(ga);
            if (need_b) gin[2] = std::move(gb);
          }
          return gin;
        });
  }
  return out;
}

Tensor mul_scalar(const Tensor& x, float c, Tape* tape) {
  Tensor out(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) out[i] = x[i] * c;
  MacCounterScope::add(out.numel());
  if (tape != nullptr && x.node >= 0) {
    out.node = tape->record({x.node}, [c](const Tensor& g) {
      Tensor gx(g.shape());
      for (int64_t i = 0; i < g.numel(); ++i) gx[i] = g[i] * c;
      return std::vector<Tensor>{std::move(gx)};
    });
  }
  return out;
}

Tensor sum_all(const Tensor& x, Tape* tape) {
  double acc = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) acc += x[i];
  Tensor out(Shape{1}, static_cast<float>(acc));
  if (tape != nullptr && x.node >= 0) {
    const Shape xshape = x.shape();
    out.node = tape->record({x.node}, [xshape](const Tensor& g) {
      return std::vector<Tensor>{Tensor(xshape, g[0])};
    });
  }
  return out;
}

namespace {

Tensor shift_time(const Tensor& x, int delta, Tape* tape) {
  require_rank(x, 5, "temporal shift");
  const int b = x.dim(0), c = x.dim(1), t = x.dim(2);
  const int64_t hw = static_cast<int64_t>(x.dim(3)) * x.dim(4);
  Tensor out(x.shape());
  for (int64_t bc = 0; bc < static_cast<int64_t>(b) * c; ++bc) {
    const float* src = x.data() + bc * t * hw;
    float* dst = out.data() + bc * t * hw;
    for (int ot = 0; ot < t; ++ot) {
      const int it = ot + delta;
      if (it >= 0 && it < t) {
        std::memcpy(dst + ot * hw, src + it * hw, sizeof(float) * hw);
      }
    }
  }
  if (tape != nullptr && x.node >= 0) {
    out.node = tape->record({x.node}, [delta](const Tensor& g) {
      // transpose of a shift is the opposite shift
      return std::vector<Tensor>{shift_time(g, -delta, nullptr)};
    });
  }
  return out;
}

}  // namespace

Tensor shift_time_fw(const Tensor& x, Tape* tape) {
  return shift_time(x, +1, tape);
}

Tensor shift_time_bw(const Tensor& x, Tape* tape) {
  return shift_time(x, -1, tape);
}

Tensor slice_channels(const Tensor& x, int c0, int c1, Tape* tape) {
  if (x.rank() < 2) throw ShapeError("slice_channels needs rank >= 2");
  const int c = x.dim(1);
  if (c0 < 0 || c1 > c || c0 >= c1) {
    throw ShapeError("slice_channels: range [" + std::to_string(c0) + "," +
                     std::to_string(c1) + ") out of " + std::to_string(c));
  }
  Shape oshape = x.shape();
  oshape[1] = c1 - c0;
  Tensor out(oshape);
  int64_t inner = 1;
  for (int i = 2; i < x.rank(); ++i) inner *= x.dim(i);
  const int b = x.dim(0);
  for (int bi = 0; bi < b; ++bi) {
    std::memcpy(out.data() + static_cast<int64_t>(bi) * (c1 - c0) * inner,
                x.data() + (static_cast<int64_t>(bi) * c + c0) * inner,
                sizeof(float) * static_cast<size_t>((c1 - c0) * inner));
  }
  if (tape != nullptr && x.node >= 0) {
    const Shape xshape = x.shape();
    out.node =
        tape->record({x.node}, [xshape, c0, c1, inner, c](const Tensor& g) {
          Tensor gx(xshape);
          for (int bi = 0; bi < xshape[0]; ++bi) {
            std::memcpy(
                gx.data() + (static_cast<int64_t>(bi) * c + c0) * inner,
                g.data() + static_cast<int64_t>(bi) * (c1 - c0) * inner,
                sizeof(float) * static_cast<size_t>((c1 - c0) * inner));
          }
          return std::vector<Tensor>{std::move(gx)};
        });
  }
  return out;
}

Tensor concat_channels(const std::vector<const Tensor*>& parts, Tape* tape) {
  if (parts.empty()) throw UsageError("concat_channels: no operands");
  const Tensor& first = *parts[0];
  int ctotal = 0;
  for (const Tensor* p : parts) {
    if (p->rank() != first.rank() || p->dim(0) != first.dim(0)) {
      throw ShapeError("concat_channels: incompatible operand shapes");
    }
    for (int i = 2; i < first.rank(); ++i) {
      if (p->dim(i) != first.dim(i)) {
        throw ShapeError("concat_channels: incompatible operand shapes");
      }
    }
    ctotal += p->dim(1);
  }
  Shape oshape = first.shape();
  oshape[1] = ctotal;
  Tensor out(oshape);
  int64_t inner = 1;
  for (int i = 2; i < first.rank(); ++i) inner *= first.dim(i);
  const int b = first.dim(0);
  std::vector<int> offsets;
  int coff = 0;
  for (const Tensor* p : parts) {
    offsets.push_back(coff);
    for (int bi = 0; bi < b; ++bi) {
      std::memcpy(
          out.data() + (static_cast<int64_t>(bi) * ctotal + coff) * inner,
          p->data() + static_cast<int64_t>(bi) * p->dim(1) * inner,
          sizeof(float) * static_cast<size_t>(p->dim(1) * inner));
    }
    coff += p->dim(1);
  }

  bool tracked = false;
  std::vector<int> input_nodes;
  std::vector<int> widths;
  for (const Tensor* p : parts) {
    input_nodes.push_back(p->node);
    widths.push_back(p->dim(1));
    tracked = tracked || p->node >= 0;
  }
  if (tape != nullptr && tracked) {
    out.node = tape->record(
        input_nodes, [offsets, widths, inner, b, ctotal](const Tensor& g) {
          std::vector<Tensor> gin(offsets.size());
          for (size_t k = 0; k < offsets.size(); ++k) {
            Shape s = g.shape();
            s[1] = widths[k];
            Tensor gk(s);
            for (int bi = 0; bi < b; ++bi) {
              std::memcpy(
                  gk.data() + static_cast<int64_t>(bi) * widths[k] * inner,
                  g.data() + (static_cast<int64_t>(bi) * ctotal + offsets[k]) *
                                 inner,
                  sizeof(float) * static_cast<size_t>(widths[k] * inner));
            }
            gin[k] = std::move(gk);
          }
          return gin;
        });
  }
  return out;
}

Tensor stack2(const Tensor& a, const Tensor& b, Tape* tape) {
  require_rank(a, 3, "stack2");
  if (!a.same_shape(b)) {
    throw ShapeError("stack2: operand shapes differ");
  }
  const int n = a.dim(0);
  const int64_t inner = static_cast<int64_t>(a.dim(1)) * a.dim(2);
  Tensor out(Shape{n, 2, a.dim(1), a.dim(2)});
  for (int i = 0; i < n; ++i) {
    std::memcpy(out.data() + (2 * static_cast<int64_t>(i)) * inner,
                a.data() + i * inner, sizeof(float) * inner);
    std::memcpy(out.data() + (2 * static_cast<int64_t>(i) + 1) * inner,
                b.data() + i * inner, sizeof(float) * inner);
  }
  if (tape != nullptr && any_tracked({&a, &b})) {
    const Shape pshape = a.shape();
    out.node =
        tape->record({a.node, b.node}, [pshape, n, inner](const Tensor& g) {
          Tensor ga(pshape), gb(pshape);
          for (int i = 0; i < n; ++i) {
            std::memcpy(ga.data() + i * inner,
                        g.data() + (2 * static_cast<int64_t>(i)) * inner,
                        sizeof(float) * inner);
            std::memcpy(gb.data() + i * inner,
                        g.data() + (2 * static_cast<int64_t>(i) + 1) * inner,
                        sizeof(float) * inner);
          }
          return std::vector<Tensor>{std::move(ga), std::move(gb)};
        });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape, Tape* tape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " has " +
                     std::to_string(x.numel()) + " elements, target " +
                     shape_str(shape));
  }
  Tensor out(std::move(shape),
             std::vector<float>(x.data(), x.data() + x.numel()));
  if (tape != nullptr && x.node >= 0) {
    const Shape xshape = x.shape();
    out.node = tape->record({x.node}, [xshape](const Tensor& g) {
      return std::vector<Tensor>{reshape(g, xshape, nullptr)};
    });
  }
  return out;
}

Tensor swap_axes12(const Tensor& x, Tape* tape) {
  require_rank(x, 5, "swap_axes12");
  const int b = x.dim(0), d1 = x.dim(1), d2 = x.dim(2);
  const int64_t inner = static_cast<int64_t>(x.dim(3)) * x.dim(4);
  Tensor out(Shape{b, d2, d1, x.dim(3), x.dim(4)});
  for (int bi = 0; bi < b; ++bi) {
    for (int i = 0; i < d1; ++i) {
      for (int j = 0; j < d2; ++j) {
        std::memcpy(
            out.data() +
                ((static_cast<int64_t>(bi) * d2 + j) * d1 + i) * inner,
            x.data() + ((static_cast<int64_t>(bi) * d1 + i) * d2 + j) * inner,
            sizeof(float) * inner);
      }
    }
  }
  if (tape != nullptr && x.node >= 0) {
    out.node = tape->record({x.node}, [](const Tensor& g) {
      return std::vector<Tensor>{swap_axes12(g, nullptr)};
    });
  }
  return out;
}

Tensor spatial_norm(const Tensor& x, const Tensor& scale, const Tensor& offset,
                    Tape* tape, float eps) {
  if (x.rank() != 4 && x.rank() != 5) {
    throw ShapeError("spatial_norm expects rank 4 or 5, got " +
                     shape_str(x.shape()));
  }
  const int c = x.dim(1);
  if (scale.numel() != c || offset.numel() != c) {
    throw ShapeError("spatial_norm: expected " + std::to_string(c) +
                     " scale/offset entries");
  }
  const int64_t hw =
      static_cast<int64_t>(x.dim(x.rank() - 2)) * x.dim(x.rank() - 1);
  if (hw < 1) throw ShapeError("spatial_norm: empty spatial dims");
  const int64_t slices = x.numel() / hw;
  const int64_t per_batch = slices / x.dim(0);  // c (rank 4) or c*t (rank 5)
  const int64_t tdim = per_batch / c;

  Tensor xhat(x.shape());
  std::vector<float> inv_std(static_cast<size_t>(slices));
  const double inv_m = 1.0 / static_cast<double>(hw);
  for (int64_t s = 0; s < slices; ++s) {
    const float* base = x.data() + s * hw;
    double mean = 0.0;
    for (int64_t i = 0; i < hw; ++i) mean += base[i];
    mean *= inv_m;
    double var = 0.0;
    for (int64_t i = 0; i < hw; ++i) {
      const double d = base[i] - mean;
      var += d * d;
    }
    var *= inv_m;
    const double istd = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(s)] = static_cast<float>(istd);
    float* xh = xhat.data() + s * hw;
    for (int64_t i = 0; i < hw; ++i) {
      xh[i] = static_cast<float>((base[i] - mean) * istd);
    }
  }
  Tensor out(x.shape());
  for (int64_t s = 0; s < slices; ++s) {
    const int ci = static_cast<int>((s / tdim) % c);
    const float sc = scale[ci], of = offset[ci];
    const float* xh = xhat.data() + s * hw;
    float* o = out.data() + s * hw;
    for (int64_t i = 0; i < hw; ++i) o[i] = sc * xh[i] + of;
  }

  if (tape != nullptr && any_tracked({&x, &scale, &offset})) {
    Tensor sc_c = scale;
    const bool need_x = x.node >= 0;
    const bool need_s = scale.node >= 0, need_o = offset.node >= 0;
    out.node = tape->record(
        {x.node, scale.node, offset.node},
        [xhat, inv_std, sc_c, hw, tdim, c, slices, need_x, need_s,
         need_o](const Tensor& g) {
          std::vector<Tensor> gin(3);
          const double inv_m = 1.0 / static_cast<double>(hw);
          if (need_s || need_o) {
            std::vector<double> ds(static_cast<size_t>(c), 0.0);
            std::vector<double> doff(static_cast<size_t>(c), 0.0);
            for (int64_t s = 0; s < slices; ++s) {
              const size_t ci = static_cast<size_t>((s / tdim) % c);
              const float* xh = xhat.data() + s * hw;
              const float* gb = g.data() + s * hw;
              for (int64_t i = 0; i < hw; ++i) {
                ds[ci] += static_cast<double>(gb[i]) * xh[i];
                doff[ci] += gb[i];
              }
            }
            if (need_s) {
              Tensor t(Shape{c});
              for (int i = 0; i < c; ++i) {
                t[i] = static_cast<float>(ds[static_cast<size_t>(i)]);
              }
              gin[1] = std::move(t);
            }
            if (need_o) {
              Tensor t(Shape{c});
              for (int i = 0; i < c; ++i) {
                t[i] = static_cast<float>(doff[static_cast<size_t>(i)]);
              }
              gin[2] = std::move(t);
            }
          }
          if (need_x) {
            Tensor gx(xhat.shape());
            for (int64_t s = 0; s < slices; ++s) {
              const int ci = static_cast<int>((s / tdim) % c);
              const double sc = sc_c[ci];
              const float* xh = xhat.data() + s * hw;
              const float* gb = g.data() + s * hw;
              double gsum = 0.0, gxsum = 0.0;
              for (int64_t i = 0; i < hw; ++i) {
                gsum += gb[i];
                gxsum += static_cast<double>(gb[i]) * xh[i];
              }
              gsum *= inv_m;
              gxsum *= inv_m;
              const double istd = inv_std[static_cast<size_t>(s)];
              float* gxb = gx.data() + s * hw;
              for (int64_t i = 0; i < hw; ++i) {
                gxb[i] = static_cast<float>(sc * istd *
                                            (gb[i] - gsum - xh[i] * gxsum));
              }
            }
            gin[0] = std::move(gx);
          }
          return gin;
        });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias,
              Tape* tape) {
  require_rank(x, 2, "linear input");
  require_rank(w, 2, "linear weight");
  const int n = x.dim(0), c = x.dim(1), k = w.dim(0);
  if (w.dim(1) != c || bias.numel() != k) {
    throw ShapeError("linear: weight " + shape_str(w.shape()) +
                     " incompatible with input " + shape_str(x.shape()));
  }
  Tensor out(Shape{n, k});
  MacCounterScope::add(static_cast<int64_t>(n) * k * c);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < k; ++j) {
      double acc = bias[j];
      const float* xr = x.data() + static_cast<int64_t>(i) * c;
      const float* wr = w.data() + static_cast<int64_t>(j) * c;
      for (int cc = 0; cc < c; ++cc) acc += static_cast<double>(xr[cc]) * wr[cc];
      out[static_cast<int64_t>(i) * k + j] = static_cast<float>(acc);
    }
  }
  if (tape != nullptr && any_tracked({&x, &w, &bias})) {
    Tensor xc = x, wc = w;
    const bool need_x = x.node >= 0, need_w = w.node >= 0,
               need_b = bias.node >= 0;
    out.node = tape->record(
        {x.node, w.node, bias.node},
        [xc, wc, n, c, k, need_x, need_w, need_b](const Tensor& g) {
          std::vector<Tensor> gin(3);
          if (need_x) {
            Tensor gx(Shape{n, c});
            for (int i = 0; i < n; ++i) {
              for (int cc = 0; cc < c; ++cc) {
                double acc = 0.0;
                for (int j = 0; j < k; ++j) {
                  acc += static_cast<double>(
                             g[static_cast<int64_t>(i) * k + j]) *
                         wc[static_cast<int64_t>(j) * c + cc];
                }
                gx[static_cast<int64_t>(i) * c + cc] =
                    static_cast<float>(acc);
              }
            }
            gin[0] = std::move(gx);
          }
          if (need_w) {
            Tensor gw(Shape{k, c});
            for (int j = 0; j < k; ++j) {
              for (int cc = 0; cc < c; ++cc) {
                double acc = 0.0;
                for (int i = 0; i < n; ++i) {
                  acc += static_cast<double>(
                             g[static_cast<int64_t>(i) * k + j]) *
                         xc[static_cast<int64_t>(i) * c + cc];
                }
                gw[static_cast<int64_t>(j) * c + cc] =
                    static_cast<float>(acc);
              }
            }
            gin[1] = std::move(gw);
          }
          if (need_b) {
            Tensor gb(Shape{k});
            for (int j = 0; j < k; ++j) {
              double acc = 0.0;
              for (int i = 0; i < n; ++i) {
                acc += g[static_cast<int64_t>(i) * k + j];
              }
              gb[j] = static_cast<float>(acc);
            }
            gin[2] = std::move(gb);
          }
          return gin;
        });
  }
  return out;
}

Tensor mean_frames(const Tensor& x, int frames, Tape* tape) {
  require_rank(x, 2, "mean_frames");
  if (frames < 1 || x.dim(0) % frames != 0) {
    throw ShapeError("mean_frames: row count " + std::to_string(x.dim(0)) +
                     " not divisible by " + std::to_string(frames) +
                     " frames");
  }
  const int b = x.dim(0) / frames, k = x.dim(1);
  Tensor out(Shape{b, k});
  const double inv = 1.0 / frames;
  for (int bi = 0; bi < b; ++bi) {
    for (int j = 0; j < k; ++j) {
      double acc = 0.0;
      for (int t = 0; t < frames; ++t) {
        acc += x[(static_cast<int64_t>(bi) * frames + t) * k + j];
      }
      out[static_cast<int64_t>(bi) * k + j] = static_cast<float>(acc * inv);
    }
  }
  if (tape != nullptr && x.node >= 0) {
    out.node = tape->record({x.node}, [b, k, frames, inv](const Tensor& g) {
      Tensor gx(Shape{b * frames, k});
      for (int bi = 0; bi < b; ++bi) {
        for (int t = 0; t < frames; ++t) {
          for (int j = 0; j < k; ++j) {
            gx[(static_cast<int64_t>(bi) * frames + t) * k + j] =
                static_cast<float>(g[static_cast<int64_t>(bi) * k + j] * inv);
          }
        }
      }
      return std::vector<Tensor>{std::move(gx)};
    });
  }
  return out;
}

Tensor dropout(const Tensor& x, float p, Rng& rng, Tape* tape) {
  if (p < 0.0f || p >= 1.0f) {
    throw ConfigError("dropout probability must be in [0, 1)");
  }
  if (p == 0.0f) return x;
  Tensor mask(x.shape());
  const float keep = 1.0f / (1.0f - p);
  for (int64_t i = 0; i < mask.numel(); ++i) {
    mask[i] = rng.uniform() < p ? 0.0f : keep;
  }
  Tensor out(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) out[i] = x[i] * mask[i];
  if (tape != nullptr && x.node >= 0) {
    out.node = tape->record({x.node}, [mask](const Tensor& g) {
      Tensor gx(g.shape());
      for (int64_t i = 0; i < g.numel(); ++i) gx[i] = g[i] * mask[i];
      return std::vector<Tensor>{std::move(gx)};
    });
  }
  return out;
}

Tensor softmax_cross_entropy(const Tensor& logits,
                             const std::vector<int>& labels, Tape* tape) {
  require_rank(logits, 2, "softmax_cross_entropy logits");
  const int b = logits.dim(0), k = logits.dim(1);
  if (static_cast<int>(labels.size()) != b) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(b) + " rows");
  }
  Tensor probs(Shape{b, k});
  double total = 0.0;
  for (int i = 0; i < b; ++i) {
    const int label = labels[static_cast<size_t>(i)];
    if (label < 0 || label >= k) {
      throw UsageError("softmax_cross_entropy: label " +
                       std::to_string(label) + " out of range");
    }
    const float* row = logits.data() + static_cast<int64_t>(i) * k;
    double m = row[0];
    for (int j = 1; j < k; ++j) m = std::max(m, static_cast<double>(row[j]));
    double z = 0.0;
    for (int j = 0; j < k; ++j) z += std::exp(row[j] - m);
    const double lse = m + std::log(z);
    for (int j = 0; j < k; ++j) {
      probs[static_cast<int64_t>(i) * k + j] =
          static_cast<float>(std::exp(row[j] - lse));
    }
    total += lse - row[label];
  }
  total /= b;
  if (!std::isfinite(total)) {
    throw NumericError("softmax_cross_entropy produced a non-finite loss");
  }
  Tensor out(Shape{1}, static_cast<float>(total));
  if (tape != nullptr && logits.node >= 0) {
    out.node =
        tape->record({logits.node}, [probs, labels, b, k](const Tensor& g) {
          Tensor gz(Shape{b, k});
          const float gs = g[0] / static_cast<float>(b);
          for (int i = 0; i < b; ++i) {
            for (int j = 0; j < k; ++j) {
              const float onehot =
                  j == labels[static_cast<size_t>(i)] ? 1.0f : 0.0f;
              gz[static_cast<int64_t>(i) * k + j] =
                  (probs[static_cast<int64_t>(i) * k + j] - onehot) * gs;
            }
          }
          return std::vector<Tensor>{std::move(gz)};
        });
  }
  return out;
}

}  // namespace ops
}  // namespace gsf
