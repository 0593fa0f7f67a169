#include "oracle/oracle.hpp"

#include <algorithm>
#include <cmath>

#include "core/errors.hpp"
#include "core/ops.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"
#include "gsf/module.hpp"

namespace gsf {
namespace oracle {

std::vector<double> conv2d_ref(const float* x, int b, int cin, int h, int w,
                               const float* k, int cout, int kh, int kw,
                               int stride, int pad) {
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (w + 2 * pad - kw) / stride + 1;
  std::vector<double> out(static_cast<size_t>(b) * cout * ho * wo, 0.0);
  for (int bi = 0; bi < b; ++bi) {
    for (int oc = 0; oc < cout; ++oc) {
      for (int oh = 0; oh < ho; ++oh) {
        for (int ow = 0; ow < wo; ++ow) {
          double acc = 0.0;
          for (int ic = 0; ic < cin; ++ic) {
            for (int i = 0; i < kh; ++i) {
              for (int j = 0; j < kw; ++j) {
                const int ih = oh * stride + i - pad;
                const int iw = ow * stride + j - pad;
                if (ih < 0 || ih >= h || iw < 0 || iw >= w) continue;
                acc += static_cast<double>(
                           x[((static_cast<int64_t>(bi) * cin + ic) * h + ih) *
                                 w +
                             iw]) *
                       k[((static_cast<int64_t>(oc) * cin + ic) * kh + i) * kw +
                         j];
              }
            }
          }
          out[((static_cast<size_t>(bi) * cout + oc) * ho + oh) * wo + ow] =
              acc;
        }
      }
    }
  }
  return out;
}

std::vector<double> conv3d_group_plane_ref(const float* x, int b, int c, int t,
                                           int h, int w, const float* k,
                                           int groups, int kt, int kh, int kw,
                                           std::array<int, 3> pad) {
  const int cg = c / groups;
  const int to = t + 2 * pad[0] - kt + 1;
  const int ho = h + 2 * pad[1] - kh + 1;
  const int wo = w + 2 * pad[2] - kw + 1;
  std::vector<double> out(static_cast<size_t>(b) * groups * to * ho * wo, 0.0);
  for (int bi = 0; bi < b; ++bi) {
    for (int g = 0; g < groups; ++g) {
      for (int ot = 0; ot < to; ++ot) {
        for (int oh = 0; oh < ho; ++oh) {
          for (int ow = 0; ow < wo; ++ow) {
            double acc = 0.0;
            for (int ic = 0; ic < cg; ++ic) {
              for (int dt = 0; dt < kt; ++dt) {
                for (int i = 0; i < kh; ++i) {
                  for (int j = 0; j < kw; ++j) {
                    const int it = ot + dt - pad[0];
                    const int ih = oh + i - pad[1];
                    const int iw = ow + j - pad[2];
                    if (it < 0 || it >= t || ih < 0 || ih >= h || iw < 0 ||
                        iw >= w) {
                      continue;
                    }
                    acc +=
                        static_cast<double>(
                            x[(((static_cast<int64_t>(bi) * c + g * cg + ic) *
                                    t +
                                it) *
                                   h +
                               ih) *
                                  w +
                              iw]) *
                        k[(((static_cast<int64_t>(g) * cg + ic) * kt + dt) *
                               kh +
                           i) *
                              kw +
                          j];
                  }
                }
              }
            }
            out[(((static_cast<size_t>(bi) * groups + g) * to + ot) * ho +
                 oh) *
                    wo +
                ow] = acc;
          }
        }
      }
    }
  }
  return out;
}

std::vector<double> mean_hw_ref(const float* x, int64_t slices, int64_t hw) {
  std::vector<double> out(static_cast<size_t>(slices), 0.0);
  for (int64_t s = 0; s < slices; ++s) {
    double acc = 0.0;
    for (int64_t i = 0; i < hw; ++i) acc += x[s * hw + i];
    out[static_cast<size_t>(s)] = acc / static_cast<double>(hw);
  }
  return out;
}

std::vector<double> shift_ref(const float* x, int b, int c, int t, int64_t hw,
                              int delta, bool split_groups) {
  std::vector<double> out(static_cast<size_t>(b) * c * t * hw, 0.0);
  for (int bi = 0; bi < b; ++bi) {
    for (int ci = 0; ci < c; ++ci) {
      const int d = (split_groups && ci >= c / 2) ? -delta : delta;
      for (int ot = 0; ot < t; ++ot) {
        const int it = ot + d;
        if (it < 0 || it >= t) continue;
        for (int64_t i = 0; i < hw; ++i) {
          out[((static_cast<size_t>(bi) * c + ci) * t + ot) * hw + i] =
              x[((static_cast<int64_t>(bi) * c + ci) * t + it) * hw + i];
        }
      }
    }
  }
  return out;
}

namespace {

template <typename XT>
std::vector<double> gsf_ref_impl(const GsfConfig& cfg,
                                 const GsfRefWeights& weights, const XT* x,
                                 int b, int c, int t, int h, int w) {
  const int cg = cfg.gated_channels();
  const int half = cg / 2;
  const int64_t hw = static_cast<int64_t>(h) * w;
  const int64_t frame = static_cast<int64_t>(t) * hw;

  auto xat = [&](int bi, int ci, int tt, int64_t i) -> double {
    return static_cast<double>(
        x[(static_cast<int64_t>(bi) * c + ci) * frame + tt * hw + i]);
  };

  // pass-through copy first; the slab region is overwritten below
  std::vector<double> out(static_cast<size_t>(b) * c * frame);
  for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(x[i]);

  // gate source, optionally standardized over each (b, channel, frame) slice
  std::vector<double> gate_src(static_cast<size_t>(b) * cg * frame);
  for (int bi = 0; bi < b; ++bi) {
    for (int ci = 0; ci < cg; ++ci) {
      for (int tt = 0; tt < t; ++tt) {
        for (int64_t i = 0; i < hw; ++i) {
          gate_src[(static_cast<size_t>(bi) * cg + ci) * frame + tt * hw + i] =
              xat(bi, ci, tt, i);
        }
      }
    }
  }
  const bool learned_gate = cfg.gate == GateMode::Learned;
  if (learned_gate && cfg.pre_gate_norm) {
    for (int bi = 0; bi < b; ++bi) {
      for (int ci = 0; ci < cg; ++ci) {
        for (int tt = 0; tt < t; ++tt) {
          double* s =
              gate_src.data() + (static_cast<size_t>(bi) * cg + ci) * frame +
              tt * hw;
          double mean = 0.0;
          for (int64_t i = 0; i < hw; ++i) mean += s[i];
          mean /= static_cast<double>(hw);
          double var = 0.0;
          for (int64_t i = 0; i < hw; ++i) var += (s[i] - mean) * (s[i] - mean);
          var /= static_cast<double>(hw);
          const double istd = 1.0 / std::sqrt(var + 1e-5);
          for (int64_t i = 0; i < hw; ++i) {
            const double v = (s[i] - mean) * istd * weights.norm_scale[ci] +
                             weights.norm_offset[ci];
            s[i] = v > 0.0 ? v : 0.0;
          }
        }
      }
    }
  }

  // one gate plane per group
  std::vector<double> gates(static_cast<size_t>(b) * 2 * frame, 0.0);
  if (learned_gate) {
    for (int bi = 0; bi < b; ++bi) {
      for (int g = 0; g < 2; ++g) {
        for (int tt = 0; tt < t; ++tt) {
          for (int hh = 0; hh < h; ++hh) {
            for (int ww = 0; ww < w; ++ww) {
              double acc = 0.0;
              for (int ic = 0; ic < half; ++ic) {
                for (int dt = 0; dt < 3; ++dt) {
                  for (int dh = 0; dh < 3; ++dh) {
                    for (int dw = 0; dw < 3; ++dw) {
                      const int it = tt + dt - 1, ih = hh + dh - 1,
                                iw = ww + dw - 1;
                      if (it < 0 || it >= t || ih < 0 || ih >= h || iw < 0 ||
                          iw >= w) {
                        continue;
                      }
                      acc += gate_src[(static_cast<size_t>(bi) * cg + g * half +
                                       ic) *
                                          frame +
                                      static_cast<int64_t>(it) * hw +
                                      static_cast<int64_t>(ih) * w + iw] *
                             weights.gate_kernel
                                 [(((static_cast<size_t>(g) * half + ic) * 3 +
                                    dt) *
                                       3 +
                                   dh) *
                                      3 +
                                  dw];
                    }
                  }
                }
              }
              gates[(static_cast<size_t>(bi) * 2 + g) * frame +
                    static_cast<int64_t>(tt) * hw +
                    static_cast<int64_t>(hh) * w + ww] = std::tanh(acc);
            }
          }
        }
      }
    }
  } else {
    const double gv = static_cast<double>(gate_constant(cfg.gate));
    std::fill(gates.begin(), gates.end(), gv);
  }

  // gated features, residuals, opposite shifts
  std::vector<double> y(static_cast<size_t>(b) * cg * frame);
  std::vector<double> r(y.size());
  for (int bi = 0; bi < b; ++bi) {
    for (int ci = 0; ci < cg; ++ci) {
      const int g = ci < half ? 0 : 1;
      for (int64_t i = 0; i < frame; ++i) {
        const double xv = xat(bi, ci, static_cast<int>(i / hw),
                              i % hw);
        const double yv =
            gates[(static_cast<size_t>(bi) * 2 + g) * frame + i] * xv;
        y[(static_cast<size_t>(bi) * cg + ci) * frame + i] = yv;
        r[(static_cast<size_t>(bi) * cg + ci) * frame + i] = xv - yv;
      }
    }
  }
  std::vector<double> ys(y.size(), 0.0);
  for (int bi = 0; bi < b; ++bi) {
    for (int ci = 0; ci < cg; ++ci) {
      const int d = ci < half ? +1 : -1;
      for (int ot = 0; ot < t; ++ot) {
        const int it = ot + d;
        if (it < 0 || it >= t) continue;
        for (int64_t i = 0; i < hw; ++i) {
          ys[(static_cast<size_t>(bi) * cg + ci) * frame + ot * hw + i] =
              y[(static_cast<size_t>(bi) * cg + ci) * frame + it * hw + i];
        }
      }
    }
  }

  // blend and write back over the slab
  if (cfg.fusion == FusionMode::Learned) {
    for (int bi = 0; bi < b; ++bi) {
      for (int g = 0; g < 2; ++g) {
        // spatial pooling of both operands, a half x t image each
        std::vector<double> py(static_cast<size_t>(half) * t, 0.0);
        std::vector<double> pr(py.size(), 0.0);
        for (int ic = 0; ic < half; ++ic) {
          for (int tt = 0; tt < t; ++tt) {
            double ay = 0.0, ar = 0.0;
            for (int64_t i = 0; i < hw; ++i) {
              ay += ys[(static_cast<size_t>(bi) * cg + g * half + ic) * frame +
                       tt * hw + i];
              ar += r[(static_cast<size_t>(bi) * cg + g * half + ic) * frame +
                      tt * hw + i];
            }
            py[static_cast<size_t>(ic) * t + tt] = ay / static_cast<double>(hw);
            pr[static_cast<size_t>(ic) * t + tt] = ar / static_cast<double>(hw);
          }
        }
        const std::vector<double>& wf = g == 0 ? weights.fuse1 : weights.fuse2;
        for (int ic = 0; ic < half; ++ic) {
          for (int tt = 0; tt < t; ++tt) {
            double acc = 0.0;
            for (int cin = 0; cin < 2; ++cin) {
              const std::vector<double>& plane = cin == 0 ? py : pr;
              for (int di = 0; di < 3; ++di) {
                for (int dj = 0; dj < 3; ++dj) {
                  const int ii = ic + di - 1, jj = tt + dj - 1;
                  if (ii < 0 || ii >= half || jj < 0 || jj >= t) continue;
                  acc += plane[static_cast<size_t>(ii) * t + jj] *
                         wf[(static_cast<size_t>(cin) * 3 + di) * 3 + dj];
                }
              }
            }
            const double f = 1.0 / (1.0 + std::exp(-acc));
            for (int64_t i = 0; i < hw; ++i) {
              const size_t at =
                  (static_cast<size_t>(bi) * cg + g * half + ic) * frame +
                  tt * hw + i;
              const size_t oat =
                  (static_cast<size_t>(bi) * c + g * half + ic) * frame +
                  tt * hw + i;
              out[oat] = f * ys[at] + (1.0 - f) * r[at];
            }
          }
        }
      }
    }
  } else {
    for (int bi = 0; bi < b; ++bi) {
      for (int ci = 0; ci < cg; ++ci) {
        for (int64_t i = 0; i < frame; ++i) {
          out[(static_cast<size_t>(bi) * c + ci) * frame + i] =
              ys[(static_cast<size_t>(bi) * cg + ci) * frame + i] +
              r[(static_cast<size_t>(bi) * cg + ci) * frame + i];
        }
      }
    }
  }
  return out;
}

}  // namespace

std::vector<double> gsf_forward_ref(const GsfConfig& cfg,
                                    const GsfRefWeights& weights,
                                    const float* x, int b, int c, int t, int h,
                                    int w) {
  return gsf_ref_impl(cfg, weights, x, b, c, t, h, w);
}

std::vector<double> gsf_forward_ref64(const GsfConfig& cfg,
                                      const GsfRefWeights& weights,
                                      const std::vector<double>& x, int b,
                                      int c, int t, int h, int w) {
  return gsf_ref_impl(cfg, weights, x.data(), b, c, t, h, w);
}

OracleReport grad_check(
    const std::function<double(const std::vector<double>&)>& f,
    const std::vector<double>& theta, const std::vector<double>& analytic,
    double eps, double floor) {
  if (theta.size() != analytic.size()) {
    throw UsageError("grad_check: gradient size does not match parameters");
  }
  OracleReport rep;
  std::vector<double> probe = theta;
  for (size_t i = 0; i < theta.size(); ++i) {
    probe[i] = theta[i] + eps;
    const double fp = f(probe);
    probe[i] = theta[i] - eps;
    const double fm = f(probe);
    probe[i] = theta[i];
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("grad_check: function not finite near theta");
    }
    const double numeric = (fp - fm) / (2.0 * eps);
    const double a = analytic[i];
    const double abs_err = std::abs(a - numeric);
    const double scale = std::max(std::abs(a), std::abs(numeric));
    rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
    const double eff = scale < floor ? abs_err : abs_err / scale;
    if (scale >= floor) rep.max_rel_err = std::max(rep.max_rel_err, abs_err / scale);
    if (eff >= rep.effective_) {
      rep.effective_ = eff;
      rep.worst_index = static_cast<int64_t>(i);
      rep.worst_analytic = a;
      rep.worst_numeric = numeric;
    }
  }
  return rep;
}

GsfRefWeights ref_weights(const GsfModule& m) {
  GsfRefWeights w;
  auto grab = [](const Tensor& t) {
    std::vector<double> v(static_cast<size_t>(t.numel()));
    for (int64_t i = 0; i < t.numel(); ++i) v[static_cast<size_t>(i)] = t[i];
    return v;
  };
  w.gate_kernel = grab(m.gate_kernel);
  w.fuse1 = grab(m.fuse_kernel1);
  w.fuse2 = grab(m.fuse_kernel2);
  w.norm_scale = grab(m.norm_scale);
  w.norm_offset = grab(m.norm_offset);
  return w;
}

// ---------------------------------------------------------------------------
// selftest

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) {
    t[i] = static_cast<float>(rng.normal(0.0, scale));
  }
  return t;
}

double rel_err_vs(const Tensor& got, const std::vector<double>& want,
                  double floor = 1e-6) {
  double m = 0.0;
  for (int64_t i = 0; i < got.numel(); ++i) {
    const double g = got[i], r = want[static_cast<size_t>(i)];
    const double scale = std::max(std::abs(g), std::abs(r));
    const double d = std::abs(g - r);
    m = std::max(m, scale < floor ? d : d / scale);
  }
  return m;
}

struct SuiteLog {
  const std::function<void(const std::string&)>& log;
  int failures = 0;
  void report(const std::string& name, bool ok, double err, int cases) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "[%s] %-34s cases=%-4d max_err=%.3g",
                  ok ? "ok" : "FAIL", name.c_str(), cases, err);
    log(buf);
    if (!ok) ++failures;
  }
};

}  // namespace

int run_selftest(const std::function<void(const std::string&)>& log) {
  SuiteLog suite{log};
  Rng rng(20240517);

  {
    double worst = 0.0;
    for (int n = 0; n < 200; ++n) {
      const int b = rng.uniform_int(1, 2), cin = rng.uniform_int(1, 4);
      const int cout = rng.uniform_int(1, 4);
      const int kh = 1 + 2 * rng.uniform_int(0, 2);
      const int kw = 1 + 2 * rng.uniform_int(0, 2);
      const int h = rng.uniform_int(kh, 8), w = rng.uniform_int(kw, 8);
      const int stride = rng.uniform_int(1, 2), pad = rng.uniform_int(0, 2);
      Tensor x = random_tensor(rng, {b, cin, h, w});
      Tensor k = random_tensor(rng, {cout, cin, kh, kw});
      Tensor got = ops::conv2d(x, k, stride, pad);
      auto want = conv2d_ref(x.data(), b, cin, h, w, k.data(), cout, kh, kw,
                             stride, pad);
      worst = std::max(worst, rel_err_vs(got, want));
    }
    suite.report("conv2d vs direct reference", worst <= 1e-5, worst, 200);
  }

  {
    double worst = 0.0;
    for (int n = 0; n < 100; ++n) {
      const int groups = rng.uniform_int(1, 2);
      const int cg = rng.uniform_int(1, 3);
      const int c = groups * cg;
      const int b = rng.uniform_int(1, 2), t = rng.uniform_int(3, 6);
      const int h = rng.uniform_int(3, 7), w = rng.uniform_int(3, 7);
      Tensor x = random_tensor(rng, {b, c, t, h, w});
      Tensor k = random_tensor(rng, {groups, cg, 3, 3, 3});
      Tensor got = ops::conv3d_group_plane(x, k, {1, 1, 1});
      auto want = conv3d_group_plane_ref(x.data(), b, c, t, h, w, k.data(),
                                         groups, 3, 3, 3, {1, 1, 1});
      worst = std::max(worst, rel_err_vs(got, want));
    }
    suite.report("grouped conv3d vs reference", worst <= 1e-5, worst, 100);
  }

  {
    double worst = 0.0;
    for (int n = 0; n < 50; ++n) {
      const int b = rng.uniform_int(1, 2), c = rng.uniform_int(1, 4);
      const int t = rng.uniform_int(1, 5);
      const int h = rng.uniform_int(1, 6), w = rng.uniform_int(1, 6);
      Tensor x = random_tensor(rng, {b, c, t, h, w});
      Tensor got = ops::mean_hw(x);
      auto want = mean_hw_ref(x.data(), static_cast<int64_t>(b) * c * t,
                              static_cast<int64_t>(h) * w);
      worst = std::max(worst, rel_err_vs(got, want));
    }
    suite.report("spatial mean vs reference", worst <= 1e-6, worst, 50);
  }

  {
    double worst = 0.0;
    for (int n = 0; n < 100; ++n) {
      GsfConfig cfg;
      cfg.channels = 2 * rng.uniform_int(1, 4);
      cfg.fraction = 1.0;
      cfg.pre_gate_norm = n % 2 == 0;
      GsfModule m(cfg);
      m.randomize(rng, 0.6);
      const int b = rng.uniform_int(1, 2), t = rng.uniform_int(2, 6);
      const int h = rng.uniform_int(3, 6), w = rng.uniform_int(3, 6);
      Tensor x = random_tensor(rng, {b, cfg.channels, t, h, w});
      Tensor got = m.forward(x);
      auto want = gsf_forward_ref(cfg, ref_weights(m), x.data(), b,
                                  cfg.channels, t, h, w);
      worst = std::max(worst, rel_err_vs(got, want));
    }
    suite.report("gsf forward vs scalar reference", worst <= 1e-5, worst, 100);
  }

  {
    double worst = 0.0;
    for (int n = 0; n < 30; ++n) {
      GsfConfig cfg;
      cfg.channels = 8;
      cfg.gate = GateMode::FixedZero;
      cfg.fusion = FusionMode::Sum;
      GsfModule m(cfg);
      const int t = rng.uniform_int(1, 5);
      Tensor x = random_tensor(rng, {1, 8, t, 4, 4});
      worst = std::max(worst, max_abs_diff(m.forward(x), x));
    }
    suite.report("fixed-zero sum mode is identity", worst == 0.0, worst, 30);
  }

  {
    double worst = 0.0;
    for (int n = 0; n < 4; ++n) {
      GsfConfig cfg;
      cfg.channels = 4;
      cfg.pre_gate_norm = n % 2 == 0;
      GsfModule m(cfg);
      m.randomize(rng, 0.5);
      Tensor x = random_tensor(rng, {1, 4, 3, 4, 4});

      Tape tape;
      std::vector<Param> params = m.params();
      std::vector<double> theta;
      for (Param& p : params) {
        tape.watch(*p.value);
        for (int64_t i = 0; i < p.value->numel(); ++i) {
          theta.push_back((*p.value)[i]);
        }
      }
      Tensor loss = ops::sum_all(m.forward(x, &tape), &tape);
      auto grads = tape.backward(loss);
      std::vector<double> analytic;
      for (Param& p : params) {
        const Tensor& g = grads[static_cast<size_t>(p.value->node)];
        for (int64_t i = 0; i < p.value->numel(); ++i) {
          analytic.push_back(g.numel() ? g[i] : 0.0);
        }
      }
      std::vector<double> x64(static_cast<size_t>(x.numel()));
      for (int64_t i = 0; i < x.numel(); ++i) x64[static_cast<size_t>(i)] = x[i];

      auto f = [&](const std::vector<double>& th) {
        GsfRefWeights w = ref_weights(m);
        size_t at = 0;
        for (Param& p : params) {
          std::vector<double>* dst = nullptr;
          if (p.name == "gate_kernel") dst = &w.gate_kernel;
          if (p.name == "fuse_kernel1") dst = &w.fuse1;
          if (p.name == "fuse_kernel2") dst = &w.fuse2;
          if (p.name == "norm_scale") dst = &w.norm_scale;
          if (p.name == "norm_offset") dst = &w.norm_offset;
          for (size_t i = 0; i < dst->size(); ++i) (*dst)[i] = th[at++];
        }
        auto out = gsf_forward_ref64(cfg, w, x64, 1, 4, 3, 4, 4);
        double s = 0.0;
        for (double v : out) s += v;
        return s;
      };
      OracleReport rep = grad_check(f, theta, analytic);
      worst = std::max(worst, rep.effective_err());
      for (Param& p : params) p.value->node = -1;
    }
    suite.report("gsf weight gradients vs central fd", worst <= 1e-4, worst,
                 4);
  }

  {
    // quadratic: central differences are exact up to roundoff
    std::vector<double> theta = {0.3, -1.2, 2.0};
    auto f = [](const std::vector<double>& th) {
      double s = 0.0;
      for (double v : th) s += v * v;
      return s;
    };
    std::vector<double> analytic = {2 * theta[0], 2 * theta[1], 2 * theta[2]};
    OracleReport rep = grad_check(f, theta, analytic);
    suite.report("quadratic gradient check exact", rep.effective_err() <= 1e-9,
                 rep.effective_err(), 1);
  }

  return suite.failures;
}

}  // namespace oracle
}  // namespace gsf
