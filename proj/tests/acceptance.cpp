// Copyright (c) 2026 sparsederf authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance gate. Each criterion runs self-contained, prints exactly one
// PASS/FAIL line, and the binary exits nonzero if any fail. Criterion names
// as arguments restrict the run (e.g. `sparsederf_acceptance A3 A6`), which
// is how the long end-to-end checks are iterated on in isolation.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sparsederf/blur.hpp"
#include "sparsederf/data.hpp"
#include "sparsederf/field.hpp"
#include "sparsederf/geometry.hpp"
#include "sparsederf/metrics.hpp"
#include "sparsederf/regularize.hpp"
#include "sparsederf/render.hpp"
#include "sparsederf/synth.hpp"
#include "sparsederf/tape.hpp"
#include "sparsederf/trainer.hpp"
#include "testutil.hpp"

using namespace sderf;
using sderf::test::central_diff;
using sderf::test::gradcheck;
using sderf::test::rel_err;
using sderf::test::TmpDir;
using std::cos;
using std::exp;
using std::log;
using std::max;
using std::min;
using std::pow;
using std::sin;
using std::sqrt;

namespace {

struct Failure {
  std::string msg;
};

void require(bool ok, const std::string& msg) {
  if (!ok) throw Failure{msg};
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return std::string(buf);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(bool(in), "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ============================================================================
// A1: autodiff vs central finite differences
// ============================================================================

// One expression covering every unfused primitive. Kinked ops (relu/min/max)
// only ever see arguments with a wide margin from the kink, on both branches,
// so the FD oracle stays valid; inputs are drawn from [0.25, 1.5].
struct A1Expr {
  template <class V>
  auto operator()(const V& v) const {
    const auto &a = v[0], &b = v[1], &c = v[2], &d = v[3], &e = v[4],
               &g = v[5];
    auto r = a + b;                                   // Add
    r = r + (a - c) * b;                              // Sub, Mul
    r = r + a / (b + 0.5);                            // Div, AddC
    r = r - (-d);                                     // Neg
    r = r + exp(c * 0.7) + log(a + 0.6) + sqrt(b + 0.3);  // Exp Log Sqrt MulC
    r = r + sin(d) + cos(e);                          // Sin, Cos
    r = r + relu(a + 0.5) + relu(0.0 - (b + 0.5));    // Relu (both), SubCR
    r = r + sigmoid(e - 0.7) + softplus(g - 0.5);     // Sigmoid, Softplus
    r = r + 2.0 / (g + 0.8);                          // DivCR
    r = r + pow(a + 0.2, 1.7);                        // PowC
    r = r + min(b, 2.5) + min(b, 0.1);                // MinC (both branches)
    r = r + max(c, 0.05) + max(c, 3.0);               // MaxC (both branches)
    r = r + sin_c(d, 1.9) + cos_c(e, 0.8);            // SinC, CosC
    r = r + grad_scale(a * d, 1.0);                   // GradScale (factor 1)
    return r;
  }
};

// FD check of a fused tape recording against its plain-double twin.
double fused_check(const std::vector<double>& x,
                   const std::function<Var(Tape&, int32_t)>& rec,
                   const std::function<double(const std::vector<double>&)>& twin) {
  Tape t;
  int32_t s0 = t.inputs_bulk(x.data(), int32_t(x.size()));
  Var y = rec(t, s0);
  require(rel_err(y.value(), twin(x)) < 1e-12, "fused forward mismatch");
  t.backward(y);
  double worst = 0.0;
  for (size_t i = 0; i < x.size(); ++i)
    worst = std::max(worst, rel_err(t.grad(int32_t(i)), central_diff(twin, x, i)));
  return worst;
}

double act_apply(Act act, double z) {
  switch (act) {
    case Act::None: return z;
    case Act::Relu: return z > 0.0 ? z : 0.0;
    case Act::Sigmoid: return sigmoid(z);
    case Act::Softplus: return softplus(z);
  }
  return z;
}

std::string run_a1() {
  double worst = 0.0;
  const Act acts[4] = {Act::None, Act::Relu, Act::Sigmoid, Act::Softplus};

  for (int seed = 0; seed < 100; ++seed) {
    Rng rng(1000 + uint64_t(seed));

    // Unfused primitives through the generic dual-evaluation harness.
    std::vector<double> x(6);
    for (double& v : x) v = rng.uniform(0.25, 1.5);
    worst = std::max(worst, gradcheck(A1Expr{}, x));

    // Dot product.
    {
      std::vector<double> z(10);
      for (double& v : z) v = rng.uniform(-1.0, 1.0);
      worst = std::max(
          worst,
          fused_check(
              z, [](Tape& t, int32_t s) { return t.record_dot(s, s + 5, 5); },
              [](const std::vector<double>& q) {
                double s = 0.0;
                for (int i = 0; i < 5; ++i) s += q[i] * q[5 + i];
                return s;
              }));
    }

    // Single- and split-input dense rows under every activation. The
    // preactivation is nudged away from zero so the relu FD stays clean.
    for (Act act : acts) {
      std::vector<double> z(9);  // 4 inputs, 4 weights, bias
      for (double& v : z) v = rng.uniform(-1.0, 1.0);
      double pre = z[8];
      for (int i = 0; i < 4; ++i) pre += z[i] * z[4 + i];
      if (std::abs(pre) < 0.05) z[8] += 0.2;
      worst = std::max(
          worst,
          fused_check(
              z,
              [act](Tape& t, int32_t s) {
                return t.record_affine(s, 4, s + 4, act);
              },
              [act](const std::vector<double>& q) {
                double zz = q[8];
                for (int i = 0; i < 4; ++i) zz += q[i] * q[4 + i];
                return act_apply(act, zz);
              }));

      std::vector<double> z2(15);  // 3 + 4 inputs, 3 + 4 weights, bias
      for (double& v : z2) v = rng.uniform(-1.0, 1.0);
      double pre2 = z2[14];
      for (int i = 0; i < 3; ++i) pre2 += z2[i] * z2[7 + i];
      for (int i = 0; i < 4; ++i) pre2 += z2[3 + i] * z2[10 + i];
      if (std::abs(pre2) < 0.05) z2[14] += 0.2;
      worst = std::max(
          worst,
          fused_check(
              z2,
              [act](Tape& t, int32_t s) {
                return t.record_affine2(s, 3, s + 3, 4, s + 7, act);
              },
              [act](const std::vector<double>& q) {
                double zz = q[14];
                for (int i = 0; i < 3; ++i) zz += q[i] * q[7 + i];
                for (int i = 0; i < 4; ++i) zz += q[3 + i] * q[10 + i];
                return act_apply(act, zz);
              }));
    }

    // Constant-coefficient linear combination, plus Copy and Const nodes.
    {
      std::vector<double> z(4);
      for (double& v : z) v = rng.uniform(-1.0, 1.0);
      double coef[4];
      for (double& c : coef) c = rng.uniform(-2.0, 2.0);
      double bias = rng.uniform(-1.0, 1.0);
      worst = std::max(
          worst,
          fused_check(
              z,
              [&](Tape& t, int32_t s) {
                int32_t par[4] = {s, s + 1, s + 2, s + 3};
                Var lin = t.record_affine_const(par, coef, 4, bias);
                Var cp = t.copy(Var(&t, s));
                return lin + cp * t.constant(0.75);
              },
              [&](const std::vector<double>& q) {
                double s = bias;
                for (int i = 0; i < 4; ++i) s += coef[i] * q[i];
                return s + 0.75 * q[0];
              }));
    }

    // Random 3-layer MLP, gradients over parameters and inputs together.
    {
      MlpArch ma{5, 8, 3, 3};
      const int P = ma.param_count();
      std::vector<double> z(size_t(P) + 5);

      // Redraw until every relu preactivation clears the FD step width.
      auto min_margin = [&](const std::vector<double>& q) {
        std::vector<double> h(q.begin() + P, q.end());
        int in = ma.in;
        int32_t w = 0;
        double m = 1e18;
        for (int l = 0; l < ma.layers; ++l) {
          std::vector<double> nh(size_t(ma.hidden));
          for (int r = 0; r < ma.hidden; ++r) {
            double zz = q[size_t(w + r * (in + 1) + in)];
            for (int i = 0; i < in; ++i)
              zz += q[size_t(w + r * (in + 1) + i)] * h[size_t(i)];
            m = std::min(m, std::abs(zz));
            nh[size_t(r)] = zz > 0.0 ? zz : 0.0;
          }
          w += layer_param_count(in, ma.hidden);
          h = std::move(nh);
          in = ma.hidden;
        }
        return m;
      };
      for (int tries = 0; tries < 32; ++tries) {
        for (double& v : z) v = rng.uniform(-0.7, 0.7);
        if (min_margin(z) > 1e-4) break;
      }
      require(min_margin(z) > 1e-4, "mlp preactivation margin not found");

      auto twin = [&](const std::vector<double>& q) {
        EvalCtx<double> c{q.data()};
        Block<double> in;
        in.n = 5;
        for (int i = 0; i < 5; ++i) in.v[size_t(i)] = q[size_t(P + i)];
        Block<double> out = mlp_eval(c, ma, 0, in);
        return out.get(0) + 0.7 * out.get(1) - 0.4 * out.get(2);
      };

      Tape t;
      t.inputs_bulk(z.data(), int32_t(z.size()));
      EvalCtx<Var> c{&t};
      Block<Var> in{&t, P, 5};
      Block<Var> out = mlp_eval(c, ma, 0, in);
      Var root = out.get(0) + 0.7 * out.get(1) - 0.4 * out.get(2);
      require(rel_err(root.value(), twin(z)) < 1e-12, "mlp forward mismatch");
      t.backward(root);
      for (size_t i = 0; i < z.size(); ++i)
        worst = std::max(worst,
                         rel_err(t.grad(int32_t(i)), central_diff(twin, z, i)));
    }
  }

  require(worst < 1e-5, fmt("max rel err %.3e >= 1e-5", worst));
  return fmt("100 seeds, primitives + fused rows + 3-layer mlp, max rel err %.2e",
             worst);
}

// ============================================================================
// A2: gradient scaling exactness
// ============================================================================

std::string run_a2() {
  // (i) Forward renders are bit-identical with scaling on and off.
  {
    FieldArch arch{4, 2, 16, 2, 8};
    std::vector<double> params(size_t(arch.param_count()) * 2);
    Rng prng(42);
    init_field(params.data(), arch, prng.fork(0));
    init_field(params.data() + arch.param_count(), arch, prng.fork(1));
    EvalCtx<double> ctx{params.data()};
    FieldOffsets off{0, arch.param_count()};

    const double near = 2.0, far = 6.0;
    Rayd ray{{0.1, -0.2, 0.3}, {-0.15, 0.1, -1.0}};
    Vec3d u = ray.d / norm(ray.d);
    Block<double> denc = encode_direction(ctx, arch, u);
    SampleConfig sc;
    sc.n_coarse = 12;
    sc.n_fine = 12;
    Rng rr(7);

    MgsHook hook{MGSConfig{MgsMode::Modulated, 10.0, 1.75}, 1.0 / far};
    RayRender<double> plain =
        render_ray(ctx, arch, off, ray, denc, near, far, sc, rr);
    RayRender<double> scaled =
        render_ray(ctx, arch, off, ray, denc, near, far, sc, rr, hook);
    for (int pass = 0; pass < 2; ++pass) {
      const RenderOutput<double>& a = pass ? plain.fine : plain.coarse;
      const RenderOutput<double>& b = pass ? scaled.fine : scaled.coarse;
      require(a.rgb.x == b.rgb.x && a.rgb.y == b.rgb.y && a.rgb.z == b.rgb.z,
              "forward rgb not bit-identical under scaling");
      require(a.depth == b.depth && a.weight_sum == b.weight_sum,
              "forward depth/weight not bit-identical under scaling");
      for (size_t i = 0; i < a.weights.size(); ++i)
        require(a.weights[i] == b.weights[i],
                "per-sample weight not bit-identical under scaling");
    }

    // Same statement on the differentiable path.
    Tape tp, ts;
    int32_t n0 = tp.inputs_bulk(params.data(), int32_t(params.size()));
    int32_t n1 = ts.inputs_bulk(params.data(), int32_t(params.size()));
    require(n0 == 0 && n1 == 0, "params not at tape head");
    EvalCtx<Var> cp{&tp}, csx{&ts};
    Ray<Var> rp{{tp.input(ray.o.x), tp.input(ray.o.y), tp.input(ray.o.z)},
                {tp.input(ray.d.x), tp.input(ray.d.y), tp.input(ray.d.z)}};
    Ray<Var> rs{{ts.input(ray.o.x), ts.input(ray.o.y), ts.input(ray.o.z)},
                {ts.input(ray.d.x), ts.input(ray.d.y), ts.input(ray.d.z)}};
    Vec3<Var> up{rp.d.x * (1.0 / norm(ray.d)), rp.d.y * (1.0 / norm(ray.d)),
                 rp.d.z * (1.0 / norm(ray.d))};
    Vec3<Var> us{rs.d.x * (1.0 / norm(ray.d)), rs.d.y * (1.0 / norm(ray.d)),
                 rs.d.z * (1.0 / norm(ray.d))};
    RayRender<Var> vp = render_ray(cp, arch, off, rp,
                                   encode_direction(cp, arch, up), near, far,
                                   sc, rr);
    RayRender<Var> vs = render_ray(csx, arch, off, rs,
                                   encode_direction(csx, arch, us), near, far,
                                   sc, rr, hook);
    require(vp.fine.rgb.x.value() == vs.fine.rgb.x.value() &&
                vp.fine.depth.value() == vs.fine.depth.value() &&
                vp.fine.weight_sum.value() == vs.fine.weight_sum.value(),
            "taped forward not bit-identical under scaling");
  }

  // (ii) Dual-tape comparison: each sample's parameter gradient is scaled by
  // exactly min(1, J(delta)).
  {
    const double near = 1.0, far = 5.0;
    const double dist_scale = 1.0 / far;
    Rng rng(99);
    const int n = 7;
    std::vector<double> ts_(static_cast<size_t>(n));
    std::vector<double> sg(static_cast<size_t>(n));
    std::vector<Vec3d> cl(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) ts_[size_t(i)] = rng.uniform(near, far);
    std::sort(ts_.begin(), ts_.end());
    for (int i = 0; i < n; ++i) {
      sg[size_t(i)] = rng.uniform(0.1, 2.0);
      cl[size_t(i)] = {rng.uniform(), rng.uniform(), rng.uniform()};
    }

    MGSConfig cfgs[4] = {{MgsMode::Modulated, 1.0, 0.5},
                         {MgsMode::Modulated, 10.0, 1.75},
                         {MgsMode::Modulated, 1.0, 1.2},
                         {MgsMode::Naive, 1.0, 1.0}};
    double worst = 0.0;
    for (const MGSConfig& mc : cfgs) {
      Tape ta, tb;
      RaySamples<Var> sa, sb;
      sa.ts = ts_;
      sb.ts = ts_;
      std::vector<Var> la, lb;  // leaves, in lockstep order
      for (int i = 0; i < n; ++i) {
        sa.sigma.push_back(ta.input(sg[size_t(i)]));
        sb.sigma.push_back(tb.input(sg[size_t(i)]));
        la.push_back(sa.sigma.back());
        lb.push_back(sb.sigma.back());
        Vec3<Var> ca{ta.input(cl[size_t(i)].x), ta.input(cl[size_t(i)].y),
                     ta.input(cl[size_t(i)].z)};
        Vec3<Var> cb{tb.input(cl[size_t(i)].x), tb.input(cl[size_t(i)].y),
                     tb.input(cl[size_t(i)].z)};
        sa.rgb.push_back(ca);
        sb.rgb.push_back(cb);
        la.push_back(ca.x);
        la.push_back(ca.y);
        la.push_back(ca.z);
        lb.push_back(cb.x);
        lb.push_back(cb.y);
        lb.push_back(cb.z);
      }
      apply_mgs(sb, mc, dist_scale);
      RenderOutput<Var> oa = volume_render(sa, far);
      RenderOutput<Var> ob = volume_render(sb, far);
      Var ra = oa.rgb.x * 0.3 + oa.rgb.y * 0.5 + oa.rgb.z * 0.2 +
               0.7 * oa.depth + 0.3 * oa.weight_sum;
      Var rb = ob.rgb.x * 0.3 + ob.rgb.y * 0.5 + ob.rgb.z * 0.2 +
               0.7 * ob.depth + 0.3 * ob.weight_sum;
      require(ra.value() == rb.value(), "scaled forward differs");
      ta.backward(ra);
      tb.backward(rb);
      for (int i = 0; i < n; ++i) {
        double f = mgs_value(ts_[size_t(i)] * dist_scale, mc);
        for (int j = 0; j < 4; ++j) {
          double ga = ta.grad(la[size_t(4 * i + j)]);
          double gb = tb.grad(lb[size_t(4 * i + j)]);
          worst = std::max(worst, rel_err(gb, f * ga));
        }
      }
    }
    require(worst <= 1e-12,
            fmt("per-sample scaling deviates: rel err %.3e", worst));
  }

  // (iii) J(0) = 0 for every published (rho, eta) pair.
  {
    const auto& presets = mgs_presets();
    require(presets.size() == 15,
            fmt("expected 15 presets, found %zu", presets.size()));
    for (const auto& [name, p] : presets) {
      double j0 = mgs_curve(0.0, p.rho, p.eta);
      require(std::abs(j0) <= 1e-12,
              fmt("J(0) = %.3e for %s (rho=%g eta=%g)", j0, name.c_str(),
                  p.rho, p.eta));
    }
  }

  return "forward bit-identity, per-sample scale to 1e-12, J(0)=0 on all 15 presets";
}

// ============================================================================
// A3: volume rendering identities and hierarchical sampling
// ============================================================================

std::string run_a3() {
  // Weight-sum identity on 1000 random rays.
  double worst = 0.0;
  for (int r = 0; r < 1000; ++r) {
    Rng rng(3000 + uint64_t(r));
    int n = 2 + int(rng.next_u64() % 63);
    double far = rng.uniform(1.0, 5.0);
    RaySamples<double> s;
    s.ts.resize(size_t(n));
    for (double& t : s.ts) t = rng.uniform(0.0, far * 0.98);
    std::sort(s.ts.begin(), s.ts.end());
    for (int i = 0; i < n; ++i) {
      s.sigma.push_back(std::exp(rng.uniform(-3.0, 3.0)));
      s.rgb.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
    }
    RenderOutput<double> out = volume_render(s, far);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      double delta = (i + 1 < n ? s.ts[size_t(i + 1)] : far) - s.ts[size_t(i)];
      acc += s.sigma[size_t(i)] * delta;
    }
    worst = std::max(worst, std::abs(out.weight_sum - (1.0 - std::exp(-acc))));
  }
  require(worst <= 1e-9, fmt("weight-sum identity off by %.3e", worst));

  // Opaque and fully transparent limits.
  {
    RaySamples<double> s;
    s.ts = {0.5, 1.2, 2.0};
    s.sigma = {1e4, 1e4, 1e4};
    s.rgb = {{0.9, 0.2, 0.1}, {0.1, 0.8, 0.3}, {0.2, 0.3, 0.7}};
    RenderOutput<double> out = volume_render(s, 3.0);
    require(std::abs(out.rgb.x - 0.9) <= 1e-12 &&
                std::abs(out.rgb.y - 0.2) <= 1e-12 &&
                std::abs(out.rgb.z - 0.1) <= 1e-12,
            "opaque ray should return the first sample color");
    require(std::abs(out.weight_sum - 1.0) <= 1e-12, "opaque weight sum != 1");
    require(std::abs(out.depth - 0.5) <= 1e-12, "opaque depth != first t");

    s.sigma = {0.0, 0.0, 0.0};
    out = volume_render(s, 3.0);
    require(out.weight_sum == 0.0 && out.rgb.x == 0.0 && out.depth == 0.0,
            "transparent ray should render to zero");
  }

  // Chi-square uniformity of the importance sampler against its target pdf:
  // piecewise-constant over 16 equal bins with mass proportional to the
  // coarse weights. Coarse seeds sit at bin centers and are subtracted from
  // the merged counts. chi2(0.99, dof=15) = 30.5779.
  {
    const int nb = 16, n_fine = 16000;
    std::vector<double> coarse(static_cast<size_t>(nb));
    std::vector<double> w(static_cast<size_t>(nb));
    double total = 0.0;
    for (int i = 0; i < nb; ++i) {
      coarse[size_t(i)] = (i + 0.5) / nb;
      w[size_t(i)] = 0.5 + i;
      total += w[size_t(i)];
    }
    Rng rng(0xC4153);
    std::vector<double> merged =
        hierarchical_sample(coarse, w, 0.0, 1.0, n_fine, rng);
    require(int(merged.size()) == nb + n_fine, "merged sample count wrong");
    std::vector<int> counts(size_t(nb), 0);
    for (double t : merged) {
      int b = std::min(nb - 1, std::max(0, int(t * nb)));
      counts[size_t(b)]++;
    }
    double chi2 = 0.0;
    for (int i = 0; i < nb; ++i) {
      double expct = n_fine * w[size_t(i)] / total;
      double obs = counts[size_t(i)] - 1;  // remove the coarse seed
      chi2 += (obs - expct) * (obs - expct) / expct;
    }
    require(chi2 < 30.5779, fmt("chi-square %.2f >= 30.5779 (alpha=0.01)", chi2));
    return fmt("weight-sum err %.1e, limits exact, chi-square %.1f < 30.58",
               worst, chi2);
  }
}

// ============================================================================
// A4: geometry
// ============================================================================

std::string run_a4() {
  // Rodrigues orthonormality and determinant over 1000 axes, including the
  // small-angle branch.
  double worst_orth = 0.0, worst_det = 0.0;
  for (int r = 0; r < 1000; ++r) {
    Rng rng(4000 + uint64_t(r));
    Vec3d axis{rng.normal(), rng.normal(), rng.normal()};
    double nn = norm(axis);
    if (nn < 1e-6) axis = {1.0, 0.0, 0.0}, nn = 1.0;
    double angle = r < 10 ? 1e-9 * (r + 1) : rng.uniform(0.0, M_PI);
    Vec3d w = axis * (angle / nn);
    Mat3d R = rodrigues(w);
    Mat3d I = transpose(R) * R;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        worst_orth =
            std::max(worst_orth, std::abs(I.m[i][j] - (i == j ? 1.0 : 0.0)));
    double det =
        R.m[0][0] * (R.m[1][1] * R.m[2][2] - R.m[1][2] * R.m[2][1]) -
        R.m[0][1] * (R.m[1][0] * R.m[2][2] - R.m[1][2] * R.m[2][0]) +
        R.m[0][2] * (R.m[1][0] * R.m[2][1] - R.m[1][1] * R.m[2][0]);
    worst_det = std::max(worst_det, std::abs(det - 1.0));
  }
  require(worst_orth <= 1e-9, fmt("R^T R off identity by %.3e", worst_orth));
  require(worst_det <= 1e-9, fmt("det(R) off 1 by %.3e", worst_det));

  // Zero screw is the exact identity.
  {
    ScrewAxis<double> s{{0.0, 0.0, 0.0}, {0.0, 0.0, 0.0}};
    Rayd ray{{0.3, -1.2, 2.5}, {0.4, 0.2, -1.0}};
    Rayd out = apply_screw(s, ray);
    require(out.o.x == ray.o.x && out.o.y == ray.o.y && out.o.z == ray.o.z &&
                out.d.x == ray.d.x && out.d.y == ray.d.y && out.d.z == ray.d.z,
            "zero screw is not the identity");
  }

  // NDC: in-frustum points reproject with parameter t' in [0, 1], matching
  // the direct projection of the world point.
  {
    Intrinsics intr;
    intr.width = 32;
    intr.height = 24;
    intr.focal = 40.0;
    const double near = 1.0;
    const double sx = -intr.focal / (0.5 * intr.width);
    const double sy = -intr.focal / (0.5 * intr.height);
    int kept = 0;
    double worst = 0.0;
    for (int r = 0; r < 20000 && kept < 1000; ++r) {
      Rng rng(4500 + uint64_t(r));
      Rayd ray{{rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
                rng.uniform(0.2, 2.5)},
               {rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3),
                rng.uniform(-2.0, -0.6)}};
      double tn = -(near + ray.o.z) / ray.d.z;
      Vec3d o2 = ray.o + ray.d * tn;
      double trem = rng.uniform(0.0, 60.0);
      Vec3d p = o2 + ray.d * trem;
      Vec3d q{sx * (p.x / p.z), sy * (p.y / p.z), 1.0 + 2.0 * near / p.z};
      if (std::abs(q.x) > 1.0 || std::abs(q.y) > 1.0) continue;  // off-screen
      ++kept;
      Rayd ndc = ndc_ray(ray, intr, near);
      double tp = 1.0 - o2.z / p.z;
      require(tp >= -1e-12 && tp <= 1.0 + 1e-12,
              fmt("ndc parameter %.6f outside [0,1]", tp));
      Vec3d qp = ndc.o + ndc.d * tp;
      worst = std::max({worst, rel_err(qp.x, q.x), rel_err(qp.y, q.y),
                        rel_err(qp.z, q.z)});
    }
    require(kept == 1000, fmt("only %d in-frustum draws", kept));
    require(worst <= 1e-9, fmt("ndc reprojection err %.3e", worst));
    return fmt(
        "rodrigues orth %.1e det %.1e, zero screw exact, ndc reproj %.1e",
        worst_orth, worst_det, worst);
  }
}

// ============================================================================
// A5: regularizer units
// ============================================================================

std::string run_a5() {
  // Hand-computed 2x2 surface-smoothness cases.
  {
    std::vector<double> depth = {1.0, 1.5, 2.0, 0.5};
    std::vector<Vec3d> rgb = {
        {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}};
    double want = 0.25 * std::exp(-2.0)   // (0,1): dd^2=0.25, |dC|^2=2
                  + 2.25 * std::exp(-3.0)  // (2,3): dd^2=2.25, |dC|^2=3
                  + 1.0 * std::exp(-2.0)   // (0,2): dd^2=1,    |dC|^2=2
                  + 1.0 * std::exp(-1.0);  // (1,3): dd^2=1,    |dC|^2=1
    double got = ss_patch_term(depth, rgb, 2);
    require(rel_err(got, want) <= 1e-12,
            fmt("ss hand case 1: got %.17g want %.17g", got, want));

    // Uniform color: weights collapse to 1.
    std::vector<Vec3d> flat(4, Vec3d{0.3, 0.3, 0.3});
    std::vector<double> d2 = {0.7, 1.1, 0.2, 2.0};
    double want2 = (0.7 - 1.1) * (0.7 - 1.1) + (0.2 - 2.0) * (0.2 - 2.0) +
                   (0.7 - 0.2) * (0.7 - 0.2) + (1.1 - 2.0) * (1.1 - 2.0);
    require(rel_err(ss_patch_term(d2, flat, 2), want2) <= 1e-12,
            "ss hand case 2 mismatch");

    // Constant depth: zero regardless of color.
    std::vector<double> d3(4, 1.25);
    require(ss_patch_term(d3, rgb, 2) == 0.0, "constant depth must cost 0");
  }

  // Perceptual loss vanishes on identical patches.
  {
    const int k = 8;
    Rng rng(55);
    std::vector<Vec3d> patch(size_t(k) * k);
    for (Vec3d& p : patch) p = {rng.uniform(), rng.uniform(), rng.uniform()};
    EvalCtx<double> ctx{nullptr};
    double pd = perceptual_loss(ctx, patch, patch, k, shared_filter_bank());
    require(pd == 0.0, fmt("pd on identical patches = %.3e", pd));
  }

  // Blur composition stays inside the per-channel convex hull.
  {
    for (int r = 0; r < 10000; ++r) {
      Rng rng(5000 + uint64_t(r));
      int n = 2 + int(rng.next_u64() % 6);
      std::vector<Vec3d> colors(static_cast<size_t>(n));
      std::vector<double> logits(static_cast<size_t>(n));
      std::vector<double> wts(static_cast<size_t>(n));
      for (int q = 0; q < n; ++q) {
        colors[size_t(q)] = {rng.uniform(-0.2, 1.2), rng.uniform(-0.2, 1.2),
                             rng.uniform(-0.2, 1.2)};
        logits[size_t(q)] = rng.uniform(-3.0, 3.0);
      }
      double zmax = *std::max_element(logits.begin(), logits.end());
      double zs = 0.0;
      for (int q = 0; q < n; ++q) zs += std::exp(logits[size_t(q)] - zmax);
      for (int q = 0; q < n; ++q)
        wts[size_t(q)] = std::exp(logits[size_t(q)] - zmax) / zs;
      Vec3d out = compose_blur(colors, wts);
      for (int ch = 0; ch < 3; ++ch) {
        double lo = 1e18, hi = -1e18;
        for (int q = 0; q < n; ++q) {
          lo = std::min(lo, (&colors[size_t(q)].x)[ch]);
          hi = std::max(hi, (&colors[size_t(q)].x)[ch]);
        }
        double v = (&out.x)[ch];
        require(v >= lo - 1e-12 && v <= hi + 1e-12,
                fmt("composed channel %d outside hull at draw %d", ch, r));
      }
    }
  }

  return "ss hand cases to 1e-12, pd identity zero, 1e4 convexity draws";
}

// ============================================================================
// A6/A7/A8 shared fixture: a small blurry synthetic scene
// ============================================================================

const std::string& fixture_dir() {
  static TmpDir dir("accept");
  static bool made = false;
  if (!made) {
    SyntheticSpec sp;
    sp.name = "accept";
    sp.n_train = 3;
    sp.n_test = 1;
    sp.n_unseen = 2;
    sp.width = 32;
    sp.height = 32;
    sp.n_taps = 5;
    sp.motion_rot = 0.05;
    sp.motion_trans = 0.08;
    sp.seed = 7;
    generate_synthetic_scene(sp, dir.str());
    made = true;
  }
  static std::string path = dir.str();
  return path;
}

TrainConfig e2e_config() {
  TrainConfig c = TrainConfig::synthetic_preset();
  c.iterations = 2000;
  c.kernel = KernelType::Rbk;
  c.kcfg.n = 5;
  c.use_ss = true;
  c.use_mgs = true;
  c.use_pd = false;
  c.threads = 4;
  c.seed = 21;
  c.arch = FieldArch{6, 2, 32, 3, 16};
  return c;
}

std::string run_a6() {
  const std::string& dir = fixture_dir();
  TrainConfig cfg = e2e_config();
  Scene scene = load_scene(dir + "/scene.json");

  std::vector<int> test_ids = scene.manifest.ids(ViewRole::Test);
  require(!test_ids.empty(), "fixture has no test view");
  double baseline = 0.0;
  for (int id : test_ids)
    baseline += psnr(scene.images.at(id), scene.sharp.at(id));
  baseline /= double(test_ids.size());

  Trainer tr = make_trainer(cfg, std::move(scene));
  double loss10 = 0.0, loss_final = 0.0;
  for (int i = 0; i < cfg.iterations; ++i) {
    StepStats st = train_step(tr);
    if (st.step == 9) loss10 = st.loss.total;
    loss_final = st.loss.total;
    if ((st.step + 1) % 250 == 0)
      std::fprintf(stderr, "  [A6] step %d loss %.5f\n", st.step + 1,
                   st.loss.total);
  }
  require(loss10 > 0.0, "step-10 loss not recorded");

  EvalReport rep = evaluate(tr, ViewRole::Test);
  nlohmann::json krep = kernel_motion_report(tr, dir + "/blur_truth.json");
  require(!krep.value("skipped", true), "kernel report skipped");
  double rerender = 0.0;
  for (const auto& v : krep["views"])
    rerender += v["rerender_psnr"].get<double>();
  rerender /= double(krep["views"].size());

  std::string detail = fmt(
      "loss %.4f -> %.4f (%.1f%%), clean %.2f dB vs blurry baseline %.2f dB "
      "(%+.2f), re-render %.2f dB",
      loss10, loss_final, 100.0 * loss_final / loss10, rep.mean_psnr, baseline,
      rep.mean_psnr - baseline, rerender);

  require(loss_final < 0.2 * loss10,
          "final loss not below 20% of step-10 loss -- " + detail);
  require(rep.mean_psnr >= baseline + 1.0,
          "clean psnr gain below 1 dB -- " + detail);
  require(rerender >= 25.0, "kernel re-render below 25 dB -- " + detail);
  return detail;
}

// ============================================================================
// A7: ablation grid smoke
// ============================================================================

std::string run_a7() {
  const std::string& dir = fixture_dir();
  const KernelType kernels[2] = {KernelType::Dsk, KernelType::Rbk};
  int runs = 0;
  for (KernelType kt : kernels) {
    for (int mask = 0; mask < 8; ++mask) {
      TrainConfig cfg = e2e_config();
      cfg.iterations = 200;
      cfg.kernel = kt;
      cfg.use_ss = mask & 1;
      cfg.use_mgs = mask & 2;
      cfg.use_pd = mask & 4;
      std::string tag = fmt("%s+%s%s%s", kernel_name(kt).c_str(),
                            cfg.use_ss ? "ss" : "", cfg.use_mgs ? "mgs" : "",
                            cfg.use_pd ? "pd" : "");
      try {
        Trainer tr = make_trainer(cfg, load_scene(dir + "/scene.json"));
        for (int i = 0; i < cfg.iterations; ++i) {
          StepStats st = train_step(tr);
          require(std::isfinite(st.loss.total) && std::isfinite(st.loss.recon),
                  "non-finite loss in " + tag);
        }
        EvalReport rep = evaluate(tr, ViewRole::Test);
        require(std::isfinite(rep.mean_psnr),
                "non-finite eval psnr in " + tag);
      } catch (const Failure&) {
        throw;
      } catch (const std::exception& e) {
        throw Failure{tag + " raised: " + e.what()};
      }
      ++runs;
      std::fprintf(stderr, "  [A7] %s ok (%d/16)\n", tag.c_str(), runs);
    }
  }
  return fmt("%d subset runs x 200 steps, all losses and metrics finite", runs);
}

// ============================================================================
// A8: determinism
// ============================================================================

std::string run_a8() {
  const std::string& dir = fixture_dir();
  TrainConfig cfg = e2e_config();
  cfg.iterations = 200;
  cfg.checkpoint_every = 100;
  cfg.metrics_every = 50;

  TmpDir out_a("accept8a"), out_b("accept8b");
  for (const TmpDir* out : {&out_a, &out_b}) {
    Trainer tr = make_trainer(cfg, load_scene(dir + "/scene.json"));
    run_training(tr, out->str());
  }
  for (const char* name : {"ckpt_000100.sdrf", "ckpt_final.sdrf",
                           "metrics.jsonl"}) {
    std::string a = slurp(out_a.str() + "/" + name);
    std::string b = slurp(out_b.str() + "/" + name);
    require(a == b, fmt("%s differs between identical-seed runs", name));
  }
  return "200-step reruns: checkpoints and loss logs bit-identical";
}

// ============================================================================
// Driver
// ============================================================================

struct Criterion {
  const char* name;
  std::string (*fn)();
  double budget_s;  // 0 = report elapsed only
};

}  // namespace

int main(int argc, char** argv) {
  const Criterion table[] = {
      {"A1", run_a1, 30.0}, {"A2", run_a2, 10.0}, {"A3", run_a3, 30.0},
      {"A4", run_a4, 10.0}, {"A5", run_a5, 10.0}, {"A6", run_a6, 0.0},
      {"A7", run_a7, 1200.0}, {"A8", run_a8, 0.0},
  };
  std::vector<std::string> filter(argv + 1, argv + argc);
  auto selected = [&](const char* name) {
    if (filter.empty()) return true;
    return std::find(filter.begin(), filter.end(), name) != filter.end();
  };

  int failures = 0;
  for (const Criterion& c : table) {
    if (!selected(c.name)) continue;
    auto t0 = std::chrono::steady_clock::now();
    std::string detail;
    bool ok = true;
    try {
      detail = c.fn();
    } catch (const Failure& f) {
      ok = false;
      detail = f.msg;
    } catch (const std::exception& e) {
      ok = false;
      detail = std::string("unexpected exception: ") + e.what();
    }
    double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    if (ok && c.budget_s > 0.0 && secs >= c.budget_s) {
      ok = false;
      detail = fmt("runtime %.1fs exceeds %.0fs budget; %s", secs, c.budget_s,
                   detail.c_str());
    }
    std::printf("%s %s (%.1fs): %s\n", c.name, ok ? "PASS" : "FAIL", secs,
                detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
