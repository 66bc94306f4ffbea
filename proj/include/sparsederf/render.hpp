// Copyright (c) 2026 sparsederf authors
// SPDX-License-Identifier: Apache-2.0
//
// Ray sampling and volume rendering. The sample positions t are always plain
// doubles (sampling is not differentiated); colors, densities, and the
// rendered outputs take the scalar type of the field evaluation.

#pragma once

#include <algorithm>
#include <vector>

#include "sparsederf/field.hpp"
#include "sparsederf/geometry.hpp"

namespace sderf {

// One stratified sample per bin: t_i ~ U[near + i*w, near + (i+1)*w].
inline std::vector<double> stratified_sample(double near, double far, int n,
                                             Rng& rng) {
  if (!(near < far) || n < 1)
    throw InvariantError("stratified_sample: bad near/far or count");
  std::vector<double> ts(n);
  double w = (far - near) / n;
  for (int i = 0; i < n; ++i) ts[i] = near + (i + rng.uniform()) * w;
  return ts;
}

// Inverse-CDF sampling of the piecewise-constant PDF given by normalized
// weights over the coarse bins, merged with the coarse samples. All-zero
// weights fall back to stratified. The merged list is made strictly
// increasing by nudging duplicates.
inline std::vector<double> hierarchical_sample(
    const std::vector<double>& coarse_ts, const std::vector<double>& weights,
    double near, double far, int n_fine, Rng& rng) {
  const int n = int(coarse_ts.size());
  if (int(weights.size()) != n)
    throw InvariantError("hierarchical_sample: weight/sample count mismatch");
  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw InvariantError("hierarchical_sample: negative weight");
    total += w;
  }

  std::vector<double> fine;
  if (total <= 1e-12) {
    fine = stratified_sample(near, far, n_fine, rng);
  } else {
    std::vector<double> cdf(n);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      acc += weights[i] / total;
      cdf[i] = acc;
    }
    cdf[n - 1] = 1.0;
    const double binw = (far - near) / n;
    fine.resize(n_fine);
    for (int s = 0; s < n_fine; ++s) {
      double u = rng.uniform();
      int b = int(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
      if (b >= n) b = n - 1;
      double lo_cdf = b == 0 ? 0.0 : cdf[b - 1];
      double mass = cdf[b] - lo_cdf;
      double frac = mass > 0.0 ? (u - lo_cdf) / mass : 0.0;
      fine[s] = near + (b + frac) * binw;
    }
  }

  std::vector<double> merged;
  merged.reserve(coarse_ts.size() + fine.size());
  merged.insert(merged.end(), coarse_ts.begin(), coarse_ts.end());
  merged.insert(merged.end(), fine.begin(), fine.end());
  std::sort(merged.begin(), merged.end());
  const double eps = 1e-12 * (far - near);
  for (size_t i = 1; i < merged.size(); ++i) {
    if (merged[i] <= merged[i - 1]) merged[i] = merged[i - 1] + eps;
  }
  return merged;
}

template <class S>
struct RaySamples {
  std::vector<double> ts;
  std::vector<S> sigma;
  std::vector<Vec3<S>> rgb;
};

template <class S>
struct RenderOutput {
  Vec3<S> rgb;
  S depth;
  S weight_sum;
  std::vector<S> weights;
  std::vector<S> trans;  // T_i before each sample
};

// C_hat = sum T_i (1 - exp(-sigma_i delta_i)) c_i with T the running
// transmittance; depth is sum w_i t_i (optionally normalized by sum w).
// The final interval is closed by the far bound.
template <class S>
RenderOutput<S> volume_render(const RaySamples<S>& s, double far,
                              bool normalize_depth = false) {
  const int n = int(s.ts.size());
  if (n < 1) throw InvariantError("volume_render: empty samples");
  using std::exp;
  using std::max;

  RenderOutput<S> out;
  out.weights.reserve(n);
  out.trans.reserve(n);

  S T = s.sigma[0] * 0.0 + 1.0;  // typed one
  Vec3<S> color = s.rgb[0] * 0.0;
  S depth = T * 0.0;
  S wsum = T * 0.0;
  for (int i = 0; i < n; ++i) {
    double delta = (i + 1 < n ? s.ts[i + 1] : far) - s.ts[i];
    out.trans.push_back(T);
    S att = exp(s.sigma[i] * (-delta));
    S alpha = 1.0 - att;
    S w = T * alpha;
    out.weights.push_back(w);
    color = color + s.rgb[i] * w;
    depth = depth + w * s.ts[i];
    wsum = wsum + w;
    if (i + 1 < n) T = T * att;
  }
  out.rgb = color;
  out.weight_sum = wsum;
  out.depth = normalize_depth ? depth / max(wsum, 1e-10) : depth;
  return out;
}

struct SampleConfig {
  int n_coarse = 64;
  int n_fine = 64;
  bool normalize_depth = false;
};

template <class S>
struct RayRender {
  RenderOutput<S> coarse;
  RenderOutput<S> fine;
};

struct NoHook {
  template <class S>
  void operator()(RaySamples<S>&) const {}
};

namespace detail {

template <class S>
RaySamples<S> eval_samples(EvalCtx<S>& ctx, const FieldArch& arch,
                           int32_t base, const Ray<S>& ray,
                           const Block<S>& dir_enc,
                           const std::vector<double>& ts) {
  RaySamples<S> s;
  s.ts = ts;
  s.sigma.reserve(ts.size());
  s.rgb.reserve(ts.size());
  for (double t : ts) {
    Vec3<S> pos = ray.o + ray.d * t;
    FieldOutput<S> f = field_eval(ctx, arch, base, pos, dir_enc);
    s.sigma.push_back(f.sigma);
    s.rgb.push_back(f.rgb);
  }
  return s;
}

}  // namespace detail

struct FieldOffsets {
  int32_t coarse = 0;
  int32_t fine = 0;
};

// Full coarse-to-fine render of one ray. `hook` runs on each pass's samples
// before integration (gradient-scaling hooks attach there). The rng must be
// the per-ray substream; coarse and fine passes fork it separately. Between
// the passes the fine t's are drawn from the coarse weights' values.
template <class S, class Hook = NoHook>
RayRender<S> render_ray(EvalCtx<S>& ctx, const FieldArch& arch,
                        const FieldOffsets& off, const Ray<S>& ray,
                        const Block<S>& dir_enc, double near, double far,
                        const SampleConfig& cfg, const Rng& ray_rng,
                        Hook&& hook = NoHook{}) {
  Rng rc = ray_rng.fork(0);
  std::vector<double> ts = stratified_sample(near, far, cfg.n_coarse, rc);
  RaySamples<S> sc =
      detail::eval_samples(ctx, arch, off.coarse, ray, dir_enc, ts);
  hook(sc);
  RayRender<S> out;
  out.coarse = volume_render(sc, far, cfg.normalize_depth);

  std::vector<double> wv(out.coarse.weights.size());
  for (size_t i = 0; i < wv.size(); ++i) wv[i] = val_of(out.coarse.weights[i]);
  Rng rf = ray_rng.fork(1);
  std::vector<double> ts2 =
      hierarchical_sample(ts, wv, near, far, cfg.n_fine, rf);
  RaySamples<S> sf =
      detail::eval_samples(ctx, arch, off.fine, ray, dir_enc, ts2);
  hook(sf);
  out.fine = volume_render(sf, far, cfg.normalize_depth);
  return out;
}

// ============================================================================
// Patch rendering
// ============================================================================

template <class S>
struct PatchRender {
  int k = 0;
  std::vector<Vec3<S>> rgb;    // row-major k*k, fine pass
  std::vector<S> depth;        // row-major k*k, fine pass
  std::vector<Vec3<S>> rgb_c;  // coarse pass
  std::vector<S> depth_c;
};

// Per-pixel rng substream key, stable with respect to the enclosing rect.
inline uint64_t pixel_key(const Intrinsics& intr, int px, int py) {
  return uint64_t(py) * uint64_t(intr.width) + uint64_t(px);
}

// Render a k x k pixel rect from a pose. Each pixel renders exactly like a
// single-ray render with the substream keyed by its absolute pixel index.
template <class S, class Hook = NoHook>
PatchRender<S> render_patch(EvalCtx<S>& ctx, const FieldArch& arch,
                            const FieldOffsets& off, const Pose& pose,
                            const Intrinsics& intr, const PixelRect& rect,
                            double near, double far, bool use_ndc,
                            const SampleConfig& cfg, const Rng& view_rng,
                            Hook&& hook = NoHook{}) {
  PatchRender<S> out;
  out.k = rect.k;
  out.rgb.reserve(size_t(rect.k) * rect.k);
  out.depth.reserve(size_t(rect.k) * rect.k);
  for (int dy = 0; dy < rect.k; ++dy) {
    for (int dx = 0; dx < rect.k; ++dx) {
      int px = rect.x0 + dx, py = rect.y0 + dy;
      Rayd wray = camera_ray(intr, pose, px, py);
      Vec3d vdir = normalized(wray.d);
      Ray<S> ray;
      Vec3<S> dirv;
      if constexpr (std::is_same_v<S, double>) {
        ray = wray;
        dirv = vdir;
      } else {
        Tape* t = ctx.tape;
        ray.o = {t->constant(wray.o.x), t->constant(wray.o.y),
                 t->constant(wray.o.z)};
        ray.d = {t->constant(wray.d.x), t->constant(wray.d.y),
                 t->constant(wray.d.z)};
        dirv = {t->constant(vdir.x), t->constant(vdir.y),
                t->constant(vdir.z)};
      }
      Block<S> denc = encode_direction(ctx, arch, dirv);
      double rn = near, rf = far;
      if (use_ndc) {
        ray = ndc_ray(ray, intr, near);
        rn = 0.0;
        rf = 1.0;
      }
      Rng prng = view_rng.fork(pixel_key(intr, px, py));
      RayRender<S> rr = render_ray(ctx, arch, off, ray, denc, rn, rf, cfg,
                                   prng, hook);
      out.rgb.push_back(rr.fine.rgb);
      out.depth.push_back(rr.fine.depth);
      out.rgb_c.push_back(rr.coarse.rgb);
      out.depth_c.push_back(rr.coarse.depth);
    }
  }
  return out;
}

// Render an already-built list of world-space rays (e.g. kernel-transformed
// patches) as a k x k patch. Ray origins/directions may be tape variables;
// gradients then flow back into whatever produced them.
template <class S, class Hook = NoHook>
PatchRender<S> render_rays(EvalCtx<S>& ctx, const FieldArch& arch,
                           const FieldOffsets& off,
                           const std::vector<Ray<S>>& world_rays, int k,
                           const Intrinsics& intr, double near, double far,
                           bool use_ndc, const SampleConfig& cfg,
                           const Rng& patch_rng, Hook&& hook = NoHook{}) {
  PatchRender<S> out;
  out.k = k;
  for (size_t i = 0; i < world_rays.size(); ++i) {
    Vec3<S> dirv = normalized(world_rays[i].d);
    Block<S> denc = encode_direction(ctx, arch, dirv);
    Ray<S> ray = world_rays[i];
    double rn = near, rf = far;
    if (use_ndc) {
      ray = ndc_ray(ray, intr, near);
      rn = 0.0;
      rf = 1.0;
    }
    RayRender<S> rr = render_ray(ctx, arch, off, ray, denc, rn, rf, cfg,
                                 patch_rng.fork(i), hook);
    out.rgb.push_back(rr.fine.rgb);
    out.depth.push_back(rr.fine.depth);
    out.rgb_c.push_back(rr.coarse.rgb);
    out.depth_c.push_back(rr.coarse.depth);
  }
  return out;
}

}  // namespace sderf
