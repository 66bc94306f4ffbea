// Copyright (c) 2026 sparsederf authors
// SPDX-License-Identifier: Apache-2.0
//
// The three sparse-view regularizers: modulated gradient scaling (backward-
// only per-sample gradient attenuation), surface smoothness on integrated
// unobserved rays, and perceptual distillation against pre-deblurred images.

#pragma once

#include <cstdio>
#include <vector>

#include "sparsederf/blur.hpp"
#include "sparsederf/render.hpp"

namespace sderf {

// ============================================================================
// Modulated gradient scaling
// ============================================================================

enum class MgsMode { Off, Naive, Modulated };

struct MGSConfig {
  MgsMode mode = MgsMode::Off;
  double rho = 1.0;
  double eta = 1.0;

  void validate() const {
    if (mode != MgsMode::Modulated) return;
    if (!(rho >= 1.0 && rho <= 10.0))
      throw ConfigError("mgs rho out of range [1, 10]");
    if (!(eta >= 0.5 && eta < 2.0))
      throw ConfigError("mgs eta out of range [0.5, 2)");
  }
};

// The modulated curve J(d) = rho * (sin(eta*pi*(d + 3/(2 eta))) + 1).
// Zero at d = 0 by construction: the sine argument starts at 3pi/2.
inline double mgs_curve(double delta, double rho, double eta) {
  return rho * (std::sin(eta * M_PI * (delta + 3.0 / (2.0 * eta))) + 1.0);
}

// Per-sample gradient factor in [0, 1]. Deltas marginally outside [0, 1]
// (unseen rays) are clamped with a one-time warning.
inline double mgs_value(double delta, const MGSConfig& cfg) {
  if (cfg.mode == MgsMode::Off) return 1.0;
  if (delta < 0.0 || delta > 1.0) {
    static std::atomic<bool> warned{false};
    if (!warned.exchange(true)) {
      std::fprintf(stderr,
                   "warning: gradient-scaling delta %.6f outside [0,1], "
                   "clamping\n",
                   delta);
    }
    delta = delta < 0.0 ? 0.0 : 1.0;
  }
  if (cfg.mode == MgsMode::Naive) return std::min(1.0, delta * delta);
  return std::min(1.0, mgs_curve(delta, cfg.rho, cfg.eta));
}

// Wrap every sample's density and color in gradient-scale hooks. Forward
// values are bit-identical; only backward flow is attenuated. In NDC the
// sample's t parameter is the near-plane distance delta; for world-space
// rays pass dist_scale = |d| so that delta = t * |d|.
template <class S>
void apply_mgs(RaySamples<S>& s, const MGSConfig& cfg,
               double dist_scale = 1.0) {
  if (cfg.mode == MgsMode::Off) return;
  for (size_t i = 0; i < s.ts.size(); ++i) {
    double f = mgs_value(s.ts[i] * dist_scale, cfg);
    s.sigma[i] = grad_scale(s.sigma[i], f);
    s.rgb[i] = {grad_scale(s.rgb[i].x, f), grad_scale(s.rgb[i].y, f),
                grad_scale(s.rgb[i].z, f)};
  }
}

// Hook adapter for render_ray / render_patch.
struct MgsHook {
  MGSConfig cfg;
  double dist_scale = 1.0;
  template <class S>
  void operator()(RaySamples<S>& s) const {
    apply_mgs(s, cfg, dist_scale);
  }
};

// ============================================================================
// Surface smoothness
// ============================================================================

namespace detail {

template <class S>
S color_diff_sq(const Vec3<S>& a, const Vec3<S>& b) {
  S dr = a.x - b.x, dg = a.y - b.y, db = a.z - b.z;
  return dr * dr + dg * dg + db * db;
}

}  // namespace detail

// Color-weighted squared depth differences over right and down neighbor
// pairs of one k x k patch: sum w * (d_a - d_b)^2, w = exp(-|C_a - C_b|^2).
template <class S>
S ss_patch_term(const std::vector<S>& depth, const std::vector<Vec3<S>>& rgb,
                int k) {
  if (int(depth.size()) != k * k || int(rgb.size()) != k * k)
    throw InvariantError("ss_patch_term: patch size mismatch");
  using std::exp;
  S loss = depth[0] * 0.0;
  for (int y = 0; y < k; ++y) {
    for (int x = 0; x < k; ++x) {
      int i = y * k + x;
      if (x + 1 < k) {
        int j = i + 1;
        S dd = depth[i] - depth[j];
        S w = exp(-detail::color_diff_sq(rgb[i], rgb[j]));
        loss = loss + w * dd * dd;
      }
      if (y + 1 < k) {
        int j = i + k;
        S dd = depth[i] - depth[j];
        S w = exp(-detail::color_diff_sq(rgb[i], rgb[j]));
        loss = loss + w * dd * dd;
      }
    }
  }
  return loss;
}

// Sum over a set of rendered patches.
template <class S>
S surface_smoothness_loss(const std::vector<PatchRender<S>>& patches, int k,
                          bool on_coarse = false) {
  if (patches.empty())
    throw InvariantError("surface_smoothness_loss: no patches");
  S total = (on_coarse ? patches[0].depth_c[0] : patches[0].depth[0]) * 0.0;
  for (const auto& p : patches) {
    total = total + (on_coarse ? ss_patch_term(p.depth_c, p.rgb_c, k)
                               : ss_patch_term(p.depth, p.rgb, k));
  }
  return total;
}

// ============================================================================
// Integrated unobserved patches: hidden (kernel-transformed) ray patches at
// a random training rect, plus camera-ray patches from unseen poses.
// ============================================================================

inline PixelRect random_rect(Rng& rng, const Intrinsics& intr, int k) {
  if (k > intr.width || k > intr.height)
    throw ConfigError("patch size exceeds image bounds");
  int x0 = int(rng.uniform() * double(intr.width - k + 1));
  int y0 = int(rng.uniform() * double(intr.height - k + 1));
  x0 = std::min(x0, intr.width - k);
  y0 = std::min(y0, intr.height - k);
  return {x0, y0, k};
}

template <class S>
std::vector<RayPatch<S>> integrated_unobserved_patches(
    EvalCtx<S>& ctx, const KernelConfig& kcfg, const KernelOffsets& koff,
    int view, const Pose& view_pose, const Intrinsics& intr,
    const std::vector<Pose>& unseen_poses, int k, Rng& rng) {
  std::vector<RayPatch<S>> out;
  PixelRect rect = random_rect(rng, intr, k);
  for (auto& p : hidden_rays(ctx, kcfg, koff, view, view_pose, intr, rect))
    out.push_back(std::move(p));
  for (const Pose& pose : unseen_poses) {
    PixelRect urect = random_rect(rng, intr, k);
    RayPatch<S> p;
    p.k = k;
    for (int dy = 0; dy < k; ++dy)
      for (int dx = 0; dx < k; ++dx)
        p.rays.push_back(to_scalar_ray(
            ctx, camera_ray(intr, pose, urect.x0 + dx, urect.y0 + dy)));
    out.push_back(std::move(p));
  }
  return out;
}

// ============================================================================
// Perceptual distillation
// ============================================================================

// Fixed filter bank: zero-sum center-surround and oriented-edge kernels at
// two scales applied per channel, plus a seeded random 16-channel conv over
// RGB. Deterministic, no trainable parameters.
struct Filter {
  int size = 3;
  bool per_channel = true;  // else consumes all 3 input channels
  std::vector<double> w;    // size*size, or size*size*3 channel-major
};

struct FilterBank {
  std::vector<Filter> filters;
  int stride = 2;
};

inline FilterBank build_filter_bank() {
  FilterBank bank;
  const double dog[9] = {-0.125, -0.125, -0.125, -0.125, 1.0,
                         -0.125, -0.125, -0.125, -0.125};
  const double ex[9] = {-0.25, 0, 0.25, -0.5, 0, 0.5, -0.25, 0, 0.25};
  const double ey[9] = {-0.25, -0.5, -0.25, 0, 0, 0, 0.25, 0.5, 0.25};
  const double d1[9] = {0, 0.25, 0.5, -0.25, 0, 0.25, -0.5, -0.25, 0};
  const double d2[9] = {0.5, 0.25, 0, 0.25, 0, -0.25, 0, -0.25, -0.5};
  const double* base[5] = {dog, ex, ey, d1, d2};
  for (const double* kw : base) {
    bank.filters.push_back({3, true, std::vector<double>(kw, kw + 9)});
  }
  // Second scale: the same patterns dilated into 5x5 kernels.
  for (const double* kw : base) {
    Filter f{5, true, std::vector<double>(25, 0.0)};
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x) f.w[(2 * y) * 5 + 2 * x] = kw[y * 3 + x];
    bank.filters.push_back(std::move(f));
  }
  // Seeded random RGB conv, 16 channels.
  Rng rng(0x5eedf17u);
  for (int c = 0; c < 16; ++c) {
    Filter f{3, false, std::vector<double>(27)};
    for (double& w : f.w) w = rng.normal() / std::sqrt(27.0);
    bank.filters.push_back(std::move(f));
  }
  return bank;
}

inline const FilterBank& shared_filter_bank() {
  static FilterBank bank = build_filter_bank();
  return bank;
}

inline int conv_out_dim(int k, int size, int stride) {
  return (k - size) / stride + 1;
}

// Apply the bank to a k x k RGB patch. On the Var path each feature is one
// constant-coefficient tape node over the pixel channels.
template <class S>
std::vector<S> extract_features(EvalCtx<S>& ctx,
                                const std::vector<Vec3<S>>& patch, int k,
                                const FilterBank& bank) {
  if (int(patch.size()) != k * k)
    throw InvariantError("extract_features: patch size mismatch");
  std::vector<S> feats;
  std::vector<int32_t> par;
  std::vector<double> coef;
  for (const Filter& f : bank.filters) {
    int od = conv_out_dim(k, f.size, bank.stride);
    if (od < 1) continue;
    int chans = f.per_channel ? 3 : 1;
    for (int c = 0; c < chans; ++c) {
      for (int oy = 0; oy < od; ++oy) {
        for (int ox = 0; ox < od; ++ox) {
          if constexpr (std::is_same_v<S, double>) {
            (void)ctx;
            double acc = 0.0;
            for (int fy = 0; fy < f.size; ++fy) {
              for (int fx = 0; fx < f.size; ++fx) {
                int px = ox * bank.stride + fx, py = oy * bank.stride + fy;
                const Vec3<double>& pix = patch[py * k + px];
                if (f.per_channel) {
                  acc += f.w[fy * f.size + fx] * (&pix.x)[c];
                } else {
                  for (int ic = 0; ic < 3; ++ic)
                    acc += f.w[(fy * f.size + fx) * 3 + ic] * (&pix.x)[ic];
                }
              }
            }
            feats.push_back(acc);
          } else {
            par.clear();
            coef.clear();
            for (int fy = 0; fy < f.size; ++fy) {
              for (int fx = 0; fx < f.size; ++fx) {
                int px = ox * bank.stride + fx, py = oy * bank.stride + fy;
                const Vec3<Var>& pix = patch[py * k + px];
                if (f.per_channel) {
                  par.push_back((&pix.x)[c].id);
                  coef.push_back(f.w[fy * f.size + fx]);
                } else {
                  for (int ic = 0; ic < 3; ++ic) {
                    par.push_back((&pix.x)[ic].id);
                    coef.push_back(f.w[(fy * f.size + fx) * 3 + ic]);
                  }
                }
              }
            }
            feats.push_back(ctx.tape->record_affine_const(
                par.data(), coef.data(), int32_t(par.size()), 0.0));
          }
        }
      }
    }
  }
  return feats;
}

// Squared feature distance between a rendered patch (differentiable) and a
// fixed target patch. Gradient flows only through the rendered side.
template <class S>
S perceptual_loss(EvalCtx<S>& ctx, const std::vector<Vec3<S>>& rendered,
                  const std::vector<Vec3<double>>& target, int k,
                  const FilterBank& bank) {
  std::vector<S> fr = extract_features(ctx, rendered, k, bank);
  EvalCtx<double> dctx;
  std::vector<double> ft = extract_features(dctx, target, k, bank);
  if (fr.size() != ft.size())
    throw InvariantError("perceptual_loss: feature dimension mismatch");
  S loss = fr[0] * 0.0;
  for (size_t i = 0; i < fr.size(); ++i) {
    S d = fr[i] - ft[i];
    loss = loss + d * d;
  }
  return loss;
}

// Precomputed external feature maps (f32 raw + JSON sidecar) can stand in
// for the bank on offline comparisons; training always uses the bank since
// the rendered side must be recomputed every step.
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;  // channel-major rows
};

// ============================================================================
// Final loss
// ============================================================================

template <class S>
S total_loss(const S& recon, const S& ss, const S& pd, double lambda_ss,
             double lambda_pd) {
  return recon + ss * lambda_ss + pd * lambda_pd;
}

}  // namespace sderf
