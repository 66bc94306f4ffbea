// Copyright (c) 2026 sparsederf authors
// SPDX-License-Identifier: Apache-2.0
//
// Camera-motion blur kernels. Both kernels map one target ray to n rays plus
// softmax composition weights. DSK deforms ray origins and pixel endpoints
// per pixel; RBK applies per-view rigid screw motions shared by all pixels.

#pragma once

#include <atomic>
#include <vector>

#include "sparsederf/field.hpp"
#include "sparsederf/geometry.hpp"

namespace sderf {

enum class KernelType { None, Dsk, Rbk };

struct KernelConfig {
  KernelType type = KernelType::None;
  int n = 5;
  int embed_dim = 32;
  int hidden = 64;
  int layers = 3;
  double chi_window = 10.0;  // DSK seed offsets start inside this pixel window

  MlpArch dsk_arch() const {
    return MlpArch{embed_dim + 4, hidden, layers, 6};
  }
  MlpArch rbk_arch() const {
    return MlpArch{embed_dim, hidden, layers, (n - 1) * 6 + n};
  }
};

// Parameter block offsets for the kernel pieces.
struct KernelOffsets {
  int32_t embed = -1;   // n_views * embed_dim
  int32_t mlp = -1;     // kernel MLP
  int32_t chi = -1;     // DSK only: n * 2 canonical pixel offsets
};

template <class S>
struct KernelRays {
  std::vector<Ray<S>> rays;
  std::vector<S> weights;  // post-softmax, sum exactly 1 up to roundoff
};

// Initialize kernel parameters in place. The MLP head is zeroed so every
// kernel starts as the identity (all rays coincide, uniform weights); DSK
// seed offsets start uniformly inside the chi window around the pixel.
inline void init_kernel(double* embed, double* mlp, double* chi,
                        const KernelConfig& cfg, int n_views, Rng rng) {
  if (cfg.type == KernelType::None) return;
  for (int i = 0; i < n_views * cfg.embed_dim; ++i)
    embed[i] = 0.1 * rng.normal();
  MlpArch arch =
      cfg.type == KernelType::Dsk ? cfg.dsk_arch() : cfg.rbk_arch();
  init_mlp(mlp, arch, rng.fork(1), true);
  if (cfg.type == KernelType::Dsk) {
    double half = 0.5 * cfg.chi_window;
    Rng cr = rng.fork(2);
    for (int i = 0; i < 2 * cfg.n; ++i) chi[i] = cr.uniform(-half, half);
  }
}

// ============================================================================
// Small generic helpers
// ============================================================================

// View a contiguous parameter range as a block.
inline Block<double> param_block(EvalCtx<double>& ctx, int32_t off, int n) {
  Block<double> b;
  b.n = n;
  for (int i = 0; i < n; ++i) b.v[i] = ctx.params[off + i];
  return b;
}
inline Block<Var> param_block(EvalCtx<Var>& ctx, int32_t off, int n) {
  return Block<Var>{ctx.tape, off, n};
}

// Assemble a small contiguous block from mixed constants and scalars.
template <class S>
struct BlockBuilder;

template <>
struct BlockBuilder<double> {
  Block<double> b;
  explicit BlockBuilder(EvalCtx<double>&) { b.n = 0; }
  void push_const(double v) { b.v[b.n++] = v; }
  void push(double x) { b.v[b.n++] = x; }
  Block<double> done() { return b; }
};

template <>
struct BlockBuilder<Var> {
  Tape* tape;
  Block<Var> b;
  explicit BlockBuilder(EvalCtx<Var>& ctx) : tape(ctx.tape) {
    b = {tape, tape->size(), 0};
  }
  void push_const(double v) {
    tape->constant(v);
    b.n++;
  }
  void push(const Var& x) {
    tape->copy(x);
    b.n++;
  }
  Block<Var> done() { return b; }
};

template <class S>
inline Ray<S> to_scalar_ray(EvalCtx<S>& ctx, const Rayd& r) {
  if constexpr (std::is_same_v<S, double>) {
    (void)ctx;
    return r;
  } else {
    Tape* t = ctx.tape;
    return Ray<Var>{{t->constant(r.o.x), t->constant(r.o.y),
                     t->constant(r.o.z)},
                    {t->constant(r.d.x), t->constant(r.d.y),
                     t->constant(r.d.z)}};
  }
}

// Numerically shifted softmax; the shift is the max logit treated as a
// constant, which leaves both values and gradients exact.
template <class S>
std::vector<S> softmax(const std::vector<S>& logits) {
  using std::exp;
  double mx = val_of(logits[0]);
  for (const S& z : logits) mx = std::max(mx, val_of(z));
  std::vector<S> e;
  e.reserve(logits.size());
  S denom = logits[0] * 0.0;
  for (const S& z : logits) {
    S ez = exp(z - mx);
    e.push_back(ez);
    denom = denom + ez;
  }
  for (S& ez : e) ez = ez / denom;
  return e;
}

// ============================================================================
// DSK: deformable sparse kernel
// ============================================================================

// Per-ray transform. The MLP sees [embedding | pixel (normalized) | chi_q]
// and yields an origin offset, an endpoint-pixel offset, and a weight logit.
// The endpoint pixel is chi_q + delta_vT away from the target pixel; its ray
// direction is re-derived through the intrinsics.
template <class S>
KernelRays<S> dsk_transform(EvalCtx<S>& ctx, const KernelConfig& cfg,
                            const KernelOffsets& off, int view,
                            const Pose& pose, const Intrinsics& intr,
                            const Vec2d& pixel) {
  MlpArch arch = cfg.dsk_arch();
  Block<S> embed = param_block(ctx, off.embed + view * cfg.embed_dim,
                               cfg.embed_dim);
  KernelRays<S> out;
  std::vector<S> logits;
  for (int q = 0; q < cfg.n; ++q) {
    Block<S> chi = param_block(ctx, off.chi + 2 * q, 2);
    BlockBuilder<S> bb(ctx);
    bb.push_const(pixel.x / intr.width);
    bb.push_const(pixel.y / intr.height);
    bb.push(chi.get(0));
    bb.push(chi.get(1));
    Block<S> tail = bb.done();
    Block<S> y = [&] {
      if constexpr (std::is_same_v<S, double>) {
        Block<double> in;
        in.n = 0;
        for (int i = 0; i < embed.n; ++i) in.v[in.n++] = embed.v[i];
        for (int i = 0; i < tail.n; ++i) in.v[in.n++] = tail.v[i];
        return mlp_eval(ctx, arch, off.mlp, in);
      } else {
        // First layer consumes the two ranges; subsequent layers are dense.
        Tape* t = ctx.tape;
        int32_t w = off.mlp;
        Block<Var> h{t, t->size(), arch.hidden};
        int k = arch.in + 1;
        for (int r = 0; r < arch.hidden; ++r) {
          t->record_affine2(embed.start, embed.n, tail.start, tail.n,
                            w + r * k, Act::Relu);
        }
        w += layer_param_count(arch.in, arch.hidden);
        int in_n = arch.hidden;
        for (int l = 1; l < arch.layers; ++l) {
          h = dense(ctx, h, arch.hidden, w, Act::Relu);
          w += layer_param_count(in_n, arch.hidden);
        }
        return dense(ctx, h, arch.out, w, Act::None);
      }
    }();

    Vec3<S> dvo{y.get(0), y.get(1), y.get(2)};
    Vec2<S> dvt{y.get(3), y.get(4)};
    logits.push_back(y.get(5));

    Vec2<S> endpoint{chi.get(0) + dvt.x + pixel.x,
                     chi.get(1) + dvt.y + pixel.y};
    Ray<S> base = ray_through_pixel(intr, pose, endpoint);
    out.rays.push_back(Ray<S>{base.o + dvo, base.d});
  }
  out.weights = softmax(logits);
  return out;
}

// ============================================================================
// RBK: rigid blur kernel
// ============================================================================

template <class S>
struct RbkForward {
  std::vector<ScrewAxis<S>> screws;  // screws[0] is the identity anchor
  std::vector<S> weights;
};

// One forward pass per view: n-1 screws plus n weight logits. The first ray
// is anchored to the identity so the sharp ray always contributes.
template <class S>
RbkForward<S> rbk_forward(EvalCtx<S>& ctx, const KernelConfig& cfg,
                          const KernelOffsets& off, int view) {
  MlpArch arch = cfg.rbk_arch();
  Block<S> embed = param_block(ctx, off.embed + view * cfg.embed_dim,
                               cfg.embed_dim);
  Block<S> y = mlp_eval(ctx, arch, off.mlp, embed);

  RbkForward<S> out;
  S zero = y.get(0) * 0.0;
  out.screws.push_back(ScrewAxis<S>{{zero, zero, zero}, {zero, zero, zero}});
  for (int q = 1; q < cfg.n; ++q) {
    int b = 6 * (q - 1);
    out.screws.push_back(ScrewAxis<S>{{y.get(b), y.get(b + 1), y.get(b + 2)},
                                      {y.get(b + 3), y.get(b + 4),
                                       y.get(b + 5)}});
  }
  std::vector<S> logits;
  for (int q = 0; q < cfg.n; ++q) logits.push_back(y.get(6 * (cfg.n - 1) + q));
  out.weights = softmax(logits);
  return out;
}

template <class S>
KernelRays<S> rbk_transform(EvalCtx<S>& ctx, const RbkForward<S>& fwd,
                            const Ray<S>& ray) {
  (void)ctx;
  KernelRays<S> out;
  out.weights = fwd.weights;
  out.rays.reserve(fwd.screws.size());
  for (const auto& s : fwd.screws) out.rays.push_back(apply_screw(s, ray));
  return out;
}

// ============================================================================
// Composition (Eq. of the blurred color) and hidden-ray patches
// ============================================================================

// Call counter backing the "evaluation never composes blur" invariant test.
inline std::atomic<uint64_t>& compose_blur_calls() {
  static std::atomic<uint64_t> calls{0};
  return calls;
}

template <class S>
Vec3<S> compose_blur(const std::vector<Vec3<S>>& colors,
                     const std::vector<S>& weights) {
  compose_blur_calls().fetch_add(1, std::memory_order_relaxed);
  if (colors.empty() || colors.size() != weights.size())
    throw InvariantError("compose_blur: colors/weights size mismatch");
  double wsum = 0.0;
  for (const S& w : weights) wsum += val_of(w);
  if (std::abs(wsum - 1.0) > 1e-9)
    throw InvariantError("compose_blur: weights do not sum to 1");
  Vec3<S> acc = colors[0] * weights[0];
  for (size_t q = 1; q < colors.size(); ++q)
    acc = acc + colors[q] * weights[q];
  return acc;
}

// Kernel-transformed ray patches ("hidden rays") for a k x k pixel rect of a
// training view: n patches, each the q-th transform of every pixel's ray.
template <class S>
struct RayPatch {
  int k = 0;
  std::vector<Ray<S>> rays;  // row-major k*k, world space
};

template <class S>
std::vector<RayPatch<S>> hidden_rays(EvalCtx<S>& ctx, const KernelConfig& cfg,
                                     const KernelOffsets& off, int view,
                                     const Pose& pose, const Intrinsics& intr,
                                     const PixelRect& rect) {
  std::vector<RayPatch<S>> patches(cfg.n);
  for (auto& p : patches) {
    p.k = rect.k;
    p.rays.reserve(size_t(rect.k) * rect.k);
  }
  RbkForward<S> rbk;
  if (cfg.type == KernelType::Rbk) rbk = rbk_forward(ctx, cfg, off, view);
  for (int dy = 0; dy < rect.k; ++dy) {
    for (int dx = 0; dx < rect.k; ++dx) {
      int px = rect.x0 + dx, py = rect.y0 + dy;
      Rayd wray = camera_ray(intr, pose, px, py);
      KernelRays<S> kr;
      switch (cfg.type) {
        case KernelType::None: {
          Ray<S> r = to_scalar_ray(ctx, wray);
          for (int q = 0; q < cfg.n; ++q) kr.rays.push_back(r);
          break;
        }
        case KernelType::Dsk:
          kr = dsk_transform(ctx, cfg, off, view, pose, intr,
                             Vec2d{double(px), double(py)});
          break;
        case KernelType::Rbk:
          kr = rbk_transform(ctx, rbk, to_scalar_ray(ctx, wray));
          break;
      }
      for (int q = 0; q < cfg.n; ++q) patches[q].rays.push_back(kr.rays[q]);
    }
  }
  return patches;
}

}  // namespace sderf
