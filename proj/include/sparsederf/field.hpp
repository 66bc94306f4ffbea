// Copyright (c) 2026 sparsederf authors
// SPDX-License-Identifier: Apache-2.0
//
// Positional encoding and the MLP radiance field. All forward code is
// generic over the scalar: with S = double it evaluates directly, with
// S = Var it records fused layer rows on the tape. On the Var path
// activations of a layer occupy consecutive node ids, which the fused
// affine ops require.

#pragma once

#include <array>
#include <vector>

#include "sparsederf/common.hpp"
#include "sparsederf/params.hpp"
#include "sparsederf/tape.hpp"
#include "sparsederf/vec.hpp"

namespace sderf {

// A contiguous group of activations. For doubles it is a stack buffer; for
// tape variables it is an id range.
inline constexpr int kMaxBlockWidth = 256;

template <class S>
struct Block;

template <>
struct Block<double> {
  std::array<double, kMaxBlockWidth> v;
  int n = 0;
  double get(int i) const { return v[i]; }
};

template <>
struct Block<Var> {
  Tape* tape = nullptr;
  int32_t start = 0;
  int n = 0;
  Var get(int i) const { return Var(tape, start + i); }
};

// Evaluation context: parameter values for the plain path, the tape for the
// differentiable path (parameters already recorded as nodes [0, P)).
template <class S>
struct EvalCtx;

template <>
struct EvalCtx<double> {
  const double* params = nullptr;
};

template <>
struct EvalCtx<Var> {
  Tape* tape = nullptr;
};

// ============================================================================
// Positional encoding: [x, sin(2^0 pi x), cos(2^0 pi x), ...] per frequency,
// all dims batched per frequency (sin of each dim, then cos of each dim).
// ============================================================================

inline int encoding_dim(int dims, int m) { return dims + 2 * dims * m; }

inline Block<double> encode(EvalCtx<double>&, const Vec3<double>& p, int m) {
  Block<double> out;
  out.v[0] = p.x;
  out.v[1] = p.y;
  out.v[2] = p.z;
  int n = 3;
  double freq = M_PI;
  for (int f = 0; f < m; ++f, freq *= 2.0) {
    out.v[n++] = std::sin(freq * p.x);
    out.v[n++] = std::sin(freq * p.y);
    out.v[n++] = std::sin(freq * p.z);
    out.v[n++] = std::cos(freq * p.x);
    out.v[n++] = std::cos(freq * p.y);
    out.v[n++] = std::cos(freq * p.z);
  }
  out.n = n;
  return out;
}

inline Block<Var> encode(EvalCtx<Var>& ctx, const Vec3<Var>& p, int m) {
  Tape* t = ctx.tape;
  Block<Var> out{t, t->size(), encoding_dim(3, m)};
  t->copy(p.x);
  t->copy(p.y);
  t->copy(p.z);
  double freq = M_PI;
  for (int f = 0; f < m; ++f, freq *= 2.0) {
    sin_c(p.x, freq);
    sin_c(p.y, freq);
    sin_c(p.z, freq);
    cos_c(p.x, freq);
    cos_c(p.y, freq);
    cos_c(p.z, freq);
  }
  return out;
}

// ============================================================================
// Dense layers over blocks. Weight row r of a layer with k inputs lives at
// param offset `w0 + r * (k + 1)`: k weights then the bias.
// ============================================================================

inline int layer_param_count(int in, int out) { return out * (in + 1); }

inline Block<double> dense(EvalCtx<double>& ctx, const Block<double>& in,
                           int out, int32_t w0, Act act) {
  Block<double> o;
  o.n = out;
  const int k = in.n;
  for (int r = 0; r < out; ++r) {
    const double* w = ctx.params + w0 + r * (k + 1);
    double z = w[k];
    for (int i = 0; i < k; ++i) z += in.v[i] * w[i];
    switch (act) {
      case Act::None:
        break;
      case Act::Relu:
        z = z > 0.0 ? z : 0.0;
        break;
      case Act::Sigmoid:
        z = detail::stable_sigmoid(z);
        break;
      case Act::Softplus:
        z = detail::stable_softplus(z);
        break;
    }
    o.v[r] = z;
  }
  return o;
}

inline Block<Var> dense(EvalCtx<Var>& ctx, const Block<Var>& in, int out,
                        int32_t w0, Act act) {
  Tape* t = ctx.tape;
  Block<Var> o{t, t->size(), out};
  const int k = in.n;
  for (int r = 0; r < out; ++r) {
    t->record_affine(in.start, k, w0 + r * (k + 1), act);
  }
  return o;
}

// Dense layer whose input is the concatenation of two blocks.
inline Block<double> dense2(EvalCtx<double>& ctx, const Block<double>& in1,
                            const Block<double>& in2, int out, int32_t w0,
                            Act act) {
  Block<double> cat;
  cat.n = in1.n + in2.n;
  for (int i = 0; i < in1.n; ++i) cat.v[i] = in1.v[i];
  for (int i = 0; i < in2.n; ++i) cat.v[in1.n + i] = in2.v[i];
  return dense(ctx, cat, out, w0, act);
}

inline Block<Var> dense2(EvalCtx<Var>& ctx, const Block<Var>& in1,
                         const Block<Var>& in2, int out, int32_t w0, Act act) {
  Tape* t = ctx.tape;
  Block<Var> o{t, t->size(), out};
  const int k = in1.n + in2.n + 1;
  for (int r = 0; r < out; ++r) {
    t->record_affine2(in1.start, in1.n, in2.start, in2.n, w0 + r * k, act);
  }
  return o;
}

// ============================================================================
// Radiance field: trunk -> density head (softplus), trunk + encoded
// direction -> color head (sigmoid). Density never sees the direction.
// ============================================================================

struct FieldArch {
  int pos_freqs = 10;
  int dir_freqs = 4;
  int width = 64;
  int depth = 4;
  int color_hidden = 32;

  int trunk_in() const { return encoding_dim(3, pos_freqs); }
  int dir_dim() const { return encoding_dim(3, dir_freqs); }

  int trunk_param_count() const {
    int n = 0;
    int in = trunk_in();
    for (int l = 0; l < depth; ++l) {
      n += layer_param_count(in, width);
      in = width;
    }
    return n;
  }

  // Offset of the density-head row within the network's parameter block.
  int density_head_offset() const { return trunk_param_count(); }

  int param_count() const {
    return trunk_param_count() + layer_param_count(width, 1) +
           layer_param_count(width + dir_dim(), color_hidden) +
           layer_param_count(color_hidden, 3);
  }
};

template <class S>
struct FieldOutput {
  S sigma;
  Vec3<S> rgb;
};

// Evaluate the field at one point. `dir_enc` is the encoded (unit) view
// direction, shared by all samples of a ray. `base` is the parameter offset
// of this network's block.
template <class S>
FieldOutput<S> field_eval(EvalCtx<S>& ctx, const FieldArch& arch,
                          int32_t base, const Vec3<S>& pos,
                          const Block<S>& dir_enc) {
  Block<S> h = encode(ctx, pos, arch.pos_freqs);
  int32_t w = base;
  int in = arch.trunk_in();
  for (int l = 0; l < arch.depth; ++l) {
    Block<S> nh = dense(ctx, h, arch.width, w, Act::Relu);
    w += layer_param_count(in, arch.width);
    h = nh;
    in = arch.width;
  }
  Block<S> sig = dense(ctx, h, 1, w, Act::Softplus);
  w += layer_param_count(arch.width, 1);
  Block<S> ch = dense2(ctx, h, dir_enc, arch.color_hidden, w, Act::Relu);
  w += layer_param_count(arch.width + dir_enc.n, arch.color_hidden);
  Block<S> rgb = dense(ctx, ch, 3, w, Act::Sigmoid);
  return {sig.get(0), {rgb.get(0), rgb.get(1), rgb.get(2)}};
}

template <class S>
Block<S> encode_direction(EvalCtx<S>& ctx, const FieldArch& arch,
                          const Vec3<S>& unit_dir) {
  return encode(ctx, unit_dir, arch.dir_freqs);
}

// Kaiming-style uniform fan-in init, biases zero.
inline void init_dense(double* p, int in, int out, Rng& rng) {
  double s = std::sqrt(6.0 / in);
  for (int r = 0; r < out; ++r) {
    for (int i = 0; i < in; ++i) p[r * (in + 1) + i] = rng.uniform(-s, s);
    p[r * (in + 1) + in] = 0.0;
  }
}

inline void init_field(double* p, const FieldArch& arch, Rng rng) {
  int in = arch.trunk_in();
  int32_t w = 0;
  for (int l = 0; l < arch.depth; ++l) {
    init_dense(p + w, in, arch.width, rng);
    w += layer_param_count(in, arch.width);
    in = arch.width;
  }
  init_dense(p + w, arch.width, 1, rng);
  w += layer_param_count(arch.width, 1);
  init_dense(p + w, arch.width + arch.dir_dim(), arch.color_hidden, rng);
  w += layer_param_count(arch.width + arch.dir_dim(), arch.color_hidden);
  init_dense(p + w, arch.color_hidden, 3, rng);
}

// Generic MLP used by the blur kernels: plain relu stack with a linear head.
struct MlpArch {
  int in = 0;
  int hidden = 64;
  int layers = 3;  // hidden layers; a final linear head follows
  int out = 0;

  int param_count() const {
    int n = 0, i = in;
    for (int l = 0; l < layers; ++l) {
      n += layer_param_count(i, hidden);
      i = hidden;
    }
    n += layer_param_count(i, out);
    return n;
  }
};

template <class S>
Block<S> mlp_eval(EvalCtx<S>& ctx, const MlpArch& arch, int32_t base,
                  const Block<S>& in) {
  Block<S> h = in;
  int32_t w = base;
  int i = arch.in;
  for (int l = 0; l < arch.layers; ++l) {
    Block<S> nh = dense(ctx, h, arch.hidden, w, Act::Relu);
    w += layer_param_count(i, arch.hidden);
    h = nh;
    i = arch.hidden;
  }
  return dense(ctx, h, arch.out, w, Act::None);
}

// Zero final layer: the kernels start as the identity transform.
inline void init_mlp(double* p, const MlpArch& arch, Rng rng,
                     bool zero_head) {
  int i = arch.in;
  int32_t w = 0;
  for (int l = 0; l < arch.layers; ++l) {
    init_dense(p + w, i, arch.hidden, rng);
    w += layer_param_count(i, arch.hidden);
    i = arch.hidden;
  }
  if (zero_head) {
    for (int j = 0; j < layer_param_count(i, arch.out); ++j) p[w + j] = 0.0;
  } else {
    init_dense(p + w, i, arch.out, rng);
  }
}

}  // namespace sderf
