// Copyright (c) 2026 sparsederf authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode autodiff on a flat tape of scalar nodes.

#pragma once

#include <bit>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sparsederf/common.hpp"

namespace sderf {

// Node opcodes. Most are scalar primitives; the Dot/Affine family records a
// whole dot product or dense layer row as one node over contiguous id ranges,
// which keeps tape size (and so training cost) tractable. Gradients of the
// fused forms are definitionally identical to the composition of primitives.
enum class Op : uint8_t {
  Input,
  Const,
  Copy,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  Exp,
  Log,
  Sqrt,
  Sin,
  Cos,
  Relu,
  Sigmoid,
  Softplus,
  AddC,   // a + c
  MulC,   // a * c
  SubCR,  // c - a
  DivCR,  // c / a
  PowC,   // a ^ c
  MinC,   // min(a, c)
  MaxC,   // max(a, c)
  SinC,   // sin(c * a)
  CosC,   // cos(c * a)
  GradScale,  // identity forward; backward multiplies by factor c
  Dot,        // sum_i val[a+i] * val[b+i], i < k
  Affine,     // sum_i val[a+i] * val[b+i] + val[b+k], i < k
  AffineRelu,
  AffineSigmoid,
  AffineSoftplus,
  Affine2,  // two input ranges: a/k and (x2, k2) packed in c; weights at b
  Affine2Relu,
  Affine2Sigmoid,
  Affine2Softplus,
  AffineConst,  // sum_i coef[i] * val[par[i]] + c with pooled parents/coefs
};

enum class Act : uint8_t { None, Relu, Sigmoid, Softplus };

class Tape;

struct Var {
  Tape* tape = nullptr;
  int32_t id = -1;

  Var() = default;
  Var(Tape* t, int32_t i) : tape(t), id(i) {}
  inline double value() const;
};

namespace detail {

inline double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

inline double stable_softplus(double z) {
  return z > 30.0 ? z : std::log1p(std::exp(z));
}

struct Range2 {
  int32_t start;
  int32_t count;
};

inline double pack_range(int32_t start, int32_t count) {
  uint64_t u = (uint64_t(uint32_t(start)) << 32) | uint64_t(uint32_t(count));
  return std::bit_cast<double>(u);
}

inline Range2 unpack_range(double d) {
  uint64_t u = std::bit_cast<uint64_t>(d);
  return {int32_t(uint32_t(u >> 32)), int32_t(uint32_t(u))};
}

}  // namespace detail

class Tape {
 public:
  void reset() {
    val_.clear();
    adj_.clear();
    op_.clear();
    a_.clear();
    b_.clear();
    k_.clear();
    c_.clear();
    cpar_.clear();
    ccoef_.clear();
  }

  void reserve(size_t n) {
    val_.reserve(n);
    adj_.reserve(n);
    op_.reserve(n);
    a_.reserve(n);
    b_.reserve(n);
    k_.reserve(n);
    c_.reserve(n);
  }

  int32_t size() const { return int32_t(val_.size()); }
  double value(int32_t id) const { return val_[id]; }

  Var input(double v) { return Var(this, push(Op::Input, -1, -1, 0, 0.0, v)); }

  // Record n consecutive Input nodes; returns the id of the first. Used to
  // place the parameter vector at the head of the tape so that after
  // backward() the adjoint prefix is the parameter gradient.
  int32_t inputs_bulk(const double* v, int32_t n) {
    int32_t start = size();
    for (int32_t i = 0; i < n; ++i) push(Op::Input, -1, -1, 0, 0.0, v[i]);
    return start;
  }

  Var constant(double v) {
    return Var(this, push(Op::Const, -1, -1, 0, 0.0, v));
  }

  Var unary(Op op, int32_t a, double value, double aux = 0.0) {
    return Var(this, push(op, a, -1, 0, aux, value));
  }

  Var binary(Op op, int32_t a, int32_t b, double value) {
    return Var(this, push(op, a, b, 0, 0.0, value));
  }

  Var grad_scale(const Var& x, double factor) {
    return Var(this, push(Op::GradScale, x.id, -1, 0, factor, val_[x.id]));
  }

  Var copy(const Var& x) {
    return Var(this, push(Op::Copy, x.id, -1, 0, 0.0, val_[x.id]));
  }

  Var record_dot(int32_t xs, int32_t ys, int32_t k) {
    double s = 0.0;
    const double* x = &val_[xs];
    const double* y = &val_[ys];
    for (int32_t i = 0; i < k; ++i) s += x[i] * y[i];
    return Var(this, push(Op::Dot, xs, ys, k, 0.0, s));
  }

  // Dense layer row: k inputs at xs, weights [ws, ws+k) plus bias at ws+k.
  Var record_affine(int32_t xs, int32_t k, int32_t ws, Act act) {
    double z = val_[ws + k];
    const double* x = &val_[xs];
    const double* w = &val_[ws];
    for (int32_t i = 0; i < k; ++i) z += x[i] * w[i];
    return Var(this, push(affine_op(act, false), xs, ws, k, 0.0,
                          apply_act(act, z)));
  }

  // Same, with the input split over two ranges (e.g. features | encoding).
  // Weight row layout: [w1(k1), w2(k2), bias] at ws.
  Var record_affine2(int32_t x1s, int32_t k1, int32_t x2s, int32_t k2,
                     int32_t ws, Act act) {
    double z = val_[ws + k1 + k2];
    const double* x1 = &val_[x1s];
    const double* w1 = &val_[ws];
    for (int32_t i = 0; i < k1; ++i) z += x1[i] * w1[i];
    const double* x2 = &val_[x2s];
    const double* w2 = &val_[ws + k1];
    for (int32_t i = 0; i < k2; ++i) z += x2[i] * w2[i];
    return Var(this, push(affine_op(act, true), x1s, ws, k1,
                          detail::pack_range(x2s, k2), apply_act(act, z)));
  }

  // Linear combination with constant coefficients over arbitrary parents.
  Var record_affine_const(const int32_t* par, const double* coef, int32_t k,
                          double bias) {
    double s = bias;
    int32_t off = int32_t(cpar_.size());
    for (int32_t i = 0; i < k; ++i) {
      s += coef[i] * val_[par[i]];
      cpar_.push_back(par[i]);
      ccoef_.push_back(coef[i]);
    }
    return Var(this, push(Op::AffineConst, off, -1, k, bias, s));
  }

  // Reverse sweep from root. Adjoints of all nodes <= root.id are filled;
  // parameter gradients live in the adjoint prefix (see inputs_bulk).
  void backward(const Var& root) {
    assert(root.tape == this && root.id >= 0);
    adj_.assign(val_.size(), 0.0);
    adj_[root.id] = 1.0;
    for (int32_t i = root.id; i >= 0; --i) {
      double ay = adj_[i];
      if (ay == 0.0) continue;
      if (!std::isfinite(ay)) {
        throw NumericError("non-finite adjoint at node " + std::to_string(i) +
                           " (op " + std::to_string(int(op_[i])) + ")");
      }
      step_back(i, ay);
    }
  }

  double grad(const Var& x) const { return adj_[x.id]; }
  double grad(int32_t id) const { return adj_[id]; }
  const double* adjoints() const { return adj_.data(); }

 private:
  static Op affine_op(Act act, bool two) {
    switch (act) {
      case Act::None:
        return two ? Op::Affine2 : Op::Affine;
      case Act::Relu:
        return two ? Op::Affine2Relu : Op::AffineRelu;
      case Act::Sigmoid:
        return two ? Op::Affine2Sigmoid : Op::AffineSigmoid;
      case Act::Softplus:
        return two ? Op::Affine2Softplus : Op::AffineSoftplus;
    }
    return Op::Affine;
  }

  static double apply_act(Act act, double z) {
    switch (act) {
      case Act::None:
        return z;
      case Act::Relu:
        return z > 0.0 ? z : 0.0;
      case Act::Sigmoid:
        return detail::stable_sigmoid(z);
      case Act::Softplus:
        return detail::stable_softplus(z);
    }
    return z;
  }

  int32_t push(Op op, int32_t a, int32_t b, int32_t k, double c, double v) {
    if (!std::isfinite(v)) {
      throw NumericError("non-finite value recorded (op " +
                         std::to_string(int(op)) + ")");
    }
    int32_t id = size();
    assert(a < id && b < id);
    val_.push_back(v);
    op_.push_back(op);
    a_.push_back(a);
    b_.push_back(b);
    k_.push_back(k);
    c_.push_back(c);
    return id;
  }

  // Gradient of the activation recovered from the node's own output value;
  // none of the fused forms need the pre-activation stored.
  static double act_grad_from_value(Act act, double val) {
    switch (act) {
      case Act::None:
        return 1.0;
      case Act::Relu:
        return val > 0.0 ? 1.0 : 0.0;
      case Act::Sigmoid:
        return val * (1.0 - val);
      case Act::Softplus:
        return 1.0 - std::exp(-val);
    }
    return 1.0;
  }

  void back_affine(int32_t i, double g, Act act) {
    g *= act_grad_from_value(act, val_[i]);
    if (g == 0.0) return;
    int32_t xs = a_[i], ws = b_[i], k = k_[i];
    const double* x = &val_[xs];
    const double* w = &val_[ws];
    double* ax = &adj_[xs];
    double* aw = &adj_[ws];
    for (int32_t j = 0; j < k; ++j) {
      ax[j] += g * w[j];
      aw[j] += g * x[j];
    }
    adj_[ws + k] += g;
  }

  void back_affine2(int32_t i, double g, Act act) {
    g *= act_grad_from_value(act, val_[i]);
    if (g == 0.0) return;
    int32_t x1s = a_[i], ws = b_[i], k1 = k_[i];
    detail::Range2 r2 = detail::unpack_range(c_[i]);
    const double* x1 = &val_[x1s];
    const double* w1 = &val_[ws];
    double* ax1 = &adj_[x1s];
    double* aw1 = &adj_[ws];
    for (int32_t j = 0; j < k1; ++j) {
      ax1[j] += g * w1[j];
      aw1[j] += g * x1[j];
    }
    const double* x2 = &val_[r2.start];
    const double* w2 = &val_[ws + k1];
    double* ax2 = &adj_[r2.start];
    double* aw2 = &adj_[ws + k1];
    for (int32_t j = 0; j < r2.count; ++j) {
      ax2[j] += g * w2[j];
      aw2[j] += g * x2[j];
    }
    adj_[ws + k1 + r2.count] += g;
  }

  void step_back(int32_t i, double ay) {
    const int32_t a = a_[i];
    const int32_t b = b_[i];
    switch (op_[i]) {
      case Op::Input:
      case Op::Const:
        break;
      case Op::Copy:
        adj_[a] += ay;
        break;
      case Op::Add:
        adj_[a] += ay;
        adj_[b] += ay;
        break;
      case Op::Sub:
        adj_[a] += ay;
        adj_[b] -= ay;
        break;
      case Op::Mul:
        adj_[a] += ay * val_[b];
        adj_[b] += ay * val_[a];
        break;
      case Op::Div:
        adj_[a] += ay / val_[b];
        adj_[b] -= ay * val_[i] / val_[b];
        break;
      case Op::Neg:
        adj_[a] -= ay;
        break;
      case Op::Exp:
        adj_[a] += ay * val_[i];
        break;
      case Op::Log:
        adj_[a] += ay / val_[a];
        break;
      case Op::Sqrt:
        adj_[a] += ay * 0.5 / val_[i];
        break;
      case Op::Sin:
        adj_[a] += ay * std::cos(val_[a]);
        break;
      case Op::Cos:
        adj_[a] -= ay * std::sin(val_[a]);
        break;
      case Op::Relu:
        if (val_[a] > 0.0) adj_[a] += ay;
        break;
      case Op::Sigmoid:
        adj_[a] += ay * val_[i] * (1.0 - val_[i]);
        break;
      case Op::Softplus:
        adj_[a] += ay * (1.0 - std::exp(-val_[i]));
        break;
      case Op::AddC:
        adj_[a] += ay;
        break;
      case Op::MulC:
        adj_[a] += ay * c_[i];
        break;
      case Op::SubCR:
        adj_[a] -= ay;
        break;
      case Op::DivCR:
        adj_[a] -= ay * val_[i] / val_[a];
        break;
      case Op::PowC:
        adj_[a] += ay * c_[i] * std::pow(val_[a], c_[i] - 1.0);
        break;
      case Op::MinC:
        if (val_[a] <= c_[i]) adj_[a] += ay;
        break;
      case Op::MaxC:
        if (val_[a] >= c_[i]) adj_[a] += ay;
        break;
      case Op::SinC:
        adj_[a] += ay * c_[i] * std::cos(c_[i] * val_[a]);
        break;
      case Op::CosC:
        adj_[a] -= ay * c_[i] * std::sin(c_[i] * val_[a]);
        break;
      case Op::GradScale:
        adj_[a] += ay * c_[i];
        break;
      case Op::Dot: {
        int32_t k = k_[i];
        const double* x = &val_[a];
        const double* y = &val_[b];
        double* ax = &adj_[a];
        double* ayv = &adj_[b];
        for (int32_t j = 0; j < k; ++j) {
          ax[j] += ay * y[j];
          ayv[j] += ay * x[j];
        }
        break;
      }
      case Op::Affine:
        back_affine(i, ay, Act::None);
        break;
      case Op::AffineRelu:
        back_affine(i, ay, Act::Relu);
        break;
      case Op::AffineSigmoid:
        back_affine(i, ay, Act::Sigmoid);
        break;
      case Op::AffineSoftplus:
        back_affine(i, ay, Act::Softplus);
        break;
      case Op::Affine2:
        back_affine2(i, ay, Act::None);
        break;
      case Op::Affine2Relu:
        back_affine2(i, ay, Act::Relu);
        break;
      case Op::Affine2Sigmoid:
        back_affine2(i, ay, Act::Sigmoid);
        break;
      case Op::Affine2Softplus:
        back_affine2(i, ay, Act::Softplus);
        break;
      case Op::AffineConst: {
        int32_t off = a_[i], k = k_[i];
        for (int32_t j = 0; j < k; ++j)
          adj_[cpar_[off + j]] += ay * ccoef_[off + j];
        break;
      }
    }
  }

  std::vector<double> val_;
  std::vector<double> adj_;
  std::vector<Op> op_;
  std::vector<int32_t> a_;
  std::vector<int32_t> b_;
  std::vector<int32_t> k_;
  std::vector<double> c_;
  std::vector<int32_t> cpar_;
  std::vector<double> ccoef_;
};

inline double Var::value() const { return tape->value(id); }

// ============================================================================
// Operator sugar. Free functions so that templated numeric code written for
// doubles (with `using std::exp;` etc. in scope) also compiles with Var.
// ============================================================================

inline Var operator+(const Var& a, const Var& b) {
  return a.tape->binary(Op::Add, a.id, b.id, a.value() + b.value());
}
inline Var operator-(const Var& a, const Var& b) {
  return a.tape->binary(Op::Sub, a.id, b.id, a.value() - b.value());
}
inline Var operator*(const Var& a, const Var& b) {
  return a.tape->binary(Op::Mul, a.id, b.id, a.value() * b.value());
}
inline Var operator/(const Var& a, const Var& b) {
  return a.tape->binary(Op::Div, a.id, b.id, a.value() / b.value());
}
inline Var operator-(const Var& a) {
  return a.tape->unary(Op::Neg, a.id, -a.value());
}

inline Var operator+(const Var& a, double c) {
  return a.tape->unary(Op::AddC, a.id, a.value() + c, c);
}
inline Var operator+(double c, const Var& a) { return a + c; }
inline Var operator-(const Var& a, double c) { return a + (-c); }
inline Var operator-(double c, const Var& a) {
  return a.tape->unary(Op::SubCR, a.id, c - a.value(), c);
}
inline Var operator*(const Var& a, double c) {
  return a.tape->unary(Op::MulC, a.id, a.value() * c, c);
}
inline Var operator*(double c, const Var& a) { return a * c; }
inline Var operator/(const Var& a, double c) { return a * (1.0 / c); }
inline Var operator/(double c, const Var& a) {
  return a.tape->unary(Op::DivCR, a.id, c / a.value(), c);
}

inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }
inline Var& operator-=(Var& a, const Var& b) { return a = a - b; }
inline Var& operator*=(Var& a, const Var& b) { return a = a * b; }
inline Var& operator+=(Var& a, double c) { return a = a + c; }
inline Var& operator*=(Var& a, double c) { return a = a * c; }

inline bool operator<(const Var& a, double c) { return a.value() < c; }
inline bool operator>(const Var& a, double c) { return a.value() > c; }

inline Var exp(const Var& a) {
  return a.tape->unary(Op::Exp, a.id, std::exp(a.value()));
}
inline Var log(const Var& a) {
  return a.tape->unary(Op::Log, a.id, std::log(a.value()));
}
inline Var sqrt(const Var& a) {
  return a.tape->unary(Op::Sqrt, a.id, std::sqrt(a.value()));
}
inline Var sin(const Var& a) {
  return a.tape->unary(Op::Sin, a.id, std::sin(a.value()));
}
inline Var cos(const Var& a) {
  return a.tape->unary(Op::Cos, a.id, std::cos(a.value()));
}
inline Var relu(const Var& a) {
  return a.tape->unary(Op::Relu, a.id, a.value() > 0.0 ? a.value() : 0.0);
}
inline Var sigmoid(const Var& a) {
  return a.tape->unary(Op::Sigmoid, a.id, detail::stable_sigmoid(a.value()));
}
inline Var softplus(const Var& a) {
  return a.tape->unary(Op::Softplus, a.id, detail::stable_softplus(a.value()));
}
inline Var pow(const Var& a, double c) {
  return a.tape->unary(Op::PowC, a.id, std::pow(a.value(), c), c);
}
inline Var min(const Var& a, double c) {
  return a.tape->unary(Op::MinC, a.id, a.value() <= c ? a.value() : c, c);
}
inline Var max(const Var& a, double c) {
  return a.tape->unary(Op::MaxC, a.id, a.value() >= c ? a.value() : c, c);
}
// sin(c*x) / cos(c*x) with constant frequency, used by positional encoding.
inline Var sin_c(const Var& a, double c) {
  return a.tape->unary(Op::SinC, a.id, std::sin(c * a.value()), c);
}
inline Var cos_c(const Var& a, double c) {
  return a.tape->unary(Op::CosC, a.id, std::cos(c * a.value()), c);
}
inline Var grad_scale(const Var& a, double factor) {
  return a.tape->grad_scale(a, factor);
}

// Double-path counterparts so generic code is written once.
inline double relu(double a) { return a > 0.0 ? a : 0.0; }
inline double sigmoid(double a) { return detail::stable_sigmoid(a); }
inline double softplus(double a) { return detail::stable_softplus(a); }
inline double sin_c(double a, double c) { return std::sin(c * a); }
inline double cos_c(double a, double c) { return std::cos(c * a); }
inline double grad_scale(double a, double /*factor*/) { return a; }

inline double val_of(double x) { return x; }
inline double val_of(const Var& x) { return x.value(); }

// Materialize a constant with the same scalar type as `like`. Lets generic
// geometry code inject fixed values (camera origins etc.) on either path.
inline double make_const(double /*like*/, double v) { return v; }
inline Var make_const(const Var& like, double v) {
  return like.tape->constant(v);
}

}  // namespace sderf
