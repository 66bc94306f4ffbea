// Copyright (c) 2026 sparsederf authors
// SPDX-License-Identifier: Apache-2.0
//
// Cameras, rays, rigid transforms, and the forward-facing NDC mapping.
// Everything ray-shaped is templated on the scalar so the blur kernels can
// push gradients through ray origins and directions.

#pragma once

#include <vector>

#include "sparsederf/common.hpp"
#include "sparsederf/tape.hpp"
#include "sparsederf/vec.hpp"

namespace sderf {

template <class S>
struct Ray {
  Vec3<S> o;
  Vec3<S> d;
};

using Rayd = Ray<double>;

// Camera-to-world pose. Camera looks along -z, y up, x right.
struct Pose {
  Mat3d R = Mat3d::identity();
  Vec3d t{};
};

struct Intrinsics {
  double focal = 0.0;
  int width = 0;
  int height = 0;
};

// k x k pixel rectangle with top-left corner (x0, y0).
struct PixelRect {
  int x0 = 0;
  int y0 = 0;
  int k = 0;
};

// ============================================================================
// Rotations and screws
// ============================================================================

template <class S>
inline Mat3<S> skew(const Vec3<S>& w) {
  Mat3<S> m;
  m.m[0][0] = S(0.0);
  m.m[0][1] = -w.z;
  m.m[0][2] = w.y;
  m.m[1][0] = w.z;
  m.m[1][1] = S(0.0);
  m.m[1][2] = -w.x;
  m.m[2][0] = -w.y;
  m.m[2][1] = w.x;
  m.m[2][2] = S(0.0);
  return m;
}

template <class S>
inline Mat3<S> add(const Mat3<S>& a, const Mat3<S>& b) {
  Mat3<S> r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r.m[i][j] = a.m[i][j] + b.m[i][j];
  return r;
}

template <class S, class T>
inline Mat3<S> scale(const Mat3<S>& a, const T& s) {
  Mat3<S> r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r.m[i][j] = a.m[i][j] * s;
  return r;
}

namespace detail {

// Entries of I + a [w] + b [w]^2 written out so no scalar-typed constants
// are needed; a and b may be plain doubles (Taylor branch) or S.
template <class S, class AB>
inline Mat3<S> rot_from_ab(const Vec3<S>& w, const AB& a, const AB& b) {
  Mat3<S> R;
  R.m[0][0] = 1.0 - b * (w.y * w.y + w.z * w.z);
  R.m[0][1] = b * (w.x * w.y) - a * w.z;
  R.m[0][2] = b * (w.x * w.z) + a * w.y;
  R.m[1][0] = b * (w.x * w.y) + a * w.z;
  R.m[1][1] = 1.0 - b * (w.x * w.x + w.z * w.z);
  R.m[1][2] = b * (w.y * w.z) - a * w.x;
  R.m[2][0] = b * (w.x * w.z) - a * w.y;
  R.m[2][1] = b * (w.y * w.z) + a * w.x;
  R.m[2][2] = 1.0 - b * (w.x * w.x + w.y * w.y);
  return R;
}

}  // namespace detail

// Axis-angle (unnormalized axis, angle = |w|) to rotation matrix.
// R = I + sin(t)/t [w] + (1-cos(t))/t^2 [w]^2, Taylor fallback near zero.
template <class S>
inline Mat3<S> rodrigues(const Vec3<S>& w) {
  S t2 = dot(w, w);
  if (val_of(t2) < 1e-16) {
    return detail::rot_from_ab(w, 1.0, 0.5);
  }
  using std::cos;
  using std::sin;
  using std::sqrt;
  S t = sqrt(t2);
  S a = sin(t) / t;
  S b = (1.0 - cos(t)) / t2;
  return detail::rot_from_ab(w, a, b);
}

// Screw motion: rotation axis r (angle = |r|) plus translation part v.
template <class S>
struct ScrewAxis {
  Vec3<S> r;
  Vec3<S> v;
};

// SE(3) exponential applied to a ray. The translation uses the standard
// closed form p = (I + (1-cos t)/t^2 [r] + (t - sin t)/t^3 [r]^2) v with the
// small-angle fallback p = v below t = 1e-8.
template <class S>
inline Ray<S> apply_screw(const ScrewAxis<S>& s, const Ray<S>& ray) {
  Mat3<S> R = rodrigues(s.r);
  Vec3<S> p;
  S t2 = dot(s.r, s.r);
  if (val_of(t2) < 1e-16) {
    p = s.v;
  } else {
    using std::cos;
    using std::sin;
    using std::sqrt;
    S t = sqrt(t2);
    Vec3<S> rv = cross(s.r, s.v);
    Vec3<S> rrv = cross(s.r, rv);
    p = s.v + rv * ((1.0 - cos(t)) / t2) + rrv * ((t - sin(t)) / (t2 * t));
  }
  return {R * ray.o + p, R * ray.d};
}

// ============================================================================
// Cameras
// ============================================================================

// Ray through pixel center (px + 0.5, py + 0.5). Direction is unnormalized
// (z = -1 in camera space) as the NDC mapping requires.
template <class S>
inline Ray<S> ray_through_pixel(const Intrinsics& intr, const Pose& pose,
                                const Vec2<S>& pixel) {
  S x = (pixel.x + (0.5 - 0.5 * intr.width)) * (1.0 / intr.focal);
  S y = (pixel.y + (0.5 - 0.5 * intr.height)) * (-1.0 / intr.focal);
  Vec3<S> d = pose.R.col(0) * x + pose.R.col(1) * y - pose.R.col(2);
  Vec3<S> o{make_const(x, pose.t.x), make_const(x, pose.t.y),
            make_const(x, pose.t.z)};
  return {o, d};
}

inline Rayd camera_ray(const Intrinsics& intr, const Pose& pose, int px,
                       int py) {
  return ray_through_pixel(intr, pose, Vec2d{double(px), double(py)});
}

// Forward-facing NDC reparameterization. The world frame is assumed oriented
// so cameras look roughly along -z. The origin is first advanced onto the
// near plane; after mapping, points along o' + t d' for t in [0, 1] sweep
// depth from the near plane (z' = -1) to infinity (z' = +1).
template <class S>
inline Ray<S> ndc_ray(const Ray<S>& ray, const Intrinsics& intr, double near) {
  if (val_of(ray.d.z) > -1e-12) {
    throw GeometryError(
        "ray parallel to image plane or pointing away, cannot map to NDC");
  }
  S tn = -(near + ray.o.z) / ray.d.z;
  Vec3<S> o = ray.o + ray.d * tn;
  if (val_of(o.z) >= 0.0) {
    throw GeometryError("ray origin maps behind the camera in NDC");
  }
  double sx = -intr.focal / (0.5 * intr.width);
  double sy = -intr.focal / (0.5 * intr.height);
  Vec3<S> op(sx * (o.x / o.z), sy * (o.y / o.z), 1.0 + (2.0 * near) / o.z);
  Vec3<S> dp(sx * (ray.d.x / ray.d.z - o.x / o.z),
             sy * (ray.d.y / ray.d.z - o.y / o.z), (-2.0 * near) / o.z);
  return {op, dp};
}

// Build a camera-to-world pose that looks from `eye` toward `target`.
inline Pose look_at(const Vec3d& eye, const Vec3d& target, const Vec3d& up) {
  Vec3d f = target - eye;
  if (norm(f) < 1e-12) throw GeometryError("look_at: eye equals target");
  Vec3d z = normalized(-f);
  Vec3d xr = cross(up, z);
  if (norm(xr) < 1e-9)
    throw GeometryError("look_at: up axis parallel to view direction");
  Vec3d x = normalized(xr);
  Vec3d y = cross(z, x);
  Pose p;
  for (int i = 0; i < 3; ++i) {
    p.R.m[i][0] = (&x.x)[i];
    p.R.m[i][1] = (&y.x)[i];
    p.R.m[i][2] = (&z.x)[i];
  }
  p.t = eye;
  return p;
}

// ============================================================================
// Pose statistics for unseen-view sampling
// ============================================================================

// Least-squares point closest to all central view axes. Solves the 3x3
// normal equations sum(I - d d^T) x = sum(I - d d^T) o.
inline Vec3d mean_focus_point(const std::vector<Pose>& poses) {
  if (poses.empty()) throw GeometryError("mean_focus_point: no poses");
  double A[3][3] = {};
  double rhs[3] = {};
  for (const Pose& p : poses) {
    Vec3d d = normalized(-p.R.col(2));
    double dd[3] = {d.x, d.y, d.z};
    double oo[3] = {p.t.x, p.t.y, p.t.z};
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        double m = (i == j ? 1.0 : 0.0) - dd[i] * dd[j];
        A[i][j] += m;
        rhs[i] += m * oo[j];
      }
    }
  }
  double det = A[0][0] * (A[1][1] * A[2][2] - A[1][2] * A[2][1]) -
               A[0][1] * (A[1][0] * A[2][2] - A[1][2] * A[2][0]) +
               A[0][2] * (A[1][0] * A[2][1] - A[1][1] * A[2][0]);
  if (std::abs(det) < 1e-12) {
    throw GeometryError("mean_focus_point: degenerate (parallel) view axes");
  }
  auto solve_col = [&](int c) {
    double M[3][3];
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) M[i][j] = (j == c) ? rhs[i] : A[i][j];
    return (M[0][0] * (M[1][1] * M[2][2] - M[1][2] * M[2][1]) -
            M[0][1] * (M[1][0] * M[2][2] - M[1][2] * M[2][0]) +
            M[0][2] * (M[1][0] * M[2][1] - M[1][1] * M[2][0])) /
           det;
  };
  return {solve_col(0), solve_col(1), solve_col(2)};
}

struct Box3 {
  Vec3d lo, hi;
};

// Axis-aligned camera-position box, padded by a fraction of its extent.
inline Box3 camera_box(const std::vector<Pose>& poses, double pad_frac = 0.1) {
  if (poses.empty()) throw GeometryError("camera_box: no poses");
  Box3 b{poses[0].t, poses[0].t};
  for (const Pose& p : poses) {
    b.lo.x = std::min(b.lo.x, p.t.x);
    b.lo.y = std::min(b.lo.y, p.t.y);
    b.lo.z = std::min(b.lo.z, p.t.z);
    b.hi.x = std::max(b.hi.x, p.t.x);
    b.hi.y = std::max(b.hi.y, p.t.y);
    b.hi.z = std::max(b.hi.z, p.t.z);
  }
  Vec3d ext = b.hi - b.lo;
  Vec3d pad = ext * pad_frac;
  b.lo = b.lo - pad;
  b.hi = b.hi + pad;
  return b;
}

inline Vec3d mean_up_axis(const std::vector<Pose>& poses) {
  Vec3d u{};
  for (const Pose& p : poses) u = u + p.R.col(1);
  if (norm(u) < 1e-9) throw GeometryError("mean_up_axis: degenerate up");
  return normalized(u);
}

// Random pose inside the camera box, aimed at the mean focus point with
// Gaussian jitter on the target. jitter_std = 0 aims exactly at the focus.
inline Pose sample_unseen_pose(Rng& rng, const std::vector<Pose>& anchors,
                               double jitter_std) {
  Box3 box = camera_box(anchors);
  Vec3d focus = mean_focus_point(anchors);
  Vec3d up = mean_up_axis(anchors);
  Vec3d eye{rng.uniform(box.lo.x, box.hi.x), rng.uniform(box.lo.y, box.hi.y),
            rng.uniform(box.lo.z, box.hi.z)};
  Vec3d target = focus + Vec3d{rng.normal(0.0, jitter_std),
                               rng.normal(0.0, jitter_std),
                               rng.normal(0.0, jitter_std)};
  return look_at(eye, target, up);
}

inline bool inside_box(const Box3& b, const Vec3d& p) {
  return p.x >= b.lo.x && p.x <= b.hi.x && p.y >= b.lo.y && p.y <= b.hi.y &&
         p.z >= b.lo.z && p.z <= b.hi.z;
}

}  // namespace sderf
