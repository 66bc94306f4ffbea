// Copyright (c) 2026 sparsederf authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic blur-dataset generator. Sharp images come from an analytic
// Gaussian-blob density field rendered with deterministic midpoint
// quadrature; blurry counterparts are convex combinations of renders under
// known screw motions, recorded in a blur_truth.json sidecar.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sparsederf/data.hpp"
#include "sparsederf/geometry.hpp"
#include "sparsederf/image.hpp"

namespace sderf {

struct GaussianBlob {
  Vec3d center;
  double radius = 0.3;
  double amplitude = 6.0;
  Vec3d rgb{0.8, 0.8, 0.8};
};

struct SyntheticSpec {
  std::string name = "synth";
  int n_train = 3;
  int n_test = 1;
  int n_unseen = 2;  // pose-only views emitted as heldout-unseen
  int width = 32;
  int height = 32;
  double focal_factor = 1.5;  // focal = factor * width
  double cam_radius = 4.0;
  double arc_deg = 40.0;
  double near = 2.5;
  double far = 5.5;
  int quad_samples = 192;
  int n_taps = 5;          // renders composited per blurry image
  double tap_center = 0.0; // tap positions: center + spread in [-1/2, 1/2]
  double motion_rot = 0.05;
  double motion_trans = 0.08;
  uint64_t seed = 7;
  std::vector<GaussianBlob> blobs;
};

inline std::vector<GaussianBlob> default_blobs() {
  return {
      {{0.0, 0.0, 0.0}, 0.55, 6.0, {0.90, 0.25, 0.20}},
      {{0.7, 0.35, -0.3}, 0.30, 8.0, {0.20, 0.80, 0.30}},
      {{-0.6, -0.25, 0.4}, 0.35, 7.0, {0.25, 0.40, 0.95}},
      {{0.15, -0.55, -0.5}, 0.25, 9.0, {0.95, 0.85, 0.30}},
  };
}

namespace detail {

inline void blob_field(const std::vector<GaussianBlob>& blobs, const Vec3d& x,
                       double* sigma, Vec3d* rgb) {
  double s = 0.0;
  Vec3d c{0, 0, 0};
  for (const GaussianBlob& b : blobs) {
    Vec3d d = x - b.center;
    double a = b.amplitude * std::exp(-dot(d, d) / (2.0 * b.radius * b.radius));
    s += a;
    c = c + b.rgb * a;
  }
  *sigma = s;
  *rgb = s > 1e-12 ? c * (1.0 / s) : Vec3d{0, 0, 0};
}

inline Vec3d trace_blob_ray(const SyntheticSpec& spec, const Rayd& ray) {
  double delta = (spec.far - spec.near) / spec.quad_samples;
  double trans = 1.0;
  Vec3d out{0, 0, 0};
  for (int i = 0; i < spec.quad_samples; ++i) {
    double t = spec.near + (i + 0.5) * delta;
    double sigma;
    Vec3d rgb;
    blob_field(spec.blobs, ray.o + ray.d * t, &sigma, &rgb);
    double alpha = 1.0 - std::exp(-sigma * delta);
    out = out + rgb * (trans * alpha);
    trans *= 1.0 - alpha;
    if (trans < 1e-8) break;
  }
  return out;
}

}  // namespace detail

// Sharp render of the analytic field from one camera.
inline Image render_blob_view(const SyntheticSpec& spec, const Pose& pose,
                              const Intrinsics& intr,
                              const ScrewAxis<double>& screw) {
  Image img{intr.width, intr.height};
  bool moved = dot(screw.r, screw.r) > 0.0 || dot(screw.v, screw.v) > 0.0;
  for (int py = 0; py < intr.height; ++py) {
    for (int px = 0; px < intr.width; ++px) {
      Rayd ray = camera_ray(intr, pose, px, py);
      if (moved) ray = apply_screw(screw, ray);
      Vec3d c = detail::trace_blob_ray(spec, ray);
      for (int ch = 0; ch < 3; ++ch) img.at(px, py, ch) = (&c.x)[ch];
    }
  }
  return img;
}

struct BlurTruth {
  std::vector<ScrewAxis<double>> screws;
  std::vector<double> weights;
};

// Ground-truth blur for one view: tap positions spread over the view's
// screw, convex weights. All-zero screws collapse to the sharp image.
inline BlurTruth blur_truth_for_view(const SyntheticSpec& spec,
                                     const ScrewAxis<double>& motion,
                                     Rng rng) {
  BlurTruth bt;
  int n = spec.n_taps;
  if (n < 1) throw ConfigError("synthetic blur needs at least one tap");
  double wsum = 0.0;
  for (int q = 0; q < n; ++q) {
    double tau = spec.tap_center;
    if (n > 1) tau += -0.5 + double(q) / (n - 1);
    bt.screws.push_back({motion.r * tau, motion.v * tau});
    double w = n == 1 ? 1.0 : 0.5 + rng.fork(uint64_t(q)).uniform();
    bt.weights.push_back(w);
    wsum += w;
  }
  for (double& w : bt.weights) w /= wsum;
  return bt;
}

inline Image compose_blurry(const SyntheticSpec& spec, const Pose& pose,
                            const Intrinsics& intr, const BlurTruth& bt,
                            const Image& sharp) {
  bool any_motion = false;
  for (const auto& s : bt.screws)
    any_motion |= dot(s.r, s.r) > 0.0 || dot(s.v, s.v) > 0.0;
  if (!any_motion) return sharp;  // exact: convex combination of one image
  if (bt.screws.size() == 1)
    return render_blob_view(spec, pose, intr, bt.screws[0]);
  Image out{intr.width, intr.height};
  for (double& v : out.data) v = 0.0;
  for (size_t q = 0; q < bt.screws.size(); ++q) {
    Image tap = render_blob_view(spec, pose, intr, bt.screws[q]);
    for (size_t i = 0; i < out.data.size(); ++i)
      out.data[i] += bt.weights[q] * tap.data[i];
  }
  return out;
}

// Writes scene.json, sharp_/blur_ PNG pairs, and blur_truth.json into
// out_dir. Returns the manifest. Byte-identical across runs for a fixed
// spec. Sharp images double as the pre-deblurred stand-ins for train views.
inline SceneManifest generate_synthetic_scene(const SyntheticSpec& spec_in,
                                              const std::string& out_dir) {
  SyntheticSpec spec = spec_in;
  if (spec.blobs.empty()) spec.blobs = default_blobs();
  if (spec.n_train < 1 || spec.n_test < 1)
    throw ConfigError("synthetic scene needs train and test views");
  std::filesystem::create_directories(out_dir);

  Intrinsics intr;
  intr.width = spec.width;
  intr.height = spec.height;
  intr.focal = spec.focal_factor * spec.width;

  int n_imaged = spec.n_train + spec.n_test;
  int n_total = n_imaged + spec.n_unseen;
  double arc = spec.arc_deg * M_PI / 180.0;
  Rng rng(spec.seed);

  // Roles along the arc: unseen poses at evenly spaced interior slots,
  // test views spread over the remaining imaged slots.
  std::vector<ViewRole> roles(size_t(n_total), ViewRole::Train);
  for (int u = 0; u < spec.n_unseen; ++u) {
    int slot = (u + 1) * n_total / (spec.n_unseen + 1);
    slot = std::min(slot, n_total - 1);
    while (roles[size_t(slot)] != ViewRole::Train)
      slot = (slot + 1) % n_total;
    roles[size_t(slot)] = ViewRole::HeldoutUnseen;
  }
  std::vector<int> imaged_slots;
  for (int i = 0; i < n_total; ++i)
    if (roles[size_t(i)] == ViewRole::Train) imaged_slots.push_back(i);
  for (int k = 0; k < spec.n_test; ++k) {
    size_t j = size_t((k + 1) * n_imaged / (spec.n_test + 1)) %
               imaged_slots.size();
    while (roles[size_t(imaged_slots[j])] != ViewRole::Train)
      j = (j + 1) % imaged_slots.size();
    roles[size_t(imaged_slots[j])] = ViewRole::Test;
  }

  SceneManifest m;
  m.name = spec.name;
  m.ndc = false;
  // Slow half-period curve: with depths normalized by `far` the scene occupies
  // roughly [0.45, 1], and (rho=1, eta=0.5) keeps the modulation ramp active
  // across that whole band instead of saturating right past the near plane.
  m.has_mgs = true;
  m.mgs_rho = 1.0;
  m.mgs_eta = 0.5;

  nlohmann::json truth;
  char buf[64];
  for (int i = 0; i < n_total; ++i) {
    double a = n_total == 1 ? 0.0 : -arc / 2 + arc * i / (n_total - 1);
    Vec3d eye{spec.cam_radius * std::sin(a),
              0.3 * std::sin(2.0 * a) * spec.cam_radius * 0.25,
              spec.cam_radius * std::cos(a)};
    Pose pose = look_at(eye, Vec3d{0, 0, 0}, Vec3d{0, 1, 0});

    ViewSpec v;
    v.id = i;
    v.pose = pose;
    v.intr = intr;
    v.near = spec.near;
    v.far = spec.far;
    v.role = roles[size_t(i)];
    if (v.role == ViewRole::HeldoutUnseen) {
      m.views.push_back(v);
      continue;
    }

    Rng vrng = rng.fork(uint64_t(100 + i));
    ScrewAxis<double> motion;
    Vec3d axis{vrng.normal(), vrng.normal(), vrng.normal()};
    double an = norm(axis);
    if (an < 1e-9) axis = Vec3d{0, 0, 1}, an = 1.0;
    motion.r = axis * (spec.motion_rot * (0.7 + 0.6 * vrng.uniform()) / an);
    Vec3d tdir{vrng.normal(), vrng.normal(), vrng.normal()};
    double tn = norm(tdir);
    if (tn < 1e-9) tdir = Vec3d{1, 0, 0}, tn = 1.0;
    // Camera shake rotates about the camera itself, not the world origin:
    // v = eye x r puts the screw axis through the eye point (and scaling the
    // twist by the tap position keeps it there), so the rotational part
    // produces real image-space blur instead of a near-invariant orbit of
    // the scene center. A small translational drift is added on top.
    motion.v = cross(eye, motion.r) +
               tdir * (spec.motion_trans * (0.7 + 0.6 * vrng.uniform()) / tn);
    if (spec.motion_rot == 0.0 && spec.motion_trans == 0.0)
      motion = ScrewAxis<double>{{0, 0, 0}, {0, 0, 0}};

    BlurTruth bt = blur_truth_for_view(spec, motion, vrng.fork(7));
    Image sharp = render_blob_view(spec, pose, intr,
                                   ScrewAxis<double>{{0, 0, 0}, {0, 0, 0}});
    Image blurry = compose_blurry(spec, pose, intr, bt, sharp);

    std::snprintf(buf, sizeof buf, "sharp_%03d.png", i);
    std::string sharp_name = buf;
    std::snprintf(buf, sizeof buf, "blur_%03d.png", i);
    std::string blur_name = buf;
    save_png((std::filesystem::path(out_dir) / sharp_name).string(), sharp);
    save_png((std::filesystem::path(out_dir) / blur_name).string(), blurry);

    v.image = blur_name;
    v.sharp = sharp_name;
    if (v.role == ViewRole::Train) v.predeblurred = sharp_name;
    m.views.push_back(v);

    nlohmann::json jt;
    jt["weights"] = bt.weights;
    jt["screws"] = nlohmann::json::array();
    for (const auto& s : bt.screws)
      jt["screws"].push_back({{s.r.x, s.r.y, s.r.z}, {s.v.x, s.v.y, s.v.z}});
    truth[std::to_string(i)] = std::move(jt);
  }

  m.dir = out_dir;
  save_manifest((std::filesystem::path(out_dir) / "scene.json").string(), m);
  std::ofstream ts((std::filesystem::path(out_dir) / "blur_truth.json").string());
  if (!ts) throw IOError("cannot write blur_truth.json in " + out_dir);
  ts << truth.dump(2) << "\n";
  return m;
}

// Sidecar reader; returns an empty map when the file does not exist.
inline std::map<int, BlurTruth> load_blur_truth(const std::string& path) {
  std::map<int, BlurTruth> out;
  std::ifstream is(path);
  if (!is) return out;
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("unparseable blur_truth " + path + ": " + e.what());
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    BlurTruth bt;
    for (const auto& js : it.value().at("screws")) {
      ScrewAxis<double> s;
      s.r = {js.at(0).at(0), js.at(0).at(1), js.at(0).at(2)};
      s.v = {js.at(1).at(0), js.at(1).at(1), js.at(1).at(2)};
      bt.screws.push_back(s);
    }
    for (const auto& w : it.value().at("weights")) bt.weights.push_back(w);
    if (bt.screws.size() != bt.weights.size())
      throw DataError("blur_truth screw/weight count mismatch");
    out[std::stoi(it.key())] = std::move(bt);
  }
  return out;
}

}  // namespace sderf
