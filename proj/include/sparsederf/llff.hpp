// Copyright (c) 2026 sparsederf authors
// SPDX-License-Identifier: Apache-2.0
//
// Importer for LLFF-style capture directories: poses_bounds.npy (N x 17
// float64) plus an images/ folder. Produces a scene.json manifest with
// recentered poses, normalized bounds, and NDC enabled.

#pragma once

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sparsederf/data.hpp"

namespace sderf {

struct NpyArray {
  size_t rows = 0;
  size_t cols = 0;
  std::vector<double> data;  // row-major

  double at(size_t r, size_t c) const { return data[r * cols + c]; }
};

// Minimal reader for 2-D little-endian float64 .npy files (format 1.0/2.0,
// C order).
inline NpyArray load_npy_f64(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IOError("cannot open npy file: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, "\x93NUMPY", 6) != 0)
    throw DataError("not an npy file: " + path);
  int major = magic[6];
  uint32_t header_len = 0;
  if (major == 1) {
    unsigned char b[2];
    is.read(reinterpret_cast<char*>(b), 2);
    header_len = uint32_t(b[0]) | uint32_t(b[1]) << 8;
  } else if (major == 2) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    header_len = uint32_t(b[0]) | uint32_t(b[1]) << 8 |
                 uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
  } else {
    throw DataError("unsupported npy version in " + path);
  }
  std::string header(header_len, '\0');
  is.read(header.data(), header_len);
  if (!is) throw DataError("truncated npy header in " + path);

  if (header.find("'descr': '<f8'") == std::string::npos)
    throw DataError("npy dtype must be little-endian float64: " + path);
  if (header.find("'fortran_order': False") == std::string::npos)
    throw DataError("npy must be C-ordered: " + path);
  size_t sp = header.find("'shape': (");
  if (sp == std::string::npos) throw DataError("npy header lacks shape");
  sp += 10;
  size_t ep = header.find(')', sp);
  std::string shape = header.substr(sp, ep - sp);
  NpyArray a;
  if (std::sscanf(shape.c_str(), "%zu , %zu", &a.rows, &a.cols) != 2 &&
      std::sscanf(shape.c_str(), "%zu,%zu", &a.rows, &a.cols) != 2)
    throw DataError("npy array must be 2-D: " + path);

  a.data.resize(a.rows * a.cols);
  is.read(reinterpret_cast<char*>(a.data.data()),
          std::streamsize(a.data.size() * sizeof(double)));
  if (!is) throw DataError("truncated npy payload in " + path);
  return a;
}

namespace detail {

inline Pose view_matrix(Vec3d z, const Vec3d& up, const Vec3d& pos) {
  z = normalized(z);
  Vec3d x = normalized(cross(up, z));
  Vec3d y = normalized(cross(z, x));
  Pose p;
  for (int i = 0; i < 3; ++i) {
    p.R.m[i][0] = (&x.x)[i];
    p.R.m[i][1] = (&y.x)[i];
    p.R.m[i][2] = (&z.x)[i];
  }
  p.t = pos;
  return p;
}

// Re-express all poses relative to their average pose.
inline void recenter_poses(std::vector<Pose>& poses) {
  Vec3d center{0, 0, 0}, zsum{0, 0, 0}, ysum{0, 0, 0};
  for (const Pose& p : poses) {
    center = center + p.t;
    for (int i = 0; i < 3; ++i) {
      (&zsum.x)[i] += p.R.m[i][2];
      (&ysum.x)[i] += p.R.m[i][1];
    }
  }
  center = center * (1.0 / double(poses.size()));
  Pose avg = view_matrix(zsum, ysum, center);
  Mat3d Rinv = transpose(avg.R);
  for (Pose& p : poses) {
    p.R = Rinv * p.R;
    p.t = Rinv * (p.t - avg.t);
  }
}

}  // namespace detail

struct LlffImportOptions {
  double bd_factor = 0.75;  // near bound rescales to 1/bd_factor
  int hold_every = 8;       // every k-th view becomes a test view
  std::string name;         // defaults to the directory name
};

// Reads <dir>/poses_bounds.npy and <dir>/images/, writes <dir>/scene.json,
// and returns the manifest. Poses arrive as camera-to-world 3x5 blocks in
// [down, right, back] column order with an [h, w, f] last column; they are
// converted to [right, up, back], recentered, and scaled so the nearest
// bound lands at 1/bd_factor.
inline SceneManifest import_llff(const std::string& dir,
                                 const LlffImportOptions& opt = {}) {
  namespace fs = std::filesystem;
  NpyArray arr = load_npy_f64((fs::path(dir) / "poses_bounds.npy").string());
  if (arr.cols != 17)
    throw ManifestError("poses_bounds.npy must have 17 columns, got " +
                        std::to_string(arr.cols));
  size_t n = arr.rows;
  if (n < 2) throw ManifestError("LLFF import needs at least two views");

  std::vector<std::string> images;
  fs::path img_dir = fs::path(dir) / "images";
  if (!fs::is_directory(img_dir))
    throw ManifestError("missing images/ directory in " + dir);
  for (const auto& e : fs::directory_iterator(img_dir)) {
    std::string ext = e.path().extension().string();
    if (ext == ".png" || ext == ".PNG")
      images.push_back(e.path().filename().string());
  }
  std::sort(images.begin(), images.end());
  if (images.size() != n)
    throw ManifestError("found " + std::to_string(images.size()) +
                        " images for " + std::to_string(n) + " poses");

  std::vector<Pose> poses(n);
  double h = arr.at(0, 4), w = arr.at(0, 9), f = arr.at(0, 14);
  double bd_min = 1e300, bd_max = -1e300;
  for (size_t r = 0; r < n; ++r) {
    // 3x5 row-major block: columns [c0 c1 c2 | t | hwf]
    Pose p;
    for (int i = 0; i < 3; ++i) {
      p.R.m[i][0] = arr.at(r, size_t(i * 5 + 1));   // right  = c1
      p.R.m[i][1] = -arr.at(r, size_t(i * 5 + 0));  // up     = -c0
      p.R.m[i][2] = arr.at(r, size_t(i * 5 + 2));   // back   = c2
      (&p.t.x)[i] = arr.at(r, size_t(i * 5 + 3));
    }
    poses[r] = p;
    bd_min = std::min({bd_min, arr.at(r, 15), arr.at(r, 16)});
    bd_max = std::max({bd_max, arr.at(r, 15), arr.at(r, 16)});
  }
  if (!(bd_min > 0.0)) throw ManifestError("LLFF bounds must be positive");

  double sc = 1.0 / (bd_min * opt.bd_factor);
  for (Pose& p : poses) p.t = p.t * sc;
  detail::recenter_poses(poses);

  SceneManifest m;
  m.name = opt.name.empty() ? fs::path(dir).filename().string() : opt.name;
  m.ndc = true;
  std::string key = m.name;
  std::transform(key.begin(), key.end(), key.begin(),
                 [](unsigned char c) { return char(std::tolower(c)); });
  if (mgs_presets().count(key)) {
    MgsPreset g = mgs_preset(key);
    m.has_mgs = true;
    m.mgs_rho = g.rho;
    m.mgs_eta = g.eta;
  }
  for (size_t r = 0; r < n; ++r) {
    ViewSpec v;
    v.id = int(r);
    v.image = (fs::path("images") / images[r]).string();
    v.pose = poses[r];
    v.intr.focal = f;
    v.intr.width = int(w);
    v.intr.height = int(h);
    v.near = 1.0;  // NDC near plane
    v.far = std::max(bd_max * sc, 1.0 + 1e-6);
    v.role = (opt.hold_every > 0 && r % size_t(opt.hold_every) == 0)
                 ? ViewRole::Test
                 : ViewRole::Train;
    m.views.push_back(std::move(v));
  }
  m.dir = dir;
  save_manifest((fs::path(dir) / "scene.json").string(), m);
  return m;
}

}  // namespace sderf
