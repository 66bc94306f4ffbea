// Copyright (c) 2026 sparsederf authors
// SPDX-License-Identifier: Apache-2.0
//
// Scene manifests (scene.json), image ingestion, pre-deblurred inputs, and
// the published per-scene presets (training view indices, MGS parameters).

#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sparsederf/geometry.hpp"
#include "sparsederf/image.hpp"

namespace sderf {

enum class ViewRole { Train, Test, HeldoutUnseen };

inline std::string role_name(ViewRole r) {
  switch (r) {
    case ViewRole::Train: return "train";
    case ViewRole::Test: return "test";
    case ViewRole::HeldoutUnseen: return "heldout-unseen";
  }
  return "?";
}

inline ViewRole parse_role(const std::string& s) {
  if (s == "train") return ViewRole::Train;
  if (s == "test") return ViewRole::Test;
  if (s == "heldout-unseen") return ViewRole::HeldoutUnseen;
  throw ManifestError("unknown view role: " + s);
}

struct ViewSpec {
  int id = 0;
  std::string image;  // relative to the manifest directory; may be empty
                      // for heldout-unseen (pose-only) views
  Pose pose;
  Intrinsics intr;
  double near = 0.0;
  double far = 0.0;
  ViewRole role = ViewRole::Train;
  std::string sharp;         // optional ground-truth reference
  std::string predeblurred;  // optional pre-deblurred counterpart
};

struct SceneManifest {
  std::string name;
  bool ndc = false;
  bool has_mgs = false;
  double mgs_rho = 1.0;
  double mgs_eta = 1.0;
  std::vector<ViewSpec> views;
  std::string dir;  // directory of the manifest file, set on load

  std::vector<int> ids(ViewRole role) const {
    std::vector<int> out;
    for (const ViewSpec& v : views)
      if (v.role == role) out.push_back(v.id);
    return out;
  }

  const ViewSpec& view(int id) const {
    for (const ViewSpec& v : views)
      if (v.id == id) return v;
    throw ManifestError("no view with id " + std::to_string(id));
  }

  ViewSpec& view(int id) {
    for (ViewSpec& v : views)
      if (v.id == id) return v;
    throw ManifestError("no view with id " + std::to_string(id));
  }

  // The engine assumes shared intrinsics; validated on load.
  const Intrinsics& intr() const { return views.at(0).intr; }
  double near() const { return views.at(0).near; }
  double far() const { return views.at(0).far; }

  std::string resolve(const std::string& rel) const {
    return (std::filesystem::path(dir) / rel).string();
  }
};

namespace detail {

inline void check_pose(const Mat3d& R) {
  Mat3d I = transpose(R) * R;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double want = i == j ? 1.0 : 0.0;
      if (std::abs(I.m[i][j] - want) > 1e-6)
        throw GeometryError("pose rotation is not orthonormal");
    }
  }
  double det = R.m[0][0] * (R.m[1][1] * R.m[2][2] - R.m[1][2] * R.m[2][1]) -
               R.m[0][1] * (R.m[1][0] * R.m[2][2] - R.m[1][2] * R.m[2][0]) +
               R.m[0][2] * (R.m[1][0] * R.m[2][1] - R.m[1][1] * R.m[2][0]);
  if (std::abs(det - 1.0) > 1e-6)
    throw GeometryError("pose rotation determinant is not +1");
}

inline nlohmann::json pose_to_json(const Pose& p) {
  nlohmann::json a = nlohmann::json::array();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) a.push_back(p.R.m[i][j]);
    a.push_back((&p.t.x)[i]);
  }
  return a;
}

inline Pose pose_from_json(const nlohmann::json& a) {
  if (!a.is_array() || a.size() != 12)
    throw ManifestError("pose must be 12 numbers (row-major 3x4)");
  Pose p;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) p.R.m[i][j] = a[size_t(i * 4 + j)];
    (&p.t.x)[i] = a[size_t(i * 4 + 3)];
  }
  return p;
}

}  // namespace detail

inline void validate_manifest(const SceneManifest& m) {
  if (m.views.empty()) throw ManifestError("manifest declares no views");
  int n_train = 0, n_test = 0;
  std::vector<int> seen;
  for (const ViewSpec& v : m.views) {
    for (int id : seen)
      if (id == v.id)
        throw ManifestError("duplicate view id " + std::to_string(v.id));
    seen.push_back(v.id);
    if (v.role == ViewRole::Train) ++n_train;
    if (v.role == ViewRole::Test) ++n_test;
    if (v.intr.width <= 0 || v.intr.height <= 0)
      throw ManifestError("view " + std::to_string(v.id) +
                          " has non-positive image dimensions");
    if (!(v.intr.focal > 0.0))
      throw ManifestError("view " + std::to_string(v.id) +
                          " has non-positive focal length");
    if (!(v.near < v.far) || !(v.near > 0.0))
      throw ManifestError("view " + std::to_string(v.id) +
                          " has invalid near/far bounds");
    if (v.image.empty() && v.role != ViewRole::HeldoutUnseen)
      throw ManifestError("view " + std::to_string(v.id) +
                          " declares no image");
    detail::check_pose(v.pose.R);
  }
  if (n_train < 1) throw ManifestError("manifest has no train views");
  if (n_test < 1) throw ManifestError("manifest has no test views");
  const Intrinsics& i0 = m.views[0].intr;
  for (const ViewSpec& v : m.views) {
    if (v.intr.width != i0.width || v.intr.height != i0.height ||
        v.intr.focal != i0.focal || v.near != m.views[0].near ||
        v.far != m.views[0].far)
      throw ManifestError("views disagree on intrinsics or bounds");
  }
  if (m.has_mgs) {
    if (!(m.mgs_rho >= 1.0 && m.mgs_rho <= 10.0))
      throw ManifestError("manifest mgs rho out of range [1, 10]");
    if (!(m.mgs_eta >= 0.5 && m.mgs_eta < 2.0))
      throw ManifestError("manifest mgs eta out of range [0.5, 2)");
  }
}

inline SceneManifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IOError("cannot open manifest: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError("unparseable manifest " + path + ": " + e.what());
  }
  try {
    if (j.value("schema", 0) != 1)
      throw ManifestError("unsupported manifest schema in " + path);
    SceneManifest m;
    m.name = j.value("name", "");
    m.ndc = j.value("ndc", false);
    if (j.contains("mgs")) {
      m.has_mgs = true;
      m.mgs_rho = j["mgs"].value("rho", 1.0);
      m.mgs_eta = j["mgs"].value("eta", 1.0);
    }
    for (const auto& jv : j.at("views")) {
      ViewSpec v;
      v.id = jv.at("id");
      v.image = jv.value("image", "");
      v.pose = detail::pose_from_json(jv.at("pose"));
      v.intr.focal = jv.at("focal");
      v.intr.width = jv.at("width");
      v.intr.height = jv.at("height");
      v.near = jv.at("near");
      v.far = jv.at("far");
      v.role = parse_role(jv.at("role"));
      v.sharp = jv.value("sharp", "");
      v.predeblurred = jv.value("predeblurred", "");
      m.views.push_back(std::move(v));
    }
    m.dir = std::filesystem::path(path).parent_path().string();
    validate_manifest(m);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError("malformed manifest " + path + ": " + e.what());
  }
}

inline void save_manifest(const std::string& path, const SceneManifest& m) {
  validate_manifest(m);
  nlohmann::json j;
  j["schema"] = 1;
  j["name"] = m.name;
  j["ndc"] = m.ndc;
  if (m.has_mgs) j["mgs"] = {{"rho", m.mgs_rho}, {"eta", m.mgs_eta}};
  j["views"] = nlohmann::json::array();
  for (const ViewSpec& v : m.views) {
    nlohmann::json jv;
    jv["id"] = v.id;
    jv["image"] = v.image;
    jv["pose"] = detail::pose_to_json(v.pose);
    jv["focal"] = v.intr.focal;
    jv["width"] = v.intr.width;
    jv["height"] = v.intr.height;
    jv["near"] = v.near;
    jv["far"] = v.far;
    jv["role"] = role_name(v.role);
    if (!v.sharp.empty()) jv["sharp"] = v.sharp;
    if (!v.predeblurred.empty()) jv["predeblurred"] = v.predeblurred;
    j["views"].push_back(std::move(jv));
  }
  std::ofstream os(path);
  if (!os) throw IOError("cannot write manifest: " + path);
  os << j.dump(2) << "\n";
}

// ============================================================================
// Scene: manifest plus decoded images
// ============================================================================

struct Scene {
  SceneManifest manifest;
  std::map<int, Image> images;  // per view id (train/test)
  std::map<int, Image> sharp;   // declared ground-truth references
};

inline Scene load_scene(const std::string& manifest_path) {
  Scene s;
  s.manifest = load_manifest(manifest_path);
  for (const ViewSpec& v : s.manifest.views) {
    if (v.image.empty()) continue;
    Image img = load_png(s.manifest.resolve(v.image));
    if (img.width != v.intr.width || img.height != v.intr.height)
      throw ManifestError("image dimensions of view " + std::to_string(v.id) +
                          " do not match the manifest");
    s.images[v.id] = std::move(img);
    if (!v.sharp.empty()) {
      Image ref = load_png(s.manifest.resolve(v.sharp));
      if (ref.width != v.intr.width || ref.height != v.intr.height)
        throw ManifestError("sharp reference of view " +
                            std::to_string(v.id) + " has wrong dimensions");
      s.sharp[v.id] = std::move(ref);
    }
  }
  return s;
}

// Pre-deblurred counterparts for the declared views only; an empty map
// simply disables perceptual distillation.
inline std::map<int, Image> load_predeblurred(const SceneManifest& m) {
  std::map<int, Image> out;
  for (const ViewSpec& v : m.views) {
    if (v.predeblurred.empty()) continue;
    Image img = load_png(m.resolve(v.predeblurred));
    if (img.width != v.intr.width || img.height != v.intr.height)
      throw ManifestError("pre-deblurred image of view " +
                          std::to_string(v.id) + " has wrong dimensions");
    out[v.id] = std::move(img);
  }
  return out;
}

// ============================================================================
// Published per-scene presets
// ============================================================================

struct MgsPreset {
  double rho;
  double eta;
};

// Per-scene gradient-scaling parameters.
inline const std::map<std::string, MgsPreset>& mgs_presets() {
  static const std::map<std::string, MgsPreset> table = {
      {"cozyroom", {10.0, 1.75}}, {"factory", {10.0, 1.75}},
      {"pool", {10.0, 1.75}},     {"tanabata", {1.0, 1.5}},
      {"trolley", {10.0, 1.75}},  {"ball", {1.0, 1.2}},
      {"basket", {1.0, 0.67}},    {"buick", {10.0, 1.75}},
      {"coffee", {1.0, 0.67}},    {"decoration", {1.0, 0.5}},
      {"girl", {1.0, 0.5}},       {"heron", {1.0, 0.5}},
      {"parterre", {1.0, 0.5}},   {"puppet", {10.0, 1.75}},
      {"stair", {1.0, 0.5}}};
  return table;
}

inline MgsPreset mgs_preset(const std::string& scene) {
  auto it = mgs_presets().find(scene);
  if (it == mgs_presets().end())
    throw ConfigError("no gradient-scaling preset for scene: " + scene);
  return it->second;
}

// Published training view indices for the 2/4/6-view settings.
inline std::vector<int> view_index_preset(const std::string& scene,
                                          int n_views) {
  static const std::map<std::string, std::vector<int>> six = {
      {"ball", {1, 5, 10, 12, 18, 22}},     {"basket", {1, 8, 12, 17, 22, 33}},
      {"buick", {5, 11, 17, 20, 34, 39}},   {"coffee", {3, 10, 11, 15, 21, 26}},
      {"decoration", {1, 14, 19, 22, 27, 39}},
      {"girl", {2, 9, 16, 24, 32, 37}},     {"heron", {4, 11, 18, 23, 27, 35}},
      {"parterre", {1, 8, 13, 17, 26, 28}}, {"puppet", {7, 9, 13, 21, 23, 31}},
      {"stair", {2, 4, 13, 16, 26, 34}},
      {"cozyroom", {2, 14, 17, 21, 23, 29}},
      {"factory", {1, 3, 14, 19, 28, 33}},  {"pool", {1, 5, 10, 15, 20, 23}},
      {"tanabata", {1, 7, 11, 18, 22, 27}}, {"trolley", {7, 13, 20, 23, 27, 31}}};
  static const std::map<std::string, std::vector<int>> four = {
      {"ball", {1, 12, 18, 22}},     {"basket", {1, 12, 22, 33}},
      {"buick", {5, 11, 20, 39}},    {"coffee", {3, 10, 15, 26}},
      {"decoration", {1, 19, 22, 39}},
      {"girl", {2, 9, 16, 32}},      {"heron", {4, 11, 18, 35}},
      {"parterre", {1, 8, 13, 26}},  {"puppet", {9, 13, 21, 31}},
      {"stair", {4, 13, 16, 26}},    {"cozyroom", {2, 17, 23, 29}},
      {"factory", {3, 14, 19, 33}},  {"pool", {5, 10, 15, 23}},
      {"tanabata", {1, 7, 11, 22}},  {"trolley", {7, 13, 23, 31}}};
  static const std::map<std::string, std::vector<int>> two = {
      {"ball", {1, 12}},        {"basket", {12, 33}},
      {"buick", {11, 39}},      {"coffee", {3, 10}},
      {"decoration", {1, 19}},  {"girl", {9, 16}},
      {"heron", {11, 35}},      {"parterre", {8, 26}},
      {"puppet", {9, 31}},      {"stair", {13, 26}},
      {"cozyroom", {2, 17}},    {"factory", {3, 19}},
      {"pool", {10, 23}},       {"tanabata", {1, 7}},
      {"trolley", {13, 23}}};
  const std::map<std::string, std::vector<int>>* table = nullptr;
  if (n_views == 2) table = &two;
  else if (n_views == 4) table = &four;
  else if (n_views == 6) table = &six;
  else
    throw ConfigError("view presets exist for 2, 4, or 6 views only");
  auto it = table->find(scene);
  if (it == table->end())
    throw ConfigError("no view-index preset for scene: " + scene);
  return it->second;
}

// Re-role a manifest to a sparse-view preset: listed ids become train views,
// every other view with an image becomes test.
inline void apply_view_preset(SceneManifest& m, const std::string& scene,
                              int n_views) {
  std::vector<int> train = view_index_preset(scene, n_views);
  for (ViewSpec& v : m.views) {
    if (v.role == ViewRole::HeldoutUnseen) continue;
    bool is_train = false;
    for (int id : train) is_train |= (v.id == id);
    v.role = is_train ? ViewRole::Train : ViewRole::Test;
  }
  for (int id : train) m.view(id);  // all preset ids must exist
  validate_manifest(m);
}

}  // namespace sderf
