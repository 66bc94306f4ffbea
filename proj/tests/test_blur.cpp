// Copyright (c) 2026 sparsederf authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include "sparsederf/blur.hpp"
#include "testutil.hpp"

using namespace sderf;
using sderf::test::gradcheck;
using sderf::test::rel_err;

namespace {

KernelConfig small_cfg(KernelType type) {
  KernelConfig c;
  c.type = type;
  c.n = 3;
  c.embed_dim = 4;
  c.hidden = 8;
  c.layers = 2;
  return c;
}

// Flat parameter vector [embeddings | mlp | chi] with matching offsets.
struct KernelParams {
  std::vector<double> values;
  KernelOffsets off;
};

KernelParams make_params(const KernelConfig& cfg, int n_views,
                         bool zero_init) {
  KernelParams kp;
  MlpArch arch =
      cfg.type == KernelType::Dsk ? cfg.dsk_arch() : cfg.rbk_arch();
  int n_embed = n_views * cfg.embed_dim;
  int n_chi = cfg.type == KernelType::Dsk ? 2 * cfg.n : 0;
  kp.values.assign(size_t(n_embed) + arch.param_count() + n_chi, 0.0);
  kp.off.embed = 0;
  kp.off.mlp = n_embed;
  kp.off.chi = n_embed + arch.param_count();
  if (!zero_init) {
    init_kernel(kp.values.data(), kp.values.data() + kp.off.mlp,
                kp.values.data() + kp.off.chi, cfg, n_views, Rng(77));
    // Dense head instead of the zero head so gradients are informative.
    init_mlp(kp.values.data() + kp.off.mlp, arch, Rng(78), false);
  }
  return kp;
}

// Bias of head output row r (weights of the zero head stay zero).
int head_bias_index(const KernelConfig& cfg, const KernelOffsets& off,
                    int r) {
  MlpArch arch =
      cfg.type == KernelType::Dsk ? cfg.dsk_arch() : cfg.rbk_arch();
  int w = 0, in = arch.in;
  for (int l = 0; l < arch.layers; ++l) {
    w += layer_param_count(in, arch.hidden);
    in = arch.hidden;
  }
  return off.mlp + w + r * (in + 1) + in;
}

Intrinsics intr16() { return Intrinsics{24.0, 16, 16}; }

Pose pose_z4() {
  return look_at(Vec3d{0.3, -0.2, 4.0}, Vec3d{0, 0, 0}, Vec3d{0, 1, 0});
}

}  // namespace

TEST_CASE("softmax values and normalization") {
  std::vector<double> w = softmax(std::vector<double>{0.0, std::log(3.0)});
  CHECK(rel_err(w[0], 0.25) < 1e-15);
  CHECK(rel_err(w[1], 0.75) < 1e-15);

  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> z;
    for (int i = 0; i < 7; ++i) z.push_back(rng.uniform(-30, 30));
    std::vector<double> s = softmax(z);
    double sum = 0.0;
    for (double v : s) {
      CHECK(v > 0.0);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("softmax gradient") {
  auto f = [](const auto& x) {
    using S = std::decay_t<decltype(x[0])>;
    std::vector<S> z(x.begin(), x.end());
    std::vector<S> s = softmax(z);
    return s[0] * 1.0 + s[1] * 2.0 + s[2] * 3.0 + s[3] * (-1.0);
  };
  CHECK(gradcheck(f, {0.5, -1.2, 2.0, 0.1}) < 1e-7);
}

TEST_CASE("zero-initialized dsk is the identity kernel") {
  KernelConfig cfg = small_cfg(KernelType::Dsk);
  KernelParams kp = make_params(cfg, 2, true);
  EvalCtx<double> ctx{kp.values.data()};
  Intrinsics intr = intr16();
  Pose pose = pose_z4();

  KernelRays<double> kr =
      dsk_transform(ctx, cfg, kp.off, 1, pose, intr, Vec2d{7.0, 9.0});
  REQUIRE(kr.rays.size() == 3);
  REQUIRE(kr.weights.size() == 3);
  Rayd base = camera_ray(intr, pose, 7, 9);
  for (int q = 0; q < 3; ++q) {
    CHECK(kr.rays[q].o.x == base.o.x);
    CHECK(kr.rays[q].o.y == base.o.y);
    CHECK(kr.rays[q].o.z == base.o.z);
    CHECK(kr.rays[q].d.x == base.d.x);
    CHECK(kr.rays[q].d.y == base.d.y);
    CHECK(kr.rays[q].d.z == base.d.z);
    CHECK(rel_err(kr.weights[q], 1.0 / 3.0) < 1e-15);
  }
}

TEST_CASE("dsk endpoint offset moves the ray to the neighbor pixel") {
  KernelConfig cfg = small_cfg(KernelType::Dsk);
  KernelParams kp = make_params(cfg, 1, true);
  // Head bias row 3 is the x pixel offset; one full pixel to the right.
  kp.values[size_t(head_bias_index(cfg, kp.off, 3))] = 1.0;
  EvalCtx<double> ctx{kp.values.data()};
  Intrinsics intr = intr16();
  Pose pose = pose_z4();

  KernelRays<double> kr =
      dsk_transform(ctx, cfg, kp.off, 0, pose, intr, Vec2d{10.0, 10.0});
  Rayd want = camera_ray(intr, pose, 11, 10);
  for (int q = 0; q < 3; ++q) {
    CHECK(kr.rays[q].d.x == want.d.x);
    CHECK(kr.rays[q].d.y == want.d.y);
    CHECK(kr.rays[q].d.z == want.d.z);
    CHECK(kr.rays[q].o.x == want.o.x);
  }
}

TEST_CASE("dsk origin offset shifts ray origins only") {
  KernelConfig cfg = small_cfg(KernelType::Dsk);
  KernelParams kp = make_params(cfg, 1, true);
  kp.values[size_t(head_bias_index(cfg, kp.off, 0))] = 0.125;
  EvalCtx<double> ctx{kp.values.data()};
  Intrinsics intr = intr16();
  Pose pose = pose_z4();

  KernelRays<double> kr =
      dsk_transform(ctx, cfg, kp.off, 0, pose, intr, Vec2d{5.0, 5.0});
  Rayd base = camera_ray(intr, pose, 5, 5);
  for (int q = 0; q < 3; ++q) {
    CHECK(kr.rays[q].o.x == base.o.x + 0.125);
    CHECK(kr.rays[q].o.y == base.o.y);
    CHECK(kr.rays[q].o.z == base.o.z);
    CHECK(kr.rays[q].d.x == base.d.x);
  }
}

TEST_CASE("dsk chi seeds displace ray endpoints") {
  KernelConfig cfg = small_cfg(KernelType::Dsk);
  KernelParams kp = make_params(cfg, 1, true);
  // chi_1 = (1, 0), others zero.
  kp.values[size_t(kp.off.chi) + 2] = 1.0;
  EvalCtx<double> ctx{kp.values.data()};
  Intrinsics intr = intr16();
  Pose pose = pose_z4();

  KernelRays<double> kr =
      dsk_transform(ctx, cfg, kp.off, 0, pose, intr, Vec2d{10.0, 10.0});
  Rayd at10 = camera_ray(intr, pose, 10, 10);
  Rayd at11 = camera_ray(intr, pose, 11, 10);
  CHECK(kr.rays[0].d.x == at10.d.x);
  CHECK(kr.rays[1].d.x == at11.d.x);
  CHECK(kr.rays[2].d.x == at10.d.x);
}

TEST_CASE("dsk tape path matches double path and is differentiable") {
  KernelConfig cfg = small_cfg(KernelType::Dsk);
  KernelParams kp = make_params(cfg, 2, false);
  Intrinsics intr = intr16();
  Pose pose = pose_z4();
  Vec2d pixel{6.0, 11.0};

  auto run = [&](const auto& x) {
    using S = std::decay_t<decltype(x[0])>;
    EvalCtx<S> ctx;
    if constexpr (std::is_same_v<S, Var>) {
      ctx.tape = x[0].tape;
    } else {
      ctx.params = x.data();
    }
    KernelRays<S> kr = dsk_transform(ctx, cfg, kp.off, 1, pose, intr, pixel);
    S acc = kr.weights[0] * 0.0;
    for (size_t q = 0; q < kr.rays.size(); ++q) {
      acc = acc + kr.rays[q].o.x * 0.3 + kr.rays[q].o.y * 0.1 +
            kr.rays[q].d.x * 0.7 + kr.rays[q].d.y * (-0.2) +
            kr.rays[q].d.z * 0.05 + kr.weights[q] * double(q + 1);
    }
    return acc;
  };

  double vd = run(kp.values);
  Tape tape;
  std::vector<Var> vx;
  for (double v : kp.values) vx.push_back(tape.input(v));
  Var vv = run(vx);
  CHECK(rel_err(val_of(vv), vd) < 1e-13);

  CHECK(gradcheck(run, kp.values) < 1e-5);
}

TEST_CASE("zero-initialized rbk is the identity kernel") {
  KernelConfig cfg = small_cfg(KernelType::Rbk);
  KernelParams kp = make_params(cfg, 2, true);
  EvalCtx<double> ctx{kp.values.data()};

  RbkForward<double> fwd = rbk_forward(ctx, cfg, kp.off, 0);
  REQUIRE(fwd.screws.size() == 3);
  Rayd ray{{1.0, -0.5, 2.0}, {0.1, 0.2, -1.0}};
  KernelRays<double> kr = rbk_transform(ctx, fwd, ray);
  for (int q = 0; q < 3; ++q) {
    CHECK(kr.rays[q].o.x == ray.o.x);
    CHECK(kr.rays[q].o.y == ray.o.y);
    CHECK(kr.rays[q].o.z == ray.o.z);
    CHECK(kr.rays[q].d.x == ray.d.x);
    CHECK(kr.rays[q].d.y == ray.d.y);
    CHECK(kr.rays[q].d.z == ray.d.z);
    CHECK(rel_err(kr.weights[q], 1.0 / 3.0) < 1e-15);
  }
}

TEST_CASE("rbk screw rotates rays by the axis-angle") {
  KernelConfig cfg = small_cfg(KernelType::Rbk);
  cfg.n = 2;
  KernelParams kp = make_params(cfg, 1, true);
  // Screw 1: rotation pi/2 about z, no translation.
  kp.values[size_t(head_bias_index(cfg, kp.off, 2))] = M_PI / 2.0;
  EvalCtx<double> ctx{kp.values.data()};

  RbkForward<double> fwd = rbk_forward(ctx, cfg, kp.off, 0);
  Rayd ray{{1.0, 0.0, 0.0}, {0.0, 0.0, -1.0}};
  KernelRays<double> kr = rbk_transform(ctx, fwd, ray);
  // q = 0 stays the identity anchor.
  CHECK(kr.rays[0].o.x == ray.o.x);
  CHECK(kr.rays[0].d.z == ray.d.z);
  // q = 1 is rotated: (1,0,0) -> (0,1,0).
  CHECK(std::abs(kr.rays[1].o.x - 0.0) < 1e-12);
  CHECK(std::abs(kr.rays[1].o.y - 1.0) < 1e-12);
  CHECK(std::abs(kr.rays[1].o.z - 0.0) < 1e-12);
  CHECK(std::abs(kr.rays[1].d.z + 1.0) < 1e-12);
}

TEST_CASE("rbk screws are shared across rays of one view") {
  KernelConfig cfg = small_cfg(KernelType::Rbk);
  KernelParams kp = make_params(cfg, 3, false);
  // Non-trivial outputs: overwrite the head with random weights.
  EvalCtx<double> ctx{kp.values.data()};

  RbkForward<double> fwd = rbk_forward(ctx, cfg, kp.off, 2);
  Intrinsics intr = intr16();
  Pose pose = pose_z4();
  Rayd r1 = camera_ray(intr, pose, 2, 3);
  Rayd r2 = camera_ray(intr, pose, 12, 8);
  KernelRays<double> k1 = rbk_transform(ctx, fwd, r1);
  KernelRays<double> k2 = rbk_transform(ctx, fwd, r2);
  // Same weights; and both rays get the same rigid motion, so the delta of
  // the transformed origins equals the rotated delta of the originals.
  for (int q = 0; q < 3; ++q) CHECK(k1.weights[q] == k2.weights[q]);
  Mat3d R = rodrigues(Vec3d{val_of(fwd.screws[1].r.x),
                            val_of(fwd.screws[1].r.y),
                            val_of(fwd.screws[1].r.z)});
  Vec3d want = R * (r1.o - r2.o);
  Vec3d got = k1.rays[1].o - k2.rays[1].o;
  CHECK(rel_err(got.x, want.x) < 1e-12);
  CHECK(rel_err(got.y, want.y) < 1e-12);
  CHECK(rel_err(got.z, want.z) < 1e-12);
}

TEST_CASE("rbk tape path matches double path and is differentiable") {
  KernelConfig cfg = small_cfg(KernelType::Rbk);
  cfg.n = 2;
  KernelParams kp = make_params(cfg, 1, false);
  Rayd ray{{0.4, -0.1, 3.0}, {0.02, 0.05, -1.0}};

  auto run = [&](const auto& x) {
    using S = std::decay_t<decltype(x[0])>;
    EvalCtx<S> ctx;
    if constexpr (std::is_same_v<S, Var>) {
      ctx.tape = x[0].tape;
    } else {
      ctx.params = x.data();
    }
    RbkForward<S> fwd = rbk_forward(ctx, cfg, kp.off, 0);
    KernelRays<S> kr = rbk_transform(ctx, fwd, to_scalar_ray(ctx, ray));
    S acc = kr.weights[0] * 0.0;
    for (size_t q = 0; q < kr.rays.size(); ++q) {
      acc = acc + kr.rays[q].o.x * 0.3 + kr.rays[q].o.z * 0.15 +
            kr.rays[q].d.y * 0.7 + kr.weights[q] * double(2 * q + 1);
    }
    return acc;
  };

  double vd = run(kp.values);
  Tape tape;
  std::vector<Var> vx;
  for (double v : kp.values) vx.push_back(tape.input(v));
  Var vv = run(vx);
  CHECK(rel_err(val_of(vv), vd) < 1e-12);

  CHECK(gradcheck(run, kp.values) < 1e-5);
}

TEST_CASE("blur composition") {
  uint64_t before = compose_blur_calls().load();
  std::vector<Vec3d> colors = {{1, 0, 0}, {0, 0, 1}};
  std::vector<double> w = {0.3, 0.7};
  Vec3d c = compose_blur(colors, w);
  CHECK(c.x == Catch::Approx(0.3).epsilon(1e-15));
  CHECK(c.y == 0.0);
  CHECK(c.z == Catch::Approx(0.7).epsilon(1e-15));
  CHECK(compose_blur_calls().load() == before + 1);

  CHECK_THROWS_AS(compose_blur(colors, std::vector<double>{0.3, 0.7001}),
                  InvariantError);
  CHECK_THROWS_AS(compose_blur(colors, std::vector<double>{0.3}),
                  InvariantError);
  CHECK_THROWS_AS(compose_blur(std::vector<Vec3d>{}, std::vector<double>{}),
                  InvariantError);
}

TEST_CASE("blur composition convexity") {
  // A convex combination stays inside the per-channel min/max of its inputs.
  Rng rng(41);
  for (int trial = 0; trial < 200; ++trial) {
    int n = 2 + int(rng.uniform() * 4);
    std::vector<Vec3d> colors;
    std::vector<double> logits;
    for (int q = 0; q < n; ++q) {
      colors.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
      logits.push_back(rng.uniform(-4, 4));
    }
    std::vector<double> w = softmax(logits);
    Vec3d c = compose_blur(colors, w);
    for (int ch = 0; ch < 3; ++ch) {
      double lo = 1e30, hi = -1e30;
      for (const Vec3d& col : colors) {
        lo = std::min(lo, (&col.x)[ch]);
        hi = std::max(hi, (&col.x)[ch]);
      }
      CHECK((&c.x)[ch] >= lo - 1e-12);
      CHECK((&c.x)[ch] <= hi + 1e-12);
    }
  }
}

TEST_CASE("hidden rays produce n patches over the rect") {
  Intrinsics intr = intr16();
  Pose pose = pose_z4();
  PixelRect rect{4, 5, 3};

  SECTION("none kernel replicates the camera rays") {
    KernelConfig cfg = small_cfg(KernelType::None);
    KernelOffsets off;
    EvalCtx<double> ctx{nullptr};
    auto patches = hidden_rays(ctx, cfg, off, 0, pose, intr, rect);
    REQUIRE(patches.size() == 3);
    for (const auto& p : patches) {
      REQUIRE(p.k == 3);
      REQUIRE(p.rays.size() == 9);
    }
    Rayd want = camera_ray(intr, pose, 5, 6);  // rect position (1,1)
    CHECK(patches[2].rays[4].o.x == want.o.x);
    CHECK(patches[2].rays[4].d.x == want.d.x);
  }

  SECTION("rbk identity start anchors patch zero to the camera rays") {
    KernelConfig cfg = small_cfg(KernelType::Rbk);
    KernelParams kp = make_params(cfg, 1, true);
    EvalCtx<double> ctx{kp.values.data()};
    auto patches = hidden_rays(ctx, cfg, kp.off, 0, pose, intr, rect);
    REQUIRE(patches.size() == 3);
    for (int dy = 0; dy < 3; ++dy) {
      for (int dx = 0; dx < 3; ++dx) {
        Rayd want = camera_ray(intr, pose, rect.x0 + dx, rect.y0 + dy);
        const Rayd& got = patches[0].rays[size_t(dy) * 3 + dx];
        CHECK(got.o.x == want.o.x);
        CHECK(got.d.y == want.d.y);
        CHECK(got.d.z == want.d.z);
      }
    }
  }

  SECTION("dsk patches follow the chi seeds") {
    KernelConfig cfg = small_cfg(KernelType::Dsk);
    KernelParams kp = make_params(cfg, 1, true);
    kp.values[size_t(kp.off.chi) + 4] = 2.0;  // chi_2 = (2, 0)
    EvalCtx<double> ctx{kp.values.data()};
    auto patches = hidden_rays(ctx, cfg, kp.off, 0, pose, intr, rect);
    Rayd want = camera_ray(intr, pose, rect.x0 + 2, rect.y0);
    CHECK(patches[2].rays[0].d.x == want.d.x);
    Rayd base = camera_ray(intr, pose, rect.x0, rect.y0);
    CHECK(patches[0].rays[0].d.x == base.d.x);
  }
}
