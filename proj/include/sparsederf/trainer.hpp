// Copyright (c) 2026 sparsederf authors
// SPDX-License-Identifier: Apache-2.0
//
// Training loop: Adam over the joint field + blur-kernel parameter vector,
// exponential learning-rate decay, deterministic batching, loss assembly
// (blurred reconstruction, surface smoothness on integrated unobserved
// rays, perceptual distillation), checkpointing, and evaluation.

#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sparsederf/blur.hpp"
#include "sparsederf/data.hpp"
#include "sparsederf/field.hpp"
#include "sparsederf/metrics.hpp"
#include "sparsederf/parallel.hpp"
#include "sparsederf/params.hpp"
#include "sparsederf/regularize.hpp"
#include "sparsederf/render.hpp"
#include "sparsederf/synth.hpp"
#include "sparsederf/tomlcfg.hpp"

namespace sderf {

struct TrainConfig {
  int iterations = 20000;  // 20k/40k/60k for the 2/4/6-view protocols
  int batch_rays = 1024;
  double lr_start = 5e-4;
  double lr_end = 8e-5;
  KernelType kernel = KernelType::Rbk;
  bool use_ss = true;
  bool use_mgs = true;
  bool use_pd = true;
  double lambda_ss = 0.01;
  double lambda_pd = 0.01;
  uint64_t seed = 0;
  int threads = 1;

  FieldArch arch;
  KernelConfig kcfg;
  SampleConfig sampling;
  int ss_patch = 8;   // S_ptc
  int pd_patch = 64;  // S_ptc for distillation
  int n_unseen = 4;   // sampled unseen poses when the scene declares none
  double mgs_rho = 1.0;  // used when the manifest carries no preset
  double mgs_eta = 1.0;
  int checkpoint_every = 500;
  int metrics_every = 50;
  int eval_scale = 1;  // render evaluation at 1/scale resolution

  // Desk-scale settings sized for the bundled synthetic scenes.
  static TrainConfig synthetic_preset() {
    TrainConfig c;
    c.iterations = 2000;
    c.batch_rays = 48;
    c.sampling.n_coarse = 20;
    c.sampling.n_fine = 20;
    c.ss_patch = 4;
    c.pd_patch = 6;
    c.n_unseen = 2;
    c.kcfg.embed_dim = 16;
    c.kcfg.hidden = 32;
    c.kcfg.chi_window = 6.0;
    return c;
  }

  void validate() const {
    if (iterations < 1) throw ConfigError("iterations must be positive");
    if (batch_rays < 1) throw ConfigError("batch_rays must be positive");
    if (!(lr_start > 0.0) || !(lr_end > 0.0))
      throw ConfigError("learning rates must be positive");
    if (lambda_ss < 0.0 || lambda_pd < 0.0)
      throw ConfigError("loss weights must be non-negative");
    if (use_ss && ss_patch < 2)
      throw ConfigError("ss_patch must be at least 2");
    if (use_pd && pd_patch < 3)
      throw ConfigError("pd_patch must be at least 3");
    if (threads < 1) throw ConfigError("threads must be positive");
    if (sampling.n_coarse < 2 || sampling.n_fine < 0)
      throw ConfigError("invalid sample counts");
    if (eval_scale < 1) throw ConfigError("eval_scale must be >= 1");
  }
};

inline KernelType parse_kernel(const std::string& s) {
  if (s == "none") return KernelType::None;
  if (s == "dsk") return KernelType::Dsk;
  if (s == "rbk") return KernelType::Rbk;
  throw ConfigError("unknown kernel type: " + s);
}

inline std::string kernel_name(KernelType t) {
  switch (t) {
    case KernelType::None: return "none";
    case KernelType::Dsk: return "dsk";
    case KernelType::Rbk: return "rbk";
  }
  return "?";
}

// TOML keys mirror the TrainConfig fields; unset keys keep their defaults.
inline TrainConfig train_config_from(const TomlConfig& t) {
  TrainConfig c;
  if (t.get_string("train.preset", "") == "synthetic")
    c = TrainConfig::synthetic_preset();
  c.iterations = int(t.get_int("train.iterations", c.iterations));
  c.batch_rays = int(t.get_int("train.batch_rays", c.batch_rays));
  c.lr_start = t.get_double("train.lr_start", c.lr_start);
  c.lr_end = t.get_double("train.lr_end", c.lr_end);
  c.kernel = parse_kernel(t.get_string("train.kernel", kernel_name(c.kernel)));
  c.use_ss = t.get_bool("train.ss", c.use_ss);
  c.use_mgs = t.get_bool("train.mgs", c.use_mgs);
  c.use_pd = t.get_bool("train.pd", c.use_pd);
  c.lambda_ss = t.get_double("train.lambda_ss", c.lambda_ss);
  c.lambda_pd = t.get_double("train.lambda_pd", c.lambda_pd);
  c.seed = uint64_t(t.get_int("train.seed", int64_t(c.seed)));
  c.threads = int(t.get_int("train.threads", c.threads));
  c.ss_patch = int(t.get_int("train.ss_patch", c.ss_patch));
  c.pd_patch = int(t.get_int("train.pd_patch", c.pd_patch));
  c.n_unseen = int(t.get_int("train.n_unseen", c.n_unseen));
  c.mgs_rho = t.get_double("train.mgs_rho", c.mgs_rho);
  c.mgs_eta = t.get_double("train.mgs_eta", c.mgs_eta);
  c.checkpoint_every =
      int(t.get_int("train.checkpoint_every", c.checkpoint_every));
  c.metrics_every = int(t.get_int("train.metrics_every", c.metrics_every));
  c.eval_scale = int(t.get_int("train.eval_scale", c.eval_scale));
  c.arch.pos_freqs = int(t.get_int("field.pos_freqs", c.arch.pos_freqs));
  c.arch.dir_freqs = int(t.get_int("field.dir_freqs", c.arch.dir_freqs));
  c.arch.width = int(t.get_int("field.width", c.arch.width));
  c.arch.depth = int(t.get_int("field.depth", c.arch.depth));
  c.arch.color_hidden =
      int(t.get_int("field.color_hidden", c.arch.color_hidden));
  c.kcfg.n = int(t.get_int("kernel.n", c.kcfg.n));
  c.kcfg.embed_dim = int(t.get_int("kernel.embed_dim", c.kcfg.embed_dim));
  c.kcfg.hidden = int(t.get_int("kernel.hidden", c.kcfg.hidden));
  c.kcfg.layers = int(t.get_int("kernel.layers", c.kcfg.layers));
  c.kcfg.chi_window = t.get_double("kernel.chi_window", c.kcfg.chi_window);
  c.sampling.n_coarse = int(t.get_int("sampling.n_coarse", c.sampling.n_coarse));
  c.sampling.n_fine = int(t.get_int("sampling.n_fine", c.sampling.n_fine));
  c.validate();
  return c;
}

// Exponential decay from lr_start to lr_end over the full schedule.
inline double lr_at(int step, const TrainConfig& cfg) {
  if (step < 0 || step > cfg.iterations)
    throw ConfigError("lr_at: step outside [0, iterations]");
  return cfg.lr_start *
         std::pow(cfg.lr_end / cfg.lr_start,
                  double(step) / double(cfg.iterations));
}

// ============================================================================
// Adam
// ============================================================================

struct AdamState {
  std::vector<double> m, v;
  int64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void init(size_t n) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
    t = 0;
  }

  void update(double* p, const double* g, size_t n, double lr) {
    if (m.size() != n || v.size() != n)
      throw InvariantError("adam moments do not match parameter count");
    ++t;
    double bc1 = 1.0 - std::pow(beta1, double(t));
    double bc2 = 1.0 - std::pow(beta2, double(t));
    for (size_t i = 0; i < n; ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
    }
  }
};

// ============================================================================
// Trainer state
// ============================================================================

struct LossBreakdown {
  double recon = 0.0;
  double ss = 0.0;
  double pd = 0.0;
  double total = 0.0;
};

struct StepStats {
  int step = 0;  // step index that was just executed
  LossBreakdown loss;
  double lr = 0.0;
};

struct Trainer {
  TrainConfig cfg;
  Scene scene;
  std::map<int, Image> predeblurred;
  FieldArch arch;
  KernelConfig kcfg;
  MGSConfig mgs;
  ParamStore params;
  FieldOffsets foff;
  KernelOffsets koff;
  AdamState adam;
  std::vector<int> train_ids;
  std::vector<Pose> unseen_poses;
  int n_views = 0;  // embedding table entries (max view id + 1)
  int step = 0;
  Rng root{0};

  std::vector<Tape> tapes;                // one per worker
  std::vector<std::vector<double>> grads;  // one per worker
};

inline Trainer make_trainer(const TrainConfig& cfg_in, Scene scene) {
  TrainConfig cfg = cfg_in;
  cfg.validate();
  Trainer tr;
  tr.cfg = cfg;
  tr.scene = std::move(scene);
  tr.arch = cfg.arch;
  tr.kcfg = cfg.kcfg;
  tr.kcfg.type = cfg.kernel;
  tr.root = Rng(cfg.seed);
  tr.train_ids = tr.scene.manifest.ids(ViewRole::Train);
  if (tr.train_ids.empty()) throw DataError("scene has no train views");
  if (cfg.use_pd) tr.predeblurred = load_predeblurred(tr.scene.manifest);

  for (const ViewSpec& v : tr.scene.manifest.views)
    tr.n_views = std::max(tr.n_views, v.id + 1);

  int fp = tr.arch.param_count();
  tr.foff.coarse = tr.params.add_block("field_coarse", fp);
  tr.foff.fine = tr.params.add_block("field_fine", fp);
  if (tr.kcfg.type != KernelType::None) {
    MlpArch ka = tr.kcfg.type == KernelType::Dsk ? tr.kcfg.dsk_arch()
                                                 : tr.kcfg.rbk_arch();
    tr.koff.embed = tr.params.add_block("kernel_embed",
                                        tr.n_views * tr.kcfg.embed_dim);
    tr.koff.mlp = tr.params.add_block("kernel_mlp", ka.param_count());
    if (tr.kcfg.type == KernelType::Dsk)
      tr.koff.chi = tr.params.add_block("kernel_chi", 2 * tr.kcfg.n);
  }

  double* p = tr.params.data();
  init_field(p + tr.foff.coarse, tr.arch, tr.root.fork(1));
  init_field(p + tr.foff.fine, tr.arch, tr.root.fork(2));
  if (tr.kcfg.type != KernelType::None) {
    double* chi = tr.koff.chi >= 0 ? p + tr.koff.chi : nullptr;
    init_kernel(p + tr.koff.embed, p + tr.koff.mlp, chi, tr.kcfg, tr.n_views,
                tr.root.fork(3));
  }
  tr.adam.init(tr.params.size());

  tr.mgs.mode = cfg.use_mgs ? MgsMode::Modulated : MgsMode::Off;
  if (tr.scene.manifest.has_mgs) {
    tr.mgs.rho = tr.scene.manifest.mgs_rho;
    tr.mgs.eta = tr.scene.manifest.mgs_eta;
  } else {
    tr.mgs.rho = cfg.mgs_rho;
    tr.mgs.eta = cfg.mgs_eta;
  }
  tr.mgs.validate();

  // Fixed unseen poses for the whole run: declared heldout-unseen views if
  // the scene has them, sampled inside the camera box otherwise.
  for (int id : tr.scene.manifest.ids(ViewRole::HeldoutUnseen))
    tr.unseen_poses.push_back(tr.scene.manifest.view(id).pose);
  if (tr.unseen_poses.empty() && cfg.use_ss) {
    std::vector<Pose> anchors;
    for (int id : tr.train_ids)
      anchors.push_back(tr.scene.manifest.view(id).pose);
    Rng urng = tr.root.fork(4);
    for (int i = 0; i < cfg.n_unseen; ++i)
      tr.unseen_poses.push_back(sample_unseen_pose(urng, anchors, 0.1));
  }

  tr.tapes.resize(size_t(cfg.threads));
  tr.grads.resize(size_t(cfg.threads));
  return tr;
}

namespace detail {

// Normalized sample distance for gradient scaling: NDC t already lives in
// [0, 1]; world-space t is divided by far.
inline double mgs_dist_scale(const SceneManifest& m) {
  return m.ndc ? 1.0 : 1.0 / m.far();
}

template <class S>
RayRender<S> render_world_ray(EvalCtx<S>& ctx, const Trainer& tr,
                              const Ray<S>& wray, const Rng& rng,
                              const MgsHook& hook) {
  const SceneManifest& m = tr.scene.manifest;
  Vec3<S> dirv = normalized(wray.d);
  Block<S> denc = encode_direction(ctx, tr.arch, dirv);
  Ray<S> ray = wray;
  double rn = m.near(), rf = m.far();
  if (m.ndc) {
    ray = ndc_ray(ray, m.intr(), m.near());
    rn = 0.0;
    rf = 1.0;
  }
  return render_ray(ctx, tr.arch, tr.foff, ray, denc, rn, rf, tr.cfg.sampling,
                    rng, hook);
}

inline void add_scaled(std::vector<double>& acc, const double* g, size_t n,
                       double scale) {
  if (acc.size() != n) acc.assign(n, 0.0);
  for (size_t i = 0; i < n; ++i) acc[i] += scale * g[i];
}

inline void check_finite(double v, const char* what) {
  if (!std::isfinite(v))
    throw NumericError(std::string("non-finite ") + what);
}

inline std::string diag(int step, int view, int px, int py) {
  return "at step " + std::to_string(step) + ", view " +
         std::to_string(view) + ", pixel (" + std::to_string(px) + ", " +
         std::to_string(py) + ")";
}

}  // namespace detail

// ============================================================================
// One optimization step
// ============================================================================

inline StepStats train_step(Trainer& tr) {
  const TrainConfig& cfg = tr.cfg;
  const SceneManifest& m = tr.scene.manifest;
  const Intrinsics& intr = m.intr();
  size_t P = tr.params.size();
  double lr = lr_at(std::min(tr.step, cfg.iterations), cfg);
  Rng srng = tr.root.fork(uint64_t(10) + uint64_t(tr.step));

  int view = tr.train_ids[size_t(tr.step) % tr.train_ids.size()];
  const ViewSpec& vs = m.view(view);
  const Image& target = tr.scene.images.at(view);
  MgsHook hook{tr.mgs, detail::mgs_dist_scale(m)};

  for (auto& g : tr.grads) g.assign(P, 0.0);

  // ---- blurred reconstruction over a pixel batch --------------------------
  int batch = cfg.batch_rays;
  std::vector<int> pxs(static_cast<size_t>(batch));
  std::vector<int> pys(static_cast<size_t>(batch));
  {
    Rng prng = srng.fork(1);
    for (int i = 0; i < batch; ++i) {
      pxs[size_t(i)] = std::min(int(prng.uniform() * intr.width),
                                intr.width - 1);
      pys[size_t(i)] = std::min(int(prng.uniform() * intr.height),
                                intr.height - 1);
    }
  }
  std::vector<double> recon_part(size_t(cfg.threads), 0.0);
  double recon_norm = 1.0 / (3.0 * double(batch));
  Rng recon_rng = srng.fork(2);

  parallel_for(batch, cfg.threads, [&](int i, int tid) {
    int px = pxs[size_t(i)], py = pys[size_t(i)];
    try {
    Tape& tape = tr.tapes[size_t(tid)];
    tape.reset();
    EvalCtx<Var> ctx{&tape};
    tape.inputs_bulk(tr.params.data(), int32_t(P));

    Rayd wray = camera_ray(intr, vs.pose, px, py);
    KernelRays<Var> kr;
    if (tr.kcfg.type == KernelType::Dsk) {
      kr = dsk_transform(ctx, tr.kcfg, tr.koff, view, vs.pose, intr,
                         Vec2d{double(px), double(py)});
    } else if (tr.kcfg.type == KernelType::Rbk) {
      RbkForward<Var> fwd = rbk_forward(ctx, tr.kcfg, tr.koff, view);
      kr = rbk_transform(ctx, fwd, to_scalar_ray(ctx, wray));
    } else {
      kr.rays.push_back(to_scalar_ray(ctx, wray));
    }

    // All transforms of one pixel share the rng substream, so an identity
    // kernel reproduces the clean ray sample-for-sample.
    Rng ray_rng = recon_rng.fork(uint64_t(i));
    std::vector<Vec3<Var>> fine, coarse;
    for (const Ray<Var>& r : kr.rays) {
      RayRender<Var> rr = detail::render_world_ray(ctx, tr, r, ray_rng, hook);
      fine.push_back(rr.fine.rgb);
      coarse.push_back(rr.coarse.rgb);
    }
    Vec3<Var> bf, bc;
    if (tr.kcfg.type == KernelType::None) {
      bf = fine[0];
      bc = coarse[0];
    } else {
      bf = compose_blur(fine, kr.weights);
      bc = compose_blur(coarse, kr.weights);
    }

    Var loss = tape.constant(0.0);
    for (int ch = 0; ch < 3; ++ch) {
      double t = target.at(px, py, ch);
      Var df = (&bf.x)[ch] - t;
      Var dc = (&bc.x)[ch] - t;
      loss = loss + df * df + dc * dc;
    }
    detail::check_finite(val_of(loss), "reconstruction loss");
    tape.backward(loss);
    detail::add_scaled(tr.grads[size_t(tid)], tape.adjoints(), P, recon_norm);
    recon_part[size_t(tid)] += val_of(loss);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " " +
                         detail::diag(tr.step, view, px, py));
    }
  });
  double recon = 0.0;
  for (double r : recon_part) recon += r;
  recon *= recon_norm;

  // ---- surface smoothness on integrated unobserved rays -------------------
  double ss = 0.0;
  if (cfg.use_ss) {
    int k = cfg.ss_patch;
    int n_patches = tr.kcfg.n + int(tr.unseen_poses.size());
    if (tr.kcfg.type == KernelType::None) n_patches = 1 + int(tr.unseen_poses.size());
    double ss_norm =
        1.0 / (double(n_patches) * 2.0 * double(k) * double(k - 1));
    std::vector<double> ss_part(size_t(cfg.threads), 0.0);
    Rng ss_seed = srng.fork(3);
    Rng render_seed = srng.fork(4);

    parallel_for(n_patches, cfg.threads, [&](int pi, int tid) {
      try {
      Tape& tape = tr.tapes[size_t(tid)];
      tape.reset();
      EvalCtx<Var> ctx{&tape};
      tape.inputs_bulk(tr.params.data(), int32_t(P));
      Rng patch_rng = ss_seed;  // every worker replays the same rect draws
      std::vector<RayPatch<Var>> patches = integrated_unobserved_patches(
          ctx, tr.kcfg, tr.koff, view, vs.pose, intr, tr.unseen_poses, k,
          patch_rng);
      // Kernel "none" yields tr.kcfg.n identical hidden patches; keep the
      // first and the unseen-pose patches.
      if (tr.kcfg.type == KernelType::None && tr.kcfg.n > 1)
        patches.erase(patches.begin() + 1, patches.begin() + tr.kcfg.n);
      if (pi >= int(patches.size()))
        throw InvariantError("unobserved patch index out of range");
      PatchRender<Var> pr = render_rays(
          ctx, tr.arch, tr.foff, patches[size_t(pi)].rays, k, intr, m.near(),
          m.far(), m.ndc, cfg.sampling, render_seed.fork(uint64_t(pi)), hook);
      Var term = ss_patch_term(pr.depth, pr.rgb, k);
      detail::check_finite(val_of(term), "surface smoothness term");
      tape.backward(term);
      detail::add_scaled(tr.grads[size_t(tid)], tape.adjoints(), P,
                         cfg.lambda_ss * ss_norm);
      ss_part[size_t(tid)] += val_of(term);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " in unobserved patch " +
                           std::to_string(pi) + " " +
                           detail::diag(tr.step, view, -1, -1));
      }
    });
    for (double s : ss_part) ss += s;
    ss *= ss_norm;
  }

  // ---- perceptual distillation against the pre-deblurred input ------------
  double pd = 0.0;
  if (cfg.use_pd && tr.predeblurred.count(view)) {
    int k = cfg.pd_patch;
    Rng rect_rng = srng.fork(5);
    PixelRect rect = random_rect(rect_rng, intr, k);
    try {
    Tape& tape = tr.tapes[0];
    tape.reset();
    EvalCtx<Var> ctx{&tape};
    tape.inputs_bulk(tr.params.data(), int32_t(P));
    PatchRender<Var> pr =
        render_patch(ctx, tr.arch, tr.foff, vs.pose, intr, rect, m.near(),
                     m.far(), m.ndc, cfg.sampling, srng.fork(6), hook);
    const Image& ref = tr.predeblurred.at(view);
    std::vector<Vec3<double>> tgt;
    tgt.reserve(size_t(k) * k);
    for (int dy = 0; dy < k; ++dy)
      for (int dx = 0; dx < k; ++dx)
        tgt.push_back(Vec3<double>{ref.at(rect.x0 + dx, rect.y0 + dy, 0),
                                   ref.at(rect.x0 + dx, rect.y0 + dy, 1),
                                   ref.at(rect.x0 + dx, rect.y0 + dy, 2)});
    Var ploss = perceptual_loss(ctx, pr.rgb, tgt, k, shared_filter_bank());
    detail::check_finite(val_of(ploss), "perceptual loss");
    tape.backward(ploss);
    detail::add_scaled(tr.grads[0], tape.adjoints(), P, cfg.lambda_pd);
    pd = val_of(ploss);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " " +
                         detail::diag(tr.step, view, rect.x0, rect.y0));
    }
  }

  // ---- reduce, check, update ----------------------------------------------
  for (int t = 1; t < cfg.threads; ++t)
    for (size_t i = 0; i < P; ++i) tr.grads[0][i] += tr.grads[size_t(t)][i];

  double total = total_loss(recon, ss, pd, cfg.lambda_ss, cfg.lambda_pd);
  if (!std::isfinite(total))
    throw NumericError("non-finite total loss " +
                       detail::diag(tr.step, view, -1, -1));
  tr.adam.update(tr.params.data(), tr.grads[0].data(), P, lr);

  StepStats st;
  st.step = tr.step;
  st.loss = {recon, ss, pd, total};
  st.lr = lr;
  ++tr.step;
  return st;
}

// ============================================================================
// Clean rendering and evaluation
// ============================================================================

// Full-view render WITHOUT the blur kernel. depth_out, if given, receives
// depth normalized to [0, 1] by the scene near/far (NDC depth is already
// the [0, 1] plane parameter).
inline Image render_view(Trainer& tr, const Pose& pose, Rng view_rng,
                         int scale = 1, Image* depth_out = nullptr) {
  const SceneManifest& m = tr.scene.manifest;
  Intrinsics intr = m.intr();
  if (scale > 1) {
    intr.width /= scale;
    intr.height /= scale;
    intr.focal /= scale;
    if (intr.width < 1 || intr.height < 1)
      throw ConfigError("eval_scale leaves no pixels");
  }
  Image img{intr.width, intr.height};
  if (depth_out) *depth_out = Image{intr.width, intr.height};
  SampleConfig sc = tr.cfg.sampling;
  sc.normalize_depth = true;

  parallel_for(intr.height, tr.cfg.threads, [&](int py, int) {
    EvalCtx<double> ctx{tr.params.data()};
    for (int px = 0; px < intr.width; ++px) {
      Ray<double> wray = camera_ray(intr, pose, px, py);
      Vec3d dirv = normalized(wray.d);
      Block<double> denc = encode_direction(ctx, tr.arch, dirv);
      Ray<double> ray = wray;
      double rn = m.near(), rf = m.far();
      if (m.ndc) {
        ray = ndc_ray(ray, intr, m.near());
        rn = 0.0;
        rf = 1.0;
      }
      RayRender<double> rr =
          render_ray(ctx, tr.arch, tr.foff, ray, denc, rn, rf, sc,
                     view_rng.fork(pixel_key(intr, px, py)), NoHook{});
      for (int ch = 0; ch < 3; ++ch)
        img.at(px, py, ch) =
            std::min(1.0, std::max(0.0, (&rr.fine.rgb.x)[ch]));
      if (depth_out) {
        double d = rr.fine.depth;
        d = m.ndc ? d : (d - m.near()) / (m.far() - m.near());
        d = std::min(1.0, std::max(0.0, d));
        for (int ch = 0; ch < 3; ++ch) depth_out->at(px, py, ch) = d;
      }
    }
  });
  return img;
}

namespace detail {

inline Image box_downsample(const Image& src, int scale) {
  Image out{src.width / scale, src.height / scale};
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      for (int ch = 0; ch < 3; ++ch) {
        double acc = 0.0;
        for (int dy = 0; dy < scale; ++dy)
          for (int dx = 0; dx < scale; ++dx)
            acc += src.at(x * scale + dx, y * scale + dy, ch);
        out.at(x, y, ch) = acc / double(scale * scale);
      }
    }
  }
  return out;
}

}  // namespace detail

struct ViewScore {
  int id = 0;
  double psnr = 0.0;
  double ssim = -1.0;  // -1 when the 11x11 window does not fit
};

struct EvalReport {
  std::vector<ViewScore> views;
  double mean_psnr = 0.0;
  double mean_ssim = -1.0;
};

// Clean renders against the best available reference (declared sharp image
// when present, the captured image otherwise).
inline EvalReport evaluate(Trainer& tr, ViewRole role) {
  EvalReport rep;
  int scale = tr.cfg.eval_scale;
  double ssim_sum = 0.0;
  int ssim_n = 0;
  for (int id : tr.scene.manifest.ids(role)) {
    const ViewSpec& vs = tr.scene.manifest.view(id);
    if (vs.image.empty()) continue;
    Rng vrng = Rng(tr.cfg.seed).fork(0xE7A1).fork(uint64_t(id));
    Image render = render_view(tr, vs.pose, vrng, scale);
    const Image& full = tr.scene.sharp.count(id) ? tr.scene.sharp.at(id)
                                                 : tr.scene.images.at(id);
    Image ref = scale > 1 ? detail::box_downsample(full, scale) : full;
    ViewScore s;
    s.id = id;
    s.psnr = psnr(render, ref);
    if (ref.width >= 11 && ref.height >= 11) {
      s.ssim = ssim(render, ref);
      ssim_sum += s.ssim;
      ++ssim_n;
    }
    rep.mean_psnr += s.psnr;
    rep.views.push_back(s);
  }
  if (rep.views.empty()) throw DataError("no views with images to evaluate");
  rep.mean_psnr /= double(rep.views.size());
  if (ssim_n > 0) rep.mean_ssim = ssim_sum / double(ssim_n);
  return rep;
}

// ============================================================================
// Kernel motion report
// ============================================================================

// Re-renders each train view THROUGH the learned kernel and scores it
// against the captured blurry input; also reports the kernel's weight
// entropy. Gated on the synthetic ground-truth sidecar.
inline nlohmann::json kernel_motion_report(Trainer& tr,
                                           const std::string& sidecar_path) {
  nlohmann::json rep;
  std::map<int, BlurTruth> truth = load_blur_truth(sidecar_path);
  if (truth.empty()) {
    rep["skipped"] = true;
    rep["reason"] = "no blur_truth sidecar at " + sidecar_path;
    return rep;
  }
  rep["skipped"] = false;
  rep["views"] = nlohmann::json::array();
  const SceneManifest& m = tr.scene.manifest;
  const Intrinsics& intr = m.intr();

  for (int id : tr.train_ids) {
    const ViewSpec& vs = m.view(id);
    Image rerender{intr.width, intr.height};
    std::vector<double> entropy_part(size_t(tr.cfg.threads), 0.0);
    Rng vrng = Rng(tr.cfg.seed).fork(0xB1E5).fork(uint64_t(id));

    parallel_for(intr.height, tr.cfg.threads, [&](int py, int tid) {
      EvalCtx<double> ctx{tr.params.data()};
      RbkForward<double> fwd;
      if (tr.kcfg.type == KernelType::Rbk)
        fwd = rbk_forward(ctx, tr.kcfg, tr.koff, id);
      for (int px = 0; px < intr.width; ++px) {
        Rayd wray = camera_ray(intr, vs.pose, px, py);
        KernelRays<double> kr;
        if (tr.kcfg.type == KernelType::Dsk) {
          kr = dsk_transform(ctx, tr.kcfg, tr.koff, id, vs.pose, intr,
                             Vec2d{double(px), double(py)});
        } else if (tr.kcfg.type == KernelType::Rbk) {
          kr = rbk_transform(ctx, fwd, wray);
        } else {
          kr.rays.push_back(wray);
          kr.weights.push_back(1.0);
        }
        Rng ray_rng = vrng.fork(pixel_key(intr, px, py));
        std::vector<Vec3<double>> fine;
        for (const Rayd& r : kr.rays) {
          RayRender<double> rr = detail::render_world_ray(
              ctx, tr, r, ray_rng, MgsHook{MGSConfig{}, 1.0});
          fine.push_back(rr.fine.rgb);
        }
        Vec3d b = tr.kcfg.type == KernelType::None
                      ? fine[0]
                      : compose_blur(fine, kr.weights);
        for (int ch = 0; ch < 3; ++ch)
          rerender.at(px, py, ch) = std::min(1.0, std::max(0.0, (&b.x)[ch]));
        double h = 0.0;
        for (double w : kr.weights)
          if (w > 1e-12) h -= w * std::log(w);
        entropy_part[size_t(tid)] += h;
      }
    });

    double entropy = 0.0;
    for (double e : entropy_part) entropy += e;
    entropy /= double(intr.width) * double(intr.height);

    Image clean = render_view(tr, vs.pose,
                              Rng(tr.cfg.seed).fork(0xB1E5).fork(uint64_t(id)));
    const Image& blurry = tr.scene.images.at(id);
    nlohmann::json jv;
    jv["view"] = id;
    jv["rerender_psnr"] = psnr(rerender, blurry);
    jv["clean_psnr"] = psnr(clean, blurry);
    jv["weight_entropy"] = entropy;
    jv["truth_taps"] = truth.count(id) ? truth.at(id).screws.size() : 0;
    rep["views"].push_back(std::move(jv));
  }
  return rep;
}

// ============================================================================
// Checkpointing
// ============================================================================

inline void save_state(const Trainer& tr, const std::string& path) {
  Checkpoint ck;
  ck.step = tr.step;
  ck.params = tr.params;
  ck.adam_m = tr.adam.m;
  ck.adam_v = tr.adam.v;
  ck.extra["adam_t"] = tr.adam.t;
  ck.extra["kernel"] = kernel_name(tr.kcfg.type);
  ck.extra["seed"] = tr.cfg.seed;
  save_checkpoint(path, ck);
}

inline void load_state(Trainer& tr, const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.params.size() != tr.params.size())
    throw DataError("checkpoint parameter count does not match the model");
  if (ck.extra.value("kernel", "") != kernel_name(tr.kcfg.type))
    throw DataError("checkpoint kernel type does not match the config");
  tr.params = ck.params;
  tr.adam.m = ck.adam_m;
  tr.adam.v = ck.adam_v;
  tr.adam.t = ck.extra.value("adam_t", int64_t(ck.step));
  tr.step = int(ck.step);
}

// ============================================================================
// Full loop: metrics log + periodic checkpoints
// ============================================================================

inline StepStats run_training(Trainer& tr, const std::string& out_dir,
                              const std::string& resume_path = "") {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  if (!resume_path.empty()) load_state(tr, resume_path);

  std::ofstream metrics((fs::path(out_dir) / "metrics.jsonl").string(),
                        tr.step > 0 ? std::ios::app : std::ios::trunc);
  if (!metrics) throw IOError("cannot write metrics log in " + out_dir);

  char name[64];
  StepStats st;
  while (tr.step < tr.cfg.iterations) {
    st = train_step(tr);
    int done = st.step + 1;
    if (done % tr.cfg.metrics_every == 0 || done == tr.cfg.iterations) {
      nlohmann::json j;
      j["step"] = st.step;
      j["losses"] = {{"total", st.loss.total},
                     {"recon", st.loss.recon},
                     {"ss", st.loss.ss},
                     {"pd", st.loss.pd}};
      j["lr"] = st.lr;
      metrics << j.dump() << "\n";
      metrics.flush();
    }
    if (done % tr.cfg.checkpoint_every == 0 && done != tr.cfg.iterations) {
      std::snprintf(name, sizeof name, "ckpt_%06d.sdrf", done);
      save_state(tr, (fs::path(out_dir) / name).string());
    }
  }
  save_state(tr, (fs::path(out_dir) / "ckpt_final.sdrf").string());
  return st;
}

}  // namespace sderf
