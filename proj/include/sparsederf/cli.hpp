// Copyright (c) 2026 sparsederf authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line entry point: synth / train / render / eval / plot-mgs /
// import-llff. Every run writes a run.json provenance record into --out.

#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sparsederf/llff.hpp"
#include "sparsederf/trainer.hpp"

#ifndef SDERF_GIT_DESCRIBE
#define SDERF_GIT_DESCRIBE "unknown"
#endif

namespace sderf {

namespace cli {

struct GlobalOpts {
  std::string config;
  std::string out;
  uint64_t seed = 0;
  bool seed_given = false;
  int threads = 0;  // 0 = leave config value
};

inline void add_globals(CLI::App* sub, GlobalOpts& g) {
  sub->add_option("--config", g.config, "TOML config file");
  sub->add_option("--out", g.out, "output directory");
  sub->add_option("--seed", g.seed, "rng seed")
      ->each([&g](const std::string&) { g.seed_given = true; });
  sub->add_option("--threads", g.threads, "worker thread cap");
}

inline TomlConfig load_config(const GlobalOpts& g) {
  return g.config.empty() ? TomlConfig{} : TomlConfig::parse_file(g.config);
}

// Flag > config > SPARSEDERF_SEED env > 0.
inline uint64_t resolve_seed(const GlobalOpts& g, const TomlConfig& cfg) {
  if (g.seed_given) return g.seed;
  if (cfg.has("train.seed")) return uint64_t(cfg.get_int("train.seed", 0));
  if (const char* env = std::getenv("SPARSEDERF_SEED"))
    return std::strtoull(env, nullptr, 10);
  return 0;
}

inline void write_run_json(const std::string& out_dir, const TomlConfig& cfg,
                           uint64_t seed) {
  std::filesystem::create_directories(out_dir);
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016llx",
                static_cast<unsigned long long>(cfg.hash()));
  nlohmann::json j;
  j["config_hash"] = hash;
  j["git_describe"] = SDERF_GIT_DESCRIBE;
  j["seed"] = seed;
  std::ofstream os(
      (std::filesystem::path(out_dir) / "run.json").string());
  if (!os) throw IOError("cannot write run.json in " + out_dir);
  os << j.dump(2) << "\n";
}

// ----------------------------------------------------------------------------
// synth
// ----------------------------------------------------------------------------

struct SynthOpts {
  GlobalOpts g;
  int views = 0;  // 0 = keep spec value
  int size = 0;
};

inline SyntheticSpec synth_spec_from(const TomlConfig& t) {
  SyntheticSpec s;
  s.name = t.get_string("synth.name", s.name);
  s.n_train = int(t.get_int("synth.n_train", s.n_train));
  s.n_test = int(t.get_int("synth.n_test", s.n_test));
  s.n_unseen = int(t.get_int("synth.n_unseen", s.n_unseen));
  s.width = int(t.get_int("synth.width", s.width));
  s.height = int(t.get_int("synth.height", s.height));
  s.focal_factor = t.get_double("synth.focal_factor", s.focal_factor);
  s.cam_radius = t.get_double("synth.cam_radius", s.cam_radius);
  s.arc_deg = t.get_double("synth.arc_deg", s.arc_deg);
  s.near = t.get_double("synth.near", s.near);
  s.far = t.get_double("synth.far", s.far);
  s.quad_samples = int(t.get_int("synth.quad_samples", s.quad_samples));
  s.n_taps = int(t.get_int("synth.n_taps", s.n_taps));
  s.tap_center = t.get_double("synth.tap_center", s.tap_center);
  s.motion_rot = t.get_double("synth.motion_rot", s.motion_rot);
  s.motion_trans = t.get_double("synth.motion_trans", s.motion_trans);
  s.seed = uint64_t(t.get_int("synth.seed", int64_t(s.seed)));
  return s;
}

inline int cmd_synth(const SynthOpts& o) {
  if (o.g.out.empty()) throw ConfigError("synth requires --out");
  TomlConfig cfg = load_config(o.g);
  SyntheticSpec spec = synth_spec_from(cfg);
  if (o.views > 0) spec.n_train = o.views;
  if (o.size > 0) {
    spec.width = o.size;
    spec.height = o.size;
  }
  if (o.g.seed_given) spec.seed = o.g.seed;
  write_run_json(o.g.out, cfg, spec.seed);
  SceneManifest m = generate_synthetic_scene(spec, o.g.out);
  std::printf("wrote %s (%d views, %dx%d)\n",
              (std::filesystem::path(o.g.out) / "scene.json").c_str(),
              int(m.views.size()), spec.width, spec.height);
  return 0;
}

// ----------------------------------------------------------------------------
// train
// ----------------------------------------------------------------------------

struct TrainOpts {
  GlobalOpts g;
  std::string scene;
  std::string resume;
  std::string kernel;
  int iterations = 0;
  int ss = -1, mgs = -1, pd = -1;  // tri-state: -1 keep config
};

inline Trainer trainer_from(const TrainOpts& o, TomlConfig& cfg) {
  if (!o.kernel.empty()) cfg.set("train.kernel", "\"" + o.kernel + "\"");
  if (o.iterations > 0)
    cfg.set("train.iterations", std::to_string(o.iterations));
  if (o.ss >= 0) cfg.set("train.ss", o.ss ? "true" : "false");
  if (o.mgs >= 0) cfg.set("train.mgs", o.mgs ? "true" : "false");
  if (o.pd >= 0) cfg.set("train.pd", o.pd ? "true" : "false");
  cfg.set("train.seed", std::to_string(resolve_seed(o.g, cfg)));
  if (o.g.threads > 0) cfg.set("train.threads", std::to_string(o.g.threads));
  TrainConfig tc = train_config_from(cfg);
  return make_trainer(tc, load_scene(o.scene));
}

inline int cmd_train(const TrainOpts& o) {
  if (o.g.out.empty()) throw ConfigError("train requires --out");
  if (o.scene.empty()) throw ConfigError("train requires --scene");
  TomlConfig cfg = load_config(o.g);
  Trainer tr = trainer_from(o, cfg);
  write_run_json(o.g.out, cfg, tr.cfg.seed);
  StepStats last = run_training(tr, o.g.out, o.resume);
  std::printf("trained %d steps: total %.6g (recon %.6g ss %.6g pd %.6g)\n",
              tr.step, last.loss.total, last.loss.recon, last.loss.ss,
              last.loss.pd);
  std::printf("checkpoint: %s\n",
              (std::filesystem::path(o.g.out) / "ckpt_final.sdrf").c_str());
  return 0;
}

// ----------------------------------------------------------------------------
// render / eval
// ----------------------------------------------------------------------------

struct RenderOpts {
  GlobalOpts g;
  std::string scene;
  std::string ckpt;
  std::vector<int> views;
  int scale = 1;
};

inline void write_view_pngs(Trainer& tr, int id, const std::string& out_dir,
                            int scale) {
  const ViewSpec& vs = tr.scene.manifest.view(id);
  Rng vrng = Rng(tr.cfg.seed).fork(0xE7A1).fork(uint64_t(id));
  Image depth;
  Image color = render_view(tr, vs.pose, vrng, scale, &depth);
  char name[64];
  std::snprintf(name, sizeof name, "view_%03d.png", id);
  save_png((std::filesystem::path(out_dir) / name).string(), color);
  std::snprintf(name, sizeof name, "view_%03d_depth.png", id);
  save_png((std::filesystem::path(out_dir) / name).string(), depth);
}

// Rebuild a trainer shell that matches a checkpoint: the kernel type is
// authoritative in the checkpoint header; the architecture comes from the
// config and is validated against the stored parameter count.
inline Trainer trainer_for_checkpoint(const GlobalOpts& g,
                                      const std::string& scene,
                                      const std::string& ckpt,
                                      TomlConfig& cfg) {
  Checkpoint ck = load_checkpoint(ckpt);
  cfg.set("train.kernel", "\"" + ck.extra.value("kernel", "rbk") + "\"");
  TrainOpts to;
  to.g = g;
  to.scene = scene;
  Trainer tr = trainer_from(to, cfg);
  load_state(tr, ckpt);
  return tr;
}

inline int cmd_render(const RenderOpts& o) {
  if (o.g.out.empty()) throw ConfigError("render requires --out");
  if (o.scene.empty() || o.ckpt.empty())
    throw ConfigError("render requires --scene and --ckpt");
  TomlConfig cfg = load_config(o.g);
  Trainer tr = trainer_for_checkpoint(o.g, o.scene, o.ckpt, cfg);
  tr.cfg.eval_scale = o.scale;
  write_run_json(o.g.out, cfg, tr.cfg.seed);
  std::vector<int> ids = o.views;
  if (ids.empty()) {
    for (const ViewSpec& v : tr.scene.manifest.views)
      if (!v.image.empty()) ids.push_back(v.id);
  }
  for (int id : ids) write_view_pngs(tr, id, o.g.out, o.scale);
  std::printf("rendered %d views into %s\n", int(ids.size()),
              o.g.out.c_str());
  return 0;
}

struct EvalOpts {
  GlobalOpts g;
  std::string scene;
  std::string ckpt;
  std::string split = "test";
  int scale = 1;
};

inline int cmd_eval(const EvalOpts& o) {
  if (o.g.out.empty()) throw ConfigError("eval requires --out");
  if (o.scene.empty() || o.ckpt.empty())
    throw ConfigError("eval requires --scene and --ckpt");
  ViewRole role;
  if (o.split == "train") {
    role = ViewRole::Train;
  } else if (o.split == "test") {
    role = ViewRole::Test;
  } else {
    throw ConfigError("--split must be train or test");
  }
  TomlConfig cfg = load_config(o.g);
  Trainer tr = trainer_for_checkpoint(o.g, o.scene, o.ckpt, cfg);
  tr.cfg.eval_scale = o.scale;
  write_run_json(o.g.out, cfg, tr.cfg.seed);

  EvalReport rep = evaluate(tr, role);
  nlohmann::json j;
  j["split"] = o.split;
  j["mean_psnr"] = rep.mean_psnr;
  j["mean_ssim"] = rep.mean_ssim;
  j["views"] = nlohmann::json::array();
  for (const ViewScore& s : rep.views) {
    j["views"].push_back(
        {{"view", s.id}, {"psnr", s.psnr}, {"ssim", s.ssim}});
    write_view_pngs(tr, s.id, o.g.out, o.scale);
  }
  std::ofstream os((std::filesystem::path(o.g.out) / "eval.json").string());
  if (!os) throw IOError("cannot write eval.json in " + o.g.out);
  os << j.dump(2) << "\n";

  if (tr.kcfg.type != KernelType::None) {
    std::string sidecar =
        (std::filesystem::path(o.scene).parent_path() / "blur_truth.json")
            .string();
    nlohmann::json krep = kernel_motion_report(tr, sidecar);
    std::ofstream ks(
        (std::filesystem::path(o.g.out) / "kernel_report.json").string());
    ks << krep.dump(2) << "\n";
  }
  std::printf("%s psnr %.3f ssim %.4f over %d views\n", o.split.c_str(),
              rep.mean_psnr, rep.mean_ssim, int(rep.views.size()));
  return 0;
}

// ----------------------------------------------------------------------------
// plot-mgs
// ----------------------------------------------------------------------------

struct PlotMgsOpts {
  GlobalOpts g;
  double rho = 1.0;
  std::vector<double> etas;
};

inline int cmd_plot_mgs(const PlotMgsOpts& o) {
  if (o.g.out.empty()) throw ConfigError("plot-mgs requires --out");
  std::vector<double> etas = o.etas;
  if (etas.empty()) etas = {0.5, 0.67, 1.0, 1.2, 1.5, 1.75, 2.0};
  TomlConfig cfg = load_config(o.g);
  write_run_json(o.g.out, cfg, resolve_seed(o.g, cfg));

  std::string path =
      (std::filesystem::path(o.g.out) / "mgs_curves.csv").string();
  std::ofstream os(path);
  if (!os) throw IOError("cannot write " + path);
  os << "delta,naive";
  for (double eta : etas) {
    char col[48];
    std::snprintf(col, sizeof col, ",min1j_rho%g_eta%g", o.rho, eta);
    os << col;
  }
  os << "\n";
  // CSV always; a raster plot is a reader-side concern, never a dependency.
  for (int i = 0; i <= 1000; ++i) {
    double d = double(i) / 1000.0;
    char cell[32];
    std::snprintf(cell, sizeof cell, "%.6f,%.9g", d,
                  std::min(1.0, d * d));
    os << cell;
    for (double eta : etas) {
      std::snprintf(cell, sizeof cell, ",%.9g",
                    std::min(1.0, mgs_curve(d, o.rho, eta)));
      os << cell;
    }
    os << "\n";
  }
  std::printf("wrote %s (%d curves, 1001 rows)\n", path.c_str(),
              int(etas.size()) + 1);
  return 0;
}

// ----------------------------------------------------------------------------
// import-llff
// ----------------------------------------------------------------------------

struct ImportOpts {
  GlobalOpts g;
  std::string dir;
  double bd_factor = 0.75;
  int hold_every = 8;
  std::string name;
};

inline int cmd_import_llff(const ImportOpts& o) {
  if (o.dir.empty()) throw ConfigError("import-llff requires --dir");
  LlffImportOptions opt;
  opt.bd_factor = o.bd_factor;
  opt.hold_every = o.hold_every;
  opt.name = o.name;
  TomlConfig cfg = load_config(o.g);
  std::string out = o.g.out.empty() ? o.dir : o.g.out;
  write_run_json(out, cfg, resolve_seed(o.g, cfg));
  SceneManifest m = import_llff(o.dir, opt);
  std::printf("imported %d views (%d train) into %s/scene.json\n",
              int(m.views.size()), int(m.ids(ViewRole::Train).size()),
              o.dir.c_str());
  return 0;
}

}  // namespace cli

// ----------------------------------------------------------------------------
// Entry point
// ----------------------------------------------------------------------------

inline int run_cli(int argc, const char* const* argv) {
  using namespace cli;
  CLI::App app{"sparse-view deblurred radiance field trainer"};
  app.require_subcommand(1);

  SynthOpts so;
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic scene");
  add_globals(synth, so.g);
  synth->add_option("--views", so.views, "number of training views");
  synth->add_option("--size", so.size, "square image size in pixels");

  TrainOpts to;
  CLI::App* train = app.add_subcommand("train", "optimize field + kernel");
  add_globals(train, to.g);
  train->add_option("--scene", to.scene, "scene.json path");
  train->add_option("--resume", to.resume, "checkpoint to resume from");
  train->add_option("--kernel", to.kernel, "none | dsk | rbk")
      ->check(CLI::IsMember({"none", "dsk", "rbk"}));
  train->add_option("--iterations", to.iterations, "training steps");
  train->add_flag("--ss,!--no-ss", to.ss, "surface smoothness");
  train->add_flag("--mgs,!--no-mgs", to.mgs, "modulated gradient scaling");
  train->add_flag("--pd,!--no-pd", to.pd, "perceptual distillation");

  RenderOpts ro;
  CLI::App* render = app.add_subcommand("render", "render checkpoint views");
  add_globals(render, ro.g);
  render->add_option("--scene", ro.scene, "scene.json path");
  render->add_option("--ckpt", ro.ckpt, "checkpoint path");
  render->add_option("--view", ro.views, "view ids (default: all imaged)");
  render->add_option("--scale", ro.scale, "downscale factor");

  EvalOpts eo;
  CLI::App* eval = app.add_subcommand("eval", "score clean renders");
  add_globals(eval, eo.g);
  eval->add_option("--scene", eo.scene, "scene.json path");
  eval->add_option("--ckpt", eo.ckpt, "checkpoint path");
  eval->add_option("--split", eo.split, "train | test");
  eval->add_option("--scale", eo.scale, "downscale factor");

  PlotMgsOpts po;
  CLI::App* plot = app.add_subcommand("plot-mgs", "dump gradient curves");
  add_globals(plot, po.g);
  plot->add_option("--rho", po.rho, "curve amplitude");
  plot->add_option("--eta", po.etas, "curve frequencies");

  ImportOpts io;
  CLI::App* imp = app.add_subcommand("import-llff", "convert an LLFF capture");
  add_globals(imp, io.g);
  imp->add_option("--dir", io.dir, "LLFF directory (poses_bounds.npy)");
  imp->add_option("--bd-factor", io.bd_factor, "bound rescale factor");
  imp->add_option("--hold-every", io.hold_every, "test-view stride");
  imp->add_option("--name", io.name, "scene name for preset lookup");

  try {
    app.parse(argc, argv);
    if (synth->parsed()) return cmd_synth(so);
    if (train->parsed()) return cmd_train(to);
    if (render->parsed()) return cmd_render(ro);
    if (eval->parsed()) return cmd_eval(eo);
    if (plot->parsed()) return cmd_plot_mgs(po);
    if (imp->parsed()) return cmd_import_llff(io);
    return 1;
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const DataError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const GeometryError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 3;
  }
}

}  // namespace sderf
