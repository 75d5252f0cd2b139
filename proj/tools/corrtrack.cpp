// corrtrack: dataset generation, training, tracking, evaluation, ablation
// sweeps, and a small inference benchmark for the two-frame correspondence
// toolkit. See README.md for the config schema; command-line flags override
// config-file values.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "corrtrack/commands.hpp"
#include "corrtrack/errors.hpp"

namespace {

using corrtrack::RunConfig;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Expands an INI config ([section] key = value) into --section.key value
// arguments placed ahead of the real command line, so explicit flags
// override file values and unknown keys fail option lookup.
std::vector<std::string> expand_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw corrtrack::IoError("cannot open config file: " + path);
  std::vector<std::string> args;
  std::string line, section;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto comment = line.find_first_of("#;");
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw corrtrack::ConfigError("bad section header at " + path + ":" +
                                     std::to_string(lineno));
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw corrtrack::ConfigError("expected key = value at " + path + ":" +
                                   std::to_string(lineno));
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw corrtrack::ConfigError("empty key at " + path + ":" + std::to_string(lineno));
    }
    args.push_back("--" + (section.empty() ? key : section + "." + key));
    args.push_back(value);
  }
  return args;
}

std::string camera_path_name(corrtrack::CameraPathKind kind) {
  switch (kind) {
    case corrtrack::CameraPathKind::Static: return "static";
    case corrtrack::CameraPathKind::Pan: return "pan";
    case corrtrack::CameraPathKind::Orbit: return "orbit";
  }
  return "pan";
}

// Binds every RunConfig field to app-level options with section.key names so
// one INI config file (with [section] headers) drives all subcommands and
// unknown keys are rejected.
struct ConfigBinding {
  std::string strides;
  std::string camera_path_kind;
  std::string delta_thresholds;
  std::string apd_thresholds;

  void attach(CLI::App& app, RunConfig& cfg) {
    strides = cfg.strides.to_string();
    camera_path_kind = camera_path_name(cfg.scene.camera_path.kind);
    delta_thresholds = join(cfg.eval.delta_thresholds);
    apd_thresholds = join(cfg.eval.apd_thresholds);

    // Config-file values arrive as repeated options ahead of explicit flags;
    // take-last makes the command line win.
    app.add_option("--seed", cfg.seed, "master seed")->take_last();

    app.add_option("--dataset.num_scenes", cfg.num_scenes, "scenes per dataset")->take_last();
    app.add_option("--dataset.camera_mix", cfg.camera_mix,
                   "camera path kinds cycled across scenes")->take_last();

    app.add_option("--scene.num_frames", cfg.scene.num_frames, "frames per scene")->take_last();
    app.add_option("--scene.width", cfg.scene.width, "render width")->take_last();
    app.add_option("--scene.height", cfg.scene.height, "render height")->take_last();
    app.add_option("--scene.num_static_points", cfg.scene.num_static_points,
                   "static surfel count")->take_last();
    app.add_option("--scene.num_objects", cfg.scene.num_objects, "moving object count")->take_last();
    app.add_option("--scene.min_speed", cfg.scene.min_speed, "min object speed (units/frame)")->take_last();
    app.add_option("--scene.max_speed", cfg.scene.max_speed, "max object speed (units/frame)")->take_last();
    app.add_option("--scene.camera_path", camera_path_kind, "static|pan|orbit (template)")->take_last();
    app.add_option("--scene.camera_amplitude", cfg.scene.camera_path.amplitude,
                   "camera path amplitude")->take_last();
    app.add_option("--scene.palette_id", cfg.scene.palette_id, "texture palette id")->take_last();

    app.add_option("--sampler.strides", strides, "comma-separated stride schedule")->take_last();
    app.add_option("--sampler.dynamic_ratio", cfg.dynamic_ratio, "target dynamic ratio r")->take_last();
    app.add_option("--sampler.match_budget", cfg.match_budget,
                   "positives + padded negatives per pair")->take_last();

    app.add_option("--model.channels", cfg.arch.channels, "encoder channels")->take_last();
    app.add_option("--model.descriptor_dim", cfg.arch.descriptor_dim, "descriptor dimension")->take_last();
    app.add_option("--model.decoder_rounds", cfg.arch.decoder_rounds, "cross-view mixing rounds")->take_last();
    app.add_option("--model.head_hidden", cfg.arch.head_hidden, "head MLP hidden width")->take_last();
    app.add_option("--model.ctx_tiles_x", cfg.arch.ctx_tiles_x,
                   "cross-view context tiles (x)")->take_last();
    app.add_option("--model.ctx_tiles_y", cfg.arch.ctx_tiles_y,
                   "cross-view context tiles (y)")->take_last();
    app.add_option("--model.frozen_encoder", cfg.arch.frozen_encoder,
                   "freeze encoder tensors (0/1)")->take_last();

    app.add_option("--loss.alpha", cfg.loss.alpha, "static matching weight")->take_last();
    app.add_option("--loss.beta", cfg.loss.beta, "dynamic matching weight")->take_last();
    app.add_option("--loss.gamma", cfg.loss.gamma, "visibility weight")->take_last();
    app.add_option("--loss.tau", cfg.loss.tau, "matching temperature")->take_last();
    app.add_option("--loss.conf_alpha", cfg.loss.conf_alpha, "log-confidence penalty")->take_last();
    app.add_option("--loss.eps_dynamic", cfg.loss.eps_dynamic, "static/dynamic epsilon")->take_last();
    app.add_option("--loss.conf_weighted_match", cfg.loss.conf_weighted_match,
                   "confidence-weight the matching loss (0/1)")->take_last();

    app.add_option("--train.lr", cfg.lr, "learning rate")->take_last();
    app.add_option("--train.batch_size", cfg.batch_size, "pairs per step")->take_last();
    app.add_option("--train.steps", cfg.steps, "optimizer steps")->take_last();
    app.add_option("--train.checkpoint_every", cfg.checkpoint_every,
                   "periodic checkpoint interval (0 = final only)")->take_last();
    app.add_option("--train.workers", cfg.workers, "parallel workers (0 = auto)")->take_last();

    app.add_option("--eval.resolution_width", cfg.eval.eval_width, "metric eval width")->take_last();
    app.add_option("--eval.resolution_height", cfg.eval.eval_height, "metric eval height")->take_last();
    app.add_option("--eval.delta_thresholds", delta_thresholds, "pixel thresholds")->take_last();
    app.add_option("--eval.apd_thresholds", apd_thresholds, "3D thresholds (scene units)")->take_last();
    app.add_option("--eval.dynamic_split_fraction", cfg.eval.dynamic_split_fraction,
                   "min displacement as a fraction of the image diagonal")->take_last();
    app.add_option("--eval.per_video_oa", cfg.eval.per_video_oa, "per-video OA averaging (0/1)")->take_last();
    app.add_option("--eval.apd_ratio_of_medians", cfg.eval.apd_ratio_of_medians,
                   "median scaling via ratio of medians (0/1)")->take_last();
    app.add_option("--eval.num_queries", cfg.num_queries, "auto-selected queries per scene")->take_last();
    app.add_option("--eval.min_track_visible", cfg.min_track_visible,
                   "min visible frames for an eval track")->take_last();
  }

  void finalize(RunConfig& cfg) const {
    cfg.strides = corrtrack::StrideSchedule::parse(strides);
    if (camera_path_kind == "static") cfg.scene.camera_path.kind = corrtrack::CameraPathKind::Static;
    else if (camera_path_kind == "pan") cfg.scene.camera_path.kind = corrtrack::CameraPathKind::Pan;
    else if (camera_path_kind == "orbit") cfg.scene.camera_path.kind = corrtrack::CameraPathKind::Orbit;
    else throw corrtrack::ConfigError("unknown scene.camera_path: " + camera_path_kind);
    cfg.eval.delta_thresholds = parse_list(delta_thresholds);
    cfg.eval.apd_thresholds = parse_list(apd_thresholds);
  }

 private:
  static std::string join(const std::vector<double>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) {
      if (i) s += ',';
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%g", v[i]);
      s += buf;
    }
    return s;
  }
  static std::vector<double> parse_list(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (!tok.empty()) out.push_back(std::stod(tok));
    }
    return out;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"corrtrack: 3D-grounded two-frame correspondence toolkit"};
  app.require_subcommand(1);

  // --config is handled by a pre-parse expansion; keep the flag visible in
  // --help and swallow its occurrences below.
  std::string config_path;
  app.add_option("--config", config_path, "INI config file ([section] key=value)");

  std::vector<std::string> args;
  args.push_back(argv[0]);
  try {
    std::vector<std::string> tail;
    for (int i = 1; i < argc; ++i) {
      const std::string arg = argv[i];
      if (arg == "--config") {
        if (i + 1 >= argc) throw corrtrack::ConfigError("--config needs a path");
        const auto expanded = expand_config(argv[++i]);
        args.insert(args.end(), expanded.begin(), expanded.end());
      } else if (arg.rfind("--config=", 0) == 0) {
        const auto expanded = expand_config(arg.substr(9));
        args.insert(args.end(), expanded.begin(), expanded.end());
      } else {
        tail.push_back(arg);
      }
    }
    args.insert(args.end(), tail.begin(), tail.end());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::vector<char*> argv2;
  argv2.reserve(args.size());
  for (auto& a : args) argv2.push_back(a.data());
  argc = static_cast<int>(argv2.size());
  argv = argv2.data();

  RunConfig cfg;
  ConfigBinding binding;
  binding.attach(app, cfg);

  // gen
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  std::string gen_out = "dataset";
  gen->add_option("--out", gen_out, "output dataset directory");

  // train
  auto* train = app.add_subcommand("train", "train a correspondence model");
  std::string train_data = "dataset", train_out = "run";
  train->add_option("--data", train_data, "dataset directory");
  train->add_option("--out", train_out, "output directory (checkpoints + log)");

  // track
  auto* track = app.add_subcommand("track", "track query points through a scene");
  std::string track_scene, track_ckpt, track_out = "tracks.csv", track_queries;
  std::string track_mode = "2d", track_sampling = "bilinear", track_intrinsics = "gt";
  bool track_oracle = false;
  int track_workers = 1;
  track->add_option("--video", track_scene, "scene directory")->required();
  track->add_option("--ckpt", track_ckpt, "model checkpoint");
  track->add_flag("--oracle", track_oracle, "use ground-truth descriptors/pointmaps");
  track->add_option("--mode", track_mode, "2d|3d-pointmap|3d-lifted");
  track->add_option("--sampling", track_sampling, "bilinear|nearest");
  track->add_option("--intrinsics", track_intrinsics, "gt|estimated (3d-lifted)");
  track->add_option("--queries", track_queries, "query CSV (default: auto from ground truth)");
  track->add_option("--workers", track_workers, "parallel frame workers");
  int track_res_w = 0, track_res_h = 0;
  track->add_option("--inference-width", track_res_w, "inference width (0 = native)");
  track->add_option("--inference-height", track_res_h, "inference height (0 = native)");
  track->add_option("--out", track_out, "output trajectory CSV");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a trajectory CSV");
  std::string eval_pred, eval_scene, eval_split = "all", eval_out = "eval";
  eval->add_option("--pred", eval_pred, "trajectory CSV")->required();
  eval->add_option("--video", eval_scene, "scene directory")->required();
  eval->add_option("--split", eval_split, "all|dynamic|static");
  int eval_pred_w = 0, eval_pred_h = 0;
  eval->add_option("--pred-width", eval_pred_w, "prediction CSV resolution (0 = scene)");
  eval->add_option("--pred-height", eval_pred_h, "prediction CSV resolution (0 = scene)");
  eval->add_option("--out", eval_out, "output prefix (.txt/.csv)");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "train/eval sweep over ratio or strides");
  std::string ablate_axis = "ratio", ablate_values, ablate_train, ablate_eval,
              ablate_out = "ablation.csv";
  ablate->add_option("--axis", ablate_axis, "ratio|stride");
  ablate->add_option("--values", ablate_values,
                     "semicolon-separated values (stride values are comma lists)")
      ->required();
  ablate->add_option("--data", ablate_train, "training dataset directory")->required();
  ablate->add_option("--eval-data", ablate_eval, "held-out dataset directory")->required();
  ablate->add_option("--out", ablate_out, "output CSV");

  // bench
  auto* bench = app.add_subcommand("bench", "wall-clock for a 16-pair tracking batch");
  int bench_pairs = 16, bench_queries = 5;
  bench->add_option("--pairs", bench_pairs, "pairs per batch");
  bench->add_option("--queries", bench_queries, "query points per pair");

  CLI11_PARSE(app, argc, argv);

  try {
    binding.finalize(cfg);
    cfg.validate();

    if (gen->parsed()) {
      corrtrack::cmd_gen(cfg, gen_out);
      std::cout << "wrote " << cfg.num_scenes << " scenes to " << gen_out << "\n";
    } else if (train->parsed()) {
      const auto summary = corrtrack::cmd_train(cfg, train_data, train_out);
      std::cout << "checkpoint: " << summary.checkpoint_path.string() << "\n";
      if (cfg.steps > 0) {
        std::cout << "loss: " << summary.initial.total << " -> " << summary.final_step.total
                  << " over " << cfg.steps << " steps\n";
      }
    } else if (track->parsed()) {
      corrtrack::TrackOptions opt;
      opt.oracle = track_oracle;
      opt.checkpoint = track_ckpt;
      if (track_mode == "2d") opt.mode = corrtrack::TrackMode::Mode2d;
      else if (track_mode == "3d-pointmap") opt.mode = corrtrack::TrackMode::Mode3dPointmap;
      else if (track_mode == "3d-lifted") opt.mode = corrtrack::TrackMode::Mode3dLifted;
      else throw corrtrack::ConfigError("unknown --mode: " + track_mode);
      if (track_sampling == "bilinear") opt.sampling = corrtrack::SamplingMode::Bilinear;
      else if (track_sampling == "nearest") opt.sampling = corrtrack::SamplingMode::Nearest;
      else throw corrtrack::ConfigError("unknown --sampling: " + track_sampling);
      if (track_intrinsics == "gt") opt.intrinsics = corrtrack::IntrinsicsSource::GroundTruth;
      else if (track_intrinsics == "estimated") opt.intrinsics = corrtrack::IntrinsicsSource::Estimated;
      else throw corrtrack::ConfigError("unknown --intrinsics: " + track_intrinsics);
      opt.queries_csv = track_queries;
      opt.workers = track_workers;
      opt.inference_width = track_res_w;
      opt.inference_height = track_res_h;
      corrtrack::cmd_track(cfg, track_scene, opt, track_out);
      std::cout << "wrote " << track_out << "\n";
    } else if (eval->parsed()) {
      corrtrack::EvalSplit split;
      if (eval_split == "all") split = corrtrack::EvalSplit::All;
      else if (eval_split == "dynamic") split = corrtrack::EvalSplit::Dynamic;
      else if (eval_split == "static") split = corrtrack::EvalSplit::Static;
      else throw corrtrack::ConfigError("unknown --split: " + eval_split);
      const auto outcome = corrtrack::cmd_eval(cfg, eval_pred, eval_scene, split, eval_out,
                                               eval_pred_w, eval_pred_h);
      if (outcome.absent) {
        std::cout << "split '" << eval_split << "' is absent for this video\n";
      } else {
        std::cout << "delta_avg=" << outcome.report.delta_avg;
        if (outcome.report.occlusion_accuracy) {
          std::cout << " oa=" << *outcome.report.occlusion_accuracy;
        }
        if (outcome.report.apd) std::cout << " apd=" << *outcome.report.apd;
        std::cout << "\n";
      }
    } else if (ablate->parsed()) {
      corrtrack::AblateAxis axis;
      if (ablate_axis == "ratio") axis = corrtrack::AblateAxis::Ratio;
      else if (ablate_axis == "stride") axis = corrtrack::AblateAxis::Stride;
      else throw corrtrack::ConfigError("unknown --axis: " + ablate_axis);
      std::vector<std::string> values;
      std::stringstream ss(ablate_values);
      std::string tok;
      while (std::getline(ss, tok, ';')) {
        if (!tok.empty()) values.push_back(tok);
      }
      corrtrack::cmd_ablate(cfg, axis, values, ablate_train, ablate_eval, ablate_out);
      std::cout << "wrote " << ablate_out << "\n";
    } else if (bench->parsed()) {
      corrtrack::cmd_bench(cfg, bench_pairs, bench_queries, &std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
