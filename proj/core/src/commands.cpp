#include "corrtrack/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <set>
#include <sstream>
#include <thread>

#include "corrtrack/checkpoint.hpp"
#include "corrtrack/errors.hpp"
#include "corrtrack/trajectory_io.hpp"

namespace corrtrack {

namespace {

constexpr uint64_t kInitStream = 0x1217;
constexpr uint64_t kDataStream = 0x2a11;
constexpr uint64_t kQueryStream = 0x3b97;
constexpr uint64_t kBenchStream = 0x4c33;

std::vector<CameraPathKind> parse_camera_mix(const std::string& mix) {
  std::vector<CameraPathKind> kinds;
  std::stringstream ss(mix);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok == "static") kinds.push_back(CameraPathKind::Static);
    else if (tok == "pan") kinds.push_back(CameraPathKind::Pan);
    else if (tok == "orbit") kinds.push_back(CameraPathKind::Orbit);
    else throw ConfigError("unknown camera path kind in mix: " + tok);
  }
  if (kinds.empty()) throw ConfigError("camera_mix is empty");
  return kinds;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return std::string(buf);
}

std::string opt_fmt(const std::optional<double>& v) { return v ? fmt(*v) : ""; }

}  // namespace

void RunConfig::validate() const {
  scene.validate();
  strides.validate();
  arch.validate();
  loss.validate();
  eval.validate();
  if (dynamic_ratio < 0.0 || dynamic_ratio > 1.0) throw ConfigError("dynamic_ratio must be in [0,1]");
  if (match_budget < 1) throw ConfigError("match_budget must be >= 1");
  if (num_scenes < 1) throw ConfigError("num_scenes must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (lr < 0.0) throw ConfigError("lr must be >= 0");
  if (num_queries < 1) throw ConfigError("num_queries must be >= 1");
  parse_camera_mix(camera_mix);
}

int RunConfig::effective_workers() const {
  if (workers > 0) return workers;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

std::vector<uint64_t> dataset_scene_seeds(const RunConfig& cfg) {
  std::vector<uint64_t> seeds;
  seeds.reserve(static_cast<size_t>(cfg.num_scenes));
  for (int i = 0; i < cfg.num_scenes; ++i) {
    seeds.push_back(cfg.seed * 1000 + static_cast<uint64_t>(i));
  }
  return seeds;
}

void cmd_gen(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  const std::vector<CameraPathKind> kinds = parse_camera_mix(cfg.camera_mix);
  const std::vector<uint64_t> seeds = dataset_scene_seeds(cfg);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string());
  for (int i = 0; i < cfg.num_scenes; ++i) {
    SceneSpec spec = cfg.scene;
    spec.seed = seeds[static_cast<size_t>(i)];
    spec.camera_path.kind = kinds[static_cast<size_t>(i) % kinds.size()];
    const Scene scene = generate_scene(spec);
    const std::vector<RenderedFrame> frames = render_all(scene);
    save_scene(out_dir / scene_dir_name(spec.seed), scene, frames);
  }
}

std::vector<TrainExample> make_batch(const RunConfig& cfg, const std::vector<LoadedScene>& scenes,
                                     Rng& rng) {
  std::vector<TrainExample> batch;
  batch.reserve(static_cast<size_t>(cfg.batch_size));
  for (int slot = 0; slot < cfg.batch_size; ++slot) {
    const LoadedScene& ls = scenes[static_cast<size_t>(rng.index(scenes.size()))];
    const auto [t1, t2] = sample_pair_indices(ls.scene.spec.num_frames, cfg.strides, rng);
    TrainExample ex;
    ex.sample = ground_truth_pair(ls.scene, ls.frames[static_cast<size_t>(t1)],
                                  ls.frames[static_cast<size_t>(t2)], t1, t2,
                                  cfg.loss.eps_dynamic);
    ex.matches = build_match_set(ex.sample, cfg.dynamic_ratio, cfg.match_budget, rng);
    ex.stride = t2 - t1;
    batch.push_back(std::move(ex));
  }
  return batch;
}

namespace {

using StepCallback = std::function<void(int step, const ModelParams&)>;

ModelParams train_loop(const RunConfig& cfg, const std::vector<LoadedScene>& scenes,
                       std::vector<TrainLogRecord>* log, const StepCallback& on_step) {
  cfg.validate();
  ModelParams params = initial_params(cfg);
  AdamState adam;
  Rng data_rng(mix_seed(cfg.seed, kDataStream));
  const int workers = cfg.effective_workers();
  for (int step = 1; step <= cfg.steps; ++step) {
    const std::vector<TrainExample> batch = make_batch(cfg, scenes, data_rng);
    const LossBreakdown loss = train_step(params, batch, adam, cfg.loss, cfg.lr, workers);
    if (log) {
      TrainLogRecord rec;
      rec.step = step;
      rec.loss = loss;
      rec.lr = cfg.lr;
      double r_sum = 0.0, s_sum = 0.0;
      for (const auto& ex : batch) {
        r_sum += ex.matches.r_actual;
        s_sum += static_cast<double>(ex.stride);
      }
      rec.r_actual_mean = r_sum / static_cast<double>(batch.size());
      rec.stride_mean = s_sum / static_cast<double>(batch.size());
      log->push_back(rec);
    }
    if (on_step) on_step(step, params);
  }
  return params;
}

}  // namespace

ModelParams initial_params(const RunConfig& cfg) {
  return init_params(mix_seed(cfg.seed, kInitStream), cfg.arch);
}

ModelParams train_on_scenes(const RunConfig& cfg, const std::vector<LoadedScene>& scenes,
                            std::vector<TrainLogRecord>* log) {
  return train_loop(cfg, scenes, log, StepCallback());
}

TrainSummary cmd_train(const RunConfig& cfg, const std::filesystem::path& data_dir,
                       const std::filesystem::path& out_dir) {
  const std::vector<LoadedScene> scenes = load_dataset(data_dir);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string());

  std::vector<TrainLogRecord> log;
  StepCallback checkpointer;
  if (cfg.checkpoint_every > 0) {
    checkpointer = [&](int step, const ModelParams& p) {
      if (step % cfg.checkpoint_every == 0) {
        save_checkpoint(out_dir / ("checkpoint_" + std::to_string(step) + ".ckpt"), p);
      }
    };
  }
  const ModelParams params = train_loop(cfg, scenes, &log, checkpointer);

  {
    std::ofstream f(out_dir / "train_log.txt", std::ios::trunc);
    if (!f) throw IoError("cannot write train log");
    for (const auto& rec : log) f << to_log_line(rec) << '\n';
  }
  TrainSummary summary;
  summary.checkpoint_path = out_dir / "checkpoint.ckpt";
  save_checkpoint(summary.checkpoint_path, params);
  if (!log.empty()) {
    summary.initial = log.front().loss;
    summary.final_step = log.back().loss;
  }
  return summary;
}

std::vector<TrackQuery> select_queries(const std::vector<GroundTruthTrack>& tracks, int count,
                                       int min_visible, uint64_t seed) {
  std::vector<size_t> static_pool, dynamic_pool;
  for (size_t i = 0; i < tracks.size(); ++i) {
    int vis = 0;
    for (uint8_t v : tracks[i].visible) vis += v;
    if (vis < min_visible) continue;
    (tracks[i].is_dynamic ? dynamic_pool : static_pool).push_back(i);
  }
  Rng rng(seed);
  // Balanced static/dynamic selection; the other pool fills any shortfall.
  const int want_dyn = count / 2;
  const int want_stat = count - want_dyn;
  int n_dyn = std::min<int>(want_dyn, static_cast<int>(dynamic_pool.size()));
  int n_stat = std::min<int>(want_stat, static_cast<int>(static_pool.size()));
  int leftover = count - n_dyn - n_stat;
  const int extra_dyn = std::min<int>(leftover, static_cast<int>(dynamic_pool.size()) - n_dyn);
  n_dyn += extra_dyn;
  leftover -= extra_dyn;
  n_stat += std::min<int>(leftover, static_cast<int>(static_pool.size()) - n_stat);
  const std::vector<uint64_t> dsel =
      sample_without_replacement(dynamic_pool.size(), static_cast<uint64_t>(n_dyn), rng);
  const std::vector<uint64_t> ssel =
      sample_without_replacement(static_pool.size(), static_cast<uint64_t>(n_stat), rng);

  std::vector<TrackQuery> queries;
  auto add = [&](size_t track_idx) {
    const GroundTruthTrack& tr = tracks[track_idx];
    for (size_t t = 0; t < tr.visible.size(); ++t) {
      if (!tr.visible[t]) continue;
      TrackQuery q;
      q.id = tr.surfel_id;
      q.frame = static_cast<int>(t);
      // Query at the first visible frame, snapped to the splat pixel.
      q.pixel = Eigen::Vector2d(std::lround(tr.pixel[t].x()), std::lround(tr.pixel[t].y()));
      queries.push_back(q);
      break;
    }
  };
  for (uint64_t i : dsel) add(dynamic_pool[static_cast<size_t>(i)]);
  for (uint64_t i : ssel) add(static_pool[static_cast<size_t>(i)]);
  return queries;
}

void cmd_track(const RunConfig& cfg, const std::filesystem::path& scene_dir,
               const TrackOptions& options, const std::filesystem::path& out_csv) {
  cfg.validate();
  const LoadedScene ls = load_scene(scene_dir);
  const std::vector<GroundTruthTrack> tracks =
      ground_truth_tracks(ls.scene, ls.frames, cfg.loss.eps_dynamic);

  std::vector<TrackQuery> queries;
  if (!options.queries_csv.empty()) {
    queries = read_queries_csv(options.queries_csv);
  } else {
    queries = select_queries(tracks, cfg.num_queries, cfg.min_track_visible,
                             mix_seed(cfg.seed ^ ls.scene.spec.seed, kQueryStream));
  }
  if (queries.empty()) throw Error("no queries to track");

  ModelParams params;
  std::unique_ptr<TrackerBackend> backend;
  const bool resized = !options.oracle && options.inference_width > 0 &&
                       options.inference_height > 0 &&
                       (options.inference_width != ls.scene.spec.width ||
                        options.inference_height != ls.scene.spec.height);
  if (options.oracle) {
    backend = std::make_unique<OracleTrackerBackend>(ls.scene, ls.frames);
  } else {
    if (options.checkpoint.empty()) throw ConfigError("track needs --ckpt or --oracle");
    params = load_checkpoint_checked(options.checkpoint, cfg.arch);
    std::vector<Tensor> images;
    images.reserve(ls.frames.size());
    for (const auto& fr : ls.frames) {
      images.push_back(resized ? resize_image(fr.image, options.inference_width,
                                              options.inference_height)
                               : fr.image);
    }
    backend = std::make_unique<ModelTrackerBackend>(params, std::move(images));
  }
  if (resized) {
    // Queries move into inference pixel coordinates; outputs stay there.
    const double sx = ls.scene.spec.width > 1
                          ? static_cast<double>(options.inference_width - 1) /
                                (ls.scene.spec.width - 1)
                          : 1.0;
    const double sy = ls.scene.spec.height > 1
                          ? static_cast<double>(options.inference_height - 1) /
                                (ls.scene.spec.height - 1)
                          : 1.0;
    for (auto& q : queries) q.pixel = Eigen::Vector2d(q.pixel.x() * sx, q.pixel.y() * sy);
  }

  std::vector<Trajectory> result;
  switch (options.mode) {
    case TrackMode::Mode2d:
      result = track2d(*backend, queries, options.sampling, options.workers);
      break;
    case TrackMode::Mode3dPointmap:
      result = track3d_pointmap(*backend, queries, options.sampling, options.workers);
      break;
    case TrackMode::Mode3dLifted: {
      std::vector<Trajectory> base = track2d(*backend, queries, options.sampling, options.workers);
      if (resized) {
        // Depth maps live at the render resolution; move the tracked pixels
        // back before lifting (the 3D output is resolution-free).
        const double sx = options.inference_width > 1
                              ? static_cast<double>(ls.scene.spec.width - 1) /
                                    (options.inference_width - 1)
                              : 1.0;
        const double sy = options.inference_height > 1
                              ? static_cast<double>(ls.scene.spec.height - 1) /
                                    (options.inference_height - 1)
                              : 1.0;
        for (auto& tr : base) {
          tr.query.pixel = Eigen::Vector2d(tr.query.pixel.x() * sx, tr.query.pixel.y() * sy);
          for (auto& pt : tr.points) {
            pt.pixel = Eigen::Vector2d(pt.pixel.x() * sx, pt.pixel.y() * sy);
          }
        }
      }
      std::vector<const Tensor*> depths;
      depths.reserve(ls.frames.size());
      for (const auto& fr : ls.frames) depths.push_back(&fr.depth);
      result = track3d_lifted(std::move(base), depths, ls.scene.cameras, options.intrinsics);
      break;
    }
  }
  write_trajectory_csv(out_csv, result);
}

namespace {

std::string split_name(EvalSplit split) {
  switch (split) {
    case EvalSplit::All: return "all";
    case EvalSplit::Dynamic: return "dynamic";
    case EvalSplit::Static: return "static";
  }
  return "?";
}

void write_eval_outputs(const std::filesystem::path& out_prefix, const std::string& dataset,
                        const std::string& split, const std::string& model,
                        const EvalOutcome& outcome, const EvalConfig& cfg) {
  if (out_prefix.empty()) return;
  std::filesystem::path txt = out_prefix;
  txt += ".txt";
  {
    std::ofstream f(txt, std::ios::trunc);
    if (!f) throw IoError("cannot write eval report: " + txt.string());
    f << "dataset=" << dataset << "\nsplit=" << split << "\nmodel=" << model << '\n';
    if (outcome.absent) {
      f << "absent=true\n";
    } else {
      const EvalReport& r = outcome.report;
      f << "delta_avg=" << fmt(r.delta_avg) << '\n';
      for (size_t k = 0; k < r.per_threshold.size(); ++k) {
        f << "delta_" << fmt(cfg.delta_thresholds[k]) << "px=" << fmt(r.per_threshold[k]) << '\n';
      }
      if (r.occlusion_accuracy) f << "occlusion_accuracy=" << fmt(*r.occlusion_accuracy) << '\n';
      if (r.apd) f << "apd=" << fmt(*r.apd) << '\n';
      f << "tracks=" << r.counts.tracks << "\nframes=" << r.counts.frames
        << "\nvisible_points=" << r.counts.visible_points << '\n';
    }
  }
  std::filesystem::path csv = out_prefix;
  csv += ".csv";
  const bool fresh = !std::filesystem::exists(csv);
  std::ofstream f(csv, std::ios::app);
  if (!f) throw IoError("cannot write eval csv: " + csv.string());
  if (fresh) {
    f << "dataset,split,model,delta_avg,delta_1,delta_2,delta_4,delta_8,delta_16,"
         "oa,apd,tracks,frames,visible_points\n";
  }
  if (outcome.absent) {
    f << dataset << ',' << split << ',' << model << ",,,,,,,,,0,0,0\n";
    return;
  }
  const EvalReport& r = outcome.report;
  f << dataset << ',' << split << ',' << model << ',' << fmt(r.delta_avg);
  for (size_t k = 0; k < 5; ++k) {
    f << ',' << (k < r.per_threshold.size() ? fmt(r.per_threshold[k]) : std::string());
  }
  f << ',' << opt_fmt(r.occlusion_accuracy) << ',' << opt_fmt(r.apd) << ',' << r.counts.tracks
    << ',' << r.counts.frames << ',' << r.counts.visible_points << '\n';
}

}  // namespace

EvalOutcome cmd_eval(const RunConfig& cfg, const std::filesystem::path& pred_csv,
                     const std::filesystem::path& scene_dir, EvalSplit split,
                     const std::filesystem::path& out_prefix, int pred_width, int pred_height) {
  cfg.validate();
  const LoadedScene ls = load_scene(scene_dir);
  const std::vector<GroundTruthTrack> tracks =
      ground_truth_tracks(ls.scene, ls.frames, cfg.loss.eps_dynamic);
  const std::vector<Trajectory> preds = read_trajectory_csv(pred_csv);

  std::set<int32_t> keep_ids;
  if (split == EvalSplit::Dynamic) {
    for (size_t i : dynamic_split(tracks, ls.scene.cameras, cfg.eval)) {
      keep_ids.insert(tracks[i].surfel_id);
    }
  } else if (split == EvalSplit::Static) {
    for (size_t i : static_split(tracks)) keep_ids.insert(tracks[i].surfel_id);
  }

  std::vector<AlignedTrack> aligned = align_tracks(preds, tracks);
  if (split != EvalSplit::All) {
    std::vector<AlignedTrack> filtered;
    for (const auto& a : aligned) {
      if (keep_ids.count(a.gt->surfel_id)) filtered.push_back(a);
    }
    aligned.swap(filtered);
  }

  EvalOutcome outcome;
  if (aligned.empty()) {
    outcome.absent = true;  // split has no tracks: absent, not zero
  } else {
    bool any3d = false;
    for (const auto& a : aligned) {
      for (const auto& pt : a.pred->points) any3d = any3d || (pt.valid && pt.has_point3d);
    }
    const int W = ls.scene.spec.width, H = ls.scene.spec.height;
    const int pw = pred_width > 0 ? pred_width : W;
    const int ph = pred_height > 0 ? pred_height : H;
    outcome.report = evaluate_tracks(aligned, ls.scene.cameras, pw, ph, W, H, cfg.eval,
                                     /*with_delta=*/!any3d);
  }
  write_eval_outputs(out_prefix, scene_dir.filename().string(), split_name(split),
                     pred_csv.stem().string(), outcome, cfg.eval);
  return outcome;
}

SplitScores evaluate_model_on_scenes(const RunConfig& cfg, const ModelParams& params,
                                     const std::vector<LoadedScene>& scenes) {
  cfg.validate();
  if (scenes.empty()) throw Error("evaluate_model_on_scenes needs at least one scene");
  struct PerScene {
    std::vector<GroundTruthTrack> tracks;
    std::vector<Trajectory> preds;
    std::set<int32_t> dynamic_ids, static_ids;
  };
  std::vector<PerScene> data(scenes.size());
  const int workers = cfg.effective_workers();
  for (size_t si = 0; si < scenes.size(); ++si) {
    const LoadedScene& ls = scenes[si];
    PerScene& d = data[si];
    d.tracks = ground_truth_tracks(ls.scene, ls.frames, cfg.loss.eps_dynamic);
    const std::vector<TrackQuery> queries =
        select_queries(d.tracks, cfg.num_queries, cfg.min_track_visible,
                       mix_seed(cfg.seed ^ ls.scene.spec.seed, kQueryStream));
    std::vector<Tensor> images;
    images.reserve(ls.frames.size());
    for (const auto& fr : ls.frames) images.push_back(fr.image);
    ModelTrackerBackend backend(params, std::move(images));
    d.preds = track2d(backend, queries, SamplingMode::Bilinear, workers);
    for (size_t i : dynamic_split(d.tracks, ls.scene.cameras, cfg.eval)) {
      d.dynamic_ids.insert(d.tracks[i].surfel_id);
    }
    for (size_t i : static_split(d.tracks)) d.static_ids.insert(d.tracks[i].surfel_id);
  }

  std::vector<AlignedTrack> all, dyn, stat;
  std::vector<double> per_video_oa;
  for (const auto& d : data) {
    const std::vector<AlignedTrack> aligned = align_tracks(d.preds, d.tracks);
    if (cfg.eval.per_video_oa) per_video_oa.push_back(occlusion_accuracy(aligned, cfg.eval));
    for (const auto& a : aligned) {
      all.push_back(a);
      if (d.dynamic_ids.count(a.gt->surfel_id)) dyn.push_back(a);
      if (d.static_ids.count(a.gt->surfel_id)) stat.push_back(a);
    }
  }
  const int W = scenes[0].scene.spec.width, H = scenes[0].scene.spec.height;

  SplitScores scores;
  scores.delta_all = delta_avg(all, W, H, W, H, cfg.eval).average;
  if (cfg.eval.per_video_oa) {
    double acc = 0.0;
    for (double v : per_video_oa) acc += v;
    scores.oa_all = acc / static_cast<double>(per_video_oa.size());
  } else {
    scores.oa_all = occlusion_accuracy(all, cfg.eval);
  }
  {
    int64_t vis = 0, total = 0;
    for (const auto& a : all) {
      for (size_t t = 0; t < a.pred->points.size(); ++t) {
        if (!a.pred->points[t].valid) continue;
        vis += a.gt->visible[t] ? 1 : 0;
        ++total;
      }
    }
    const double p = total > 0 ? static_cast<double>(vis) / static_cast<double>(total) : 0.0;
    scores.oa_majority = 100.0 * std::max(p, 1.0 - p);
  }
  if (!dyn.empty()) scores.delta_dynamic = delta_avg(dyn, W, H, W, H, cfg.eval).average;
  if (!stat.empty()) scores.delta_static = delta_avg(stat, W, H, W, H, cfg.eval).average;
  auto bucket = [&](int lo, int hi) -> std::optional<double> {
    try {
      return delta_avg_by_separation(all, W, H, W, H, cfg.eval, lo, hi).average;
    } catch (const EmptyEval&) {
      return std::nullopt;
    }
  };
  scores.delta_sep_short = bucket(0, 9);
  scores.delta_sep_mid = bucket(10, 19);
  scores.delta_sep_long = bucket(20, std::numeric_limits<int>::max());
  return scores;
}

void cmd_ablate(const RunConfig& cfg, AblateAxis axis, const std::vector<std::string>& values,
                const std::filesystem::path& train_data, const std::filesystem::path& eval_data,
                const std::filesystem::path& out_csv) {
  cfg.validate();
  if (values.empty()) throw ConfigError("ablate needs at least one value");
  const std::vector<LoadedScene> train_scenes = load_dataset(train_data);
  const std::vector<LoadedScene> eval_scenes = load_dataset(eval_data);

  std::ofstream f(out_csv, std::ios::trunc);
  if (!f) throw IoError("cannot write ablation csv: " + out_csv.string());
  f << "axis,value,delta_all,delta_dynamic,delta_static,oa_all,"
       "delta_sep_0_9,delta_sep_10_19,delta_sep_20_plus\n";
  for (const std::string& value : values) {
    RunConfig run = cfg;
    std::string cell = value;
    if (axis == AblateAxis::Ratio) {
      run.dynamic_ratio = std::stod(value);
    } else {
      run.strides = StrideSchedule::parse(value);
      for (char& c : cell) {
        if (c == ',') c = '-';  // keep the CSV cell unquoted
      }
    }
    const ModelParams params = train_on_scenes(run, train_scenes);
    const SplitScores s = evaluate_model_on_scenes(run, params, eval_scenes);
    f << (axis == AblateAxis::Ratio ? "ratio" : "stride") << ',' << cell << ','
      << fmt(s.delta_all) << ',' << opt_fmt(s.delta_dynamic) << ',' << opt_fmt(s.delta_static)
      << ',' << fmt(s.oa_all) << ',' << opt_fmt(s.delta_sep_short) << ','
      << opt_fmt(s.delta_sep_mid) << ',' << opt_fmt(s.delta_sep_long) << '\n';
    f.flush();
  }
}

BenchResult cmd_bench(const RunConfig& cfg, int pairs, int queries, std::ostream* out) {
  cfg.validate();
  SceneSpec spec = cfg.scene;
  spec.seed = mix_seed(cfg.seed, kBenchStream);
  const Scene scene = generate_scene(spec);
  const std::vector<RenderedFrame> frames = render_all(scene);
  const ModelParams params = init_params(mix_seed(cfg.seed, kInitStream), cfg.arch);

  Rng rng(mix_seed(cfg.seed, kBenchStream + 1));
  std::vector<std::pair<int, int>> pair_idx;
  for (int i = 0; i < pairs; ++i) {
    const auto [a, b] = sample_pair_indices(spec.num_frames, cfg.strides, rng);
    pair_idx.emplace_back(a, b);
  }
  std::vector<Eigen::Vector2d> query_pixels;
  for (int i = 0; i < queries; ++i) {
    query_pixels.emplace_back(rng.uniform(0, spec.width - 1), rng.uniform(0, spec.height - 1));
  }

  const auto start = std::chrono::steady_clock::now();
  for (const auto& [a, b] : pair_idx) {
    const ForwardOutputs fwd = forward(params, frames[static_cast<size_t>(a)].image,
                                       frames[static_cast<size_t>(b)].image);
    std::vector<Eigen::VectorXd> qd;
    qd.reserve(query_pixels.size());
    for (const auto& px : query_pixels) {
      qd.push_back(sample_descriptor(fwd.view1.descriptors, px, SamplingMode::Bilinear));
    }
    const auto corr = correspond(qd, fwd.view2.descriptors);
    (void)corr;
  }
  const auto stop = std::chrono::steady_clock::now();

  BenchResult result;
  result.pairs = pairs;
  result.queries = queries;
  result.seconds_per_batch = std::chrono::duration<double>(stop - start).count();
  result.ms_per_pair = 1000.0 * result.seconds_per_batch / static_cast<double>(pairs);
  if (out) {
    *out << "pairs=" << result.pairs << " queries=" << result.queries
         << " seconds_per_batch=" << fmt(result.seconds_per_batch)
         << " ms_per_pair=" << fmt(result.ms_per_pair) << "\n";
  }
  return result;
}

}  // namespace corrtrack
