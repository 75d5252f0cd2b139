#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "corrtrack/dataset.hpp"
#include "corrtrack/losses.hpp"
#include "corrtrack/metrics.hpp"
#include "corrtrack/model.hpp"
#include "corrtrack/sampler.hpp"
#include "corrtrack/tracker.hpp"

namespace corrtrack {

// The full run configuration behind every CLI subcommand. File keys use
// section.key names ([dataset] num_scenes -> dataset.num_scenes etc.);
// command-line flags override file values.
struct RunConfig {
  uint64_t seed = 1;

  // [dataset]
  int num_scenes = 6;
  // Camera path kinds cycled across scenes, e.g. "pan,static,orbit".
  std::string camera_mix = "pan,static,orbit";
  // [scene] template; per-scene seeds are derived from the master seed.
  SceneSpec scene;

  // [sampler]
  StrideSchedule strides{{10, 30, 50, 70, 90, 110, 130, 150, 170}};
  double dynamic_ratio = 0.95;
  int match_budget = 4096;

  // [model]
  ArchConfig arch;

  // [loss]
  LossConfig loss;

  // [train]
  double lr = 5e-5;
  int batch_size = 16;
  int steps = 500;
  int checkpoint_every = 0;  // 0 = final checkpoint only
  int workers = 0;           // 0 = hardware concurrency

  // [eval]
  EvalConfig eval;
  int num_queries = 48;
  int min_track_visible = 8;

  void validate() const;
  int effective_workers() const;
};

std::vector<uint64_t> dataset_scene_seeds(const RunConfig& cfg);

// gen: renders num_scenes scenes (camera kinds cycled per camera_mix) and
// serializes them under out_dir.
void cmd_gen(const RunConfig& cfg, const std::filesystem::path& out_dir);

struct TrainSummary {
  LossBreakdown initial;
  LossBreakdown final_step;
  std::filesystem::path checkpoint_path;
};

// train: stride-weighted pair sampling -> match sets -> optimizer loop.
// Writes train_log.txt (one record per step) and checkpoint.ckpt (plus
// periodic checkpoint_<step>.ckpt when configured) under out_dir.
TrainSummary cmd_train(const RunConfig& cfg, const std::filesystem::path& data_dir,
                       const std::filesystem::path& out_dir);

// In-memory building blocks shared by cmd_train, cmd_ablate, the benchmarks
// and the acceptance suite.
ModelParams initial_params(const RunConfig& cfg);
ModelParams train_on_scenes(const RunConfig& cfg, const std::vector<LoadedScene>& scenes,
                            std::vector<TrainLogRecord>* log = nullptr);
std::vector<TrainExample> make_batch(const RunConfig& cfg, const std::vector<LoadedScene>& scenes,
                                     Rng& rng);

// Queries for evaluation: tracks visible in at least min_visible frames,
// balanced between static and dynamic where possible, query at the first
// visible frame's splat pixel.
std::vector<TrackQuery> select_queries(const std::vector<GroundTruthTrack>& tracks, int count,
                                       int min_visible, uint64_t seed);

struct TrackOptions {
  bool oracle = false;
  std::filesystem::path checkpoint;  // required unless oracle
  TrackMode mode = TrackMode::Mode2d;
  SamplingMode sampling = SamplingMode::Bilinear;
  IntrinsicsSource intrinsics = IntrinsicsSource::GroundTruth;
  std::filesystem::path queries_csv;  // empty: auto-select from ground truth
  // Model-path inference resolution; 0 keeps the render resolution. Frames
  // are resized bilinearly, queries scaled in, and the output CSV stays at
  // this resolution.
  int inference_width = 0;
  int inference_height = 0;
  int workers = 1;
};

void cmd_track(const RunConfig& cfg, const std::filesystem::path& scene_dir,
               const TrackOptions& options, const std::filesystem::path& out_csv);

enum class EvalSplit { All, Dynamic, Static };

struct EvalOutcome {
  bool absent = false;  // the requested split has no tracks
  EvalReport report;
};

// eval: scores a prediction CSV against the scene's ground truth on the
// requested split. Writes <out_prefix>.txt (key=value report) and appends a
// machine-readable row to <out_prefix>.csv when out_prefix is nonempty.
// pred_width/pred_height give the CSV's inference resolution (0 = the
// scene's render resolution).
EvalOutcome cmd_eval(const RunConfig& cfg, const std::filesystem::path& pred_csv,
                     const std::filesystem::path& scene_dir, EvalSplit split,
                     const std::filesystem::path& out_prefix, int pred_width = 0,
                     int pred_height = 0);

enum class AblateAxis { Ratio, Stride };

// Pooled evaluation of a trained model over held-out scenes.
struct SplitScores {
  double delta_all = 0.0;
  std::optional<double> delta_dynamic;
  std::optional<double> delta_static;
  double oa_all = 0.0;
  // Accuracy of always predicting the more frequent visibility class over
  // the same pooled entries.
  double oa_majority = 0.0;
  // delta_avg stratified by |t - t_q|: [0,9], [10,19], [20,inf).
  std::optional<double> delta_sep_short, delta_sep_mid, delta_sep_long;
};

SplitScores evaluate_model_on_scenes(const RunConfig& cfg, const ModelParams& params,
                                     const std::vector<LoadedScene>& scenes);

// ablate: one full train + eval per value; ratio values are numbers in
// [0,1], stride values are comma-separated schedules. Emits a plot-ready CSV
// with all-points / dynamic / static columns plus the separation buckets.
void cmd_ablate(const RunConfig& cfg, AblateAxis axis, const std::vector<std::string>& values,
                const std::filesystem::path& train_data, const std::filesystem::path& eval_data,
                const std::filesystem::path& out_csv);

struct BenchResult {
  int pairs = 0;
  int queries = 0;
  double seconds_per_batch = 0.0;
  double ms_per_pair = 0.0;
};

// bench: wall clock for tracking one batch of image pairs (forward plus
// nearest-neighbour correspondence for `queries` query points per pair).
BenchResult cmd_bench(const RunConfig& cfg, int pairs = 16, int queries = 5,
                      std::ostream* out = nullptr);

}  // namespace corrtrack
