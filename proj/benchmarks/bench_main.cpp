#include <benchmark/benchmark.h>

#include "corrtrack/commands.hpp"
#include "corrtrack/losses.hpp"
#include "corrtrack/model.hpp"
#include "corrtrack/sampler.hpp"
#include "corrtrack/scene.hpp"
#include "corrtrack/tracker.hpp"

namespace {

using namespace corrtrack;

SceneSpec bench_spec() {
  SceneSpec spec;
  spec.seed = 99;
  spec.num_frames = 24;
  spec.width = 48;
  spec.height = 36;
  spec.num_static_points = 2200;
  spec.num_objects = 5;
  return spec;
}

ArchConfig bench_arch() {
  ArchConfig arch;
  arch.channels = 12;
  arch.descriptor_dim = 12;
  arch.head_hidden = 24;
  return arch;
}

void BM_RenderFrame(benchmark::State& state) {
  const Scene scene = generate_scene(bench_spec());
  int frame = 0;
  for (auto _ : state) {
    RenderedFrame f = render(scene, frame % scene.spec.num_frames);
    benchmark::DoNotOptimize(f.depth.data());
    ++frame;
  }
}
BENCHMARK(BM_RenderFrame);

void BM_Forward(benchmark::State& state) {
  const Scene scene = generate_scene(bench_spec());
  const RenderedFrame f0 = render(scene, 0);
  const RenderedFrame f1 = render(scene, 10);
  const ModelParams params = init_params(1, bench_arch());
  for (auto _ : state) {
    ForwardOutputs out = forward(params, f0.image, f1.image);
    benchmark::DoNotOptimize(out.view1.descriptors.data());
  }
}
BENCHMARK(BM_Forward);

void BM_TrainStep(benchmark::State& state) {
  RunConfig cfg;
  cfg.scene = bench_spec();
  cfg.arch = bench_arch();
  cfg.strides = StrideSchedule{{5, 10}};
  cfg.match_budget = 384;
  cfg.batch_size = 4;
  cfg.workers = 1;
  const Scene scene = generate_scene(cfg.scene);
  LoadedScene ls{scene, render_all(scene)};
  std::vector<LoadedScene> scenes;
  scenes.push_back(std::move(ls));
  Rng rng(7);
  ModelParams params = init_params(1, cfg.arch);
  AdamState adam;
  for (auto _ : state) {
    const std::vector<TrainExample> batch = make_batch(cfg, scenes, rng);
    const LossBreakdown loss = train_step(params, batch, adam, cfg.loss, 1e-4, 1);
    benchmark::DoNotOptimize(loss.total);
  }
}
BENCHMARK(BM_TrainStep);

void BM_Correspond(benchmark::State& state) {
  const Scene scene = generate_scene(bench_spec());
  const RenderedFrame f0 = render(scene, 0);
  const RenderedFrame f1 = render(scene, 10);
  const ModelParams params = init_params(1, bench_arch());
  const ForwardOutputs out = forward(params, f0.image, f1.image);
  std::vector<Eigen::VectorXd> qd;
  for (int i = 0; i < 32; ++i) {
    qd.push_back(sample_descriptor(out.view1.descriptors,
                                   Eigen::Vector2d(5 + i % 40, 3 + i % 30),
                                   SamplingMode::Bilinear));
  }
  for (auto _ : state) {
    auto corr = correspond(qd, out.view2.descriptors);
    benchmark::DoNotOptimize(corr.data());
  }
}
BENCHMARK(BM_Correspond);

void BM_InfoNceLoss(benchmark::State& state) {
  RunConfig cfg;
  cfg.scene = bench_spec();
  cfg.arch = bench_arch();
  cfg.strides = StrideSchedule{{5, 10}};
  cfg.match_budget = 384;
  cfg.batch_size = 1;
  const Scene scene = generate_scene(cfg.scene);
  LoadedScene ls{scene, render_all(scene)};
  std::vector<LoadedScene> scenes;
  scenes.push_back(std::move(ls));
  Rng rng(7);
  const std::vector<TrainExample> batch = make_batch(cfg, scenes, rng);
  const ModelParams params = init_params(1, cfg.arch);
  const ForwardOutputs out =
      forward(params, batch[0].sample.image1, batch[0].sample.image2);
  for (auto _ : state) {
    const double v = infonce_match(out.view1.descriptors, out.view2.descriptors,
                                   batch[0].matches, MatchKind::Dynamic, 10.0);
    benchmark::DoNotOptimize(v);
  }
}
BENCHMARK(BM_InfoNceLoss);

}  // namespace

BENCHMARK_MAIN();
