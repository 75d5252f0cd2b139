#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "corrtrack/rng.hpp"
#include "corrtrack/sampler.hpp"
#include "corrtrack/scene.hpp"

using namespace corrtrack;

namespace {

// A synthetic pair sample with the requested number of static/dynamic
// correspondences and a grid of labelled negative pixels.
ScenePairSample fake_pair(int n_static, int n_dynamic, int width = 64, int height = 64) {
  ScenePairSample s;
  s.t1 = 0;
  s.t2 = 1;
  s.width = width;
  s.height = height;
  s.cross_visible1.assign(static_cast<size_t>(width) * height, 0);
  s.cross_visible2.assign(static_cast<size_t>(width) * height, 0);
  Rng rng(99);
  int32_t id = 0;
  for (int i = 0; i < n_static + n_dynamic; ++i) {
    Correspondence c;
    c.surfel_id = id++;
    c.pixel_i = Eigen::Vector2d(rng.uniform(0, width - 1), rng.uniform(0, height - 1));
    c.pixel_j = Eigen::Vector2d(rng.uniform(0, width - 1), rng.uniform(0, height - 1));
    c.kind = i < n_static ? MatchKind::Static : MatchKind::Dynamic;
    s.correspondences.push_back(c);
    // Mark the surrounding pixels visible so they are never negatives.
    const auto mark = [&](std::vector<int8_t>& labels, const Eigen::Vector2d& px) {
      const int x = static_cast<int>(std::lround(px.x()));
      const int y = static_cast<int>(std::lround(px.y()));
      labels[static_cast<size_t>(y) * width + x] = 1;
    };
    mark(s.cross_visible1, c.pixel_i);
    mark(s.cross_visible2, c.pixel_j);
  }
  return s;
}

}  // namespace

TEST_CASE("stride schedule validation") {
  const StrideSchedule empty{};
  const StrideSchedule decreasing{{3, 2}};
  const StrideSchedule with_zero{{0, 2}};
  const StrideSchedule good{{1, 2, 10}};
  CHECK_THROWS_AS(empty.validate(), Error);
  CHECK_THROWS_AS(decreasing.validate(), Error);
  CHECK_THROWS_AS(with_zero.validate(), Error);
  CHECK_NOTHROW(good.validate());
  CHECK(StrideSchedule::parse("10,30,50").strides == std::vector<int>{10, 30, 50});
  CHECK(StrideSchedule{{1, 5, 9}}.to_string() == "1,5,9");
}

TEST_CASE("stride frequencies are proportional to stride value") {
  const StrideSchedule schedule{{1, 2, 3}};
  Rng rng(4242);
  const int draws = 30000;
  std::map<int, int> counts;
  for (int i = 0; i < draws; ++i) {
    const auto [t1, t2] = sample_pair_indices(100, schedule, rng);
    counts[t2 - t1]++;
  }
  // 3-sigma binomial bounds around p = s/6.
  for (const auto& [stride, expect_num] : std::map<int, double>{{1, 1.0}, {2, 2.0}, {3, 3.0}}) {
    const double p = expect_num / 6.0;
    const double sigma = std::sqrt(p * (1 - p) * draws);
    CHECK(std::abs(counts[stride] - p * draws) < 3 * sigma);
  }
}

TEST_CASE("a single stride always yields that gap") {
  const StrideSchedule schedule{{10}};
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    const auto [t1, t2] = sample_pair_indices(48, schedule, rng);
    CHECK(t2 - t1 == 10);
    CHECK(t1 >= 0);
    CHECK(t2 < 48);
  }
}

TEST_CASE("infeasible strides are filtered and renormalized") {
  // Strides 10..170 step 20 with 48 frames: only 10 and 30 are feasible, so
  // their odds renormalize to 1:3.
  StrideSchedule schedule{{10, 30, 50, 70, 90, 110, 130, 150, 170}};
  Rng rng(11);
  std::map<int, int> counts;
  const int draws = 40000;
  for (int i = 0; i < draws; ++i) {
    const auto [t1, t2] = sample_pair_indices(48, schedule, rng);
    counts[t2 - t1]++;
  }
  CHECK(counts.size() == 2);
  CHECK(counts.count(10) == 1);
  CHECK(counts.count(30) == 1);
  const double p10 = 10.0 / 40.0;
  const double sigma = std::sqrt(p10 * (1 - p10) * draws);
  CHECK(std::abs(counts[10] - p10 * draws) < 3 * sigma);

  const StrideSchedule all_too_long{{100, 200}};
  Rng rng2(1);
  CHECK_THROWS_AS(sample_pair_indices(48, all_too_long, rng2), NoFeasibleStride);
}

TEST_CASE("ample pools follow round-half-up allocation at r = 0.95") {
  const ScenePairSample pair = fake_pair(3000, 4000, 128, 128);
  Rng rng(5);
  const MatchSet m = build_match_set(pair, 0.95, 4096, rng);
  CHECK(m.num_dynamic() == 3891);  // round(0.95 * 4096)
  CHECK(m.num_static() == 205);
  CHECK(m.positives.size() == 4096);
  CHECK(m.negatives_1.empty());
  CHECK(m.negatives_2.empty());
  CHECK(m.r_actual == doctest::Approx(3891.0 / 4096.0));
}

TEST_CASE("r = 0 takes only static positives") {
  const ScenePairSample pair = fake_pair(300, 300);
  Rng rng(6);
  const MatchSet m = build_match_set(pair, 0.0, 256, rng);
  CHECK(m.num_dynamic() == 0);
  CHECK(m.positives.size() == 256);
  CHECK(m.r_actual == 0.0);
}

TEST_CASE("r = 1 takes only dynamic positives even when the pool is short") {
  const ScenePairSample pair = fake_pair(300, 100);
  Rng rng(6);
  const MatchSet m = build_match_set(pair, 1.0, 256, rng);
  CHECK(m.num_dynamic() == 100);
  CHECK(m.num_static() == 0);
  CHECK(m.r_actual == 1.0);
  CHECK(m.negatives_1.size() == 156);
  CHECK(m.negatives_2.size() == 156);
}

TEST_CASE("short dynamic pool: take it all plus minimal ratio-restoring static") {
  // Pools (100 dyn, 100 stat), r = 0.95, budget 4096: all 100 dynamic plus 6
  // static (the least static keeping r_actual <= r), 3990 negatives per view.
  const ScenePairSample pair = fake_pair(100, 100, 128, 128);
  Rng rng(7);
  const MatchSet m = build_match_set(pair, 0.95, 4096, rng);
  CHECK(m.num_dynamic() == 100);
  CHECK(m.num_static() == 6);
  CHECK(m.positives.size() == 106);
  CHECK(m.r_actual == doctest::Approx(100.0 / 106.0));
  CHECK(m.r_actual <= 0.95);
  CHECK(m.negatives_1.size() == 3990);
  CHECK(m.negatives_2.size() == 3990);
}

TEST_CASE("constrained allocation oracle across random pool sizes") {
  Rng outer(31337);
  for (int trial = 0; trial < 40; ++trial) {
    const int n_stat = 1 + static_cast<int>(outer.index(200));
    const int n_dyn = 1 + static_cast<int>(outer.index(200));
    const double r = outer.uniform();
    const int budget = 32 + static_cast<int>(outer.index(300));
    const ScenePairSample pair = fake_pair(n_stat, n_dyn, 96, 96);
    Rng rng(trial);
    const MatchSet m = build_match_set(pair, r, budget, rng);

    // Oracle: recompute the allocation from the declared rule.
    const int64_t want_dyn = static_cast<int64_t>(std::floor(r * budget + 0.5));
    const int64_t want_stat = budget - want_dyn;
    int64_t exp_dyn, exp_stat;
    if (want_dyn <= n_dyn && want_stat <= n_stat) {
      exp_dyn = want_dyn;
      exp_stat = want_stat;
    } else if (want_dyn > n_dyn) {
      exp_dyn = n_dyn;
      int64_t by_ratio = n_dyn == 0 ? budget
                                    : static_cast<int64_t>(std::ceil(n_dyn / r - 1e-12)) - n_dyn;
      exp_stat = std::min<int64_t>({static_cast<int64_t>(n_stat), budget - exp_dyn, by_ratio});
    } else {
      exp_stat = n_stat;
      int64_t by_ratio = n_stat == 0
                             ? budget
                             : static_cast<int64_t>(std::floor(n_stat * r / (1.0 - r) + 1e-12));
      exp_dyn = std::min<int64_t>({static_cast<int64_t>(n_dyn), budget - exp_stat, by_ratio});
    }
    INFO("stat " << n_stat << " dyn " << n_dyn << " r " << r << " budget " << budget);
    CHECK(m.num_dynamic() == exp_dyn);
    CHECK(m.num_static() == exp_stat);
    const int64_t n_neg = budget - exp_dyn - exp_stat;
    CHECK(static_cast<int64_t>(m.negatives_1.size()) == std::min<int64_t>(n_neg, 96 * 96));
  }
}

TEST_CASE("no negative coincides with a positive pixel of the same view") {
  const Scene scene = generate_scene([] {
    SceneSpec spec;
    spec.seed = 5;
    spec.num_frames = 12;
    spec.width = 32;
    spec.height = 24;
    spec.num_static_points = 800;
    spec.num_objects = 2;
    return spec;
  }());
  const RenderedFrame f0 = render(scene, 0);
  const RenderedFrame f1 = render(scene, 8);
  const ScenePairSample pair = ground_truth_pair(scene, f0, f1, 0, 8);
  Rng rng(9);
  const MatchSet m = build_match_set(pair, 0.5, 512, rng);
  std::set<std::pair<int, int>> neg1, neg2;
  for (const auto& n : m.negatives_1) neg1.emplace(n.x(), n.y());
  for (const auto& n : m.negatives_2) neg2.emplace(n.x(), n.y());
  for (const auto& p : m.positives) {
    CHECK(neg1.count({static_cast<int>(std::lround(p.pixel_i.x())),
                      static_cast<int>(std::lround(p.pixel_i.y()))}) == 0);
    CHECK(neg2.count({static_cast<int>(std::lround(p.pixel_j.x())),
                      static_cast<int>(std::lround(p.pixel_j.y()))}) == 0);
  }
  // kinds agree with classify_match on the ground truth
  for (const auto& p : m.positives) {
    const auto w1 = scene.surfel_world(p.surfel_id, 0);
    const auto w2 = scene.surfel_world(p.surfel_id, 8);
    CHECK(p.kind == classify_match(w1, w2, kDefaultDynamicEps));
  }
}

TEST_CASE("match set construction is deterministic in the rng seed") {
  const ScenePairSample pair = fake_pair(500, 500);
  Rng rng_a(123), rng_b(123), rng_c(321);
  const MatchSet a = build_match_set(pair, 0.7, 600, rng_a);
  const MatchSet b = build_match_set(pair, 0.7, 600, rng_b);
  const MatchSet c = build_match_set(pair, 0.7, 600, rng_c);
  REQUIRE(a.positives.size() == b.positives.size());
  bool same_ab = true, same_ac = a.positives.size() == c.positives.size();
  for (size_t i = 0; i < a.positives.size(); ++i) {
    same_ab = same_ab && a.positives[i].surfel_id == b.positives[i].surfel_id;
    if (same_ac && i < c.positives.size()) {
      same_ac = same_ac && a.positives[i].surfel_id == c.positives[i].surfel_id;
    }
  }
  CHECK(same_ab);
  CHECK_FALSE(same_ac);
  CHECK(a.negatives_1 == b.negatives_1);
}

TEST_CASE("empty correspondence set raises NoPositives") {
  ScenePairSample pair = fake_pair(0, 0);
  pair.correspondences.clear();
  Rng rng(1);
  CHECK_THROWS_AS(build_match_set(pair, 0.5, 64, rng), NoPositives);
}
