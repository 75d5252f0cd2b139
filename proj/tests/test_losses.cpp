#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "corrtrack/losses.hpp"
#include "corrtrack/rng.hpp"

using namespace corrtrack;

namespace {

// ---- independent test-side evaluators (no shared code with the library's
// loss path) ----

Eigen::VectorXd brute_sample_unit(const Tensor& desc, const Eigen::Vector2d& raw_px) {
  const int W = static_cast<int>(desc.dim(1));
  const int H = static_cast<int>(desc.dim(0));
  const int64_t d = desc.dim(2);
  const Eigen::Vector2d px(std::clamp(raw_px.x(), 0.0, W - 1.0),
                           std::clamp(raw_px.y(), 0.0, H - 1.0));
  const int x0 = std::min(static_cast<int>(std::floor(px.x())), W - 1);
  const int y0 = std::min(static_cast<int>(std::floor(px.y())), H - 1);
  const int x1 = std::min(x0 + 1, W - 1);
  const int y1 = std::min(y0 + 1, H - 1);
  const double fx = px.x() - x0, fy = px.y() - y0;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(d);
  const double ws[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
  const int64_t idx[4] = {static_cast<int64_t>(y0) * W + x0, static_cast<int64_t>(y0) * W + x1,
                          static_cast<int64_t>(y1) * W + x0, static_cast<int64_t>(y1) * W + x1};
  for (int k = 0; k < 4; ++k) {
    for (int64_t c = 0; c < d; ++c) out[c] += ws[k] * desc[idx[k] * d + c];
  }
  const double n = std::sqrt(out.squaredNorm() + 1e-24);
  return out / n;
}

// Termwise softmax denominators, straight from the formula.
double brute_infonce(const Tensor& d1, const Tensor& d2, const MatchSet& matches, MatchKind kind,
                     double tau) {
  std::vector<Eigen::VectorXd> a, b;
  for (const auto& p : matches.positives) {
    if (p.kind != kind) continue;
    a.push_back(brute_sample_unit(d1, p.pixel_i));
    b.push_back(brute_sample_unit(d2, p.pixel_j));
  }
  std::vector<Eigen::VectorXd> cand1 = a, cand2 = b;
  for (const auto& n : matches.negatives_1) {
    cand1.push_back(brute_sample_unit(d1, n.cast<double>()));
  }
  for (const auto& n : matches.negatives_2) {
    cand2.push_back(brute_sample_unit(d2, n.cast<double>()));
  }
  double loss = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double s_num = std::exp(tau * a[i].dot(b[i]));
    double den1 = 0.0, den2 = 0.0;
    for (const auto& k : cand1) den1 += std::exp(tau * k.dot(b[i]));
    for (const auto& k : cand2) den2 += std::exp(tau * k.dot(a[i]));
    loss += -(std::log(s_num / den1) + std::log(s_num / den2));
  }
  return loss;
}

double brute_conf_loss(const PointMapBundle& pred1, const PointMapBundle& gt1,
                       const PointMapBundle& pred2, const PointMapBundle& gt2, double conf_alpha) {
  auto norm_over_valid = [](const PointMapBundle& b) {
    double s = 0;
    int n = 0;
    for (size_t i = 0; i < b.valid.size(); ++i) {
      if (!b.valid[i]) continue;
      const double x = b.points[static_cast<int64_t>(i) * 3 + 0];
      const double y = b.points[static_cast<int64_t>(i) * 3 + 1];
      const double z = b.points[static_cast<int64_t>(i) * 3 + 2];
      s += std::sqrt(x * x + y * y + z * z);
      ++n;
    }
    return s / n;
  };
  double total = 0.0;
  const PointMapBundle* preds[2] = {&pred1, &pred2};
  const PointMapBundle* gts[2] = {&gt1, &gt2};
  for (int v = 0; v < 2; ++v) {
    const double z = norm_over_valid(*preds[v]);
    const double zh = norm_over_valid(*gts[v]);
    for (size_t i = 0; i < preds[v]->valid.size(); ++i) {
      if (!preds[v]->valid[i] || !gts[v]->valid[i]) continue;
      double sq = 0;
      for (int c = 0; c < 3; ++c) {
        const double diff = preds[v]->points[static_cast<int64_t>(i) * 3 + c] / z -
                            gts[v]->points[static_cast<int64_t>(i) * 3 + c] / zh;
        sq += diff * diff;
      }
      const double conf = preds[v]->confidence[static_cast<int64_t>(i)];
      total += conf * std::sqrt(sq) - conf_alpha * std::log(conf);
    }
  }
  return total;
}

double brute_vis_ce(const Tensor& l1, const Tensor& l2, const std::vector<int8_t>& y1,
                    const std::vector<int8_t>& y2) {
  int64_t n_vis = 0, n_occ = 0;
  for (const auto* y : {&y1, &y2}) {
    for (int8_t v : *y) {
      if (v == 1) ++n_vis;
      if (v == 0) ++n_occ;
    }
  }
  const int64_t total = n_vis + n_occ;
  const bool both = n_vis > 0 && n_occ > 0;
  const double w_vis = both ? static_cast<double>(total) / (2.0 * n_vis) : 1.0;
  const double w_occ = both ? static_cast<double>(total) / (2.0 * n_occ) : 1.0;
  double loss = 0.0;
  const Tensor* ls[2] = {&l1, &l2};
  const std::vector<int8_t>* ys[2] = {&y1, &y2};
  for (int v = 0; v < 2; ++v) {
    for (size_t i = 0; i < ys[v]->size(); ++i) {
      const int8_t y = (*ys[v])[i];
      if (y < 0) continue;
      const double logit = (*ls[v])[static_cast<int64_t>(i)];
      const double p = 1.0 / (1.0 + std::exp(-logit));
      const double bce = y == 1 ? -std::log(p) : -std::log(1.0 - p);
      loss += (y == 1 ? w_vis : w_occ) * bce;
    }
  }
  return loss / static_cast<double>(total);
}

// ---- fixtures ----

PointMapBundle random_bundle(int w, int h, Rng& rng, double valid_frac = 0.8) {
  PointMapBundle b = PointMapBundle::allocate(w, h, "view1");
  for (size_t i = 0; i < b.valid.size(); ++i) {
    b.valid[i] = rng.uniform() < valid_frac ? 1 : 0;
    for (int c = 0; c < 3; ++c) {
      b.points[static_cast<int64_t>(i) * 3 + c] = rng.uniform(-2, 2);
    }
    b.confidence[static_cast<int64_t>(i)] = 1.0 + rng.uniform(0, 3);
  }
  bool any = false;
  for (uint8_t v : b.valid) any = any || v;
  if (!any) b.valid[0] = 1;
  return b;
}

Tensor random_descriptors(int w, int h, int d, Rng& rng) {
  Tensor t({h, w, d});
  for (int64_t p = 0; p < static_cast<int64_t>(w) * h; ++p) {
    double norm_sq = 1e-30;
    for (int64_t c = 0; c < d; ++c) {
      t[p * d + c] = rng.normal();
      norm_sq += t[p * d + c] * t[p * d + c];
    }
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (int64_t c = 0; c < d; ++c) t[p * d + c] *= inv;
  }
  return t;
}

MatchSet random_match_set(int w, int h, int n_static, int n_dynamic, int n_neg, Rng& rng) {
  MatchSet m;
  for (int i = 0; i < n_static + n_dynamic; ++i) {
    MatchPositive p;
    p.pixel_i = Eigen::Vector2d(rng.uniform(0, w - 1), rng.uniform(0, h - 1));
    p.pixel_j = Eigen::Vector2d(rng.uniform(0, w - 1), rng.uniform(0, h - 1));
    p.kind = i < n_static ? MatchKind::Static : MatchKind::Dynamic;
    m.positives.push_back(p);
  }
  for (int i = 0; i < n_neg; ++i) {
    m.negatives_1.emplace_back(static_cast<int>(rng.index(w)), static_cast<int>(rng.index(h)));
    m.negatives_2.emplace_back(static_cast<int>(rng.index(w)), static_cast<int>(rng.index(h)));
  }
  m.budget = n_static + n_dynamic + n_neg;
  return m;
}

}  // namespace

TEST_CASE("regr_loss is zero for equal and uniformly scaled pointmaps") {
  Rng rng(1);
  const PointMapBundle gt = random_bundle(6, 5, rng);
  PointMapBundle pred = gt;
  int x = -1, y = -1;
  for (int yy = 0; yy < 5 && x < 0; ++yy) {
    for (int xx = 0; xx < 6; ++xx) {
      if (gt.valid[static_cast<size_t>(yy) * 6 + xx]) {
        x = xx;
        y = yy;
        break;
      }
    }
  }
  REQUIRE(x >= 0);
  CHECK(regr_loss(pred, gt, x, y) == doctest::Approx(0.0).epsilon(1e-12));

  for (int64_t i = 0; i < pred.points.size(); ++i) pred.points[i] = 2.0 * gt.points[i];
  CHECK(regr_loss(pred, gt, x, y) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("regr_loss single-pixel hand value") {
  PointMapBundle pred = PointMapBundle::allocate(1, 1, "view1");
  PointMapBundle gt = PointMapBundle::allocate(1, 1, "view1");
  pred.valid = {1};
  gt.valid = {1};
  pred.points.at(0, 0, 2) = 2.0;  // (0,0,2)
  gt.points.at(0, 0, 2) = 1.0;    // (0,0,1)
  CHECK(regr_loss(pred, gt, 0, 0) == doctest::Approx(0.0).epsilon(1e-12));

  gt.points.at(0, 0, 0) = 1.0;  // (1,0,1): zhat = sqrt(2)
  gt.points.at(0, 0, 2) = 1.0;
  const double s = 1.0 / std::sqrt(2.0);
  const double expect = std::sqrt(s * s + (1 - s) * (1 - s));
  CHECK(regr_loss(pred, gt, 0, 0) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(expect == doctest::Approx(0.7654).epsilon(1e-4));
}

TEST_CASE("regr_loss is invariant to rescaling either full pointmap") {
  Rng rng(2);
  const PointMapBundle gt = random_bundle(5, 4, rng);
  PointMapBundle pred = random_bundle(5, 4, rng);
  pred.valid = gt.valid;
  int x = 0, y = 0;
  while (!gt.valid[static_cast<size_t>(y) * 5 + x]) {
    if (++x == 5) {
      x = 0;
      ++y;
    }
  }
  const double base = regr_loss(pred, gt, x, y);
  PointMapBundle pred_scaled = pred;
  for (int64_t i = 0; i < pred_scaled.points.size(); ++i) pred_scaled.points[i] *= 3.7;
  CHECK(regr_loss(pred_scaled, gt, x, y) == doctest::Approx(base).epsilon(1e-10));
  PointMapBundle gt_scaled = gt;
  for (int64_t i = 0; i < gt_scaled.points.size(); ++i) gt_scaled.points[i] *= 0.21;
  CHECK(regr_loss(pred, gt_scaled, x, y) == doctest::Approx(base).epsilon(1e-10));
}

TEST_CASE("conf_loss with unit confidence reduces to the plain regression sum") {
  Rng rng(3);
  PointMapBundle pred1 = random_bundle(5, 4, rng), pred2 = random_bundle(5, 4, rng);
  PointMapBundle gt1 = random_bundle(5, 4, rng), gt2 = random_bundle(5, 4, rng);
  pred1.valid = gt1.valid;
  pred2.valid = gt2.valid;
  for (int64_t i = 0; i < pred1.confidence.size(); ++i) {
    pred1.confidence[i] = 1.0;
    pred2.confidence[i] = 1.0;
  }
  double expect = 0.0;
  for (int v = 0; v < 2; ++v) {
    const PointMapBundle& pred = v == 0 ? pred1 : pred2;
    const PointMapBundle& gt = v == 0 ? gt1 : gt2;
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 5; ++x) {
        if (!gt.valid[static_cast<size_t>(y) * 5 + x]) continue;
        expect += regr_loss(pred, gt, x, y);
      }
    }
  }
  CHECK(conf_loss(pred1, gt1, pred2, gt2, 0.2) == doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("conf_loss one-pixel hand value") {
  // l_regr = 0.5 by construction: unit-normalized points at angle
  // 2*asin(0.25); C = 2, alpha = 0.2 gives 2*0.5 - 0.2*ln 2.
  PointMapBundle pred = PointMapBundle::allocate(1, 1, "view1");
  PointMapBundle gt = PointMapBundle::allocate(1, 1, "view1");
  pred.valid = {1};
  gt.valid = {1};
  pred.points.at(0, 0, 2) = 1.0;
  const double theta = 2.0 * std::asin(0.25);
  gt.points.at(0, 0, 0) = std::sin(theta);
  gt.points.at(0, 0, 2) = std::cos(theta);
  REQUIRE(regr_loss(pred, gt, 0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  pred.confidence[0] = 2.0;
  const double expect = 2.0 * 0.5 - 0.2 * std::log(2.0);
  CHECK(conf_loss(pred, gt, pred, gt, 0.2) == doctest::Approx(2 * expect).epsilon(1e-10));
  CHECK(expect == doctest::Approx(0.8614).epsilon(1e-4));
}

TEST_CASE("perfect pointmaps leave only the log-confidence term, decreasing in C") {
  Rng rng(4);
  const PointMapBundle gt = random_bundle(4, 4, rng);
  PointMapBundle pred = gt;
  double prev = conf_loss(pred, gt, pred, gt, 0.2);
  double sum_log = 0.0;
  for (size_t i = 0; i < gt.valid.size(); ++i) {
    if (gt.valid[i]) sum_log += std::log(pred.confidence[static_cast<int64_t>(i)]);
  }
  CHECK(prev == doctest::Approx(-2 * 0.2 * sum_log).epsilon(1e-10));
  CHECK(prev <= 0.0);
  for (int64_t i = 0; i < pred.confidence.size(); ++i) pred.confidence[i] *= 2.0;
  CHECK(conf_loss(pred, gt, pred, gt, 0.2) < prev);
}

TEST_CASE("conf_loss raises on a view with no valid pixels") {
  Rng rng(5);
  PointMapBundle pred = random_bundle(3, 3, rng);
  PointMapBundle gt = random_bundle(3, 3, rng);
  pred.valid.assign(9, 0);
  gt.valid.assign(9, 0);
  CHECK_THROWS_AS(conf_loss(pred, gt, pred, gt, 0.2), EmptyPointMap);
}

TEST_CASE("infonce_match with one positive and no negatives is zero") {
  Rng rng(6);
  const Tensor d1 = random_descriptors(6, 5, 4, rng);
  const Tensor d2 = random_descriptors(6, 5, 4, rng);
  MatchSet m = random_match_set(6, 5, 1, 0, 0, rng);
  CHECK(infonce_match(d1, d2, m, MatchKind::Static, 7.0) ==
        doctest::Approx(0.0).epsilon(1e-12));
  CHECK_THROWS_AS(infonce_match(d1, d2, m, MatchKind::Dynamic, 7.0), EmptyMatchSet);
}

TEST_CASE("infonce_match symmetric two-positive case equals 4 ln 2") {
  // Identical descriptors everywhere: all four cross-similarities are equal.
  Tensor d1({4, 4, 3});
  Tensor d2({4, 4, 3});
  for (int64_t p = 0; p < 16; ++p) {
    d1[p * 3] = 1.0;
    d2[p * 3] = 1.0;
  }
  MatchSet m;
  MatchPositive p1;
  p1.pixel_i = Eigen::Vector2d(0, 0);
  p1.pixel_j = Eigen::Vector2d(1, 1);
  p1.kind = MatchKind::Static;
  MatchPositive p2;
  p2.pixel_i = Eigen::Vector2d(2, 2);
  p2.pixel_j = Eigen::Vector2d(3, 3);
  p2.kind = MatchKind::Static;
  m.positives = {p1, p2};
  CHECK(infonce_match(d1, d2, m, MatchKind::Static, 3.0) ==
        doctest::Approx(4.0 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("infonce_match equals the brute-force evaluator on 25 random instances") {
  Rng rng(7);
  for (int trial = 0; trial < 25; ++trial) {
    const int w = 5 + static_cast<int>(rng.index(4));
    const int h = 5 + static_cast<int>(rng.index(4));
    const int d = 3 + static_cast<int>(rng.index(4));
    const Tensor d1 = random_descriptors(w, h, d, rng);
    const Tensor d2 = random_descriptors(w, h, d, rng);
    const MatchSet m = random_match_set(w, h, 3 + static_cast<int>(rng.index(4)),
                                        3 + static_cast<int>(rng.index(4)),
                                        static_cast<int>(rng.index(11)), rng);
    const double tau = rng.uniform(0.5, 12.0);
    for (MatchKind kind : {MatchKind::Static, MatchKind::Dynamic}) {
      const double got = infonce_match(d1, d2, m, kind, tau);
      const double expect = brute_infonce(d1, d2, m, kind, tau);
      CHECK(std::abs(got - expect) < 1e-9);
    }
  }
}

TEST_CASE("infonce_match decreases when a matched similarity increases") {
  Rng rng(8);
  const int w = 6, h = 6, d = 4;
  Tensor d1 = random_descriptors(w, h, d, rng);
  const Tensor d2 = random_descriptors(w, h, d, rng);
  MatchSet m = random_match_set(w, h, 4, 0, 6, rng);
  // Integer pixels so the pulled pair is exactly one stored descriptor.
  for (auto& p : m.positives) {
    p.pixel_i = Eigen::Vector2d(std::floor(p.pixel_i.x()), std::floor(p.pixel_i.y()));
    p.pixel_j = Eigen::Vector2d(std::floor(p.pixel_j.x()), std::floor(p.pixel_j.y()));
  }
  const double before = infonce_match(d1, d2, m, MatchKind::Static, 5.0);
  // Move the first positive's view-1 descriptor toward its view-2 partner.
  const auto& p = m.positives[0];
  const int64_t pi = static_cast<int64_t>(p.pixel_i.y()) * w + static_cast<int64_t>(p.pixel_i.x());
  const int64_t pj = static_cast<int64_t>(p.pixel_j.y()) * w + static_cast<int64_t>(p.pixel_j.x());
  double norm_sq = 1e-30;
  for (int64_t c = 0; c < d; ++c) {
    d1[pi * d + c] = 0.2 * d1[pi * d + c] + 0.8 * d2[pj * d + c];
    norm_sq += d1[pi * d + c] * d1[pi * d + c];
  }
  for (int64_t c = 0; c < d; ++c) d1[pi * d + c] /= std::sqrt(norm_sq);
  const double after = infonce_match(d1, d2, m, MatchKind::Static, 5.0);
  CHECK(after < before);
}

TEST_CASE("vis_ce_loss trivial and hand-computed values") {
  Tensor l1({2, 2}), l2({2, 2});
  std::vector<int8_t> y1 = {1, 1, 1, 0};
  std::vector<int8_t> y2 = {-1, -1, -1, -1};
  // Perfectly confident correct predictions -> 0 (up to sigmoid saturation).
  l1[0] = l1[1] = l1[2] = 60.0;
  l1[3] = -60.0;
  CHECK(vis_ce_loss(l1, l2, y1, y2) == doctest::Approx(0.0).epsilon(1e-12));

  // Uniform p = 0.5 on (3 visible, 1 occluded): balance cancels to ln 2.
  l1.fill(0.0);
  CHECK(vis_ce_loss(l1, l2, y1, y2) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // Single visible pixel at logit 0 -> ln 2.
  std::vector<int8_t> single = {1, -1, -1, -1};
  CHECK(vis_ce_loss(l1, l2, single, y2) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  std::vector<int8_t> none = {-1, -1, -1, -1};
  CHECK_THROWS_AS(vis_ce_loss(l1, l2, none, none), EmptyLabels);
}

TEST_CASE("vis_ce_loss matches the brute evaluator and is duplication-invariant") {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const int n1 = 4 + static_cast<int>(rng.index(10));
    const int n2 = 4 + static_cast<int>(rng.index(10));
    Tensor l1({n1}), l2({n2});
    std::vector<int8_t> y1(static_cast<size_t>(n1)), y2(static_cast<size_t>(n2));
    for (int i = 0; i < n1; ++i) {
      l1[i] = rng.uniform(-3, 3);
      y1[static_cast<size_t>(i)] = static_cast<int8_t>(rng.index(3)) - 1;
    }
    for (int i = 0; i < n2; ++i) {
      l2[i] = rng.uniform(-3, 3);
      y2[static_cast<size_t>(i)] = static_cast<int8_t>(rng.index(3)) - 1;
    }
    bool any = false;
    for (int8_t v : y1) any = any || v >= 0;
    for (int8_t v : y2) any = any || v >= 0;
    if (!any) y1[0] = 1;
    const double got = vis_ce_loss(l1, l2, y1, y2);
    CHECK(std::abs(got - brute_vis_ce(l1, l2, y1, y2)) < 1e-9);

    // Duplicate every labelled pixel 3 times: loss unchanged.
    Tensor l1_dup({n1 * 3}), l2_dup({n2 * 3});
    std::vector<int8_t> y1_dup, y2_dup;
    for (int rep = 0; rep < 3; ++rep) {
      for (int i = 0; i < n1; ++i) {
        l1_dup[rep * n1 + i] = l1[i];
        y1_dup.push_back(y1[static_cast<size_t>(i)]);
      }
      for (int i = 0; i < n2; ++i) {
        l2_dup[rep * n2 + i] = l2[i];
        y2_dup.push_back(y2[static_cast<size_t>(i)]);
      }
    }
    CHECK(vis_ce_loss(l1_dup, l2_dup, y1_dup, y2_dup) == doctest::Approx(got).epsilon(1e-10));
  }
}

namespace {

struct TinyFixture {
  ArchConfig arch;
  ModelParams params;
  ScenePairSample sample;
  MatchSet matches;

  explicit TinyFixture(uint64_t seed, int width = 8, int height = 8) {
    arch.channels = 4;
    arch.descriptor_dim = 4;
    arch.head_hidden = 8;
    params = init_params(seed, arch);

    SceneSpec spec;
    spec.seed = seed + 1000;
    spec.num_frames = 8;
    spec.width = width;
    spec.height = height;
    spec.num_static_points = 140;
    spec.num_objects = 1;
    spec.min_speed = 0.02;
    spec.max_speed = 0.05;
    spec.camera_path.kind = CameraPathKind::Pan;
    spec.camera_path.amplitude = 0.4;
    const Scene scene = generate_scene(spec);
    const RenderedFrame f0 = render(scene, 0);
    const RenderedFrame f1 = render(scene, 5);
    sample = ground_truth_pair(scene, f0, f1, 0, 5);
    Rng rng(seed + 7);
    matches = build_match_set(sample, 0.5, 24, rng);
  }
};

double eval_total(const ModelParams& params, const ScenePairSample& sample,
                  const MatchSet& matches, const LossConfig& cfg) {
  const ForwardOutputs out = forward(params, sample.image1, sample.image2);
  return total_loss(out, sample, matches, cfg).total;
}

}  // namespace

TEST_CASE("total_loss defaults and breakdown identity") {
  const LossConfig cfg;
  CHECK(cfg.alpha == 0.075);
  CHECK(cfg.beta == 0.075);
  CHECK(cfg.gamma == 1.0);

  TinyFixture fx(42);
  const ForwardOutputs out = forward(fx.params, fx.sample.image1, fx.sample.image2);
  const LossBreakdown b = total_loss(out, fx.sample, fx.matches, cfg);
  const double recombined =
      b.conf + cfg.alpha * b.match_static + cfg.beta * b.match_dynamic + cfg.gamma * b.vis;
  CHECK(std::abs(b.total - recombined) < 1e-10);
}

TEST_CASE("total_loss equals independently computed components") {
  TinyFixture fx(43);
  LossConfig cfg;
  cfg.conf_weighted_match = false;  // components checked by the plain oracles
  const ForwardOutputs out = forward(fx.params, fx.sample.image1, fx.sample.image2);
  const LossBreakdown b = total_loss(out, fx.sample, fx.matches, cfg);

  PointMapBundle pred1 = PointMapBundle::allocate(fx.sample.width, fx.sample.height, "view1");
  pred1.points = out.view1.pointmap;
  pred1.confidence = out.view1.confidence;
  pred1.valid = fx.sample.valid1;
  PointMapBundle pred2 = pred1;
  pred2.points = out.view2.pointmap;
  pred2.confidence = out.view2.confidence;
  pred2.valid = fx.sample.valid2;
  PointMapBundle gt1 = PointMapBundle::allocate(fx.sample.width, fx.sample.height, "view1");
  gt1.points = fx.sample.gt_points1;
  gt1.valid = fx.sample.valid1;
  PointMapBundle gt2 = gt1;
  gt2.points = fx.sample.gt_points2;
  gt2.valid = fx.sample.valid2;

  CHECK(b.conf == doctest::Approx(brute_conf_loss(pred1, gt1, pred2, gt2, cfg.conf_alpha))
                      .epsilon(1e-10));
  CHECK(b.vis == doctest::Approx(brute_vis_ce(out.view1.vis_logits, out.view2.vis_logits,
                                              fx.sample.cross_visible1, fx.sample.cross_visible2))
                     .epsilon(1e-10));
  if (fx.matches.num_static() > 0) {
    CHECK(b.match_static ==
          doctest::Approx(brute_infonce(out.view1.descriptors, out.view2.descriptors, fx.matches,
                                        MatchKind::Static, cfg.tau))
              .epsilon(1e-9));
  }
  if (fx.matches.num_dynamic() > 0) {
    CHECK(b.match_dynamic ==
          doctest::Approx(brute_infonce(out.view1.descriptors, out.view2.descriptors, fx.matches,
                                        MatchKind::Dynamic, cfg.tau))
              .epsilon(1e-9));
  }
  const double recombined =
      b.conf + cfg.alpha * b.match_static + cfg.beta * b.match_dynamic + cfg.gamma * b.vis;
  CHECK(std::abs(b.total - recombined) < 1e-10);
}

TEST_CASE("total_loss with beta 0 ignores the dynamic term") {
  TinyFixture fx(44);
  // Rebuild the match set with r = 0 (static only).
  Rng rng(3);
  fx.matches = build_match_set(fx.sample, 0.0, 24, rng);
  REQUIRE(fx.matches.num_dynamic() == 0);
  LossConfig cfg;
  cfg.beta = 0.0;
  const ForwardOutputs out = forward(fx.params, fx.sample.image1, fx.sample.image2);
  const LossBreakdown b = total_loss(out, fx.sample, fx.matches, cfg);
  CHECK(b.match_dynamic == 0.0);
  CHECK(b.total == doctest::Approx(b.conf + cfg.alpha * b.match_static + b.vis).epsilon(1e-10));
}

TEST_CASE("analytic gradients match central finite differences on the tiny config") {
  const LossConfig cfg;  // all four terms active
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    TinyFixture fx(seed);
    GradientSet grads;
    const LossBreakdown base = loss_backward(fx.params, fx.sample, fx.matches, cfg, grads);
    CHECK(std::isfinite(base.total));

    const double h = 1e-4;
    double max_rel = 0.0;
    Rng pick(seed * 31 + 5);
    for (const auto& [name, tensor] : fx.params.tensors) {
      // Spot-check a handful of coordinates per tensor; the acceptance suite
      // sweeps every coordinate.
      for (int probe = 0; probe < 4; ++probe) {
        const int64_t k = static_cast<int64_t>(pick.index(static_cast<uint64_t>(tensor.size())));
        ModelParams plus = fx.params, minus = fx.params;
        plus.tensors.at(name)[k] += h;
        minus.tensors.at(name)[k] -= h;
        const double fd =
            (eval_total(plus, fx.sample, fx.matches, cfg) -
             eval_total(minus, fx.sample, fx.matches, cfg)) / (2 * h);
        const double a = grads.at(name)[k];
        const double denom = std::max({std::abs(a), std::abs(fd), 1e-6});
        const double rel = std::abs(a - fd) / denom;
        if (std::abs(a - fd) > 1e-8) max_rel = std::max(max_rel, rel);
        INFO("tensor " << name << " [" << k << "] analytic " << a << " fd " << fd);
        CHECK((rel < 1e-4 || std::abs(a - fd) <= 1e-8));
      }
    }
    CHECK(max_rel < 1e-4);
  }
}

TEST_CASE("frozen encoder receives exactly zero gradients") {
  TinyFixture fx(9);
  fx.params.arch.frozen_encoder = true;
  GradientSet grads;
  loss_backward(fx.params, fx.sample, fx.matches, LossConfig{}, grads);
  bool any_nonzero_rest = false;
  for (const auto& [name, g] : grads) {
    if (ModelParams::is_encoder(name)) {
      for (int64_t i = 0; i < g.size(); ++i) CHECK(g[i] == 0.0);
    } else {
      for (int64_t i = 0; i < g.size(); ++i) any_nonzero_rest = any_nonzero_rest || g[i] != 0.0;
    }
  }
  CHECK(any_nonzero_rest);
}

TEST_CASE("gamma 0 zeroes the visibility head gradients") {
  TinyFixture fx(10);
  LossConfig cfg;
  cfg.gamma = 0.0;
  GradientSet grads;
  loss_backward(fx.params, fx.sample, fx.matches, cfg, grads);
  for (const auto& [name, g] : grads) {
    if (name.rfind("head_vis", 0) == 0) {
      for (int64_t i = 0; i < g.size(); ++i) CHECK(g[i] == 0.0);
    }
  }
}

TEST_CASE("train_step with lr 0 leaves parameters unchanged") {
  TinyFixture fx(11);
  const ModelParams before = fx.params;
  AdamState adam;
  std::vector<TrainExample> batch;
  batch.push_back({fx.sample, fx.matches, 5});
  train_step(fx.params, batch, adam, LossConfig{}, 0.0, 1);
  for (const auto& [name, t] : before.tensors) {
    const Tensor& after = fx.params.tensors.at(name);
    for (int64_t i = 0; i < t.size(); ++i) CHECK(t[i] == after[i]);
  }
}

TEST_CASE("train_step is deterministic and worker-count invariant") {
  TinyFixture fx(12);
  std::vector<TrainExample> batch;
  for (uint64_t s = 0; s < 4; ++s) {
    TinyFixture other(100 + s);
    batch.push_back({other.sample, other.matches, 3});
  }
  ModelParams p1 = fx.params, p2 = fx.params;
  AdamState a1, a2;
  train_step(p1, batch, a1, LossConfig{}, 1e-3, 1);
  train_step(p2, batch, a2, LossConfig{}, 1e-3, 4);
  for (const auto& [name, t] : p1.tensors) {
    const Tensor& t2 = p2.tensors.at(name);
    for (int64_t i = 0; i < t.size(); ++i) CHECK(t[i] == t2[i]);
  }
}

TEST_CASE("a short training run reduces the loss on a fixed toy set") {
  LossConfig cfg;
  std::vector<TrainExample> batch;
  for (uint64_t s = 0; s < 3; ++s) {
    TinyFixture other(200 + s, 12, 10);
    batch.push_back({other.sample, other.matches, 5});
  }
  ModelParams params = init_params(77, batch.empty() ? ArchConfig{} : TinyFixture(200).arch);
  AdamState adam;
  const LossBreakdown first = train_step(params, batch, adam, cfg, 2e-3, 2);
  LossBreakdown last = first;
  for (int step = 0; step < 60; ++step) last = train_step(params, batch, adam, cfg, 2e-3, 2);
  CHECK(last.total < first.total);
}

TEST_CASE("to_log_line formats one record per step") {
  TrainLogRecord rec;
  rec.step = 3;
  rec.loss.total = 1.25;
  rec.loss.conf = 0.5;
  rec.lr = 5e-5;
  rec.r_actual_mean = 0.95;
  rec.stride_mean = 30;
  const std::string line = to_log_line(rec);
  CHECK(line.find("step=3") != std::string::npos);
  CHECK(line.find("total=1.25") != std::string::npos);
  CHECK(line.find("lr=5e-05") != std::string::npos);
  CHECK(line.find("r_actual=0.95") != std::string::npos);
  CHECK(line.find("stride=30") != std::string::npos);
}
