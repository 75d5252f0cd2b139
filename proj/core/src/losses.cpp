#include "corrtrack/losses.hpp"

#include <cmath>
#include <cstdio>
#include <future>
#include <optional>

#include "corrtrack/autodiff.hpp"
#include "corrtrack/errors.hpp"

namespace corrtrack {

namespace {

double point_norm(const Tensor& points, int64_t row) {
  const double x = points[row * 3 + 0];
  const double y = points[row * 3 + 1];
  const double z = points[row * 3 + 2];
  return std::sqrt(x * x + y * y + z * z);
}

Tensor points_to_rows(const Tensor& hw3) {
  Tensor out({hw3.size() / 3, 3});
  for (int64_t i = 0; i < hw3.size(); ++i) out[i] = hw3[i];
  return out;
}

struct TapedViews {
  ad::Value pointmap1, confidence1, descriptors1, vis_logits1;
  ad::Value pointmap2, confidence2, descriptors2, vis_logits2;
};

struct TapedBreakdown {
  ad::Value total;
  std::optional<ad::Value> conf, match_static, match_dynamic, vis;
};

// One view's confidence-weighted regression term on the tape. The valid set
// is the ground truth's; the prediction normalizer is computed over the same
// pixels.
ad::Value conf_term_view(ad::Tape& tape, ad::Value pred_points, ad::Value confidence,
                         const Tensor& gt_points, const std::vector<uint8_t>& valid,
                         double conf_alpha) {
  const int64_t n_pix = gt_points.size() / 3;
  Tensor mask({n_pix});
  int64_t count = 0;
  double gt_norm_sum = 0.0;
  for (int64_t i = 0; i < n_pix; ++i) {
    if (!valid[static_cast<size_t>(i)]) continue;
    mask[i] = 1.0;
    gt_norm_sum += point_norm(gt_points, i);
    ++count;
  }
  if (count == 0) throw EmptyPointMap("conf loss over a view with no valid pixel");
  const double zhat = gt_norm_sum / static_cast<double>(count);

  ad::Value pred_rows = ad::reshape(pred_points, {n_pix, 3});
  ad::Value z = ad::scale(ad::weighted_sum(ad::rownorm(pred_rows), mask),
                          1.0 / static_cast<double>(count));
  ad::Value pred_scaled = ad::div_scalar(pred_rows, z);

  Tensor gt_scaled({n_pix, 3});
  for (int64_t i = 0; i < n_pix; ++i) {
    if (!valid[static_cast<size_t>(i)]) continue;
    for (int64_t c = 0; c < 3; ++c) gt_scaled.at(i, c) = gt_points[i * 3 + c] / zhat;
  }
  ad::Value residual = ad::rownorm(ad::sub(pred_scaled, tape.constant(std::move(gt_scaled))));
  ad::Value conf_flat = ad::reshape(confidence, {n_pix});
  ad::Value weighted = ad::weighted_sum(ad::mul(conf_flat, residual), mask);
  ad::Value log_pen = ad::weighted_sum(ad::log_(conf_flat), mask);
  return ad::sub(weighted, ad::scale(log_pen, conf_alpha));
}

Tensor pixels_tensor(const std::vector<Eigen::Vector2d>& pts) {
  Tensor out({static_cast<int64_t>(pts.size()), 2});
  for (size_t i = 0; i < pts.size(); ++i) {
    out.at(static_cast<int64_t>(i), 0) = pts[i].x();
    out.at(static_cast<int64_t>(i), 1) = pts[i].y();
  }
  return out;
}

Tensor pixels_tensor(const std::vector<Eigen::Vector2i>& pts) {
  Tensor out({static_cast<int64_t>(pts.size()), 2});
  for (size_t i = 0; i < pts.size(); ++i) {
    out.at(static_cast<int64_t>(i), 0) = pts[i].x();
    out.at(static_cast<int64_t>(i), 1) = pts[i].y();
  }
  return out;
}

// Bilinear descriptor lookup, re-normalized to unit length.
ad::Value sample_unit_rows(ad::Value grid, const Tensor& points) {
  return ad::l2_normalize_rows(ad::gather_bilinear(grid, points));
}

// Symmetric infoNCE over one kind's positives. Confidence weighting is
// optional; conf1/conf2 are HxW Values used only when enabled.
std::optional<ad::Value> match_term(ad::Tape& tape, ad::Value desc1, ad::Value desc2,
                                    ad::Value conf1, ad::Value conf2, const MatchSet& matches,
                                    MatchKind kind, double tau, bool conf_weighted) {
  std::vector<Eigen::Vector2d> pix_i, pix_j;
  for (const auto& p : matches.positives) {
    if (p.kind != kind) continue;
    pix_i.push_back(p.pixel_i);
    pix_j.push_back(p.pixel_j);
  }
  if (pix_i.empty()) return std::nullopt;
  const int64_t n = static_cast<int64_t>(pix_i.size());

  Tensor pts_i = pixels_tensor(pix_i);
  Tensor pts_j = pixels_tensor(pix_j);
  ad::Value a = sample_unit_rows(desc1, pts_i);
  ad::Value b = sample_unit_rows(desc2, pts_j);

  ad::Value cand1 = a;
  if (!matches.negatives_1.empty()) {
    cand1 = ad::concat_rows(a, sample_unit_rows(desc1, pixels_tensor(matches.negatives_1)));
  }
  ad::Value cand2 = b;
  if (!matches.negatives_2.empty()) {
    cand2 = ad::concat_rows(b, sample_unit_rows(desc2, pixels_tensor(matches.negatives_2)));
  }

  ad::Value lse1 = ad::logsumexp_cols_scaled(ad::matmul_nt(cand1, b), tau);  // over P^1
  ad::Value lse2 = ad::logsumexp_cols_scaled(ad::matmul_nt(cand2, a), tau);  // over P^2
  ad::Value diag = ad::rowwise_dot(a, b);
  ad::Value per_pair = ad::sub(ad::add(lse1, lse2), ad::scale(diag, 2.0 * tau));

  if (!conf_weighted) return ad::sum(per_pair);

  const int64_t H = tape.val(conf1).dim(0);
  const int64_t W = tape.val(conf1).dim(1);
  ad::Value c1rows = ad::reshape(ad::gather_bilinear(ad::reshape(conf1, {H, W, 1}), pts_i), {n});
  ad::Value c2rows = ad::reshape(ad::gather_bilinear(ad::reshape(conf2, {H, W, 1}), pts_j), {n});
  ad::Value w = ad::min2(c1rows, c2rows);
  ad::Value w_norm = ad::div_scalar(w, ad::mean(w));
  return ad::sum(ad::mul(per_pair, w_norm));
}

// Per-pixel weights for the balanced visibility loss. Both views' labelled
// pixels are pooled; weights are total/(2*count) per class, normalized by
// the labelled total (so duplicating every pixel leaves the loss unchanged).
std::pair<Tensor, Tensor> vis_weight_maps(const std::vector<int8_t>& labels1,
                                          const std::vector<int8_t>& labels2) {
  int64_t n_vis = 0, n_occ = 0;
  for (int8_t l : labels1) {
    if (l == 1) ++n_vis;
    if (l == 0) ++n_occ;
  }
  for (int8_t l : labels2) {
    if (l == 1) ++n_vis;
    if (l == 0) ++n_occ;
  }
  const int64_t total = n_vis + n_occ;
  if (total == 0) throw EmptyLabels("visibility loss with no labelled pixel");
  double w_vis = 0.0, w_occ = 0.0;
  if (n_vis > 0 && n_occ > 0) {
    w_vis = 1.0 / (2.0 * static_cast<double>(n_vis));
    w_occ = 1.0 / (2.0 * static_cast<double>(n_occ));
  } else {
    const double w = 1.0 / static_cast<double>(total);
    w_vis = w_occ = w;
  }
  auto build = [&](const std::vector<int8_t>& labels) {
    Tensor weights({static_cast<int64_t>(labels.size())});
    for (size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == 1) weights[static_cast<int64_t>(i)] = w_vis;
      if (labels[i] == 0) weights[static_cast<int64_t>(i)] = w_occ;
    }
    return weights;
  };
  return {build(labels1), build(labels2)};
}

Tensor labels_tensor(const std::vector<int8_t>& labels) {
  Tensor out({static_cast<int64_t>(labels.size())});
  for (size_t i = 0; i < labels.size(); ++i) {
    out[static_cast<int64_t>(i)] = labels[i] == 1 ? 1.0 : 0.0;
  }
  return out;
}

TapedBreakdown build_total_loss(ad::Tape& tape, const TapedViews& v, const ScenePairSample& sample,
                                const MatchSet& matches, const LossConfig& cfg) {
  TapedBreakdown out;
  ad::Value conf1 = conf_term_view(tape, v.pointmap1, v.confidence1, sample.gt_points1,
                                   sample.valid1, cfg.conf_alpha);
  ad::Value conf2 = conf_term_view(tape, v.pointmap2, v.confidence2, sample.gt_points2,
                                   sample.valid2, cfg.conf_alpha);
  out.conf = ad::add(conf1, conf2);
  ad::Value total = *out.conf;

  out.match_static = match_term(tape, v.descriptors1, v.descriptors2, v.confidence1,
                                v.confidence2, matches, MatchKind::Static, cfg.tau,
                                cfg.conf_weighted_match);
  if (out.match_static) total = ad::add(total, ad::scale(*out.match_static, cfg.alpha));

  out.match_dynamic = match_term(tape, v.descriptors1, v.descriptors2, v.confidence1,
                                 v.confidence2, matches, MatchKind::Dynamic, cfg.tau,
                                 cfg.conf_weighted_match);
  if (out.match_dynamic) total = ad::add(total, ad::scale(*out.match_dynamic, cfg.beta));

  auto [w1, w2] = vis_weight_maps(sample.cross_visible1, sample.cross_visible2);
  const int64_t n1 = static_cast<int64_t>(sample.cross_visible1.size());
  const int64_t n2 = static_cast<int64_t>(sample.cross_visible2.size());
  ad::Value vis1 = ad::bce_logits_weighted_sum(ad::reshape(v.vis_logits1, {n1}),
                                               labels_tensor(sample.cross_visible1), std::move(w1));
  ad::Value vis2 = ad::bce_logits_weighted_sum(ad::reshape(v.vis_logits2, {n2}),
                                               labels_tensor(sample.cross_visible2), std::move(w2));
  out.vis = ad::add(vis1, vis2);
  total = ad::add(total, ad::scale(*out.vis, cfg.gamma));

  out.total = total;
  return out;
}

LossBreakdown read_breakdown(const ad::Tape& tape, const TapedBreakdown& b) {
  LossBreakdown out;
  out.total = tape.val(b.total)[0];
  if (b.conf) out.conf = tape.val(*b.conf)[0];
  if (b.match_static) out.match_static = tape.val(*b.match_static)[0];
  if (b.match_dynamic) out.match_dynamic = tape.val(*b.match_dynamic)[0];
  if (b.vis) out.vis = tape.val(*b.vis)[0];
  return out;
}

}  // namespace

void LossConfig::validate() const {
  if (!(tau > 0.0)) throw Error("LossConfig: tau must be positive");
  if (alpha < 0 || beta < 0 || gamma < 0 || conf_alpha < 0) {
    throw Error("LossConfig: weights must be non-negative");
  }
}

double regr_loss(const PointMapBundle& pred, const PointMapBundle& gt, int x, int y) {
  if (pred.width != gt.width || pred.height != gt.height) {
    throw ShapeMismatch("regr_loss bundle sizes differ");
  }
  const int64_t pi = pred.pixel_index(x, y);
  if (!pred.valid[static_cast<size_t>(pi)] || !gt.valid[static_cast<size_t>(pi)]) {
    throw Error("regr_loss pixel is not valid in both bundles");
  }
  const double z = norm_factor(pred);
  const double zhat = norm_factor(gt);
  double acc = 0.0;
  for (int64_t c = 0; c < 3; ++c) {
    const double d = pred.points[pi * 3 + c] / z - gt.points[pi * 3 + c] / zhat;
    acc += d * d;
  }
  return std::sqrt(acc);
}

double conf_loss(const PointMapBundle& pred1, const PointMapBundle& gt1,
                 const PointMapBundle& pred2, const PointMapBundle& gt2, double conf_alpha) {
  auto view = [conf_alpha](const PointMapBundle& pred, const PointMapBundle& gt) {
    const double z = norm_factor(pred);
    const double zhat = norm_factor(gt);
    double acc = 0.0;
    int64_t count = 0;
    const int64_t n = static_cast<int64_t>(pred.valid.size());
    for (int64_t pi = 0; pi < n; ++pi) {
      if (!pred.valid[static_cast<size_t>(pi)] || !gt.valid[static_cast<size_t>(pi)]) continue;
      double sq = 0.0;
      for (int64_t c = 0; c < 3; ++c) {
        const double d = pred.points[pi * 3 + c] / z - gt.points[pi * 3 + c] / zhat;
        sq += d * d;
      }
      const double conf = pred.confidence[pi];
      acc += conf * std::sqrt(sq) - conf_alpha * std::log(conf);
      ++count;
    }
    if (count == 0) throw EmptyPointMap("conf_loss view has no valid pixel");
    return acc;
  };
  return view(pred1, gt1) + view(pred2, gt2);
}

double infonce_match(const Tensor& descriptors1, const Tensor& descriptors2,
                     const MatchSet& matches, MatchKind kind, double tau) {
  bool any = false;
  for (const auto& p : matches.positives) any = any || p.kind == kind;
  if (!any) throw EmptyMatchSet("no positives of the requested kind");
  ad::Tape tape;
  ad::Value d1 = tape.constant(descriptors1);
  ad::Value d2 = tape.constant(descriptors2);
  ad::Value dummy_conf = tape.constant(Tensor({descriptors1.dim(0), descriptors1.dim(1)}));
  auto term = match_term(tape, d1, d2, dummy_conf, dummy_conf, matches, kind, tau,
                         /*conf_weighted=*/false);
  return tape.val(*term)[0];
}

double vis_ce_loss(const Tensor& logits1, const Tensor& logits2,
                   const std::vector<int8_t>& labels1, const std::vector<int8_t>& labels2) {
  if (static_cast<size_t>(logits1.size()) != labels1.size() ||
      static_cast<size_t>(logits2.size()) != labels2.size()) {
    throw ShapeMismatch("vis_ce_loss logits/labels size");
  }
  auto [w1, w2] = vis_weight_maps(labels1, labels2);
  ad::Tape tape;
  ad::Value l1 = tape.constant(logits1);
  ad::Value l2 = tape.constant(logits2);
  ad::Value v1 = ad::bce_logits_weighted_sum(ad::reshape(l1, {logits1.size()}),
                                             labels_tensor(labels1), std::move(w1));
  ad::Value v2 = ad::bce_logits_weighted_sum(ad::reshape(l2, {logits2.size()}),
                                             labels_tensor(labels2), std::move(w2));
  return tape.val(v1)[0] + tape.val(v2)[0];
}

LossBreakdown total_loss(const ForwardOutputs& outputs, const ScenePairSample& sample,
                         const MatchSet& matches, const LossConfig& cfg) {
  cfg.validate();
  ad::Tape tape;
  TapedViews v;
  v.pointmap1 = tape.constant(outputs.view1.pointmap);
  v.confidence1 = tape.constant(outputs.view1.confidence);
  v.descriptors1 = tape.constant(outputs.view1.descriptors);
  v.vis_logits1 = tape.constant(outputs.view1.vis_logits);
  v.pointmap2 = tape.constant(outputs.view2.pointmap);
  v.confidence2 = tape.constant(outputs.view2.confidence);
  v.descriptors2 = tape.constant(outputs.view2.descriptors);
  v.vis_logits2 = tape.constant(outputs.view2.vis_logits);
  TapedBreakdown b = build_total_loss(tape, v, sample, matches, cfg);
  return read_breakdown(tape, b);
}

LossBreakdown loss_backward(const ModelParams& params, const ScenePairSample& sample,
                            const MatchSet& matches, const LossConfig& cfg, GradientSet& grads) {
  cfg.validate();
  ad::Tape tape;
  TapedOutputs fwd = forward_taped(tape, params, sample.image1, sample.image2);
  TapedViews v{fwd.pointmap1, fwd.confidence1, fwd.descriptors1, fwd.vis_logits1,
               fwd.pointmap2, fwd.confidence2, fwd.descriptors2, fwd.vis_logits2};
  TapedBreakdown b = build_total_loss(tape, v, sample, matches, cfg);
  tape.backward(b.total);

  grads.clear();
  for (const auto& [name, tensor] : params.tensors) {
    const ad::Value node = fwd.param_nodes.at(name);
    if (tape.requires_grad(node) && tape.grad(node).size() == tensor.size()) {
      grads.emplace(name, tape.grad(node));
    } else {
      grads.emplace(name, Tensor(tensor.shape()));  // frozen: exactly zero
    }
  }
  return read_breakdown(tape, b);
}

LossBreakdown train_step(ModelParams& params, const std::vector<TrainExample>& batch,
                         AdamState& adam, const LossConfig& cfg, double lr, int workers) {
  if (batch.empty()) throw Error("train_step with an empty batch");
  const size_t n = batch.size();
  std::vector<GradientSet> grads(n);
  std::vector<LossBreakdown> breakdowns(n);

  const int n_workers = std::max(1, std::min<int>(workers, static_cast<int>(n)));
  if (n_workers == 1) {
    for (size_t i = 0; i < n; ++i) {
      breakdowns[i] = loss_backward(params, batch[i].sample, batch[i].matches, cfg, grads[i]);
    }
  } else {
    std::vector<std::future<void>> futures;
    futures.reserve(static_cast<size_t>(n_workers));
    for (int w = 0; w < n_workers; ++w) {
      futures.push_back(std::async(std::launch::async, [&, w]() {
        for (size_t i = static_cast<size_t>(w); i < n; i += static_cast<size_t>(n_workers)) {
          breakdowns[i] = loss_backward(params, batch[i].sample, batch[i].matches, cfg, grads[i]);
        }
      }));
    }
    for (auto& f : futures) f.get();
  }

  // Fixed-order reduction keeps the update identical for any worker count.
  LossBreakdown mean;
  const double inv = 1.0 / static_cast<double>(n);
  for (size_t i = 0; i < n; ++i) {
    mean.conf += breakdowns[i].conf * inv;
    mean.match_static += breakdowns[i].match_static * inv;
    mean.match_dynamic += breakdowns[i].match_dynamic * inv;
    mean.vis += breakdowns[i].vis * inv;
    mean.total += breakdowns[i].total * inv;
  }

  adam.step += 1;
  const double bc1 = 1.0 - std::pow(adam.beta1, static_cast<double>(adam.step));
  const double bc2 = 1.0 - std::pow(adam.beta2, static_cast<double>(adam.step));
  for (auto& [name, tensor] : params.tensors) {
    if (params.arch.frozen_encoder && ModelParams::is_encoder(name)) continue;
    auto mit = adam.m.find(name);
    if (mit == adam.m.end()) {
      mit = adam.m.emplace(name, Tensor(tensor.shape())).first;
      adam.v.emplace(name, Tensor(tensor.shape()));
    }
    Tensor& m = mit->second;
    Tensor& v = adam.v.at(name);
    std::vector<const Tensor*> slot_grads(n);
    for (size_t i = 0; i < n; ++i) slot_grads[i] = &grads[i].at(name);
    for (int64_t k = 0; k < tensor.size(); ++k) {
      double g = 0.0;
      for (size_t i = 0; i < n; ++i) g += (*slot_grads[i])[k];
      g *= inv;
      m[k] = adam.beta1 * m[k] + (1.0 - adam.beta1) * g;
      v[k] = adam.beta2 * v[k] + (1.0 - adam.beta2) * g * g;
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      tensor[k] -= lr * mhat / (std::sqrt(vhat) + adam.eps);
    }
  }
  return mean;
}

std::string to_log_line(const TrainLogRecord& rec) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "step=%lld total=%.9g conf=%.9g match_static=%.9g match_dynamic=%.9g "
                "vis=%.9g lr=%.9g r_actual=%.6g stride=%.6g",
                static_cast<long long>(rec.step), rec.loss.total, rec.loss.conf,
                rec.loss.match_static, rec.loss.match_dynamic, rec.loss.vis, rec.lr,
                rec.r_actual_mean, rec.stride_mean);
  return std::string(buf);
}

}  // namespace corrtrack
