#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "corrtrack/geometry.hpp"
#include "corrtrack/model.hpp"
#include "corrtrack/sampler.hpp"
#include "corrtrack/scene.hpp"

namespace corrtrack {

struct LossConfig {
  double alpha = 0.075;       // static matching weight
  double beta = 0.075;        // dynamic matching weight
  double gamma = 1.0;         // visibility weight
  double tau = 10.0;          // matching temperature (multiplies the cosine)
  double conf_alpha = 0.2;    // log-confidence penalty inside the conf loss
  double eps_dynamic = kDefaultDynamicEps;
  // Weight each positive pair by min(C1[i], C2[j]) normalized by the mean
  // weight of its match set.
  bool conf_weighted_match = true;

  void validate() const;
};

struct LossBreakdown {
  double conf = 0.0;
  double match_static = 0.0;
  double match_dynamic = 0.0;
  double vis = 0.0;
  double total = 0.0;
};

// Unweighted per-pixel regression error: || pred[p]/z - gt[p]/zhat || with
// z, zhat the mean point norms over each bundle's valid set.
double regr_loss(const PointMapBundle& pred, const PointMapBundle& gt, int x, int y);

// Confidence-weighted regression, summed (unnormalized) over both views'
// pixels that are valid in both the prediction and the ground truth:
// sum C * l_regr - conf_alpha * log C.
double conf_loss(const PointMapBundle& pred1, const PointMapBundle& gt1,
                 const PointMapBundle& pred2, const PointMapBundle& gt2, double conf_alpha);

// Symmetric infoNCE over the match set's positives of one kind, with
// candidate sets = that kind's positive pixels plus the per-view negatives.
// Similarity is exp(tau * D1[i].D2[j]); descriptor lookups at fractional
// pixels are bilinear and re-normalized. Throws EmptyMatchSet when the
// filtered positives are empty.
double infonce_match(const Tensor& descriptors1, const Tensor& descriptors2,
                     const MatchSet& matches, MatchKind kind, double tau);

// Class-balanced binary cross-entropy over both views' labelled pixels
// (labels: -1 unlabelled, 0 occluded in the other view, 1 visible). Classes
// are weighted total/(2*count), normalized by the labelled count; when only
// one class is present this degenerates to the plain mean. Throws
// EmptyLabels when nothing is labelled.
double vis_ce_loss(const Tensor& logits1, const Tensor& logits2,
                   const std::vector<int8_t>& labels1, const std::vector<int8_t>& labels2);

// Full objective: conf + alpha * static + beta * dynamic + gamma * vis.
// A kind with no positives contributes zero rather than raising, so r = 0
// and r = 1 training configurations run with the default weights.
LossBreakdown total_loss(const ForwardOutputs& outputs, const ScenePairSample& sample,
                         const MatchSet& matches, const LossConfig& cfg);

using GradientSet = std::map<std::string, Tensor>;

// Reverse-mode gradient of total_loss for every parameter tensor. Frozen
// encoder tensors receive exactly-zero gradients.
LossBreakdown loss_backward(const ModelParams& params, const ScenePairSample& sample,
                            const MatchSet& matches, const LossConfig& cfg, GradientSet& grads);

struct TrainExample {
  ScenePairSample sample;
  MatchSet matches;
  int stride = 0;
};

struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int64_t step = 0;
  std::map<std::string, Tensor> m, v;
};

// One optimizer step: gradients averaged over the batch (batch members are
// evaluated in parallel but reduced in slot order, so the result does not
// depend on the worker count). Returns the batch-mean loss breakdown.
LossBreakdown train_step(ModelParams& params, const std::vector<TrainExample>& batch,
                         AdamState& adam, const LossConfig& cfg, double lr, int workers = 1);

struct TrainLogRecord {
  int64_t step = 0;
  LossBreakdown loss;
  double lr = 0.0;
  double r_actual_mean = 0.0;
  double stride_mean = 0.0;
};

// One structured-text record per step, e.g.
// "step=3 total=1.25 conf=0.5 match_static=... lr=5e-05 r_actual=0.95 stride=30".
std::string to_log_line(const TrainLogRecord& rec);

}  // namespace corrtrack
