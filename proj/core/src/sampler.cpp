#include "corrtrack/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "corrtrack/errors.hpp"

namespace corrtrack {

void StrideSchedule::validate() const {
  if (strides.empty()) throw Error("stride schedule is empty");
  int prev = 0;
  for (int s : strides) {
    if (s < 1) throw Error("strides must be >= 1");
    if (s <= prev) throw Error("strides must be strictly increasing");
    prev = s;
  }
}

StrideSchedule StrideSchedule::parse(const std::string& csv) {
  StrideSchedule out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    out.strides.push_back(std::stoi(tok));
  }
  out.validate();
  return out;
}

std::string StrideSchedule::to_string() const {
  std::string s;
  for (size_t i = 0; i < strides.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(strides[i]);
  }
  return s;
}

int64_t MatchSet::num_dynamic() const {
  int64_t n = 0;
  for (const auto& p : positives) n += p.kind == MatchKind::Dynamic ? 1 : 0;
  return n;
}

std::pair<int, int> sample_pair_indices(int num_frames, const StrideSchedule& schedule, Rng& rng) {
  schedule.validate();
  double total = 0.0;
  for (int s : schedule.strides) {
    if (s <= num_frames - 1) total += static_cast<double>(s);
  }
  if (total <= 0.0) throw NoFeasibleStride("no stride fits the video length");
  // Stride drawn with probability proportional to its value among feasible
  // strides; renormalization happens implicitly by only accumulating those.
  double u = rng.uniform() * total;
  int stride = 0;
  for (int s : schedule.strides) {
    if (s > num_frames - 1) continue;
    stride = s;
    u -= static_cast<double>(s);
    if (u < 0.0) break;
  }
  const int t1 = static_cast<int>(rng.index(static_cast<uint64_t>(num_frames - stride)));
  return {t1, t1 + stride};
}

namespace {

int64_t round_half_up(double x) { return static_cast<int64_t>(std::floor(x + 0.5)); }

}  // namespace

MatchSet build_match_set(const ScenePairSample& pair, double r, int budget, Rng& rng) {
  if (r < 0.0 || r > 1.0) throw Error("dynamic ratio r must be in [0, 1]");
  if (budget < 1) throw Error("match budget must be >= 1");
  if (pair.correspondences.empty()) {
    throw NoPositives("frame pair shares no visible surfel");
  }

  std::vector<size_t> dyn_pool, stat_pool;
  for (size_t i = 0; i < pair.correspondences.size(); ++i) {
    (pair.correspondences[i].kind == MatchKind::Dynamic ? dyn_pool : stat_pool).push_back(i);
  }
  const int64_t D = static_cast<int64_t>(dyn_pool.size());
  const int64_t S = static_cast<int64_t>(stat_pool.size());
  const int64_t B = budget;

  const int64_t want_dyn = std::clamp<int64_t>(round_half_up(r * static_cast<double>(B)), 0, B);
  const int64_t want_stat = B - want_dyn;
  int64_t n_dyn = 0, n_stat = 0;
  if (want_dyn <= D && want_stat <= S) {
    n_dyn = want_dyn;
    n_stat = want_stat;
  } else if (want_dyn > D) {
    // Dynamic pool short: take it all, then just enough static that the
    // achieved ratio does not overshoot r. With no dynamic at all every
    // allocation has ratio 0, so positives are maximized instead.
    n_dyn = D;
    int64_t by_ratio;
    if (D == 0) {
      by_ratio = B;
    } else {
      const int64_t min_total = static_cast<int64_t>(std::ceil(static_cast<double>(D) / r - 1e-12));
      by_ratio = std::max<int64_t>(min_total - D, 0);
    }
    n_stat = std::min({S, B - n_dyn, by_ratio});
  } else {
    // Static pool short: take it all, then as many dynamic as possible while
    // keeping the achieved ratio at or below r. With no static the ratio is
    // 1 for any choice, so positives are maximized instead.
    n_stat = S;
    int64_t by_ratio;
    if (S == 0) {
      by_ratio = B;
    } else {
      by_ratio = static_cast<int64_t>(std::floor(static_cast<double>(S) * r / (1.0 - r) + 1e-12));
    }
    n_dyn = std::min({D, B - n_stat, by_ratio});
  }

  MatchSet out;
  out.budget = budget;
  const std::vector<uint64_t> dsel = sample_without_replacement(
      static_cast<uint64_t>(D), static_cast<uint64_t>(n_dyn), rng);
  const std::vector<uint64_t> ssel = sample_without_replacement(
      static_cast<uint64_t>(S), static_cast<uint64_t>(n_stat), rng);
  out.positives.reserve(static_cast<size_t>(n_dyn + n_stat));
  for (uint64_t i : dsel) {
    const Correspondence& c = pair.correspondences[dyn_pool[static_cast<size_t>(i)]];
    out.positives.push_back({c.pixel_i, c.pixel_j, MatchKind::Dynamic, c.surfel_id});
  }
  for (uint64_t i : ssel) {
    const Correspondence& c = pair.correspondences[stat_pool[static_cast<size_t>(i)]];
    out.positives.push_back({c.pixel_i, c.pixel_j, MatchKind::Static, c.surfel_id});
  }
  const int64_t n_pos = n_dyn + n_stat;
  out.r_actual = n_pos > 0 ? static_cast<double>(n_dyn) / static_cast<double>(n_pos) : 0.0;

  // Negatives per view: pixels with no cross-frame match. Labelled-invisible
  // pixels first, empty pixels as fallback when the pool runs short.
  const int64_t n_neg = B - n_pos;
  auto draw_negatives = [&](const std::vector<int8_t>& cross_visible, int width) {
    std::vector<int64_t> pool;
    for (size_t pi = 0; pi < cross_visible.size(); ++pi) {
      if (cross_visible[pi] == 0) pool.push_back(static_cast<int64_t>(pi));
    }
    if (static_cast<int64_t>(pool.size()) < n_neg) {
      for (size_t pi = 0; pi < cross_visible.size(); ++pi) {
        if (cross_visible[pi] < 0) pool.push_back(static_cast<int64_t>(pi));
      }
    }
    const int64_t take = std::min<int64_t>(n_neg, static_cast<int64_t>(pool.size()));
    const std::vector<uint64_t> sel = sample_without_replacement(
        static_cast<uint64_t>(pool.size()), static_cast<uint64_t>(take), rng);
    std::vector<Eigen::Vector2i> negs;
    negs.reserve(static_cast<size_t>(take));
    for (uint64_t i : sel) {
      const int64_t pi = pool[static_cast<size_t>(i)];
      negs.emplace_back(static_cast<int>(pi % width), static_cast<int>(pi / width));
    }
    return negs;
  };
  out.negatives_1 = draw_negatives(pair.cross_visible1, pair.width);
  out.negatives_2 = draw_negatives(pair.cross_visible2, pair.width);
  return out;
}

}  // namespace corrtrack
