#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "corrtrack/rng.hpp"
#include "corrtrack/scene.hpp"

namespace corrtrack {

struct StrideSchedule {
  std::vector<int> strides;

  void validate() const;  // strictly increasing, all >= 1
  static StrideSchedule parse(const std::string& csv);
  std::string to_string() const;
};

struct MatchPositive {
  Eigen::Vector2d pixel_i;
  Eigen::Vector2d pixel_j;
  MatchKind kind = MatchKind::Static;
  int32_t surfel_id = -1;
};

// Positive pixel pairs labelled static/dynamic plus per-view padding
// negatives. The per-view candidate sets of the matching loss are the
// positives' pixels of that view united with its negatives.
struct MatchSet {
  std::vector<MatchPositive> positives;
  std::vector<Eigen::Vector2i> negatives_1;
  std::vector<Eigen::Vector2i> negatives_2;
  double r_actual = 0.0;  // |dynamic| / |positives|
  int budget = 0;

  int64_t num_dynamic() const;
  int64_t num_static() const { return static_cast<int64_t>(positives.size()) - num_dynamic(); }
};

// Draws (t1, t2 = t1 + s) where the stride s is chosen with probability
// proportional to its value among strides feasible for num_frames, and t1 is
// uniform over the valid starts. Throws NoFeasibleStride when every stride
// is >= num_frames.
std::pair<int, int> sample_pair_indices(int num_frames, const StrideSchedule& schedule, Rng& rng);

// Assembles a match set with a target dynamic ratio r and total candidate
// budget. Pool allocation: with ample pools take round-half-up(r * budget)
// dynamic positives and the rest static; when a pool runs short, take all of
// it and take just enough of the other pool that the achieved ratio does not
// overshoot r (ceil of the exact share), recording r_actual. The remaining
// budget is padded per view with negative pixels ("no cross-frame match"),
// sampled uniformly without replacement. Throws NoPositives when the pair
// shares no visible surfel.
MatchSet build_match_set(const ScenePairSample& pair, double r, int budget, Rng& rng);

}  // namespace corrtrack
