#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lmdiag/signal.hpp"

namespace lmdiag::temporal {

// Scalar shape descriptors of one score trajectory. Generation-time fields
// aggregate steps 1..T only; the pre-generation score s0 is kept apart so
// the two can serve as separate axes downstream. Generation-time fields are
// undefined when T = 0.
//
// s_std uses the population (divide by T) normalization.

struct TemporalSummary {
  double s0 = 0.0;
  int generation_steps = 0;  // T
  std::optional<double> s_bar;
  std::map<int, double> prefix_means;  // window w -> mean of s[1..min(w,T)]
  std::optional<double> s_min, s_max, s_std, s_range;
  std::optional<double> positive_step_rate;
  std::optional<int> sign_flips;        // three-valued sign changes across 2..T
  std::optional<bool> sign_reversal;    // s0 > 0 and s_bar < 0
};

TemporalSummary summarize(const signal::LmsTrajectory& traj, const std::vector<int>& windows);

struct CrossingResult {
  std::optional<int> t_cross;  // first t >= 1 opening n_confirm consecutive negatives
  bool censored = true;
  int n_confirm = 1;
  int horizon = 0;
  int generation_steps = 0;
};

// Searches t in 1..min(T, horizon); a qualifying t needs s[t..t+n_confirm-1]
// all negative with the whole run inside the search range. No qualifying run
// leaves the result right-censored.
CrossingResult first_crossing(const signal::LmsTrajectory& traj, int n_confirm, int horizon);

// Scores usable for rank statistics over possibly-censored crossing times:
// non-censored results keep t_cross, censored ones share horizon + 1, which
// exceeds every in-horizon crossing. Throws MixedHorizon unless all results
// share one horizon.
std::vector<double> crossing_rank_scores(const std::vector<CrossingResult>& results);

enum class FeatureSet { f5, f9, f13 };

const char* feature_set_name(FeatureSet s);

struct FeatureVector {
  FeatureSet set = FeatureSet::f5;
  std::vector<std::string> names;
  std::vector<double> values;
};

// Flattens a summary (plus the crossing, for f13) into a fixed-order feature
// vector: f5 covers s0, s_bar and the 1/3/5-step prefix means; f9 adds the
// order statistics; f13 adds positive-step rate, crossing time (censored ->
// horizon + 1), its fraction of T (censored -> 1), and sign flips. Throws
// UndefinedFeature when T = 0.
FeatureVector features(const TemporalSummary& summary, const CrossingResult& crossing,
                       FeatureSet set);

}  // namespace lmdiag::temporal
