#include "lmdiag/temporal.hpp"

#include <algorithm>
#include <cmath>

namespace lmdiag::temporal {

namespace {

int sign3(double x) { return x > 0 ? 1 : (x < 0 ? -1 : 0); }

}  // namespace

TemporalSummary summarize(const signal::LmsTrajectory& traj, const std::vector<int>& windows) {
  if (traj.s.empty()) throw error(errc::invalid_config, "empty trajectory");
  TemporalSummary out;
  out.s0 = traj.s[0];
  int t_steps = traj.generation_steps();
  out.generation_steps = t_steps;
  if (t_steps == 0) return out;

  double sum = 0.0;
  double mn = traj.s[1], mx = traj.s[1];
  int positive = 0, flips = 0;
  for (int t = 1; t <= t_steps; ++t) {
    double v = traj.s[static_cast<std::size_t>(t)];
    sum += v;
    mn = std::min(mn, v);
    mx = std::max(mx, v);
    if (v > 0) ++positive;
    if (t >= 2 && sign3(v) != sign3(traj.s[static_cast<std::size_t>(t - 1)])) ++flips;
  }
  double mean = sum / t_steps;
  out.s_bar = mean;
  double sq = 0.0;
  for (int t = 1; t <= t_steps; ++t) {
    double d = traj.s[static_cast<std::size_t>(t)] - mean;
    sq += d * d;
  }
  out.s_std = std::sqrt(sq / t_steps);
  out.s_min = mn;
  out.s_max = mx;
  out.s_range = mx - mn;
  out.positive_step_rate = static_cast<double>(positive) / t_steps;
  out.sign_flips = flips;
  out.sign_reversal = out.s0 > 0 && mean < 0;

  for (int w : windows) {
    if (w < 1) throw error(errc::invalid_config, "prefix window must be >= 1");
    int upto = std::min(w, t_steps);
    double acc = 0.0;
    for (int t = 1; t <= upto; ++t) acc += traj.s[static_cast<std::size_t>(t)];
    out.prefix_means[w] = acc / upto;
  }
  return out;
}

CrossingResult first_crossing(const signal::LmsTrajectory& traj, int n_confirm, int horizon) {
  if (n_confirm < 1) throw error(errc::invalid_config, "n_confirm must be >= 1");
  if (horizon < 1) throw error(errc::invalid_config, "horizon must be >= 1");
  CrossingResult out;
  out.n_confirm = n_confirm;
  out.horizon = horizon;
  out.generation_steps = traj.generation_steps();
  int hi = std::min(out.generation_steps, horizon);
  for (int t = 1; t + n_confirm - 1 <= hi; ++t) {
    bool run = true;
    for (int j = 0; j < n_confirm; ++j)
      if (!(traj.s[static_cast<std::size_t>(t + j)] < 0)) {
        run = false;
        break;
      }
    if (run) {
      out.t_cross = t;
      out.censored = false;
      return out;
    }
  }
  return out;
}

std::vector<double> crossing_rank_scores(const std::vector<CrossingResult>& results) {
  std::vector<double> out;
  out.reserve(results.size());
  if (results.empty()) return out;
  int horizon = results.front().horizon;
  for (const auto& r : results) {
    if (r.horizon != horizon)
      throw error(errc::mixed_horizon, "crossing results computed under different horizons");
    out.push_back(r.censored ? static_cast<double>(horizon + 1)
                             : static_cast<double>(*r.t_cross));
  }
  return out;
}

const char* feature_set_name(FeatureSet s) {
  switch (s) {
    case FeatureSet::f5: return "f5";
    case FeatureSet::f9: return "f9";
    case FeatureSet::f13: return "f13";
  }
  return "?";
}

FeatureVector features(const TemporalSummary& summary, const CrossingResult& crossing,
                       FeatureSet set) {
  if (summary.generation_steps == 0)
    throw error(errc::undefined_feature, "no generation steps; features are undefined");
  FeatureVector out;
  out.set = set;
  auto push = [&](const char* name, double v) {
    out.names.push_back(name);
    out.values.push_back(v);
  };
  auto prefix = [&](int w) {
    auto it = summary.prefix_means.find(w);
    if (it == summary.prefix_means.end())
      throw error(errc::undefined_feature,
                  "prefix window " + std::to_string(w) + " missing from summary");
    return it->second;
  };
  push("s0", summary.s0);
  push("s_bar", *summary.s_bar);
  push("s_bar_1_1", prefix(1));
  push("s_bar_1_3", prefix(3));
  push("s_bar_1_5", prefix(5));
  if (set == FeatureSet::f5) return out;
  push("s_min", *summary.s_min);
  push("s_max", *summary.s_max);
  push("s_std", *summary.s_std);
  push("s_range", *summary.s_range);
  if (set == FeatureSet::f9) return out;
  push("positive_step_rate", *summary.positive_step_rate);
  // Censored crossings sit just past the horizon so they rank after every
  // observed crossing; the fractional form saturates at 1.
  push("t_cross", crossing.censored ? static_cast<double>(crossing.horizon + 1)
                                    : static_cast<double>(*crossing.t_cross));
  push("t_cross_frac", crossing.censored
                           ? 1.0
                           : static_cast<double>(*crossing.t_cross) / summary.generation_steps);
  push("sign_flips", static_cast<double>(*summary.sign_flips));
  return out;
}

}  // namespace lmdiag::temporal
