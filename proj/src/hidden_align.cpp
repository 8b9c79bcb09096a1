#include "lmdiag/hidden_align.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lmdiag/stats.hpp"

namespace lmdiag::hidden_align {

namespace {

std::vector<double> mean_vector(const std::vector<std::vector<double>>& states,
                                const char* side) {
  if (states.empty())
    throw error(errc::invalid_spec, std::string("no ") + side + " states for direction");
  std::size_t dim = states.front().size();
  std::vector<double> m(dim, 0.0);
  for (const auto& v : states) {
    if (v.size() != dim)
      throw error(errc::invalid_spec, std::string(side) + " states differ in dimension");
    for (std::size_t i = 0; i < dim; ++i) m[i] += v[i];
  }
  for (double& x : m) x /= static_cast<double>(states.size());
  return m;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

RefusalDirection refusal_direction(const std::string& model_id, const std::string& layer_tag,
                                   const std::vector<std::vector<double>>& harmful_states,
                                   const std::vector<std::vector<double>>& benign_states) {
  auto mh = mean_vector(harmful_states, "harmful");
  auto mb = mean_vector(benign_states, "benign");
  if (mh.size() != mb.size())
    throw error(errc::invalid_spec, "harmful and benign states differ in dimension");
  RefusalDirection out;
  out.model_id = model_id;
  out.layer_tag = layer_tag;
  out.n_harmful = static_cast<int>(harmful_states.size());
  out.n_benign = static_cast<int>(benign_states.size());
  out.direction.resize(mh.size());
  double norm_sq = 0.0;
  for (std::size_t i = 0; i < mh.size(); ++i) {
    out.direction[i] = mh[i] - mb[i];
    norm_sq += out.direction[i] * out.direction[i];
  }
  double norm = std::sqrt(norm_sq);
  if (norm < 1e-12)
    throw error(errc::degenerate_direction, "harmful and benign means coincide");
  for (double& x : out.direction) x /= norm;
  return out;
}

std::vector<double> project(const std::vector<std::vector<double>>& states,
                            const RefusalDirection& dir) {
  std::vector<double> out;
  out.reserve(states.size());
  for (const auto& v : states) {
    if (v.size() != dir.direction.size())
      throw error(errc::invalid_spec, "state dimension does not match direction");
    double dot = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) dot += v[i] * dir.direction[i];
    out.push_back(dot);
  }
  return out;
}

AlignmentMetrics alignment_metrics(const std::vector<std::vector<double>>& s_trajs,
                                   const std::vector<std::vector<double>>& z_trajs,
                                   int early_window, int max_lag, bool per_record_variant) {
  if (s_trajs.size() != z_trajs.size() || s_trajs.empty())
    throw error(errc::invalid_spec, "need matching non-empty score and projection sets");
  for (std::size_t i = 0; i < s_trajs.size(); ++i)
    if (s_trajs[i].size() != z_trajs[i].size())
      throw error(errc::invalid_spec,
                  "record " + std::to_string(i) + ": score and projection lengths differ");
  if (early_window < 1 || max_lag < 0)
    throw error(errc::invalid_config, "early_window must be >= 1 and max_lag >= 0");

  AlignmentMetrics out;

  // Cross-record correlation at each of the first early_window steps.
  std::vector<double> rho_values;
  for (int t = 0; t < early_window; ++t) {
    std::vector<double> s_at, z_at;
    for (std::size_t i = 0; i < s_trajs.size(); ++i)
      if (static_cast<std::size_t>(t) < s_trajs[i].size()) {
        s_at.push_back(s_trajs[i][static_cast<std::size_t>(t)]);
        z_at.push_back(z_trajs[i][static_cast<std::size_t>(t)]);
      }
    auto rho = s_at.size() >= 2 ? stats::pearson(s_at, z_at) : std::nullopt;
    if (rho) {
      out.rho_by_step[t] = *rho;
      rho_values.push_back(*rho);
    } else {
      ++out.steps_skipped_zero_variance;
    }
  }
  if (!rho_values.empty()) {
    double abs_sum = 0.0, sum = 0.0;
    for (double r : rho_values) {
      abs_sum += std::abs(r);
      sum += r;
    }
    out.mean_abs_rho = abs_sum / static_cast<double>(rho_values.size());
    out.signed_mean_rho = sum / static_cast<double>(rho_values.size());
  }

  // Within-record correlation of (s[t+lag], z[t]), averaged across records.
  for (int lag = -max_lag; lag <= max_lag; ++lag) {
    std::vector<double> per_record;
    for (std::size_t i = 0; i < s_trajs.size(); ++i) {
      const auto& s = s_trajs[i];
      const auto& z = z_trajs[i];
      std::vector<double> xs, zs;
      for (std::size_t t = 0; t < z.size(); ++t) {
        long shifted = static_cast<long>(t) + lag;
        if (shifted < 0 || shifted >= static_cast<long>(s.size())) continue;
        xs.push_back(s[static_cast<std::size_t>(shifted)]);
        zs.push_back(z[t]);
      }
      if (auto rho = stats::pearson(xs, zs)) per_record.push_back(*rho);
    }
    if (!per_record.empty())
      out.lag_profile[lag] =
          std::accumulate(per_record.begin(), per_record.end(), 0.0) /
          static_cast<double>(per_record.size());
  }
  if (!out.lag_profile.empty()) {
    int best = 0;
    double best_abs = -1.0;
    bool have = false;
    for (const auto& [lag, rho] : out.lag_profile) {
      double a = std::abs(rho);
      // Strictly larger magnitude wins; at equal magnitude the smaller |lag|
      // (then the more negative lag) is kept.
      bool better = !have || a > best_abs ||
                    (a == best_abs && (std::abs(lag) < std::abs(best) ||
                                       (std::abs(lag) == std::abs(best) && lag < best)));
      if (better) {
        best = lag;
        best_abs = a;
        have = true;
      }
    }
    out.modal_lag = best;
  }

  // Median-centered sign concordance, counted against the expected negative
  // association; zero deviations on either side drop the pair.
  long agree = 0, considered = 0;
  for (std::size_t i = 0; i < s_trajs.size(); ++i) {
    if (s_trajs[i].empty()) continue;
    double med_s = median(s_trajs[i]);
    double med_z = median(z_trajs[i]);
    for (std::size_t t = 0; t < s_trajs[i].size(); ++t) {
      double ds = s_trajs[i][t] - med_s;
      double dz = z_trajs[i][t] - med_z;
      if (ds == 0.0 || dz == 0.0) continue;
      ++considered;
      if ((ds > 0) != (dz > 0)) ++agree;
    }
  }
  out.sign_agreement = considered ? static_cast<double>(agree) / considered : 0.0;

  if (per_record_variant) {
    std::vector<double> abs_rhos;
    for (std::size_t i = 0; i < s_trajs.size(); ++i)
      if (auto rho = stats::pearson(s_trajs[i], z_trajs[i])) abs_rhos.push_back(std::abs(*rho));
    if (!abs_rhos.empty())
      out.per_record_mean_abs_rho =
          std::accumulate(abs_rhos.begin(), abs_rhos.end(), 0.0) /
          static_cast<double>(abs_rhos.size());
  }
  return out;
}

}  // namespace lmdiag::hidden_align
