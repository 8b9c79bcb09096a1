#include "lmdiag/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "lmdiag/rng.hpp"

namespace lmdiag::stats {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

// C(n, k), capped: anything above `cap` comes back as cap + 1.
long comb_capped(std::size_t n, std::size_t k, long cap) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  __uint128_t c = 1;
  for (std::size_t i = 1; i <= k; ++i) {
    c = c * (n - k + i) / i;  // exact at every step
    if (c > static_cast<__uint128_t>(cap)) return cap + 1;
  }
  return static_cast<long>(c);
}

// Midranks (1-based, ties averaged) of v.
std::vector<double> midranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    double mid = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t t = i; t <= j; ++t) rank[order[t]] = mid;
    i = j + 1;
  }
  return rank;
}

// Linear interpolation between order statistics of sorted data.
double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return kNaN;
  double h = q * (static_cast<double>(sorted.size()) - 1.0);
  auto lo = static_cast<std::size_t>(std::floor(h));
  auto hi = std::min(lo + 1, sorted.size() - 1);
  double frac = h - std::floor(h);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

double mean(const std::vector<double>& v) {
  if (v.empty()) throw error(errc::invalid_config, "mean of empty vector");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_variance(const std::vector<double>& v) {
  if (v.size() < 2) throw error(errc::invalid_config, "sample variance needs n >= 2");
  double m = mean(v);
  double sq = 0.0;
  for (double x : v) sq += (x - m) * (x - m);
  return sq / (static_cast<double>(v.size()) - 1.0);
}

double population_std(const std::vector<double>& v) {
  if (v.empty()) throw error(errc::invalid_config, "std of empty vector");
  double m = mean(v);
  double sq = 0.0;
  for (double x : v) sq += (x - m) * (x - m);
  return std::sqrt(sq / static_cast<double>(v.size()));
}

std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw error(errc::invalid_config, "pearson inputs differ in length");
  if (x.size() < 2) return std::nullopt;
  double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

double fisher_z_mean(const std::vector<double>& rhos) {
  if (rhos.empty()) throw error(errc::invalid_config, "fisher_z_mean of empty vector");
  double sum = 0.0;
  for (double r : rhos) {
    if (r < -1.0 || r > 1.0)
      throw error(errc::invalid_config, "correlation outside [-1, 1]");
    double clamped = std::clamp(r, -1.0 + 1e-15, 1.0 - 1e-15);
    sum += std::atanh(clamped);
  }
  return std::tanh(sum / static_cast<double>(rhos.size()));
}

EffectStats effect_stats(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty() || b.empty()) throw error(errc::invalid_config, "effect_stats needs both groups");
  auto na = static_cast<double>(a.size());
  auto nb = static_cast<double>(b.size());
  if (na + nb < 3) throw error(errc::zero_variance, "pooled variance needs n_a + n_b >= 3");
  EffectStats out;
  out.mean_a = mean(a);
  out.mean_b = mean(b);
  double ssa = 0.0, ssb = 0.0;
  for (double x : a) ssa += (x - out.mean_a) * (x - out.mean_a);
  for (double x : b) ssb += (x - out.mean_b) * (x - out.mean_b);
  double pooled = std::sqrt((ssa + ssb) / (na + nb - 2.0));
  if (pooled == 0.0) throw error(errc::zero_variance, "pooled standard deviation is zero");
  out.cohens_d = (out.mean_a - out.mean_b) / pooled;
  return out;
}

double roc_auc(const std::vector<double>& scores, const std::vector<bool>& positive,
               Orientation orientation) {
  if (scores.size() != positive.size())
    throw error(errc::invalid_config, "scores and labels differ in length");
  std::size_t n_pos = 0;
  for (bool p : positive) n_pos += p;
  std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw error(errc::degenerate_labels, "AUC needs both classes present");
  std::vector<double> s = scores;
  if (orientation == Orientation::lower_is_positive)
    for (double& v : s) v = -v;
  std::vector<double> rank = midranks(s);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (positive[i]) rank_sum += rank[i];
  double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  double u = rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * nn);
}

IntervalEstimate stratified_bootstrap(
    const std::vector<std::size_t>& stratum_sizes,
    const std::function<double(const std::vector<std::vector<std::size_t>>&)>& statistic,
    const StatsConfig& cfg) {
  if (cfg.b_resamples < 1) throw error(errc::invalid_config, "b_resamples must be >= 1");
  if (cfg.ci_level <= 0.0 || cfg.ci_level >= 1.0)
    throw error(errc::invalid_config, "ci_level must be inside (0, 1)");
  for (std::size_t i = 0; i < stratum_sizes.size(); ++i)
    if (stratum_sizes[i] == 0)
      throw error(errc::empty_stratum, "stratum " + std::to_string(i) + " is empty");

  std::vector<std::vector<std::size_t>> identity(stratum_sizes.size());
  for (std::size_t i = 0; i < stratum_sizes.size(); ++i) {
    identity[i].resize(stratum_sizes[i]);
    std::iota(identity[i].begin(), identity[i].end(), 0);
  }

  IntervalEstimate out;
  out.point = statistic(identity);
  out.level = cfg.ci_level;
  out.b_resamples = cfg.b_resamples;

  std::vector<double> stat(static_cast<std::size_t>(cfg.b_resamples));
  std::vector<std::vector<std::size_t>> draw(stratum_sizes.size());
  for (std::size_t i = 0; i < stratum_sizes.size(); ++i) draw[i].resize(stratum_sizes[i]);
  for (int b = 0; b < cfg.b_resamples; ++b) {
    auto rs = rng::stream::substream(cfg.seed, static_cast<std::uint64_t>(b));
    for (std::size_t i = 0; i < stratum_sizes.size(); ++i)
      for (std::size_t j = 0; j < stratum_sizes[i]; ++j)
        draw[i][j] = static_cast<std::size_t>(rs.bounded(stratum_sizes[i]));
    stat[static_cast<std::size_t>(b)] = statistic(draw);
  }
  stat.erase(std::remove_if(stat.begin(), stat.end(), [](double v) { return std::isnan(v); }),
             stat.end());
  out.b_resamples = static_cast<int>(stat.size());
  std::sort(stat.begin(), stat.end());
  double tail = (1.0 - cfg.ci_level) / 2.0;
  out.lo = quantile_sorted(stat, tail);
  out.hi = quantile_sorted(stat, 1.0 - tail);
  return out;
}

IntervalEstimate roc_auc_ci(const std::vector<double>& scores, const std::vector<bool>& positive,
                            Orientation orientation, const StatsConfig& cfg) {
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < scores.size(); ++i)
    (positive[i] ? pos : neg).push_back(
        orientation == Orientation::lower_is_positive ? -scores[i] : scores[i]);
  if (pos.empty() || neg.empty())
    throw error(errc::degenerate_labels, "AUC needs both classes present");
  auto stat = [&](const std::vector<std::vector<std::size_t>>& idx) {
    std::vector<double> s;
    std::vector<bool> lab;
    s.reserve(idx[0].size() + idx[1].size());
    for (std::size_t i : idx[0]) {
      s.push_back(pos[i]);
      lab.push_back(true);
    }
    for (std::size_t i : idx[1]) {
      s.push_back(neg[i]);
      lab.push_back(false);
    }
    return roc_auc(s, lab, Orientation::higher_is_positive);
  };
  return stratified_bootstrap({pos.size(), neg.size()}, stat, cfg);
}

BhResult bh_fdr(const std::vector<double>& p_values, double q) {
  BhResult out;
  auto m = p_values.size();
  out.adjusted.resize(m);
  out.significant.assign(m, false);
  if (m == 0) return out;
  for (double p : p_values)
    if (!(p >= 0.0 && p <= 1.0))
      throw error(errc::invalid_config, "p-values must lie in [0, 1]");

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (p_values[a] != p_values[b]) return p_values[a] < p_values[b];
    return a < b;
  });
  double running = 1.0;
  for (std::size_t i = m; i-- > 0;) {
    double scaled =
        p_values[order[i]] * static_cast<double>(m) / static_cast<double>(i + 1);
    running = std::min(running, scaled);
    out.adjusted[order[i]] = running;
  }
  for (std::size_t i = 0; i < m; ++i) out.significant[i] = out.adjusted[i] <= q;
  return out;
}

PermutationResult permutation_test(
    const std::vector<bool>& observed_labels,
    const std::function<double(const std::vector<bool>&)>& statistic,
    const StatsConfig& cfg) {
  if (cfg.b_resamples < 1) throw error(errc::invalid_config, "b_resamples must be >= 1");
  std::size_t n = observed_labels.size();
  std::size_t k = 0;
  for (bool b : observed_labels) k += b;
  if (k == 0 || k == n)
    throw error(errc::degenerate_labels, "permutation test needs both label classes");

  PermutationResult out;
  out.observed = statistic(observed_labels);

  long c = comb_capped(n, k, cfg.b_resamples);
  if (c <= cfg.b_resamples) {
    // Enumerate every labeling once; the observed one contributes its own
    // >= hit, and the +1 in the denominator keeps p in (0, 1).
    long hits = 0;
    std::vector<std::size_t> idx(k);
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<bool> labels(n);
    while (true) {
      std::fill(labels.begin(), labels.end(), false);
      for (std::size_t i : idx) labels[i] = true;
      if (statistic(labels) >= out.observed) ++hits;
      // next k-combination of {0..n-1}
      std::size_t i = k;
      while (i-- > 0) {
        if (idx[i] != i + n - k) {
          ++idx[i];
          for (std::size_t j = i + 1; j < k; ++j) idx[j] = idx[j - 1] + 1;
          break;
        }
        if (i == 0) goto done;
      }
    }
  done:
    out.p_value = static_cast<double>(hits) / static_cast<double>(c + 1);
    out.n_permutations_used = c;
    out.exhaustive = true;
    return out;
  }

  long hits = 0;
  std::vector<bool> labels(n);
  for (int b = 0; b < cfg.b_resamples; ++b) {
    auto rs = rng::stream::substream(cfg.seed, static_cast<std::uint64_t>(b));
    auto chosen = rs.sample_without_replacement(n, k);
    std::fill(labels.begin(), labels.end(), false);
    for (std::size_t i : chosen) labels[i] = true;
    if (statistic(labels) >= out.observed) ++hits;
  }
  out.p_value = (1.0 + static_cast<double>(hits)) / (1.0 + static_cast<double>(cfg.b_resamples));
  out.n_permutations_used = cfg.b_resamples;
  out.exhaustive = false;
  return out;
}

PermutationResult permutation_displacement_test(const calibration::ConditionSample& cond,
                                                calibration::AnchorMode mode,
                                                const StatsConfig& cfg,
                                                const calibration::ModelPool* pool) {
  calibration::ConditionSample scratch = cond;
  auto radius = [&scratch, mode, pool](const std::vector<bool>& labels) {
    scratch.success = labels;
    try {
      auto anchors = calibration::compute_anchors(scratch, mode, pool);
      return calibration::rp_coordinate(scratch, anchors).r;
    } catch (const error&) {
      return kNaN;  // undefined displacement never beats the observed one
    }
  };
  return permutation_test(cond.success, radius, cfg);
}

double icc1(const std::vector<std::vector<double>>& matrix) {
  std::size_t n = matrix.size();
  if (n < 2) throw error(errc::degenerate_matrix, "ICC needs at least two groups");
  std::size_t k = matrix.front().size();
  if (k < 2) throw error(errc::degenerate_matrix, "ICC needs at least two repeats");
  for (const auto& row : matrix)
    if (row.size() != k)
      throw error(errc::degenerate_matrix, "ICC needs a complete matrix");

  double grand = 0.0;
  for (const auto& row : matrix)
    for (double v : row) grand += v;
  grand /= static_cast<double>(n * k);

  double ss_between = 0.0, ss_within = 0.0;
  for (const auto& row : matrix) {
    double rm = std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(k);
    ss_between += (rm - grand) * (rm - grand);
    for (double v : row) ss_within += (v - rm) * (v - rm);
  }
  double ms_between = static_cast<double>(k) * ss_between / (static_cast<double>(n) - 1.0);
  double ms_within = ss_within / (static_cast<double>(n) * (static_cast<double>(k) - 1.0));
  double denom = ms_between + (static_cast<double>(k) - 1.0) * ms_within;
  if (denom == 0.0) throw error(errc::zero_variance, "ICC undefined on constant data");
  return (ms_between - ms_within) / denom;
}

double cohens_kappa(const std::vector<int>& rater_a, const std::vector<int>& rater_b) {
  if (rater_a.size() != rater_b.size() || rater_a.empty())
    throw error(errc::invalid_config, "kappa needs two equal-length non-empty label lists");
  auto n = static_cast<double>(rater_a.size());
  std::map<int, double> ca, cb;
  double agree = 0.0;
  for (std::size_t i = 0; i < rater_a.size(); ++i) {
    ca[rater_a[i]] += 1.0;
    cb[rater_b[i]] += 1.0;
    if (rater_a[i] == rater_b[i]) agree += 1.0;
  }
  double p_o = agree / n;
  double p_e = 0.0;
  for (const auto& [cat, cnt] : ca) {
    auto it = cb.find(cat);
    if (it != cb.end()) p_e += (cnt / n) * (it->second / n);
  }
  if (p_e == 1.0) {
    if (p_o == 1.0) return 1.0;  // both raters constant and identical
    throw error(errc::zero_variance, "kappa undefined: expected agreement is 1");
  }
  return (p_o - p_e) / (1.0 - p_e);
}

LogRegFit logreg_fit(const std::vector<std::vector<double>>& x, const std::vector<bool>& y,
                     const LogRegConfig& cfg) {
  std::size_t n = x.size();
  if (n == 0 || n != y.size())
    throw error(errc::invalid_config, "logreg needs matching non-empty x and y");
  std::size_t d = x.front().size();
  for (const auto& row : x)
    if (row.size() != d) throw error(errc::invalid_config, "ragged feature matrix");

  LogRegFit fit;
  fit.weights.assign(d, 0.0);
  fit.intercept = 0.0;

  auto objective = [&](const std::vector<double>& w, double b) {
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double z = b;
      for (std::size_t j = 0; j < d; ++j) z += w[j] * x[i][j];
      // log(1 + exp(-margin)) with the stable branch
      double margin = y[i] ? z : -z;
      loss += margin > 0 ? std::log1p(std::exp(-margin)) : -margin + std::log1p(std::exp(margin));
    }
    double reg = 0.0;
    for (double wj : w) reg += wj * wj;
    return (loss + 0.5 * cfg.l2 * reg) / static_cast<double>(n);
  };

  std::vector<double> grad(d + 1);
  std::vector<std::vector<double>> hess(d + 1, std::vector<double>(d + 1));
  std::vector<double> p(n);

  for (int iter = 0; iter < cfg.max_iter; ++iter) {
    fit.loss_history.push_back(objective(fit.weights, fit.intercept));

    std::fill(grad.begin(), grad.end(), 0.0);
    for (auto& row : hess) std::fill(row.begin(), row.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double z = fit.intercept;
      for (std::size_t j = 0; j < d; ++j) z += fit.weights[j] * x[i][j];
      p[i] = sigmoid(z);
      double resid = p[i] - (y[i] ? 1.0 : 0.0);
      double wgt = std::max(p[i] * (1.0 - p[i]), 1e-10);
      for (std::size_t j = 0; j < d; ++j) grad[j] += resid * x[i][j];
      grad[d] += resid;
      for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t l = j; l < d; ++l) hess[j][l] += wgt * x[i][j] * x[i][l];
        hess[j][d] += wgt * x[i][j];
      }
      hess[d][d] += wgt;
    }
    for (std::size_t j = 0; j < d; ++j) {
      grad[j] += cfg.l2 * fit.weights[j];
      hess[j][j] += cfg.l2 + 1e-10;
    }
    hess[d][d] += 1e-10;
    for (std::size_t j = 0; j <= d; ++j)
      for (std::size_t l = 0; l < j; ++l) hess[j][l] = hess[l][j];

    double gmax = 0.0;
    for (double g : grad) gmax = std::max(gmax, std::abs(g) / static_cast<double>(n));
    if (gmax <= cfg.tol) {
      fit.converged = true;
      break;
    }

    // Solve hess * step = grad by Gaussian elimination with partial pivoting.
    std::vector<std::vector<double>> a = hess;
    std::vector<double> rhs = grad;
    std::size_t dim = d + 1;
    for (std::size_t col = 0; col < dim; ++col) {
      std::size_t piv = col;
      for (std::size_t r = col + 1; r < dim; ++r)
        if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
      std::swap(a[col], a[piv]);
      std::swap(rhs[col], rhs[piv]);
      double diag = a[col][col];
      if (diag == 0.0) diag = 1e-12;
      for (std::size_t r = col + 1; r < dim; ++r) {
        double f = a[r][col] / diag;
        if (f == 0.0) continue;
        for (std::size_t cc = col; cc < dim; ++cc) a[r][cc] -= f * a[col][cc];
        rhs[r] -= f * rhs[col];
      }
    }
    std::vector<double> step(dim);
    for (std::size_t r = dim; r-- > 0;) {
      double acc = rhs[r];
      for (std::size_t cc = r + 1; cc < dim; ++cc) acc -= a[r][cc] * step[cc];
      double diag = a[r][r];
      if (diag == 0.0) diag = 1e-12;
      step[r] = acc / diag;
    }

    // Backtracking keeps the objective non-increasing even when the Newton
    // step overshoots (separable data, vanishing curvature).
    double base = fit.loss_history.back();
    double scale = 1.0;
    std::vector<double> w_try(d);
    double b_try = 0.0;
    bool accepted = false;
    for (int half = 0; half < 40; ++half) {
      for (std::size_t j = 0; j < d; ++j) w_try[j] = fit.weights[j] - scale * step[j];
      b_try = fit.intercept - scale * step[d];
      if (objective(w_try, b_try) <= base) {
        accepted = true;
        break;
      }
      scale *= 0.5;
    }
    if (!accepted) {
      fit.converged = true;  // no descent direction left at double precision
      break;
    }
    fit.weights = w_try;
    fit.intercept = b_try;
  }
  return fit;
}

std::vector<double> logreg_predict(const LogRegFit& fit, const std::vector<double>& feature_means,
                                   const std::vector<double>& feature_sds,
                                   const std::vector<std::vector<double>>& x) {
  std::vector<double> out;
  out.reserve(x.size());
  for (const auto& row : x) {
    double z = fit.intercept;
    for (std::size_t j = 0; j < row.size(); ++j) {
      double sd = feature_sds[j] != 0.0 ? feature_sds[j] : 1.0;
      z += fit.weights[j] * (row[j] - feature_means[j]) / sd;
    }
    out.push_back(sigmoid(z));
  }
  return out;
}

namespace {

void standardize_stats(const std::vector<std::vector<double>>& x,
                       const std::vector<std::size_t>& rows, std::vector<double>& means,
                       std::vector<double>& sds) {
  std::size_t d = x.front().size();
  means.assign(d, 0.0);
  sds.assign(d, 0.0);
  for (std::size_t i : rows)
    for (std::size_t j = 0; j < d; ++j) means[j] += x[i][j];
  for (std::size_t j = 0; j < d; ++j) means[j] /= static_cast<double>(rows.size());
  for (std::size_t i : rows)
    for (std::size_t j = 0; j < d; ++j) {
      double dv = x[i][j] - means[j];
      sds[j] += dv * dv;
    }
  for (std::size_t j = 0; j < d; ++j)
    sds[j] = std::sqrt(sds[j] / static_cast<double>(rows.size()));
}

std::vector<std::vector<double>> standardized(const std::vector<std::vector<double>>& x,
                                              const std::vector<std::size_t>& rows,
                                              const std::vector<double>& means,
                                              const std::vector<double>& sds) {
  std::vector<std::vector<double>> out;
  out.reserve(rows.size());
  for (std::size_t i : rows) {
    std::vector<double> row(x[i].size());
    for (std::size_t j = 0; j < row.size(); ++j) {
      double sd = sds[j] != 0.0 ? sds[j] : 1.0;
      row[j] = (x[i][j] - means[j]) / sd;
    }
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace

CvResult logreg_cv(const std::vector<std::vector<double>>& x, const std::vector<bool>& y,
                   const LogRegConfig& logreg_cfg, const StatsConfig& cfg) {
  std::size_t n = x.size();
  if (n == 0 || n != y.size())
    throw error(errc::invalid_config, "logreg_cv needs matching non-empty x and y");
  if (logreg_cfg.folds < 2) throw error(errc::invalid_config, "need at least two folds");

  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < n; ++i) (y[i] ? pos : neg).push_back(i);
  if (pos.empty() || neg.empty())
    throw error(errc::degenerate_labels, "logreg_cv needs both classes");

  auto rs_pos = rng::stream::substream(cfg.seed, 0);
  auto rs_neg = rng::stream::substream(cfg.seed, 1);
  rs_pos.shuffle(pos);
  rs_neg.shuffle(neg);

  auto folds = static_cast<std::size_t>(logreg_cfg.folds);
  std::vector<std::size_t> fold_of(n);
  for (std::size_t i = 0; i < pos.size(); ++i) fold_of[pos[i]] = i % folds;
  for (std::size_t i = 0; i < neg.size(); ++i) fold_of[neg[i]] = i % folds;

  CvResult out;
  std::vector<double> oof(n, 0.0);
  for (std::size_t f = 0; f < folds; ++f) {
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < n; ++i) (fold_of[i] == f ? test : train).push_back(i);
    if (test.empty() || train.empty()) {
      out.fold_auc.push_back(kNaN);
      continue;
    }
    std::vector<double> means, sds;
    standardize_stats(x, train, means, sds);
    auto x_train = standardized(x, train, means, sds);
    std::vector<bool> y_train;
    y_train.reserve(train.size());
    for (std::size_t i : train) y_train.push_back(y[i]);
    LogRegFit fit = logreg_fit(x_train, y_train, logreg_cfg);

    std::vector<std::vector<double>> x_test;
    x_test.reserve(test.size());
    for (std::size_t i : test) x_test.push_back(x[i]);
    auto probs = logreg_predict(fit, means, sds, x_test);
    for (std::size_t t = 0; t < test.size(); ++t) oof[test[t]] = probs[t];

    std::vector<double> fold_scores;
    std::vector<bool> fold_labels;
    for (std::size_t t = 0; t < test.size(); ++t) {
      fold_scores.push_back(probs[t]);
      fold_labels.push_back(y[test[t]]);
    }
    bool has_pos = std::count(fold_labels.begin(), fold_labels.end(), true) > 0;
    bool has_neg = std::count(fold_labels.begin(), fold_labels.end(), false) > 0;
    out.fold_auc.push_back(has_pos && has_neg
                               ? roc_auc(fold_scores, fold_labels, Orientation::higher_is_positive)
                               : kNaN);
  }
  out.oof_auc = roc_auc(oof, y, Orientation::higher_is_positive);

  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  std::vector<double> means, sds;
  standardize_stats(x, all, means, sds);
  auto x_all = standardized(x, all, means, sds);
  out.full_fit = logreg_fit(x_all, y, logreg_cfg);
  return out;
}

}  // namespace lmdiag::stats
