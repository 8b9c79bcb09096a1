#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "lmdiag/calibration.hpp"
#include "lmdiag/errors.hpp"

namespace lmdiag::stats {

// Shared knobs for the randomized routines. Every routine here is a pure
// function of its inputs and cfg.seed; resample b draws from substream
// (seed, b), so results do not depend on evaluation order.
struct StatsConfig {
  int b_resamples = 10000;
  double ci_level = 0.95;
  double q_fdr = 0.05;
  std::uint64_t seed = 0;
};

// ---- descriptive helpers --------------------------------------------------

double mean(const std::vector<double>& v);
double sample_variance(const std::vector<double>& v);      // n-1 denominator
double population_std(const std::vector<double>& v);       // n denominator

// Pearson correlation; nullopt when either side has zero variance or fewer
// than two points.
std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y);

// Mean of correlations through Fisher's z: tanh(mean(atanh(rho))). Inputs at
// exactly +-1 are clamped just inside the open interval.
double fisher_z_mean(const std::vector<double>& rhos);

struct EffectStats {
  double mean_a = 0.0;
  double mean_b = 0.0;
  double cohens_d = 0.0;  // (mean_a - mean_b) / pooled sd
};

// Throws ZeroVariance when the pooled standard deviation vanishes.
EffectStats effect_stats(const std::vector<double>& a, const std::vector<double>& b);

// ---- ranking metrics -------------------------------------------------------

enum class Orientation { higher_is_positive, lower_is_positive };

// Mann-Whitney AUC with half credit for ties. Throws DegenerateLabels unless
// both classes are present.
double roc_auc(const std::vector<double>& scores, const std::vector<bool>& positive,
               Orientation orientation = Orientation::higher_is_positive);

struct IntervalEstimate {
  double point = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  double level = 0.95;
  int b_resamples = 0;
};

// Percentile bootstrap that resamples within each stratum at its observed
// size. The statistic receives, per stratum, the resampled indices into that
// stratum; a resample where it returns NaN is dropped from the percentile
// (b_resamples in the result counts the kept ones). Throws EmptyStratum if
// any declared stratum is empty.
IntervalEstimate stratified_bootstrap(
    const std::vector<std::size_t>& stratum_sizes,
    const std::function<double(const std::vector<std::vector<std::size_t>>&)>& statistic,
    const StatsConfig& cfg);

// Convenience: AUC with a bootstrap CI, resampling each class as its own
// stratum.
IntervalEstimate roc_auc_ci(const std::vector<double>& scores, const std::vector<bool>& positive,
                            Orientation orientation, const StatsConfig& cfg);

// ---- multiple testing -------------------------------------------------------

struct BhResult {
  std::vector<double> adjusted;     // step-up adjusted p-values, input order
  std::vector<bool> significant;    // adjusted <= q
};

BhResult bh_fdr(const std::vector<double>& p_values, double q);

// ---- permutation test --------------------------------------------------------

struct PermutationResult {
  double p_value = 1.0;
  double observed = 0.0;
  long n_permutations_used = 0;
  bool exhaustive = false;
};

// One-sided test of an observed statistic against relabelings of a binary
// label vector with the number of positives held fixed. When the number of
// distinct labelings C(n, k) is within budget the null set is enumerated
// exactly and p = #{labelings with stat >= observed} / (C + 1), the observed
// labeling being one of the C; otherwise cfg.b_resamples random relabelings
// give the add-one estimate (1 + #{>=}) / (1 + B). Both forms keep
// p >= 1/(used + 1). A relabeling where the statistic is NaN never counts as
// exceeding the observed value.
//
// `statistic` maps a label assignment to the test statistic. Throws
// DegenerateLabels when the observed labels are all one class.
PermutationResult permutation_test(
    const std::vector<bool>& observed_labels,
    const std::function<double(const std::vector<bool>&)>& statistic,
    const StatsConfig& cfg);

// Tests whether a condition's displacement radius r could arise from
// arbitrary success/failure labeling: success labels are permuted within the
// condition with the success count fixed, benign anchors stay put, and r is
// recomputed per relabeling. Relabelings where r is undefined (a degenerate
// denominator, or an axis left with no labeled value) are counted as not
// exceeding the observed radius.
PermutationResult permutation_displacement_test(const calibration::ConditionSample& cond,
                                                calibration::AnchorMode mode,
                                                const StatsConfig& cfg,
                                                const calibration::ModelPool* pool = nullptr);

// ---- agreement ----------------------------------------------------------------

// One-way random-effects intraclass correlation, ICC(1), over an n_groups x
// k_repeats matrix of measurements. Throws DegenerateMatrix unless the matrix
// is complete with at least two rows and two columns.
double icc1(const std::vector<std::vector<double>>& matrix);

// Cohen's kappa over paired categorical labels coded as small ints.
double cohens_kappa(const std::vector<int>& rater_a, const std::vector<int>& rater_b);

// ---- logistic regression baseline ----------------------------------------------

struct LogRegConfig {
  double l2 = 1.0;             // on standardized features, intercept unpenalized
  double tol = 1e-8;           // gradient max-norm stopping rule
  int max_iter = 500;
  int folds = 5;
};

struct LogRegFit {
  std::vector<double> weights;   // standardized feature space
  double intercept = 0.0;
  std::vector<double> loss_history;  // penalized mean log-loss per iteration
  bool converged = false;
};

LogRegFit logreg_fit(const std::vector<std::vector<double>>& x, const std::vector<bool>& y,
                     const LogRegConfig& cfg);

std::vector<double> logreg_predict(const LogRegFit& fit, const std::vector<double>& feature_means,
                                   const std::vector<double>& feature_sds,
                                   const std::vector<std::vector<double>>& x);

struct CvResult {
  double oof_auc = 0.5;              // pooled out-of-fold AUC
  std::vector<double> fold_auc;
  LogRegFit full_fit;                // fit on all rows, for inspection
};

// Stratified k-fold CV: rows are shuffled within each class by cfg.seed and
// dealt round-robin into folds; per-fold standardization comes from the
// training split only and out-of-fold probabilities are pooled for the AUC.
CvResult logreg_cv(const std::vector<std::vector<double>>& x, const std::vector<bool>& y,
                   const LogRegConfig& logreg_cfg, const StatsConfig& cfg);

}  // namespace lmdiag::stats
