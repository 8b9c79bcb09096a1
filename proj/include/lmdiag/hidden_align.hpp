#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lmdiag/errors.hpp"

namespace lmdiag::hidden_align {

// Checks that the logit-side score and the model's internal refusal
// geometry move together: project hidden states onto a difference-of-means
// direction and correlate the projections with the score trajectory.

struct RefusalDirection {
  std::string model_id;
  std::string layer_tag;
  std::vector<double> direction;  // unit norm
  int n_harmful = 0;
  int n_benign = 0;
};

// normalize(mean(harmful) - mean(benign)). Throws DegenerateDirection when
// the difference norm falls below 1e-12, and InvalidSpec on dimension
// mismatches or empty sides.
RefusalDirection refusal_direction(const std::string& model_id, const std::string& layer_tag,
                                   const std::vector<std::vector<double>>& harmful_states,
                                   const std::vector<std::vector<double>>& benign_states);

std::vector<double> project(const std::vector<std::vector<double>>& states,
                            const RefusalDirection& dir);

struct AlignmentMetrics {
  // Cross-record correlation between score and projection at each early step.
  std::map<int, double> rho_by_step;
  double mean_abs_rho = 0.0;
  double signed_mean_rho = 0.0;
  int steps_skipped_zero_variance = 0;
  // Within-record correlation of (s[t+lag], z[t]) averaged over records.
  std::map<int, double> lag_profile;
  int modal_lag = 0;  // argmax |lag_profile|, smaller |lag| wins ties
  // Fraction of (record, step) pairs whose median-centered deviations have
  // opposite signs, i.e. agree with the expected negative association;
  // pairs with a zero deviation on either side are skipped.
  double sign_agreement = 0.0;
  // Mean over records of |within-record correlation| at lag 0; secondary view.
  std::optional<double> per_record_mean_abs_rho;
};

// s_trajs and z_trajs hold one trajectory per record, aligned by index and by
// step. The primary correlations are computed across records at fixed steps
// 0..early_window-1; the lag profile spans -max_lag..max_lag.
AlignmentMetrics alignment_metrics(const std::vector<std::vector<double>>& s_trajs,
                                   const std::vector<std::vector<double>>& z_trajs,
                                   int early_window = 5, int max_lag = 3,
                                   bool per_record_variant = false);

}  // namespace lmdiag::hidden_align
