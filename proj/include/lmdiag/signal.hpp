#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lmdiag/lexicon.hpp"
#include "lmdiag/trajectory_store.hpp"

namespace lmdiag::signal {

// Per-step margin between the two lexicon sides. Within a side only the
// k_agg largest observable logits are averaged; a side with fewer observable
// tokens than k_agg is averaged whole. The margin variant scores
// mu_cmp - mu_ref; the single-sided variants score -mu_ref and mu_cmp so that
// larger always leans compliant.

enum class ScoreVariant { margin, refusal_only, compliance_only };

const char* variant_name(ScoreVariant v);
ScoreVariant variant_from_string(const std::string& s);

struct LmsConfig {
  int k_agg = 10;
  ScoreVariant variant = ScoreVariant::margin;
  bool entropy_bits = false;  // report entropy in bits instead of nats
};

struct StepScore {
  double s = 0.0;
  double mu_cmp = 0.0;
  double mu_ref = 0.0;
};

// Throws EmptySide when either side has no observable token in `logits`.
StepScore lms_step(const std::map<int, double>& logits, const lexicon::Expansion& lex,
                   const LmsConfig& cfg);

struct LmsTrajectory {
  std::string record_id;
  ScoreVariant variant = ScoreVariant::margin;
  std::vector<double> s;       // index 0 = pre-generation position
  std::vector<double> mu_cmp;
  std::vector<double> mu_ref;
  std::optional<std::vector<double>> entropy;
  std::optional<std::vector<double>> logit_norm;
  std::vector<double> coverage;       // observable fraction of lexicon IDs per step
  std::vector<bool> step_defined;     // false only for truncation-killed steps

  int generation_steps() const { return static_cast<int>(s.size()) - 1; }
  bool defined(std::size_t t) const { return step_defined.empty() || step_defined[t]; }
};

enum class SideChannels { off, when_available, required };

// Builds the score trajectory for a record at whatever payload tier it
// carries. Precomputed steps pass through (the margin identity is
// re-checked); slice and full tiers run lms_step. Entropy and logit norms
// exist only for full-tier steps; `channels` = required throws
// InsufficientTier when any step cannot provide them.
LmsTrajectory compute_trajectory(const TrajectoryRecord& r, const lexicon::Expansion& lex,
                                 const LmsConfig& cfg,
                                 SideChannels channels = SideChannels::when_available);

struct TruncationComparison {
  long k_vocab = 0;
  std::optional<double> pearson_r;       // across mutually defined steps
  std::optional<double> mae;
  std::optional<double> sign_agreement;  // three-valued sign match rate
  double refusal_survival = 0.0;         // mean per-step surviving fraction
  double compliance_survival = 0.0;
  double defined_step_fraction = 0.0;
};

// Replays a full-tier record as if the producer had only logged the k_vocab
// largest logits per step (boundary ties all kept), then rescores. Steps
// where a side lost every token are undefined and excluded from the
// comparison statistics. Throws InsufficientTier on non-full records.
std::pair<LmsTrajectory, TruncationComparison> simulate_truncation(
    const TrajectoryRecord& r, long k_vocab, const lexicon::Expansion& lex,
    const LmsConfig& cfg);

}  // namespace lmdiag::signal
