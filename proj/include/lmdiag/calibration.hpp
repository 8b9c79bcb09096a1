#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lmdiag/errors.hpp"

namespace lmdiag::calibration {

// Places a condition's successful-attack mean between that condition's
// harmful baseline and its benign reference on two axes: axis A is the
// pre-generation score s0, axis B the generation mean s_bar. A record whose
// axis value is undefined (T = 0 on axis B) drops out of that axis only;
// exclusion counts are reported.

enum class AnchorMode { condition_all_harmful, failed_only, model_global };

const char* anchor_mode_name(AnchorMode m);
AnchorMode anchor_mode_from_string(const std::string& s);

// One record's two axis values.
struct AxisSample {
  double a = 0.0;                // s0
  std::optional<double> b;       // s_bar, absent when T = 0
};

// Everything calibration needs to know about one condition.
struct ConditionSample {
  std::string condition_id;
  std::string model_id;
  std::string attack_id;
  std::vector<AxisSample> harmful;
  std::vector<bool> success;     // parallel to harmful
  std::vector<AxisSample> benign;  // attack-formatted benign reference
};

// Harmful/benign pools across all of one model's conditions, weighted per
// record, for the model_global anchor mode.
struct ModelPool {
  std::vector<AxisSample> harmful;
  std::vector<AxisSample> benign;
};

// The denominator is flagged as degenerate below this spread; computation
// proceeds, only an exactly zero denominator is an error.
inline constexpr double kDegenerateDelta = 0.10;

struct AxisAnchors {
  double m_success = 0.0;
  double m_harmful = 0.0;
  double m_benign = 0.0;
  double delta = 0.0;            // m_benign - m_harmful
  bool degenerate = false;       // |delta| < kDegenerateDelta
  int n_success = 0;             // records entering m_success on this axis
  int n_harmful = 0;
  int n_benign = 0;
  int excluded = 0;              // records dropped from this axis
};

struct Anchors {
  AnchorMode mode = AnchorMode::condition_all_harmful;
  AxisAnchors a;
  AxisAnchors b;
};

// m_success averages the condition's successful harmful records in every
// mode; the baseline and reference anchors depend on the mode:
//   condition_all_harmful - all of the condition's harmful records
//   failed_only           - only its failed ones (throws NoFailures if none)
//   model_global          - the supplied cross-condition pools
// Throws NoSuccesses when the condition has no successful record.
Anchors compute_anchors(const ConditionSample& cond, AnchorMode mode,
                        const ModelPool* pool = nullptr);

// (m_success - m_harmful) / (m_benign - m_harmful); unclipped, so values
// outside [0, 1] are meaningful. Throws DegenerateDenominator at exactly
// zero spread.
double relative_position(double m_success, double m_harmful, double m_benign);

struct RpCoordinate {
  double rp_a = 0.0;
  double rp_b = 0.0;
  double r = 0.0;  // Euclidean norm of (rp_a, rp_b)
  int n_success = 0;
  int n_harmful = 0;
  double asr = 0.0;
  // Per-axis residual of the pooling identity
  //   m_success - m_harmful = (1 - asr) * (m_success - m_failed),
  // computable under condition_all_harmful anchors with at least one failure.
  std::optional<double> identity_gap_a;
  std::optional<double> identity_gap_b;
  bool degenerate_a = false;
  bool degenerate_b = false;
};

RpCoordinate rp_coordinate(const ConditionSample& cond, const Anchors& anchors);

double rp_distance(const RpCoordinate& x, const RpCoordinate& y);

// Rank-based variant: every axis value is replaced by its mid-rank percentile
// within the condition's pooled harmful + benign reference values on that
// axis (scaled to [0, 1]), and the anchor arithmetic runs on percentiles.
// Requires at least two reference values per axis.
RpCoordinate rank_rp(const ConditionSample& cond);

enum class GapLabel { pgb, igb, ngb, na };

const char* gap_label_name(GapLabel g);

struct Annotation {
  GapLabel label = GapLabel::ngb;
  double axis_margin = 0.0;  // |rp_a| - |rp_b|
  double p_perm = 1.0;
  double p_bh = 1.0;
};

// NGB when the displacement is not significant after FDR correction
// (p_bh > q); otherwise the larger |RP| axis wins: PGB for axis A, IGB for
// axis B, NA on an exact tie.
Annotation annotate(const RpCoordinate& coord, double p_perm, double p_bh, double q);

}  // namespace lmdiag::calibration
