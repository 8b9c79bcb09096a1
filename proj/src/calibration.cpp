#include "lmdiag/calibration.hpp"

#include <algorithm>
#include <cmath>

namespace lmdiag::calibration {

namespace {

enum class Axis { a, b };

std::optional<double> axis_value(const AxisSample& s, Axis ax) {
  if (ax == Axis::a) return s.a;
  return s.b;
}

struct MeanAcc {
  double sum = 0.0;
  int n = 0;
  int skipped = 0;
  void add(const AxisSample& s, Axis ax) {
    if (auto v = axis_value(s, ax)) {
      sum += *v;
      ++n;
    } else {
      ++skipped;
    }
  }
  double mean() const { return sum / n; }
};

AxisAnchors axis_anchors(const ConditionSample& cond, AnchorMode mode, const ModelPool* pool,
                         Axis ax, const char* axis_name) {
  MeanAcc succ, harm, benign;
  MeanAcc failed;  // only consulted in failed_only mode
  for (std::size_t i = 0; i < cond.harmful.size(); ++i) {
    if (cond.success[i]) succ.add(cond.harmful[i], ax);
    else failed.add(cond.harmful[i], ax);
  }
  switch (mode) {
    case AnchorMode::condition_all_harmful:
      for (const auto& s : cond.harmful) harm.add(s, ax);
      break;
    case AnchorMode::failed_only:
      harm = failed;
      break;
    case AnchorMode::model_global:
      if (!pool)
        throw error(errc::invalid_config, "model_global anchors need a model pool");
      for (const auto& s : pool->harmful) harm.add(s, ax);
      break;
  }
  if (mode == AnchorMode::model_global) {
    for (const auto& s : pool->benign) benign.add(s, ax);
  } else {
    for (const auto& s : cond.benign) benign.add(s, ax);
  }

  if (succ.n == 0)
    throw error(errc::no_successes,
                cond.condition_id + ": no successful harmful record on axis " + axis_name);
  if (mode == AnchorMode::failed_only && harm.n == 0)
    throw error(errc::no_failures,
                cond.condition_id + ": no failed harmful record on axis " + axis_name);
  if (harm.n == 0)
    throw error(errc::invalid_spec,
                cond.condition_id + ": no harmful baseline value on axis " + axis_name);
  if (benign.n == 0)
    throw error(errc::invalid_spec,
                cond.condition_id + ": no benign reference value on axis " + axis_name);

  AxisAnchors out;
  out.m_success = succ.mean();
  out.m_harmful = harm.mean();
  out.m_benign = benign.mean();
  out.delta = out.m_benign - out.m_harmful;
  out.degenerate = std::abs(out.delta) < kDegenerateDelta;
  out.n_success = succ.n;
  out.n_harmful = harm.n;
  out.n_benign = benign.n;
  out.excluded = succ.skipped + harm.skipped + benign.skipped;
  return out;
}

}  // namespace

const char* anchor_mode_name(AnchorMode m) {
  switch (m) {
    case AnchorMode::condition_all_harmful: return "condition_all_harmful";
    case AnchorMode::failed_only: return "failed_only";
    case AnchorMode::model_global: return "model_global";
  }
  return "?";
}

AnchorMode anchor_mode_from_string(const std::string& s) {
  if (s == "condition_all_harmful") return AnchorMode::condition_all_harmful;
  if (s == "failed_only") return AnchorMode::failed_only;
  if (s == "model_global") return AnchorMode::model_global;
  throw error(errc::invalid_config, "unknown anchor mode: " + s);
}

Anchors compute_anchors(const ConditionSample& cond, AnchorMode mode, const ModelPool* pool) {
  if (cond.harmful.size() != cond.success.size())
    throw error(errc::invalid_config, "success flags not parallel to harmful samples");
  Anchors out;
  out.mode = mode;
  out.a = axis_anchors(cond, mode, pool, Axis::a, "A");
  out.b = axis_anchors(cond, mode, pool, Axis::b, "B");
  return out;
}

double relative_position(double m_success, double m_harmful, double m_benign) {
  double denom = m_benign - m_harmful;
  if (denom == 0.0)
    throw error(errc::degenerate_denominator, "benign and harmful anchors coincide");
  return (m_success - m_harmful) / denom;
}

RpCoordinate rp_coordinate(const ConditionSample& cond, const Anchors& anchors) {
  RpCoordinate out;
  out.rp_a = relative_position(anchors.a.m_success, anchors.a.m_harmful, anchors.a.m_benign);
  out.rp_b = relative_position(anchors.b.m_success, anchors.b.m_harmful, anchors.b.m_benign);
  out.r = std::hypot(out.rp_a, out.rp_b);
  out.n_harmful = static_cast<int>(cond.harmful.size());
  out.n_success = static_cast<int>(std::count(cond.success.begin(), cond.success.end(), true));
  out.asr = out.n_harmful ? static_cast<double>(out.n_success) / out.n_harmful : 0.0;
  out.degenerate_a = anchors.a.degenerate;
  out.degenerate_b = anchors.b.degenerate;

  if (anchors.mode == AnchorMode::condition_all_harmful) {
    // Residual of m_success - m_harmful = (1 - asr) * (m_success - m_failed),
    // evaluated with the per-axis counts that actually entered the means.
    auto gap = [&](auto value_of) -> std::optional<double> {
      double succ_sum = 0.0, fail_sum = 0.0;
      int n_succ = 0, n_fail = 0;
      for (std::size_t i = 0; i < cond.harmful.size(); ++i) {
        auto v = value_of(cond.harmful[i]);
        if (!v) continue;
        if (cond.success[i]) {
          succ_sum += *v;
          ++n_succ;
        } else {
          fail_sum += *v;
          ++n_fail;
        }
      }
      if (n_succ == 0 || n_fail == 0) return std::nullopt;
      double m_succ = succ_sum / n_succ;
      double m_fail = fail_sum / n_fail;
      double m_harm = (succ_sum + fail_sum) / (n_succ + n_fail);
      double asr_axis = static_cast<double>(n_succ) / (n_succ + n_fail);
      return (m_succ - m_harm) - (1.0 - asr_axis) * (m_succ - m_fail);
    };
    out.identity_gap_a =
        gap([](const AxisSample& s) { return std::optional<double>(s.a); });
    out.identity_gap_b = gap([](const AxisSample& s) { return s.b; });
  }
  return out;
}

double rp_distance(const RpCoordinate& x, const RpCoordinate& y) {
  return std::hypot(x.rp_a - y.rp_a, x.rp_b - y.rp_b);
}

RpCoordinate rank_rp(const ConditionSample& cond) {
  auto transform = [&](Axis ax, const char* axis_name) {
    std::vector<double> pool;
    for (const auto& s : cond.harmful)
      if (auto v = axis_value(s, ax)) pool.push_back(*v);
    for (const auto& s : cond.benign)
      if (auto v = axis_value(s, ax)) pool.push_back(*v);
    if (pool.size() < 2)
      throw error(errc::invalid_spec,
                  cond.condition_id + ": rank calibration needs at least two reference values on axis " +
                      axis_name);
    std::sort(pool.begin(), pool.end());
    // Mid-rank empirical CDF over the pooled reference values, in [0, 1].
    return [pool](double v) {
      auto lo = std::lower_bound(pool.begin(), pool.end(), v) - pool.begin();
      auto hi = std::upper_bound(pool.begin(), pool.end(), v) - pool.begin();
      return (static_cast<double>(lo) + 0.5 * static_cast<double>(hi - lo)) /
             static_cast<double>(pool.size());
    };
  };
  auto pct_a = transform(Axis::a, "A");
  auto pct_b = transform(Axis::b, "B");

  ConditionSample ranked;
  ranked.condition_id = cond.condition_id;
  ranked.model_id = cond.model_id;
  ranked.attack_id = cond.attack_id;
  ranked.success = cond.success;
  auto map_sample = [&](const AxisSample& s) {
    AxisSample t;
    t.a = pct_a(s.a);
    if (s.b) t.b = pct_b(*s.b);
    return t;
  };
  for (const auto& s : cond.harmful) ranked.harmful.push_back(map_sample(s));
  for (const auto& s : cond.benign) ranked.benign.push_back(map_sample(s));

  Anchors anchors = compute_anchors(ranked, AnchorMode::condition_all_harmful);
  return rp_coordinate(ranked, anchors);
}

const char* gap_label_name(GapLabel g) {
  switch (g) {
    case GapLabel::pgb: return "PGB";
    case GapLabel::igb: return "IGB";
    case GapLabel::ngb: return "NGB";
    case GapLabel::na: return "NA";
  }
  return "?";
}

Annotation annotate(const RpCoordinate& coord, double p_perm, double p_bh, double q) {
  Annotation out;
  out.p_perm = p_perm;
  out.p_bh = p_bh;
  out.axis_margin = std::abs(coord.rp_a) - std::abs(coord.rp_b);
  if (p_bh > q) {
    out.label = GapLabel::ngb;
  } else if (out.axis_margin > 0) {
    out.label = GapLabel::pgb;
  } else if (out.axis_margin < 0) {
    out.label = GapLabel::igb;
  } else {
    out.label = GapLabel::na;
  }
  return out;
}

}  // namespace lmdiag::calibration
