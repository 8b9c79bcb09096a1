#include "lmdiag/signal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lmdiag/stats.hpp"

namespace lmdiag::signal {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Mean of the k largest entries; the whole vector when it has fewer than k.
double top_k_mean(std::vector<double>& vals, int k) {
  auto n = static_cast<std::size_t>(std::max(k, 0));
  if (n == 0 || vals.size() <= n) {
    double sum = 0.0;
    for (double v : vals) sum += v;
    return sum / static_cast<double>(vals.size());
  }
  std::nth_element(vals.begin(), vals.begin() + static_cast<long>(n) - 1, vals.end(),
                   std::greater<double>());
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += vals[i];
  return sum / static_cast<double>(n);
}

double variant_score(ScoreVariant v, double mu_cmp, double mu_ref) {
  switch (v) {
    case ScoreVariant::margin: return mu_cmp - mu_ref;
    case ScoreVariant::refusal_only: return -mu_ref;
    case ScoreVariant::compliance_only: return mu_cmp;
  }
  return 0.0;
}

struct SideGather {
  std::vector<double> ref;
  std::vector<double> cmp;
  int ref_total = 0;  // side IDs that could have been observed at all
  int cmp_total = 0;
};

SideGather gather_from_map(const std::map<int, double>& logits, const lexicon::Expansion& lex) {
  SideGather g;
  g.ref_total = static_cast<int>(lex.refusal_ids.size());
  g.cmp_total = static_cast<int>(lex.compliance_ids.size());
  for (int id : lex.refusal_ids)
    if (auto it = logits.find(id); it != logits.end()) g.ref.push_back(it->second);
  for (int id : lex.compliance_ids)
    if (auto it = logits.find(id); it != logits.end()) g.cmp.push_back(it->second);
  return g;
}

SideGather gather_from_vector(const std::vector<double>& logits, const lexicon::Expansion& lex) {
  SideGather g;
  auto v = static_cast<long>(logits.size());
  for (int id : lex.refusal_ids)
    if (id >= 0 && id < v) {
      g.ref.push_back(logits[static_cast<std::size_t>(id)]);
      ++g.ref_total;
    }
  for (int id : lex.compliance_ids)
    if (id >= 0 && id < v) {
      g.cmp.push_back(logits[static_cast<std::size_t>(id)]);
      ++g.cmp_total;
    }
  return g;
}

StepScore score_gather(SideGather& g, const LmsConfig& cfg, const std::string& where) {
  if (g.cmp.empty())
    throw error(errc::empty_side, "no observable compliance token at " + where);
  if (g.ref.empty())
    throw error(errc::empty_side, "no observable refusal token at " + where);
  StepScore out;
  out.mu_cmp = top_k_mean(g.cmp, cfg.k_agg);
  out.mu_ref = top_k_mean(g.ref, cfg.k_agg);
  out.s = variant_score(cfg.variant, out.mu_cmp, out.mu_ref);
  return out;
}

// Shannon entropy of softmax(logits), in nats, computed against the max for
// stability; optionally converted to bits.
double softmax_entropy(const std::vector<double>& logits, bool bits) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : logits) m = std::max(m, v);
  double z = 0.0, weighted = 0.0;
  for (double v : logits) {
    double e = std::exp(v - m);
    z += e;
    weighted += e * (v - m);
  }
  double h = std::log(z) - weighted / z;
  return bits ? h / std::log(2.0) : h;
}

double l2_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

const char* variant_name(ScoreVariant v) {
  switch (v) {
    case ScoreVariant::margin: return "margin";
    case ScoreVariant::refusal_only: return "refusal_only";
    case ScoreVariant::compliance_only: return "compliance_only";
  }
  return "?";
}

ScoreVariant variant_from_string(const std::string& s) {
  if (s == "margin") return ScoreVariant::margin;
  if (s == "refusal_only") return ScoreVariant::refusal_only;
  if (s == "compliance_only") return ScoreVariant::compliance_only;
  throw error(errc::invalid_config, "unknown score variant: " + s);
}

StepScore lms_step(const std::map<int, double>& logits, const lexicon::Expansion& lex,
                   const LmsConfig& cfg) {
  SideGather g = gather_from_map(logits, lex);
  return score_gather(g, cfg, "step");
}

LmsTrajectory compute_trajectory(const TrajectoryRecord& r, const lexicon::Expansion& lex,
                                 const LmsConfig& cfg, SideChannels channels) {
  LmsTrajectory traj;
  traj.record_id = r.record_id;
  traj.variant = cfg.variant;
  traj.s.reserve(r.steps.size());

  std::vector<std::optional<double>> entropies(r.steps.size());
  std::vector<std::optional<double>> norms(r.steps.size());
  bool want_side = channels != SideChannels::off;

  for (std::size_t i = 0; i < r.steps.size(); ++i) {
    const auto& step = r.steps[i];
    std::string where = r.record_id + " step " + std::to_string(step.step_index);
    StepScore sc;
    double cov = 1.0;
    if (const auto* ps = std::get_if<PrecomputedStep>(&step.payload)) {
      double margin = ps->mu_cmp - ps->mu_ref;
      double scale = std::max({1.0, std::abs(ps->s), std::abs(margin)});
      if (std::abs(ps->s - margin) > 1e-9 * scale)
        throw error(errc::malformed_record,
                    where + ": precomputed s does not equal mu_cmp - mu_ref");
      sc.mu_cmp = ps->mu_cmp;
      sc.mu_ref = ps->mu_ref;
      sc.s = variant_score(cfg.variant, ps->mu_cmp, ps->mu_ref);
      if (want_side) {
        entropies[i] = ps->entropy;
        norms[i] = ps->logit_norm;
        if (channels == SideChannels::required && (!ps->entropy || !ps->logit_norm))
          throw error(errc::insufficient_tier,
                      where + ": entropy/logit_norm requested but not recorded");
      }
    } else if (const auto* sl = std::get_if<LexiconSlice>(&step.payload)) {
      if (channels == SideChannels::required)
        throw error(errc::insufficient_tier,
                    where + ": entropy/logit_norm unavailable at slice tier");
      SideGather g = gather_from_map(sl->logits, lex);
      int present = static_cast<int>(g.ref.size() + g.cmp.size());
      int total = g.ref_total + g.cmp_total;
      cov = total > 0 ? static_cast<double>(present) / total : 0.0;
      sc = score_gather(g, cfg, where);
    } else {
      const auto& fl = std::get<FullLogits>(step.payload);
      SideGather g = gather_from_vector(fl.logits, lex);
      int present = static_cast<int>(g.ref.size() + g.cmp.size());
      int total = g.ref_total + g.cmp_total;
      cov = total > 0 ? static_cast<double>(present) / total : 0.0;
      sc = score_gather(g, cfg, where);
      if (want_side) {
        entropies[i] = softmax_entropy(fl.logits, cfg.entropy_bits);
        norms[i] = l2_norm(fl.logits);
      }
    }
    traj.s.push_back(sc.s);
    traj.mu_cmp.push_back(sc.mu_cmp);
    traj.mu_ref.push_back(sc.mu_ref);
    traj.coverage.push_back(cov);
  }

  auto all_present = [](const std::vector<std::optional<double>>& v) {
    return std::all_of(v.begin(), v.end(), [](const auto& x) { return x.has_value(); });
  };
  if (want_side && all_present(entropies)) {
    traj.entropy.emplace();
    for (const auto& e : entropies) traj.entropy->push_back(*e);
  }
  if (want_side && all_present(norms)) {
    traj.logit_norm.emplace();
    for (const auto& n : norms) traj.logit_norm->push_back(*n);
  }
  return traj;
}

std::pair<LmsTrajectory, TruncationComparison> simulate_truncation(
    const TrajectoryRecord& r, long k_vocab, const lexicon::Expansion& lex,
    const LmsConfig& cfg) {
  if (k_vocab < 1) throw error(errc::invalid_config, "k_vocab must be >= 1");
  for (const auto& step : r.steps)
    if (!std::holds_alternative<FullLogits>(step.payload))
      throw error(errc::insufficient_tier,
                  r.record_id + ": truncation simulation needs full logits at step " +
                      std::to_string(step.step_index));

  LmsTrajectory full = compute_trajectory(r, lex, cfg, SideChannels::off);

  LmsTrajectory trunc;
  trunc.record_id = r.record_id;
  trunc.variant = cfg.variant;
  TruncationComparison cmp;
  cmp.k_vocab = k_vocab;

  double ref_survival_sum = 0.0, cmp_survival_sum = 0.0;
  std::vector<double> pair_full, pair_trunc;

  for (std::size_t i = 0; i < r.steps.size(); ++i) {
    const auto& logits = std::get<FullLogits>(r.steps[i].payload).logits;
    double threshold = -std::numeric_limits<double>::infinity();
    if (k_vocab < static_cast<long>(logits.size())) {
      std::vector<double> copy = logits;
      auto kth = copy.begin() + (k_vocab - 1);
      std::nth_element(copy.begin(), kth, copy.end(), std::greater<double>());
      threshold = *kth;  // boundary ties all survive
    }

    SideGather g;
    int ref_total = 0, cmp_total = 0;
    auto v = static_cast<long>(logits.size());
    for (int id : lex.refusal_ids)
      if (id >= 0 && id < v) {
        ++ref_total;
        double x = logits[static_cast<std::size_t>(id)];
        if (x >= threshold) g.ref.push_back(x);
      }
    for (int id : lex.compliance_ids)
      if (id >= 0 && id < v) {
        ++cmp_total;
        double x = logits[static_cast<std::size_t>(id)];
        if (x >= threshold) g.cmp.push_back(x);
      }
    ref_survival_sum += ref_total ? static_cast<double>(g.ref.size()) / ref_total : 0.0;
    cmp_survival_sum += cmp_total ? static_cast<double>(g.cmp.size()) / cmp_total : 0.0;

    int total = ref_total + cmp_total;
    trunc.coverage.push_back(
        total ? static_cast<double>(g.ref.size() + g.cmp.size()) / total : 0.0);

    if (g.ref.empty() || g.cmp.empty()) {
      trunc.s.push_back(kNaN);
      trunc.mu_cmp.push_back(kNaN);
      trunc.mu_ref.push_back(kNaN);
      trunc.step_defined.push_back(false);
      continue;
    }
    StepScore sc;
    sc.mu_cmp = top_k_mean(g.cmp, cfg.k_agg);
    sc.mu_ref = top_k_mean(g.ref, cfg.k_agg);
    sc.s = variant_score(cfg.variant, sc.mu_cmp, sc.mu_ref);
    trunc.s.push_back(sc.s);
    trunc.mu_cmp.push_back(sc.mu_cmp);
    trunc.mu_ref.push_back(sc.mu_ref);
    trunc.step_defined.push_back(true);
    pair_full.push_back(full.s[i]);
    pair_trunc.push_back(sc.s);
  }

  auto n_steps = static_cast<double>(r.steps.size());
  cmp.refusal_survival = ref_survival_sum / n_steps;
  cmp.compliance_survival = cmp_survival_sum / n_steps;
  cmp.defined_step_fraction = static_cast<double>(pair_full.size()) / n_steps;

  if (!pair_full.empty()) {
    double abs_sum = 0.0;
    int agree = 0;
    auto sign3 = [](double x) { return x > 0 ? 1 : (x < 0 ? -1 : 0); };
    for (std::size_t i = 0; i < pair_full.size(); ++i) {
      abs_sum += std::abs(pair_full[i] - pair_trunc[i]);
      if (sign3(pair_full[i]) == sign3(pair_trunc[i])) ++agree;
    }
    cmp.mae = abs_sum / static_cast<double>(pair_full.size());
    cmp.sign_agreement = static_cast<double>(agree) / static_cast<double>(pair_full.size());
    cmp.pearson_r = stats::pearson(pair_full, pair_trunc);
  }
  return {std::move(trunc), cmp};
}

}  // namespace lmdiag::signal
