#include "lmdiag/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "lmdiag/calibration.hpp"
#include "lmdiag/hidden_align.hpp"
#include "lmdiag/rng.hpp"
#include "lmdiag/temporal.hpp"
#include "lmdiag/trajectory_store.hpp"

namespace lmdiag::pipeline {

namespace {

using nlohmann::json;
using util::csv_field;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// ---------------------------------------------------------------------------
// config plumbing

json lms_to_json(const signal::LmsConfig& c) {
  return json{{"k_agg", c.k_agg},
              {"variant", signal::variant_name(c.variant)},
              {"entropy_bits", c.entropy_bits}};
}

json stats_to_json(const stats::StatsConfig& c) {
  return json{{"b_resamples", c.b_resamples},
              {"ci_level", c.ci_level},
              {"q_fdr", c.q_fdr},
              {"seed", c.seed}};
}

const char* gate_name(intervention::Gate g) {
  return g == intervention::Gate::none ? "none" : "s0_below_tau";
}

intervention::Gate gate_from_string(const std::string& s) {
  if (s == "none") return intervention::Gate::none;
  if (s == "s0_below_tau") return intervention::Gate::s0_below_tau;
  throw error(errc::invalid_config, "unknown gate: " + s);
}

json rule_to_json(const intervention::HaltRule& r) {
  return json{{"w", r.w}, {"gate", gate_name(r.gate)}, {"tau", r.tau}};
}

std::vector<intervention::HaltRule> effective_rules(const std::vector<intervention::HaltRule>& in) {
  if (!in.empty()) return in;
  intervention::HaltRule plain;
  intervention::HaltRule gated;
  gated.gate = intervention::Gate::s0_below_tau;
  return {plain, gated};
}

// ---------------------------------------------------------------------------
// per-record derived state

double variant_of(double mu_cmp, double mu_ref, signal::ScoreVariant v) {
  switch (v) {
    case signal::ScoreVariant::margin: return mu_cmp - mu_ref;
    case signal::ScoreVariant::refusal_only: return -mu_ref;
    case signal::ScoreVariant::compliance_only: return mu_cmp;
  }
  return 0.0;
}

struct RecordView {
  const TrajectoryRecord* rec = nullptr;
  signal::LmsTrajectory traj;
  temporal::TemporalSummary summary;
  temporal::CrossingResult crossing;        // configured n_confirm
  temporal::CrossingResult probe_crossing;  // n_confirm = 1, shared by halt rules
  std::optional<lexicon::BowScore> bow;
  double s0_variant[3] = {0.0, 0.0, 0.0};   // indexed by ScoreVariant
  std::optional<double> sbar_variant[3];
  std::optional<double> entropy0, entropy_mean;
  std::optional<double> norm0, norm_mean;
  double coverage_mean = 0.0;

  bool success() const { return rec->success_label && *rec->success_label; }
};

struct ViewParams {
  signal::LmsConfig lms;
  std::vector<int> windows = {1, 3, 5};
  int horizon = 64;
  int n_confirm = 1;
};

RecordView make_view(const TrajectoryRecord& r, const lexicon::Expansion& ex,
                     const lexicon::WordSets& words, const ViewParams& p) {
  RecordView v;
  v.rec = &r;
  v.traj = signal::compute_trajectory(r, ex, p.lms);
  v.summary = temporal::summarize(v.traj, p.windows);
  v.crossing = temporal::first_crossing(v.traj, p.n_confirm, p.horizon);
  v.probe_crossing =
      p.n_confirm == 1 ? v.crossing : temporal::first_crossing(v.traj, 1, p.horizon);

  int t = v.traj.generation_steps();
  for (int k = 0; k < 3; ++k) {
    auto var = static_cast<signal::ScoreVariant>(k);
    v.s0_variant[k] = variant_of(v.traj.mu_cmp[0], v.traj.mu_ref[0], var);
    if (t >= 1) {
      double acc = 0.0;
      for (int i = 1; i <= t; ++i)
        acc += variant_of(v.traj.mu_cmp[static_cast<std::size_t>(i)],
                          v.traj.mu_ref[static_cast<std::size_t>(i)], var);
      v.sbar_variant[k] = acc / t;
    }
  }
  if (v.traj.entropy) {
    const auto& e = *v.traj.entropy;
    v.entropy0 = e[0];
    if (t >= 1) v.entropy_mean = stats::mean({e.begin() + 1, e.end()});
  }
  if (v.traj.logit_norm) {
    const auto& n = *v.traj.logit_norm;
    v.norm0 = n[0];
    if (t >= 1) v.norm_mean = stats::mean({n.begin() + 1, n.end()});
  }
  if (r.response_words) v.bow = lexicon::bow_score(*r.response_words, words);
  v.coverage_mean = v.traj.coverage.empty() ? 0.0 : stats::mean(v.traj.coverage);
  return v;
}

struct CondData {
  const ConditionManifest* man = nullptr;
  std::vector<RecordView> harmful, benign_af, benign_ff;

  calibration::ConditionSample sample;
  int n_success = 0;
  double asr = 0.0;

  std::optional<calibration::Anchors> anchors_primary, anchors_failed, anchors_global;
  std::optional<calibration::RpCoordinate> rp_primary, rp_failed, rp_global, rank;
  std::optional<stats::PermutationResult> perm;
  std::optional<stats::IntervalEstimate> r_ci;
  std::optional<double> p_bh;
  bool significant = false;
  std::optional<calibration::Annotation> annotation;
  std::vector<std::string> notes;
};

bool filter_matches(const std::string& condition_id, const std::vector<std::string>& filter) {
  if (filter.empty()) return true;
  for (const auto& f : filter)
    if (condition_id.find(f) != std::string::npos) return true;
  return false;
}

// Builds trajectories and summaries for every record of every kept condition.
// Parallel across conditions; results land in a pre-sized vector so worker
// count cannot change anything downstream.
std::vector<CondData> build_views(const DatasetHandle& h, const lexicon::Lexicon& lx,
                                  const ViewParams& params,
                                  const std::vector<std::string>& filter, bool require_roles,
                                  int workers) {
  std::vector<const ConditionManifest*> active;
  for (const auto& c : h.conditions)
    if (filter_matches(c.condition_id, filter)) active.push_back(&c);
  if (active.empty())
    throw error(errc::invalid_config, filter.empty() ? "dataset has no conditions"
                                                     : "condition filter matched nothing");

  if (require_roles) {
    for (const auto* c : active) {
      if (c->harmful_record_ids.empty())
        throw error(errc::invalid_spec,
                    "condition " + c->condition_id + " has no harmful records");
      if (c->benign_attack_formatted_ids.empty())
        throw error(errc::invalid_spec,
                    "condition " + c->condition_id + " has no attack-formatted benign records");
    }
  }

  std::map<std::string, lexicon::Expansion> expansions;
  for (const auto* c : active)
    if (!expansions.count(c->tokenizer_id)) expansions[c->tokenizer_id] = lx.expand(c->tokenizer_id);
  const lexicon::WordSets words = lexicon::word_sets_from_phrases(lx);

  std::vector<CondData> out(active.size());
  std::vector<std::exception_ptr> errors(active.size());
  std::atomic<std::size_t> next{0};
  auto work = [&]() {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= active.size()) return;
      try {
        CondData& c = out[i];
        c.man = active[i];
        const auto& ex = expansions.at(c.man->tokenizer_id);
        for (const auto* r : h.records_for(*c.man, Role::harmful))
          c.harmful.push_back(make_view(*r, ex, words, params));
        for (const auto* r : h.records_for(*c.man, Role::benign_attack_formatted))
          c.benign_af.push_back(make_view(*r, ex, words, params));
        for (const auto* r : h.records_for(*c.man, Role::benign_format_free))
          c.benign_ff.push_back(make_view(*r, ex, words, params));

        c.sample.condition_id = c.man->condition_id;
        c.sample.model_id = c.man->model_id;
        c.sample.attack_id = c.man->attack_id;
        for (const auto& v : c.harmful) {
          c.sample.harmful.push_back({v.summary.s0, v.summary.s_bar});
          c.sample.success.push_back(v.success());
          if (v.success()) ++c.n_success;
        }
        for (const auto& v : c.benign_af)
          c.sample.benign.push_back({v.summary.s0, v.summary.s_bar});
        c.asr = c.harmful.empty() ? 0.0
                                  : static_cast<double>(c.n_success) /
                                        static_cast<double>(c.harmful.size());
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  int n_workers = std::max(1, std::min<int>(workers, static_cast<int>(active.size())));
  std::vector<std::thread> pool;
  for (int w = 0; w < n_workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  for (std::size_t i = 0; i < errors.size(); ++i)
    if (errors[i]) std::rethrow_exception(errors[i]);
  return out;
}

calibration::ConditionSample resampled(const calibration::ConditionSample& s,
                                       const std::vector<std::size_t>& harmful_idx,
                                       const std::vector<std::size_t>& benign_idx) {
  calibration::ConditionSample r;
  r.condition_id = s.condition_id;
  r.model_id = s.model_id;
  r.attack_id = s.attack_id;
  for (auto i : harmful_idx) {
    r.harmful.push_back(s.harmful[i]);
    r.success.push_back(s.success[i]);
  }
  for (auto i : benign_idx) r.benign.push_back(s.benign[i]);
  return r;
}

// Calibration, significance and the bootstrap CI for one condition. Runs
// inside the parallel stage; every random quantity draws from a substream
// keyed by the condition id.
void analyze_condition(CondData& c, const stats::StatsConfig& base) {
  const std::string& cid = c.man->condition_id;
  using calibration::AnchorMode;

  try {
    auto a = calibration::compute_anchors(c.sample, AnchorMode::condition_all_harmful);
    c.anchors_primary = a;
    c.rp_primary = calibration::rp_coordinate(c.sample, a);
  } catch (const error& e) {
    c.notes.push_back(std::string("rp: ") + e.what());
  }
  try {
    auto a = calibration::compute_anchors(c.sample, AnchorMode::failed_only);
    c.anchors_failed = a;
    c.rp_failed = calibration::rp_coordinate(c.sample, a);
  } catch (const error& e) {
    c.notes.push_back(std::string("rp_failed_only: ") + e.what());
  }
  try {
    c.rank = calibration::rank_rp(c.sample);
  } catch (const error& e) {
    c.notes.push_back(std::string("rank_rp: ") + e.what());
  }

  if (!c.rp_primary) return;

  bool has_failure = c.n_success < static_cast<int>(c.harmful.size());
  if (c.n_success > 0 && has_failure) {
    stats::StatsConfig sc = base;
    sc.seed = rng::mix(base.seed, util::fnv1a("perm:" + cid));
    try {
      c.perm = stats::permutation_displacement_test(
          c.sample, AnchorMode::condition_all_harmful, sc);
    } catch (const error& e) {
      c.notes.push_back(std::string("permutation: ") + e.what());
    }
  } else {
    c.notes.push_back("permutation: needs both successes and failures");
  }

  stats::StatsConfig bc = base;
  bc.seed = rng::mix(base.seed, util::fnv1a("rci:" + cid));
  auto stat = [&c](const std::vector<std::vector<std::size_t>>& idx) -> double {
    try {
      auto s = resampled(c.sample, idx[0], idx[1]);
      auto a = calibration::compute_anchors(s, AnchorMode::condition_all_harmful);
      return calibration::rp_coordinate(s, a).r;
    } catch (const error&) {
      return kNaN;
    }
  };
  try {
    c.r_ci = stats::stratified_bootstrap({c.sample.harmful.size(), c.sample.benign.size()},
                                         stat, bc);
  } catch (const error& e) {
    c.notes.push_back(std::string("r_ci: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// report helpers

std::string int_field(int v) { return std::to_string(v); }
std::string size_field(std::size_t v) { return std::to_string(v); }
std::string bool_field(bool v) { return v ? "1" : "0"; }

std::string safe_name(const std::string& s) {
  std::string out;
  for (char ch : s)
    out += (std::isalnum(static_cast<unsigned char>(ch)) || ch == '.' || ch == '_' || ch == '-')
               ? ch
               : '_';
  return out;
}

json provenance_json(const std::string& config_hash, const std::string& dataset_hash,
                     std::uint64_t seed) {
  return json{{"version", kVersion},
              {"config_hash", config_hash},
              {"dataset_hash", dataset_hash},
              {"seed", seed}};
}

json axis_anchors_json(const calibration::AxisAnchors& a) {
  return json{{"m_success", a.m_success}, {"m_harmful", a.m_harmful},
              {"m_benign", a.m_benign},   {"delta", a.delta},
              {"degenerate", a.degenerate}, {"n_success", a.n_success},
              {"n_harmful", a.n_harmful}, {"n_benign", a.n_benign},
              {"excluded", a.excluded}};
}

json anchors_json(const calibration::Anchors& a) {
  return json{{"mode", calibration::anchor_mode_name(a.mode)},
              {"a", axis_anchors_json(a.a)},
              {"b", axis_anchors_json(a.b)}};
}

json coordinate_json(const calibration::RpCoordinate& c) {
  json j{{"rp_a", c.rp_a},           {"rp_b", c.rp_b},
         {"r", c.r},                 {"n_success", c.n_success},
         {"n_harmful", c.n_harmful}, {"asr", c.asr},
         {"degenerate_a", c.degenerate_a}, {"degenerate_b", c.degenerate_b}};
  j["identity_gap_a"] = c.identity_gap_a ? json(*c.identity_gap_a) : json();
  j["identity_gap_b"] = c.identity_gap_b ? json(*c.identity_gap_b) : json();
  return j;
}

// Feature columns shared by the pooled and per-condition AUC tables. Larger
// values lean compliant for the score features; flip-counting and the keyword
// proxy run the other way.
struct ScoreDef {
  std::string name;
  stats::Orientation orient;
};

std::vector<ScoreDef> score_defs(const std::vector<int>& windows) {
  std::vector<ScoreDef> defs;
  defs.push_back({"s0", stats::Orientation::higher_is_positive});
  std::vector<int> ws = windows;
  std::sort(ws.begin(), ws.end());
  ws.erase(std::unique(ws.begin(), ws.end()), ws.end());
  for (int w : ws)
    defs.push_back({"s_bar_1_" + std::to_string(w), stats::Orientation::higher_is_positive});
  defs.push_back({"s_bar", stats::Orientation::higher_is_positive});
  defs.push_back({"t_cross_score", stats::Orientation::higher_is_positive});
  defs.push_back({"sign_flips", stats::Orientation::lower_is_positive});
  defs.push_back({"keyword_bow", stats::Orientation::lower_is_positive});
  return defs;
}

std::optional<double> score_value(const RecordView& v, const std::string& name) {
  if (name == "s0") return v.summary.s0;
  if (name == "s_bar") return v.summary.s_bar;
  if (name.rfind("s_bar_1_", 0) == 0) {
    int w = std::stoi(name.substr(8));
    auto it = v.summary.prefix_means.find(w);
    if (it == v.summary.prefix_means.end()) return std::nullopt;
    return it->second;
  }
  if (name == "t_cross_score") {
    if (v.traj.generation_steps() < 1) return std::nullopt;
    return v.crossing.censored ? static_cast<double>(v.crossing.horizon + 1)
                               : static_cast<double>(*v.crossing.t_cross);
  }
  if (name == "sign_flips") {
    if (!v.summary.sign_flips) return std::nullopt;
    return static_cast<double>(*v.summary.sign_flips);
  }
  if (name == "keyword_bow") {
    if (!v.bow) return std::nullopt;
    return v.bow->score;
  }
  return std::nullopt;
}

struct LabeledScores {
  std::vector<double> scores;
  std::vector<bool> labels;
  int n_pos = 0;
  int n_neg = 0;
};

template <typename ValueFn>
LabeledScores gather_scores(const std::vector<const RecordView*>& views, ValueFn value) {
  LabeledScores out;
  for (const auto* v : views) {
    std::optional<double> x = value(*v);
    if (!x) continue;
    out.scores.push_back(*x);
    out.labels.push_back(v->success());
    (v->success() ? out.n_pos : out.n_neg)++;
  }
  return out;
}

std::vector<const RecordView*> harmful_of(const CondData& c) {
  std::vector<const RecordView*> out;
  for (const auto& v : c.harmful) out.push_back(&v);
  return out;
}

std::vector<const RecordView*> harmful_pooled(const std::vector<CondData>& conds) {
  std::vector<const RecordView*> out;
  for (const auto& c : conds)
    for (const auto& v : c.harmful) out.push_back(&v);
  return out;
}

void write_per_record(util::bundle_writer& bundle, const std::vector<CondData>& conds,
                      const std::vector<int>& windows, const std::string& prov) {
  std::vector<int> ws = windows;
  std::sort(ws.begin(), ws.end());
  ws.erase(std::unique(ws.begin(), ws.end()), ws.end());

  util::csv_writer csv;
  csv.comment(prov);
  std::vector<std::string> header = {"condition_id", "record_id", "role", "success",
                                     "tier",         "t",         "s0"};
  for (int w : ws) header.push_back("s_bar_1_" + std::to_string(w));
  for (const char* c : {"s_bar", "s_min", "s_max", "s_std", "s_range", "positive_step_rate",
                        "sign_flips", "sign_reversal", "t_cross", "censored", "t_cross_score",
                        "coverage_mean", "bow_score", "bow_undefined", "bow_n_refusal",
                        "bow_n_compliance"})
    header.push_back(c);
  csv.row(header);

  for (const auto& c : conds) {
    auto emit = [&](const RecordView& v) {
      const auto& s = v.summary;
      std::vector<std::string> row = {
          c.man->condition_id, v.rec->record_id, role_name(v.rec->role),
          v.rec->success_label ? bool_field(*v.rec->success_label) : std::string(),
          tier_name(v.rec->tier()), int_field(s.generation_steps), csv_field(s.s0)};
      for (int w : ws) {
        auto it = s.prefix_means.find(w);
        row.push_back(it == s.prefix_means.end() ? std::string() : csv_field(it->second));
      }
      row.push_back(csv_field(s.s_bar));
      row.push_back(csv_field(s.s_min));
      row.push_back(csv_field(s.s_max));
      row.push_back(csv_field(s.s_std));
      row.push_back(csv_field(s.s_range));
      row.push_back(csv_field(s.positive_step_rate));
      row.push_back(s.sign_flips ? int_field(*s.sign_flips) : std::string());
      // Reversal is reported for harmful records only; benign trajectories
      // get an empty field even when the raw summary defines one.
      row.push_back(v.rec->role == Role::harmful && s.sign_reversal
                        ? bool_field(*s.sign_reversal)
                        : std::string());
      row.push_back(v.crossing.t_cross ? int_field(*v.crossing.t_cross) : std::string());
      row.push_back(bool_field(v.crossing.censored));
      row.push_back(csv_field(score_value(v, "t_cross_score")));
      row.push_back(csv_field(v.coverage_mean));
      if (v.bow) {
        row.push_back(csv_field(v.bow->score));
        row.push_back(bool_field(v.bow->undefined));
        row.push_back(int_field(v.bow->n_refusal));
        row.push_back(int_field(v.bow->n_compliance));
      } else {
        row.insert(row.end(), 4, std::string());
      }
      csv.row(row);
    };
    for (const auto& v : c.harmful) emit(v);
    for (const auto& v : c.benign_af) emit(v);
    for (const auto& v : c.benign_ff) emit(v);
  }
  bundle.add("per_record_summary.csv", csv.str());
}

void write_condition_report(util::bundle_writer& bundle, const std::vector<CondData>& conds,
                            const std::string& prov, const json& prov_json) {
  util::csv_writer csv;
  csv.comment(prov);
  csv.row({"condition_id", "model_id", "attack_id", "n_harmful", "n_success", "n_benign_af",
           "n_benign_ff", "asr", "rp_a", "rp_b", "r", "r_ci_lo", "r_ci_hi", "p_perm", "p_bh",
           "significant", "label", "axis_margin", "rank_rp_a", "rank_rp_b", "rank_r",
           "degenerate_a", "degenerate_b", "sign_reversal_rate", "censored_rate", "notes"});

  json jconds = json::array();
  for (const auto& c : conds) {
    int n_reversal = 0, n_reversal_defined = 0, n_censored = 0, n_crossing_defined = 0;
    for (const auto& v : c.harmful) {
      if (v.summary.sign_reversal) {
        ++n_reversal_defined;
        if (*v.summary.sign_reversal) ++n_reversal;
      }
      if (v.traj.generation_steps() >= 1) {
        ++n_crossing_defined;
        if (v.crossing.censored) ++n_censored;
      }
    }
    std::optional<double> reversal_rate, censored_rate;
    if (n_reversal_defined > 0)
      reversal_rate = static_cast<double>(n_reversal) / n_reversal_defined;
    if (n_crossing_defined > 0)
      censored_rate = static_cast<double>(n_censored) / n_crossing_defined;

    std::string joined_notes;
    for (const auto& n : c.notes) {
      if (!joined_notes.empty()) joined_notes += "; ";
      joined_notes += n;
    }

    std::vector<std::string> row = {
        c.man->condition_id,
        c.man->model_id,
        c.man->attack_id,
        size_field(c.harmful.size()),
        int_field(c.n_success),
        size_field(c.benign_af.size()),
        size_field(c.benign_ff.size()),
        csv_field(c.asr)};
    if (c.rp_primary) {
      row.push_back(csv_field(c.rp_primary->rp_a));
      row.push_back(csv_field(c.rp_primary->rp_b));
      row.push_back(csv_field(c.rp_primary->r));
    } else {
      row.insert(row.end(), 3, std::string());
    }
    row.push_back(c.r_ci ? csv_field(c.r_ci->lo) : std::string());
    row.push_back(c.r_ci ? csv_field(c.r_ci->hi) : std::string());
    row.push_back(c.perm ? csv_field(c.perm->p_value) : std::string());
    row.push_back(csv_field(c.p_bh));
    row.push_back(bool_field(c.significant));
    row.push_back(c.annotation ? calibration::gap_label_name(c.annotation->label)
                               : std::string());
    row.push_back(c.annotation ? csv_field(c.annotation->axis_margin) : std::string());
    if (c.rank) {
      row.push_back(csv_field(c.rank->rp_a));
      row.push_back(csv_field(c.rank->rp_b));
      row.push_back(csv_field(c.rank->r));
    } else {
      row.insert(row.end(), 3, std::string());
    }
    row.push_back(c.rp_primary ? bool_field(c.rp_primary->degenerate_a) : std::string());
    row.push_back(c.rp_primary ? bool_field(c.rp_primary->degenerate_b) : std::string());
    row.push_back(csv_field(reversal_rate));
    row.push_back(csv_field(censored_rate));
    row.push_back(joined_notes);
    csv.row(row);

    json jc;
    jc["condition_id"] = c.man->condition_id;
    jc["model_id"] = c.man->model_id;
    jc["attack_id"] = c.man->attack_id;
    jc["tokenizer_id"] = c.man->tokenizer_id;
    jc["n_harmful"] = c.harmful.size();
    jc["n_success"] = c.n_success;
    jc["n_benign_af"] = c.benign_af.size();
    jc["n_benign_ff"] = c.benign_ff.size();
    jc["asr"] = c.asr;
    json ja = json::object();
    ja["condition_all_harmful"] = c.anchors_primary ? anchors_json(*c.anchors_primary) : json();
    ja["failed_only"] = c.anchors_failed ? anchors_json(*c.anchors_failed) : json();
    ja["model_global"] = c.anchors_global ? anchors_json(*c.anchors_global) : json();
    jc["anchors"] = ja;
    json jr = json::object();
    jr["condition_all_harmful"] = c.rp_primary ? coordinate_json(*c.rp_primary) : json();
    jr["failed_only"] = c.rp_failed ? coordinate_json(*c.rp_failed) : json();
    jr["model_global"] = c.rp_global ? coordinate_json(*c.rp_global) : json();
    jc["rp"] = jr;
    jc["rank_rp"] = c.rank ? coordinate_json(*c.rank) : json();
    if (c.perm) {
      jc["permutation"] = json{{"p_value", c.perm->p_value},
                               {"observed_r", c.perm->observed},
                               {"n_permutations_used", c.perm->n_permutations_used},
                               {"exhaustive", c.perm->exhaustive}};
    } else {
      jc["permutation"] = json();
    }
    jc["p_bh"] = c.p_bh ? json(*c.p_bh) : json();
    jc["significant"] = c.significant;
    if (c.annotation) {
      jc["annotation"] = json{{"label", calibration::gap_label_name(c.annotation->label)},
                              {"axis_margin", c.annotation->axis_margin}};
    } else {
      jc["annotation"] = json();
    }
    if (c.r_ci) {
      jc["r_ci"] = json{{"lo", c.r_ci->lo},
                        {"hi", c.r_ci->hi},
                        {"level", c.r_ci->level},
                        {"b_resamples", c.r_ci->b_resamples}};
    } else {
      jc["r_ci"] = json();
    }
    jc["sign_reversal_rate"] = reversal_rate ? json(*reversal_rate) : json();
    jc["censored_rate"] = censored_rate ? json(*censored_rate) : json();
    jc["notes"] = c.notes;
    jconds.push_back(jc);
  }
  bundle.add("condition_report.csv", csv.str());

  json report;
  report["provenance"] = prov_json;
  report["conditions"] = jconds;
  bundle.add("condition_report.json", report.dump(2) + "\n");
}

void write_auc_tables(util::bundle_writer& bundle, const std::vector<CondData>& conds,
                      const RunConfig& cfg, const std::string& prov) {
  auto defs = score_defs(cfg.windows);
  auto pooled = harmful_pooled(conds);

  util::csv_writer pooled_csv;
  pooled_csv.comment(prov);
  pooled_csv.row({"feature", "orientation", "n_success", "n_failure", "auc", "ci_lo", "ci_hi",
                  "ci_level", "b_resamples"});
  for (const auto& def : defs) {
    auto data = gather_scores(pooled, [&](const RecordView& v) { return score_value(v, def.name); });
    std::vector<std::string> row = {
        def.name,
        def.orient == stats::Orientation::higher_is_positive ? "higher_is_positive"
                                                             : "lower_is_positive",
        int_field(data.n_pos), int_field(data.n_neg)};
    if (data.n_pos > 0 && data.n_neg > 0) {
      stats::StatsConfig sc = cfg.stats;
      sc.seed = rng::mix(cfg.stats.seed, util::fnv1a("auc:" + def.name));
      auto ci = stats::roc_auc_ci(data.scores, data.labels, def.orient, sc);
      row.push_back(csv_field(ci.point));
      row.push_back(csv_field(ci.lo));
      row.push_back(csv_field(ci.hi));
      row.push_back(csv_field(ci.level));
      row.push_back(int_field(ci.b_resamples));
    } else {
      row.insert(row.end(), 5, std::string());
    }
    pooled_csv.row(row);
  }
  bundle.add("auc_pooled.csv", pooled_csv.str());

  util::csv_writer cond_csv;
  cond_csv.comment(prov);
  cond_csv.row({"condition_id", "feature", "n_success", "n_failure", "auc"});
  for (const auto& c : conds) {
    auto views = harmful_of(c);
    for (const auto& def : defs) {
      auto data =
          gather_scores(views, [&](const RecordView& v) { return score_value(v, def.name); });
      std::vector<std::string> row = {c.man->condition_id, def.name, int_field(data.n_pos),
                                      int_field(data.n_neg)};
      row.push_back(data.n_pos > 0 && data.n_neg > 0
                        ? csv_field(stats::roc_auc(data.scores, data.labels, def.orient))
                        : std::string());
      cond_csv.row(row);
    }
  }
  bundle.add("auc_by_condition.csv", cond_csv.str());

  // Margin decomposition: score each record under all three variants from the
  // mu surfaces already on hand, then rank as usual.
  util::csv_writer dec_csv;
  dec_csv.comment(prov);
  dec_csv.row({"scope", "variant", "axis", "n_success", "n_failure", "auc"});
  auto dec_rows = [&](const std::string& scope, const std::vector<const RecordView*>& views) {
    for (int k = 0; k < 3; ++k) {
      auto var = static_cast<signal::ScoreVariant>(k);
      for (const char* axis : {"s0", "s_bar"}) {
        auto data = gather_scores(views, [&](const RecordView& v) -> std::optional<double> {
          if (std::string(axis) == "s0") return v.s0_variant[k];
          return v.sbar_variant[k];
        });
        std::vector<std::string> row = {scope, signal::variant_name(var), axis,
                                        int_field(data.n_pos), int_field(data.n_neg)};
        row.push_back(data.n_pos > 0 && data.n_neg > 0
                          ? csv_field(stats::roc_auc(data.scores, data.labels,
                                                     stats::Orientation::higher_is_positive))
                          : std::string());
        dec_csv.row(row);
      }
    }
  };
  dec_rows("(pooled)", pooled);
  for (const auto& c : conds) dec_rows(c.man->condition_id, harmful_of(c));
  bundle.add("decomposition_auc.csv", dec_csv.str());

  // Non-lexical control channels; only records carrying them participate.
  util::csv_writer ctl_csv;
  ctl_csv.comment(prov);
  ctl_csv.row({"scope", "metric", "n_success", "n_failure", "auc"});
  auto ctl_rows = [&](const std::string& scope, const std::vector<const RecordView*>& views) {
    const std::pair<const char*, std::optional<double> RecordView::*> metrics[] = {
        {"entropy_s0", &RecordView::entropy0},
        {"entropy_mean", &RecordView::entropy_mean},
        {"logit_norm_s0", &RecordView::norm0},
        {"logit_norm_mean", &RecordView::norm_mean}};
    for (const auto& [name, member] : metrics) {
      auto data = gather_scores(views, [&](const RecordView& v) { return v.*member; });
      if (data.n_pos + data.n_neg == 0) continue;
      std::vector<std::string> row = {scope, name, int_field(data.n_pos), int_field(data.n_neg)};
      row.push_back(data.n_pos > 0 && data.n_neg > 0
                        ? csv_field(stats::roc_auc(data.scores, data.labels,
                                                   stats::Orientation::higher_is_positive))
                        : std::string());
      ctl_csv.row(row);
    }
  };
  ctl_rows("(pooled)", pooled);
  for (const auto& c : conds) ctl_rows(c.man->condition_id, harmful_of(c));
  bundle.add("control_auc.csv", ctl_csv.str());
}

void write_drp_pairs(util::bundle_writer& bundle, const std::vector<CondData>& conds,
                     const RunConfig& cfg, const std::string& prov) {
  util::csv_writer csv;
  csv.comment(prov);
  csv.row({"condition_a", "condition_b", "model_a", "model_b", "asr_a", "asr_b", "d_rp",
           "ci_lo", "ci_hi", "ci_level", "b_resamples"});
  for (std::size_t i = 0; i < conds.size(); ++i) {
    for (std::size_t j = i + 1; j < conds.size(); ++j) {
      const CondData& a = conds[i];
      const CondData& b = conds[j];
      if (!a.rp_primary || !b.rp_primary) continue;
      if (std::abs(a.asr - b.asr) * 100.0 > cfg.asr_neighbor_pp) continue;
      double d = calibration::rp_distance(*a.rp_primary, *b.rp_primary);

      stats::StatsConfig sc = cfg.stats;
      sc.seed = rng::mix(cfg.stats.seed,
                         util::fnv1a("drp:" + a.man->condition_id + "|" + b.man->condition_id));
      auto stat = [&a, &b](const std::vector<std::vector<std::size_t>>& idx) -> double {
        try {
          auto sa = resampled(a.sample, idx[0], idx[1]);
          auto sb = resampled(b.sample, idx[2], idx[3]);
          auto ca = calibration::rp_coordinate(
              sa, calibration::compute_anchors(sa, calibration::AnchorMode::condition_all_harmful));
          auto cb = calibration::rp_coordinate(
              sb, calibration::compute_anchors(sb, calibration::AnchorMode::condition_all_harmful));
          return calibration::rp_distance(ca, cb);
        } catch (const error&) {
          return kNaN;
        }
      };
      auto ci = stats::stratified_bootstrap({a.sample.harmful.size(), a.sample.benign.size(),
                                             b.sample.harmful.size(), b.sample.benign.size()},
                                            stat, sc);
      csv.row({a.man->condition_id, b.man->condition_id, a.man->model_id, b.man->model_id,
               csv_field(a.asr), csv_field(b.asr), csv_field(d), csv_field(ci.lo),
               csv_field(ci.hi), csv_field(ci.level), int_field(ci.b_resamples)});
    }
  }
  bundle.add("drp_pairs.csv", csv.str());
}

void write_probe(util::bundle_writer& bundle, const std::vector<CondData>& conds,
                 const std::vector<intervention::HaltRule>& rules, const std::string& prov) {
  std::vector<intervention::ProbeInput> inputs;
  for (const auto& c : conds) {
    auto push = [&](const RecordView& v) {
      intervention::ProbeInput in;
      in.condition_id = c.man->condition_id;
      in.role = v.rec->role;
      in.success = v.success();
      in.s0 = v.summary.s0;
      in.crossing = v.probe_crossing;
      inputs.push_back(std::move(in));
    };
    for (const auto& v : c.harmful) push(v);
    for (const auto& v : c.benign_af) push(v);
    for (const auto& v : c.benign_ff) push(v);
  }

  util::csv_writer csv;
  csv.comment(prov);
  csv.row({"w", "gate", "tau", "condition_id", "n_harmful", "n_halted_harmful", "asr_original",
           "asr_probe", "delta_asr", "n_benign_af", "false_halt_rate_af", "n_benign_ff",
           "false_halt_rate_ff"});
  for (const auto& rule : rules) {
    auto report = intervention::simulate_probe(inputs, rule);
    auto emit = [&](const intervention::ProbeStats& s) {
      csv.row({int_field(rule.w), gate_name(rule.gate),
               rule.gate == intervention::Gate::s0_below_tau ? csv_field(rule.tau)
                                                             : std::string(),
               s.condition_id, int_field(s.n_harmful), int_field(s.n_halted_harmful),
               csv_field(s.asr_original), csv_field(s.asr_probe), csv_field(s.delta_asr),
               int_field(s.n_benign_af), csv_field(s.false_halt_rate_af),
               int_field(s.n_benign_ff), csv_field(s.false_halt_rate_ff)});
    };
    for (const auto& s : report.per_condition) emit(s);
    emit(report.aggregate);
  }
  bundle.add("probe_report.csv", csv.str());
}

void write_learned_baseline(util::bundle_writer& bundle, const std::vector<CondData>& conds,
                            const RunConfig& cfg, const std::string& prov) {
  util::csv_writer csv;
  csv.comment(prov);
  csv.row({"feature_set", "n_records", "n_success", "n_skipped_no_generation", "oof_auc",
           "fold_auc_min", "fold_auc_max", "converged", "note"});
  for (auto set : {temporal::FeatureSet::f5, temporal::FeatureSet::f9, temporal::FeatureSet::f13}) {
    std::vector<std::vector<double>> x;
    std::vector<bool> y;
    int skipped = 0, n_pos = 0;
    for (const auto& c : conds) {
      for (const auto& v : c.harmful) {
        if (v.traj.generation_steps() < 1) {
          ++skipped;
          continue;
        }
        x.push_back(temporal::features(v.summary, v.crossing, set).values);
        y.push_back(v.success());
        if (v.success()) ++n_pos;
      }
    }
    std::vector<std::string> row = {temporal::feature_set_name(set), size_field(x.size()),
                                    int_field(n_pos), int_field(skipped)};
    try {
      stats::StatsConfig sc = cfg.stats;
      sc.seed = rng::mix(cfg.stats.seed,
                         util::fnv1a(std::string("cv:") + temporal::feature_set_name(set)));
      auto cv = stats::logreg_cv(x, y, stats::LogRegConfig{}, sc);
      std::optional<double> fmin, fmax;
      for (double f : cv.fold_auc) {
        if (std::isnan(f)) continue;
        fmin = fmin ? std::min(*fmin, f) : f;
        fmax = fmax ? std::max(*fmax, f) : f;
      }
      row.push_back(csv_field(cv.oof_auc));
      row.push_back(csv_field(fmin));
      row.push_back(csv_field(fmax));
      row.push_back(bool_field(cv.full_fit.converged));
      row.push_back("");
    } catch (const error& e) {
      row.insert(row.end(), 4, std::string());
      row.push_back(e.what());
    }
    csv.row(row);
  }
  bundle.add("learned_baseline.csv", csv.str());
}

void write_icc(util::bundle_writer& bundle, const std::vector<CondData>& conds,
               const std::string& prov) {
  util::csv_writer csv;
  csv.comment(prov);
  csv.row({"condition_id", "metric", "n_prompts", "k_repeats", "icc"});
  for (const auto& c : conds) {
    std::map<std::string, std::vector<const RecordView*>> by_prompt;
    for (const auto& v : c.harmful) by_prompt[v.rec->prompt_id].push_back(&v);
    std::size_t k = 0;
    for (const auto& [p, vs] : by_prompt)
      if (vs.size() >= 2) k = (k == 0) ? vs.size() : std::min(k, vs.size());
    if (k < 2) continue;
    for (auto& [p, vs] : by_prompt)
      std::sort(vs.begin(), vs.end(), [](const RecordView* a, const RecordView* b) {
        return std::tie(a->rec->decoding_config_id, a->rec->record_id) <
               std::tie(b->rec->decoding_config_id, b->rec->record_id);
      });
    std::vector<std::vector<double>> m_s0, m_sbar;
    bool sbar_complete = true;
    for (const auto& [p, vs] : by_prompt) {
      if (vs.size() < k) continue;
      std::vector<double> r0, rb;
      for (std::size_t i = 0; i < k; ++i) {
        r0.push_back(vs[i]->summary.s0);
        if (vs[i]->summary.s_bar)
          rb.push_back(*vs[i]->summary.s_bar);
        else
          sbar_complete = false;
      }
      m_s0.push_back(std::move(r0));
      m_sbar.push_back(std::move(rb));
    }
    if (m_s0.size() < 2) continue;
    try {
      csv.row({c.man->condition_id, "s0", size_field(m_s0.size()), size_field(k),
               csv_field(stats::icc1(m_s0))});
    } catch (const error&) {
    }
    if (sbar_complete) {
      try {
        csv.row({c.man->condition_id, "s_bar", size_field(m_sbar.size()), size_field(k),
                 csv_field(stats::icc1(m_sbar))});
      } catch (const error&) {
      }
    }
  }
  bundle.add("icc_report.csv", csv.str());
}

struct AlignEntry {
  std::string condition_id;
  std::string layer;
  hidden_align::RefusalDirection dir;
  hidden_align::AlignmentMetrics metrics;
  int n_records = 0;
};

// Direction from step-0 states (harmful vs attack-formatted benign), then
// projections of the full sequences correlated against the score trajectory.
std::vector<AlignEntry> compute_alignment(std::vector<CondData>& conds,
                                          const std::vector<std::string>& layer_filter,
                                          int early_window, int max_lag) {
  std::vector<AlignEntry> out;
  for (auto& c : conds) {
    std::set<std::string> layers(layer_filter.begin(), layer_filter.end());
    if (layers.empty()) {
      for (const auto& v : c.harmful)
        for (const auto& [tag, states] : v.rec->hidden_states) layers.insert(tag);
    }
    for (const auto& layer : layers) {
      std::vector<std::vector<double>> h0, b0;
      std::vector<const RecordView*> hv;
      for (const auto& v : c.harmful) {
        auto it = v.rec->hidden_states.find(layer);
        if (it == v.rec->hidden_states.end()) continue;
        hv.push_back(&v);
        h0.push_back(it->second.front());
      }
      for (const auto& v : c.benign_af) {
        auto it = v.rec->hidden_states.find(layer);
        if (it == v.rec->hidden_states.end()) continue;
        b0.push_back(it->second.front());
      }
      if (hv.size() < 2 || b0.empty()) {
        if (!layer_filter.empty())
          c.notes.push_back("alignment." + layer +
                            ": needs >= 2 harmful and >= 1 benign record with this layer");
        continue;
      }
      try {
        auto dir = hidden_align::refusal_direction(c.man->model_id, layer, h0, b0);
        std::vector<std::vector<double>> s_trajs, z_trajs;
        for (const auto* v : hv) {
          s_trajs.push_back(v->traj.s);
          z_trajs.push_back(hidden_align::project(v->rec->hidden_states.at(layer), dir));
        }
        auto metrics =
            hidden_align::alignment_metrics(s_trajs, z_trajs, early_window, max_lag, true);
        out.push_back({c.man->condition_id, layer, std::move(dir), std::move(metrics),
                       static_cast<int>(hv.size())});
      } catch (const error& e) {
        c.notes.push_back("alignment." + layer + ": " + e.what());
      }
    }
  }
  return out;
}

void write_alignment(util::bundle_writer& bundle, const std::vector<AlignEntry>& entries,
                     const std::string& prov, const json& prov_json) {
  util::csv_writer csv;
  csv.comment(prov);
  csv.row({"condition_id", "layer", "n_records", "dim", "mean_abs_rho", "signed_mean_rho",
           "modal_lag", "lag_rho_at_modal", "sign_agreement", "steps_skipped_zero_variance",
           "per_record_mean_abs_rho"});
  json jentries = json::array();
  for (const auto& e : entries) {
    double modal_rho = 0.0;
    auto it = e.metrics.lag_profile.find(e.metrics.modal_lag);
    if (it != e.metrics.lag_profile.end()) modal_rho = it->second;
    csv.row({e.condition_id, e.layer, int_field(e.n_records),
             size_field(e.dir.direction.size()), csv_field(e.metrics.mean_abs_rho),
             csv_field(e.metrics.signed_mean_rho), int_field(e.metrics.modal_lag),
             csv_field(modal_rho), csv_field(e.metrics.sign_agreement),
             int_field(e.metrics.steps_skipped_zero_variance),
             csv_field(e.metrics.per_record_mean_abs_rho)});

    json je;
    je["condition_id"] = e.condition_id;
    je["layer"] = e.layer;
    je["n_records"] = e.n_records;
    je["direction"] = json{{"model_id", e.dir.model_id},
                           {"layer_tag", e.dir.layer_tag},
                           {"n_harmful", e.dir.n_harmful},
                           {"n_benign", e.dir.n_benign},
                           {"vector", e.dir.direction}};
    json rho = json::object();
    for (const auto& [step, r] : e.metrics.rho_by_step) rho[std::to_string(step)] = r;
    json lag = json::object();
    for (const auto& [l, r] : e.metrics.lag_profile) lag[std::to_string(l)] = r;
    je["metrics"] = json{{"rho_by_step", rho},
                         {"mean_abs_rho", e.metrics.mean_abs_rho},
                         {"signed_mean_rho", e.metrics.signed_mean_rho},
                         {"steps_skipped_zero_variance", e.metrics.steps_skipped_zero_variance},
                         {"lag_profile", lag},
                         {"modal_lag", e.metrics.modal_lag},
                         {"sign_agreement", e.metrics.sign_agreement}};
    if (e.metrics.per_record_mean_abs_rho)
      je["metrics"]["per_record_mean_abs_rho"] = *e.metrics.per_record_mean_abs_rho;
    jentries.push_back(je);
  }
  bundle.add("alignment.csv", csv.str());
  json report;
  report["provenance"] = prov_json;
  report["entries"] = jentries;
  bundle.add("alignment.json", report.dump(2) + "\n");
}

void write_plots(util::bundle_writer& bundle, const std::vector<CondData>& conds,
                 const std::string& prov) {
  for (const auto& c : conds) {
    struct Group {
      const char* name;
      std::vector<const RecordView*> views;
    };
    Group groups[4] = {{"success", {}}, {"failed", {}}, {"benign_af", {}}, {"benign_ff", {}}};
    for (const auto& v : c.harmful) groups[v.success() ? 0 : 1].views.push_back(&v);
    for (const auto& v : c.benign_af) groups[2].views.push_back(&v);
    for (const auto& v : c.benign_ff) groups[3].views.push_back(&v);

    std::size_t max_len = 0;
    for (const auto& g : groups)
      for (const auto* v : g.views) max_len = std::max(max_len, v->traj.s.size());

    util::csv_writer csv;
    csv.comment(prov);
    std::vector<std::string> header = {"step"};
    for (const auto& g : groups) {
      header.push_back(std::string("mean_s_") + g.name);
      header.push_back(std::string("n_") + g.name);
    }
    csv.row(header);
    for (std::size_t step = 0; step < max_len; ++step) {
      std::vector<std::string> row = {size_field(step)};
      for (const auto& g : groups) {
        double sum = 0.0;
        int n = 0;
        for (const auto* v : g.views) {
          if (step >= v->traj.s.size() || !v->traj.defined(step)) continue;
          sum += v->traj.s[step];
          ++n;
        }
        row.push_back(n > 0 ? csv_field(sum / n) : std::string());
        row.push_back(int_field(n));
      }
      csv.row(row);
    }
    bundle.add("plots/" + safe_name(c.man->condition_id) + ".csv", csv.str());
  }
}

json methods_flags(const RunConfig& cfg, const std::vector<intervention::HaltRule>& rules) {
  json rules_json = json::array();
  for (const auto& r : rules) rules_json.push_back(rule_to_json(r));
  return json{
      {"score",
       json{{"aggregation", "top_k_mean"},
            {"k_agg", cfg.lms.k_agg},
            {"small_side_policy", "average_entire_side_below_k"},
            {"variant", signal::variant_name(cfg.lms.variant)},
            {"entropy_units", cfg.lms.entropy_bits ? "bits" : "nats"}}},
      {"temporal",
       json{{"spread", "population_std"},
            {"sign", "three_valued"},
            {"sign_reversal_scope", "harmful_records_only"},
            {"prefix_windows", cfg.windows},
            {"crossing_rule", "first_run_of_n_confirm_consecutive_negative_steps"},
            {"n_confirm", cfg.n_confirm},
            {"horizon", cfg.horizon},
            {"censored_rank_score", "horizon_plus_one"}}},
      {"calibration",
       json{{"rp_clipping", "none"},
            {"primary_anchor_mode", "condition_all_harmful"},
            {"anchor_modes", json::array({"condition_all_harmful", "failed_only",
                                          "model_global"})},
            {"degenerate_delta", calibration::kDegenerateDelta},
            {"rank_rp", "mid_rank_cdf_over_pooled_reference"},
            {"distance", "euclidean"}}},
      {"significance",
       json{{"permutation", json{{"side", "one_sided_ge"},
                                 {"exhaustive_estimator", "count_over_c_plus_1"},
                                 {"mc_estimator", "add_one"},
                                 {"nan_statistic", "never_counts"}}},
            {"fdr", json{{"method", "bh_step_up"}, {"q", cfg.stats.q_fdr}}},
            {"bootstrap", json{{"type", "stratified_percentile"},
                               {"b_resamples", cfg.stats.b_resamples},
                               {"ci_level", cfg.stats.ci_level},
                               {"quantile", "linear_interpolation"},
                               {"undefined_resamples", "dropped"}}},
            {"auc", "mann_whitney_midrank"},
            {"asr_neighbor_pp", cfg.asr_neighbor_pp}}},
      {"probe",
       json{{"success_model", "halt_means_refusal"},
            {"n_confirm", 1},
            {"rules", rules_json}}},
      {"keyword_baseline",
       json{{"formula", "(n_refusal - n_compliance) / (n_refusal + n_compliance)"},
            {"no_match", "score_zero_flagged_undefined"}}},
      {"lexicon",
       json{{"variant", cfg.lexicon_variant}, {"expansion", "union_of_phrase_token_ids"}}},
      {"learned_baseline",
       json{{"model", "l2_logistic_regression"},
            {"l2", stats::LogRegConfig{}.l2},
            {"standardized_features", true},
            {"intercept_unpenalized", true},
            {"folds", stats::LogRegConfig{}.folds},
            {"cv", "stratified_round_robin"},
            {"oof_auc", "pooled"}}},
      {"agreement", json{{"icc", "one_way_random_effects"}, {"kappa", "cohen"}}},
      {"alignment",
       json{{"direction", "difference_of_means_unit_norm_step0"},
            {"early_window", cfg.align_early_window},
            {"max_lag", cfg.align_max_lag},
            {"primary_correlation", "cross_record_per_step"}}},
      {"concurrency", "outputs independent of worker count"}};
}

}  // namespace

// ---------------------------------------------------------------------------

signal::LmsConfig lms_config_from_json(const json& j) {
  signal::LmsConfig c;
  c.k_agg = j.value("k_agg", c.k_agg);
  if (j.contains("variant")) c.variant = signal::variant_from_string(j.at("variant"));
  c.entropy_bits = j.value("entropy_bits", c.entropy_bits);
  return c;
}

stats::StatsConfig stats_config_from_json(const json& j) {
  stats::StatsConfig c;
  c.b_resamples = j.value("b_resamples", c.b_resamples);
  c.ci_level = j.value("ci_level", c.ci_level);
  c.q_fdr = j.value("q_fdr", c.q_fdr);
  c.seed = j.value("seed", c.seed);
  return c;
}

intervention::HaltRule halt_rule_from_json(const json& j) {
  intervention::HaltRule r;
  r.w = j.value("w", r.w);
  if (j.contains("gate")) r.gate = gate_from_string(j.at("gate"));
  r.tau = j.value("tau", r.tau);
  return r;
}

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) throw error(errc::invalid_config, "run config must be a JSON object");
  RunConfig c;
  c.dataset_dir = j.value("dataset_dir", std::string());
  c.lexicon_path = j.value("lexicon_path", std::string());
  if (c.dataset_dir.empty() || c.lexicon_path.empty())
    throw error(errc::invalid_config, "run config needs dataset_dir and lexicon_path");
  c.lexicon_variant = j.value("lexicon_variant", c.lexicon_variant);
  if (j.contains("lms")) c.lms = lms_config_from_json(j.at("lms"));
  if (j.contains("windows")) c.windows = j.at("windows").get<std::vector<int>>();
  c.horizon = j.value("horizon", c.horizon);
  c.n_confirm = j.value("n_confirm", c.n_confirm);
  if (j.contains("stats")) c.stats = stats_config_from_json(j.at("stats"));
  if (j.contains("halt_rules"))
    for (const auto& r : j.at("halt_rules")) c.halt_rules.push_back(halt_rule_from_json(r));
  c.asr_neighbor_pp = j.value("asr_neighbor_pp", c.asr_neighbor_pp);
  c.workers = j.value("workers", c.workers);
  if (j.contains("condition_filter"))
    c.condition_filter = j.at("condition_filter").get<std::vector<std::string>>();
  if (j.contains("layer_tags")) c.layer_tags = j.at("layer_tags").get<std::vector<std::string>>();
  c.align_early_window = j.value("align_early_window", c.align_early_window);
  c.align_max_lag = j.value("align_max_lag", c.align_max_lag);
  return c;
}

json run_config_to_json(const RunConfig& cfg) {
  json rules = json::array();
  for (const auto& r : cfg.halt_rules) rules.push_back(rule_to_json(r));
  return json{{"lexicon_variant", cfg.lexicon_variant},
              {"lms", lms_to_json(cfg.lms)},
              {"windows", cfg.windows},
              {"horizon", cfg.horizon},
              {"n_confirm", cfg.n_confirm},
              {"stats", stats_to_json(cfg.stats)},
              {"halt_rules", rules},
              {"asr_neighbor_pp", cfg.asr_neighbor_pp},
              {"condition_filter", cfg.condition_filter},
              {"layer_tags", cfg.layer_tags},
              {"align_early_window", cfg.align_early_window},
              {"align_max_lag", cfg.align_max_lag}};
}

InduceConfig induce_config_from_json(const json& j) {
  if (!j.is_object()) throw error(errc::invalid_config, "config must be a JSON object");
  InduceConfig c;
  c.dataset_dir = j.value("dataset_dir", std::string());
  if (c.dataset_dir.empty()) throw error(errc::invalid_config, "config needs dataset_dir");
  c.slice_by = j.value("slice_by", c.slice_by);
  if (j.contains("induction")) {
    const auto& ij = j.at("induction");
    c.induction.min_count = ij.value("min_count", c.induction.min_count);
    c.induction.alpha = ij.value("alpha", c.induction.alpha);
    c.induction.top_n = ij.value("top_n", c.induction.top_n);
  }
  if (j.contains("stats")) c.stats = stats_config_from_json(j.at("stats"));
  return c;
}

TruncateConfig truncate_config_from_json(const json& j) {
  if (!j.is_object()) throw error(errc::invalid_config, "config must be a JSON object");
  TruncateConfig c;
  c.dataset_dir = j.value("dataset_dir", std::string());
  c.lexicon_path = j.value("lexicon_path", std::string());
  if (c.dataset_dir.empty() || c.lexicon_path.empty())
    throw error(errc::invalid_config, "config needs dataset_dir and lexicon_path");
  if (j.contains("lms")) c.lms = lms_config_from_json(j.at("lms"));
  if (j.contains("k_values")) c.k_values = j.at("k_values").get<std::vector<long>>();
  if (j.contains("condition_filter"))
    c.condition_filter = j.at("condition_filter").get<std::vector<std::string>>();
  return c;
}

ProbeConfig probe_config_from_json(const json& j) {
  if (!j.is_object()) throw error(errc::invalid_config, "config must be a JSON object");
  ProbeConfig c;
  c.dataset_dir = j.value("dataset_dir", std::string());
  c.lexicon_path = j.value("lexicon_path", std::string());
  if (c.dataset_dir.empty() || c.lexicon_path.empty())
    throw error(errc::invalid_config, "config needs dataset_dir and lexicon_path");
  if (j.contains("lms")) c.lms = lms_config_from_json(j.at("lms"));
  c.horizon = j.value("horizon", c.horizon);
  if (j.contains("rules"))
    for (const auto& r : j.at("rules")) c.rules.push_back(halt_rule_from_json(r));
  return c;
}

AlignConfig align_config_from_json(const json& j) {
  if (!j.is_object()) throw error(errc::invalid_config, "config must be a JSON object");
  AlignConfig c;
  c.dataset_dir = j.value("dataset_dir", std::string());
  c.lexicon_path = j.value("lexicon_path", std::string());
  if (c.dataset_dir.empty() || c.lexicon_path.empty())
    throw error(errc::invalid_config, "config needs dataset_dir and lexicon_path");
  if (j.contains("lms")) c.lms = lms_config_from_json(j.at("lms"));
  if (j.contains("layer_tags")) c.layer_tags = j.at("layer_tags").get<std::vector<std::string>>();
  c.early_window = j.value("early_window", c.early_window);
  c.max_lag = j.value("max_lag", c.max_lag);
  return c;
}

std::string provenance_line(const std::string& config_hash, const std::string& dataset_hash,
                            std::uint64_t seed) {
  return "config=" + config_hash + " dataset=" + dataset_hash +
         " seed=" + std::to_string(seed) + " version=" + kVersion;
}

RunResult run_pipeline(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  if (cfg.horizon < 1) throw error(errc::invalid_config, "horizon must be >= 1");
  if (cfg.n_confirm < 1) throw error(errc::invalid_config, "n_confirm must be >= 1");
  auto rules = effective_rules(cfg.halt_rules);
  for (const auto& r : rules) {
    if (r.w < 1) throw error(errc::invalid_config, "halt rule needs w >= 1");
    if (cfg.horizon < r.w)
      throw error(errc::horizon_too_short,
                  "halt rule w = " + std::to_string(r.w) + " exceeds horizon " +
                      std::to_string(cfg.horizon));
  }

  DatasetHandle h = ingest(cfg.dataset_dir);
  lexicon::Lexicon lx_base = lexicon::load_lexicon(cfg.lexicon_path);
  std::string lexicon_hash =
      util::hex64(util::fnv1a(lexicon::lexicon_to_json(lx_base).dump()));
  lexicon::Lexicon lx = lexicon::perturb(lx_base, cfg.lexicon_variant);

  json cfg_doc = run_config_to_json(cfg);
  cfg_doc["lexicon_hash"] = lexicon_hash;
  std::string config_hash = util::hex64(util::fnv1a(cfg_doc.dump()));
  std::string dataset_hash = util::hex64(h.content_hash);
  std::uint64_t seed = cfg.stats.seed;
  std::string prov = provenance_line(config_hash, dataset_hash, seed);
  json prov_json = provenance_json(config_hash, dataset_hash, seed);

  ViewParams params;
  params.lms = cfg.lms;
  params.windows = cfg.windows;
  params.horizon = cfg.horizon;
  params.n_confirm = cfg.n_confirm;
  std::vector<CondData> conds =
      build_views(h, lx, params, cfg.condition_filter, true, cfg.workers);

  {
    std::vector<std::exception_ptr> errors(conds.size());
    std::atomic<std::size_t> next{0};
    auto work = [&]() {
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= conds.size()) return;
        try {
          analyze_condition(conds[i], cfg.stats);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    };
    int n_workers = std::max(1, std::min<int>(cfg.workers, static_cast<int>(conds.size())));
    std::vector<std::thread> pool;
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  // Cross-condition stages: pooled anchors, FDR, annotation.
  std::map<std::string, calibration::ModelPool> pools;
  for (const auto& c : conds) {
    auto& pool = pools[c.man->model_id];
    pool.harmful.insert(pool.harmful.end(), c.sample.harmful.begin(), c.sample.harmful.end());
    pool.benign.insert(pool.benign.end(), c.sample.benign.begin(), c.sample.benign.end());
  }
  for (auto& c : conds) {
    try {
      auto a = calibration::compute_anchors(c.sample, calibration::AnchorMode::model_global,
                                            &pools.at(c.man->model_id));
      c.anchors_global = a;
      c.rp_global = calibration::rp_coordinate(c.sample, a);
    } catch (const error& e) {
      c.notes.push_back(std::string("rp_model_global: ") + e.what());
    }
  }

  std::vector<double> p_values;
  std::vector<std::size_t> p_owner;
  for (std::size_t i = 0; i < conds.size(); ++i) {
    if (conds[i].perm) {
      p_values.push_back(conds[i].perm->p_value);
      p_owner.push_back(i);
    }
  }
  if (!p_values.empty()) {
    auto bh = stats::bh_fdr(p_values, cfg.stats.q_fdr);
    for (std::size_t k = 0; k < p_owner.size(); ++k) {
      CondData& c = conds[p_owner[k]];
      c.p_bh = bh.adjusted[k];
      c.significant = bh.significant[k];
      c.annotation = calibration::annotate(*c.rp_primary, c.perm->p_value, bh.adjusted[k],
                                           cfg.stats.q_fdr);
    }
  }

  auto align_entries =
      compute_alignment(conds, cfg.layer_tags, cfg.align_early_window, cfg.align_max_lag);

  util::bundle_writer bundle;
  write_per_record(bundle, conds, cfg.windows, prov);
  write_condition_report(bundle, conds, prov, prov_json);
  write_auc_tables(bundle, conds, cfg, prov);
  write_drp_pairs(bundle, conds, cfg, prov);
  write_probe(bundle, conds, rules, prov);
  write_learned_baseline(bundle, conds, cfg, prov);
  write_icc(bundle, conds, prov);
  write_plots(bundle, conds, prov);
  bool any_hidden = false;
  for (const auto& c : conds)
    for (const auto& v : c.harmful)
      if (!v.rec->hidden_states.empty()) any_hidden = true;
  if (any_hidden || !align_entries.empty())
    write_alignment(bundle, align_entries, prov, prov_json);

  json methods;
  methods["artifact_version"] = kVersion;
  methods["provenance"] = prov_json;
  methods["config"] = run_config_to_json(cfg);
  methods["lexicon"] = json{{"name", lx_base.name}, {"content_hash", lexicon_hash}};
  methods["flags"] = methods_flags(cfg, rules);
  methods["schema_version"] = h.schema_version;
  methods["n_conditions"] = conds.size();
  bundle.add("methods.json", methods.dump(2) + "\n");

  RunResult result;
  result.out_dir = out_dir;
  result.config_hash = config_hash;
  result.dataset_hash = dataset_hash;
  for (const auto& [name, content] : bundle.files()) result.files.push_back(name);
  bundle.commit(out_dir);
  return result;
}

IngestReport ingest_check(const std::filesystem::path& dataset_dir,
                          const std::string& schema_version) {
  DatasetHandle h = ingest(dataset_dir, schema_version);
  IngestReport rep;
  rep.schema_version = h.schema_version;
  rep.dataset_hash = util::hex64(h.content_hash);
  rep.n_conditions = static_cast<int>(h.conditions.size());
  rep.n_records = static_cast<int>(h.records_by_id.size());
  for (const auto& c : h.conditions) {
    int n_success = 0;
    Tier weakest = Tier::full;
    for (const auto& id : c.harmful_record_ids) {
      const auto& r = h.record(id);
      if (r.success_label && *r.success_label) ++n_success;
      weakest = std::min(weakest, r.tier());
    }
    for (const auto& id : c.benign_attack_formatted_ids)
      weakest = std::min(weakest, h.record(id).tier());
    for (const auto& id : c.benign_format_free_ids)
      weakest = std::min(weakest, h.record(id).tier());
    std::ostringstream line;
    line << c.condition_id << ": " << c.harmful_record_ids.size() << " harmful (" << n_success
         << " success), " << c.benign_attack_formatted_ids.size() << " benign_af, "
         << c.benign_format_free_ids.size() << " benign_ff, weakest tier "
         << tier_name(weakest) << ", tokenizer " << c.tokenizer_id;
    rep.notes.push_back(line.str());
    if (c.harmful_record_ids.empty())
      rep.notes.push_back(c.condition_id + ": warning: no harmful records");
    if (c.benign_attack_formatted_ids.empty())
      rep.notes.push_back(c.condition_id + ": warning: no attack-formatted benign records");
  }
  return rep;
}

void run_induce_lexicon(const InduceConfig& cfg, const std::filesystem::path& out_dir) {
  DatasetHandle h = ingest(cfg.dataset_dir);
  if (cfg.slice_by != "condition" && cfg.slice_by != "model" && cfg.slice_by != "attack")
    throw error(errc::invalid_config, "slice_by must be condition, model or attack");

  json cfg_json{{"slice_by", cfg.slice_by},
                {"induction", json{{"min_count", cfg.induction.min_count},
                                   {"alpha", cfg.induction.alpha},
                                   {"top_n", cfg.induction.top_n}}},
                {"stats", stats_to_json(cfg.stats)}};
  std::string config_hash = util::hex64(util::fnv1a(cfg_json.dump()));
  std::string dataset_hash = util::hex64(h.content_hash);
  std::string prov = provenance_line(config_hash, dataset_hash, cfg.stats.seed);

  std::map<std::string, std::vector<lexicon::LabeledText>> corpora;
  std::map<std::string, lexicon::EvalSlice> slices;
  for (const auto& c : h.conditions) {
    std::string key = cfg.slice_by == "condition" ? c.condition_id
                      : cfg.slice_by == "model"   ? c.model_id
                                                  : c.attack_id;
    for (const auto& id : c.harmful_record_ids) {
      const auto& r = h.record(id);
      if (!r.response_words || !r.success_label) continue;
      corpora[key].push_back({*r.response_words, *r.success_label});
      slices[key].word_lists.push_back(*r.response_words);
      slices[key].success.push_back(*r.success_label);
    }
  }
  if (corpora.empty())
    throw error(errc::invalid_spec, "no harmful records carry response words");

  std::vector<std::string> notes;
  std::map<std::string, lexicon::InducedLexicon> induced;
  for (const auto& [key, corpus] : corpora) {
    try {
      induced[key] = lexicon::induce_log_odds(corpus, cfg.induction);
    } catch (const error& e) {
      notes.push_back(key + ": " + e.what());
    }
  }
  std::map<std::string, lexicon::EvalSlice> eval;
  for (const auto& [key, lx] : induced) eval[key] = slices.at(key);

  util::bundle_writer bundle;
  json out;
  out["provenance"] = provenance_json(config_hash, dataset_hash, cfg.stats.seed);
  out["slice_by"] = cfg.slice_by;
  json jslices = json::object();
  for (const auto& [key, lx] : induced) {
    json js;
    js["refusal_words"] = lx.refusal_words;
    js["compliance_words"] = lx.compliance_words;
    js["n_compliant_tokens"] = lx.n_compliant_tokens;
    js["n_refusal_tokens"] = lx.n_refusal_tokens;
    js["joint_vocabulary"] = lx.joint_vocabulary;
    js["log_odds"] = lx.log_odds;
    js["provenance"] = lx.provenance;
    jslices[key] = js;
  }
  out["slices"] = jslices;
  out["notes"] = notes;
  bundle.add("induced_lexicons.json", out.dump(2) + "\n");

  if (!induced.empty()) {
    auto tm = lexicon::transfer_matrix(induced, eval);
    util::csv_writer csv;
    csv.comment(prov);
    csv.row({"train_slice", "test_slice", "auc", "refusal_jaccard", "compliance_jaccard"});
    for (std::size_t i = 0; i < tm.slice_ids.size(); ++i)
      for (std::size_t j = 0; j < tm.slice_ids.size(); ++j)
        csv.row({tm.slice_ids[i], tm.slice_ids[j], csv_field(tm.auc[i][j]),
                 csv_field(tm.refusal_jaccard[i][j]), csv_field(tm.compliance_jaccard[i][j])});
    bundle.add("transfer_matrix.csv", csv.str());
  }
  bundle.commit(out_dir);
}

void run_truncate_sim(const TruncateConfig& cfg, const std::filesystem::path& out_dir,
                      std::uint64_t seed) {
  DatasetHandle h = ingest(cfg.dataset_dir);
  lexicon::Lexicon lx = lexicon::load_lexicon(cfg.lexicon_path);

  json cfg_json{{"lexicon_hash",
                 util::hex64(util::fnv1a(lexicon::lexicon_to_json(lx).dump()))},
                {"lms", lms_to_json(cfg.lms)},
                {"k_values", cfg.k_values},
                {"condition_filter", cfg.condition_filter}};
  std::string config_hash = util::hex64(util::fnv1a(cfg_json.dump()));
  std::string dataset_hash = util::hex64(h.content_hash);
  std::string prov = provenance_line(config_hash, dataset_hash, seed);

  std::vector<long> ks = cfg.k_values;
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  if (ks.empty()) throw error(errc::invalid_config, "k_values must be non-empty");

  std::vector<const ConditionManifest*> active;
  for (const auto& c : h.conditions)
    if (filter_matches(c.condition_id, cfg.condition_filter)) active.push_back(&c);
  if (active.empty())
    throw error(errc::invalid_config, cfg.condition_filter.empty()
                                          ? "dataset has no conditions"
                                          : "condition filter matched nothing");

  struct Acc {
    std::vector<double> pearson, mae, sign, ref_surv, cmp_surv, defined;
    int n = 0;
  };
  std::map<std::pair<std::string, long>, Acc> acc;
  std::map<long, Acc> pooled;
  int total_full = 0;
  std::map<std::string, int> skipped_by_cond;

  for (const auto* c : active) {
    auto ex = lx.expand(c->tokenizer_id);
    std::vector<const TrajectoryRecord*> all;
    for (auto role :
         {Role::harmful, Role::benign_attack_formatted, Role::benign_format_free}) {
      auto rs = h.records_for(*c, role);
      all.insert(all.end(), rs.begin(), rs.end());
    }
    for (const auto* r : all) {
      if (r->tier() != Tier::full) {
        ++skipped_by_cond[c->condition_id];
        continue;
      }
      ++total_full;
      for (long k : ks) {
        auto [traj, cmp] = signal::simulate_truncation(*r, k, ex, cfg.lms);
        auto add = [&](Acc& a) {
          if (cmp.pearson_r) a.pearson.push_back(*cmp.pearson_r);
          if (cmp.mae) a.mae.push_back(*cmp.mae);
          if (cmp.sign_agreement) a.sign.push_back(*cmp.sign_agreement);
          a.ref_surv.push_back(cmp.refusal_survival);
          a.cmp_surv.push_back(cmp.compliance_survival);
          a.defined.push_back(cmp.defined_step_fraction);
          ++a.n;
        };
        add(acc[{c->condition_id, k}]);
        add(pooled[k]);
      }
    }
  }
  if (total_full == 0) throw error(errc::insufficient_tier, "dataset has no full-tier records");

  util::csv_writer csv;
  csv.comment(prov);
  csv.row({"condition_id", "k_vocab", "n_records", "n_skipped_non_full", "pearson_fisher_z",
           "mae_mean", "sign_agreement_mean", "refusal_survival_mean",
           "compliance_survival_mean", "defined_step_fraction_mean"});
  auto emit = [&](const std::string& cid, long k, const Acc& a, int skipped) {
    std::vector<std::string> row = {cid, std::to_string(k), int_field(a.n), int_field(skipped)};
    row.push_back(a.pearson.empty() ? std::string()
                                    : csv_field(stats::fisher_z_mean(a.pearson)));
    row.push_back(a.mae.empty() ? std::string() : csv_field(stats::mean(a.mae)));
    row.push_back(a.sign.empty() ? std::string() : csv_field(stats::mean(a.sign)));
    row.push_back(csv_field(stats::mean(a.ref_surv)));
    row.push_back(csv_field(stats::mean(a.cmp_surv)));
    row.push_back(csv_field(stats::mean(a.defined)));
    csv.row(row);
  };
  for (const auto* c : active) {
    int skipped = skipped_by_cond.count(c->condition_id) ? skipped_by_cond[c->condition_id] : 0;
    for (long k : ks) {
      auto it = acc.find({c->condition_id, k});
      if (it != acc.end()) emit(c->condition_id, k, it->second, skipped);
    }
  }
  for (long k : ks) emit("(all)", k, pooled[k], 0);

  util::bundle_writer bundle;
  bundle.add("truncation_report.csv", csv.str());
  bundle.commit(out_dir);
}

void run_probe(const ProbeConfig& cfg, const std::filesystem::path& out_dir,
               std::uint64_t seed) {
  DatasetHandle h = ingest(cfg.dataset_dir);
  lexicon::Lexicon lx = lexicon::load_lexicon(cfg.lexicon_path);
  auto rules = effective_rules(cfg.rules);
  for (const auto& r : rules) {
    if (r.w < 1) throw error(errc::invalid_config, "halt rule needs w >= 1");
    if (cfg.horizon < r.w)
      throw error(errc::horizon_too_short,
                  "halt rule w = " + std::to_string(r.w) + " exceeds horizon " +
                      std::to_string(cfg.horizon));
  }

  json rules_json = json::array();
  for (const auto& r : rules) rules_json.push_back(rule_to_json(r));
  json cfg_json{{"lexicon_hash",
                 util::hex64(util::fnv1a(lexicon::lexicon_to_json(lx).dump()))},
                {"lms", lms_to_json(cfg.lms)},
                {"horizon", cfg.horizon},
                {"rules", rules_json}};
  std::string config_hash = util::hex64(util::fnv1a(cfg_json.dump()));
  std::string dataset_hash = util::hex64(h.content_hash);
  std::string prov = provenance_line(config_hash, dataset_hash, seed);

  ViewParams params;
  params.lms = cfg.lms;
  params.horizon = cfg.horizon;
  std::vector<CondData> conds = build_views(h, lx, params, {}, false, 1);

  util::bundle_writer bundle;
  write_probe(bundle, conds, rules, prov);
  bundle.commit(out_dir);
}

void run_align(const AlignConfig& cfg, const std::filesystem::path& out_dir,
               std::uint64_t seed) {
  DatasetHandle h = ingest(cfg.dataset_dir);
  lexicon::Lexicon lx = lexicon::load_lexicon(cfg.lexicon_path);

  json cfg_json{{"lexicon_hash",
                 util::hex64(util::fnv1a(lexicon::lexicon_to_json(lx).dump()))},
                {"lms", lms_to_json(cfg.lms)},
                {"layer_tags", cfg.layer_tags},
                {"early_window", cfg.early_window},
                {"max_lag", cfg.max_lag}};
  std::string config_hash = util::hex64(util::fnv1a(cfg_json.dump()));
  std::string dataset_hash = util::hex64(h.content_hash);
  std::string prov = provenance_line(config_hash, dataset_hash, seed);

  ViewParams params;
  params.lms = cfg.lms;
  std::vector<CondData> conds = build_views(h, lx, params, {}, false, 1);
  auto entries = compute_alignment(conds, cfg.layer_tags, cfg.early_window, cfg.max_lag);
  if (entries.empty())
    throw error(errc::invalid_spec,
                "no condition provided hidden states usable for alignment");

  util::bundle_writer bundle;
  write_alignment(bundle, entries, prov,
                  provenance_json(config_hash, dataset_hash, seed));
  bundle.commit(out_dir);
}

}  // namespace lmdiag::pipeline
