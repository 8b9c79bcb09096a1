#include "lmdiag/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "lmdiag/rng.hpp"
#include "lmdiag/util.hpp"

namespace lmdiag::synthetic {

namespace {

using nlohmann::json;

// Token IDs the slice payload writes to; the shipped "toy" tokenizer map in
// the default lexicon points at the same IDs.
const std::vector<int> kToyRefusalIds = {1, 2, 3, 4, 5, 6};
const std::vector<int> kToyComplianceIds = {11, 12, 13, 14, 15, 16};

const std::vector<std::string> kComplianceWords = {
    "sure",  "here",  "is",   "the",  "guide", "first", "mix", "then",
    "apply", "steps", "next", "heat", "you",   "can",   "use", "simple"};
const std::vector<std::string> kRefusalWords = {
    "sorry",  "i",      "cannot", "assist", "with",    "that",     "request", "this",
    "policy", "against", "unable", "to",    "provide", "guidance", "harmful", "illegal"};
const std::vector<std::string> kNeutralWords = {
    "the", "report", "covers", "several", "points", "about", "data",
    "and", "methods", "used",  "in",      "this",   "note",  "today"};

struct DrawnShape {
  double s0 = 0.0;
  std::vector<double> s;  // generation steps 1..T
  bool censored = true;
  int clamps = 0;
};

DrawnShape draw_shape(rng::stream& rs, const ClassParams& p, int t_steps) {
  DrawnShape out;
  out.s0 = rs.normal(p.s0_mean, p.s0_sd);
  if (t_steps == 0) return out;
  double m = rs.normal(p.sbar_mean, p.sbar_sd);
  bool censored = rs.uniform01() < p.crossing.censor_prob;
  if (censored) {
    double level = m;
    if (level <= 0.0) {
      level = 0.05;
      ++out.clamps;
    }
    out.s.assign(static_cast<std::size_t>(t_steps), level);
    out.censored = true;
    return out;
  }
  int lo = std::clamp(p.crossing.min_step, 1, t_steps);
  int hi = std::clamp(p.crossing.max_step, lo, t_steps);
  int c = rs.uniform_int(lo, hi);
  out.censored = false;
  double t = static_cast<double>(t_steps);
  double a = 1.0, b;
  if (c == 1) {
    // Every step negative; the mean must be negative too.
    if (m >= 0.0) {
      m = -0.05;
      ++out.clamps;
    }
    b = -m;
  } else {
    double pre = static_cast<double>(c - 1);
    double post = t - pre;
    b = (pre * a - m * t) / post;
    if (b <= 0.0) {
      // Raise the pre-crossing plateau until the post level can stay negative.
      b = 0.5;
      a = (m * t + b * post) / pre;
    }
  }
  out.s.reserve(static_cast<std::size_t>(t_steps));
  for (int step = 1; step <= t_steps; ++step) out.s.push_back(step < c ? a : -b);
  return out;
}

std::vector<std::string> draw_words(rng::stream& rs, const std::vector<std::string>& pool,
                                    const std::vector<std::string>& mix_pool, double mix) {
  std::size_t n = 12 + static_cast<std::size_t>(rs.bounded(8));
  std::vector<std::string> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& src = (mix > 0.0 && rs.uniform01() < mix) ? mix_pool : pool;
    out.push_back(src[static_cast<std::size_t>(rs.bounded(src.size()))]);
  }
  return out;
}

CrossingDist crossing_from_json(const json& j) {
  CrossingDist c;
  c.min_step = j.value("min_step", c.min_step);
  c.max_step = j.value("max_step", c.max_step);
  c.censor_prob = j.value("censor_prob", c.censor_prob);
  return c;
}

json crossing_to_json(const CrossingDist& c) {
  return json{{"min_step", c.min_step}, {"max_step", c.max_step}, {"censor_prob", c.censor_prob}};
}

ClassParams class_from_json(const json& j) {
  ClassParams p;
  p.s0_mean = j.value("s0_mean", p.s0_mean);
  p.s0_sd = j.value("s0_sd", p.s0_sd);
  p.sbar_mean = j.value("sbar_mean", p.sbar_mean);
  p.sbar_sd = j.value("sbar_sd", p.sbar_sd);
  if (j.contains("crossing")) p.crossing = crossing_from_json(j.at("crossing"));
  return p;
}

json class_to_json(const ClassParams& p) {
  return json{{"s0_mean", p.s0_mean},
              {"s0_sd", p.s0_sd},
              {"sbar_mean", p.sbar_mean},
              {"sbar_sd", p.sbar_sd},
              {"crossing", crossing_to_json(p.crossing)}};
}

void check_class(const ClassParams& p, const std::string& where) {
  if (p.s0_sd < 0.0 || p.sbar_sd < 0.0)
    throw error(errc::invalid_spec, where + ": negative spread");
  if (p.crossing.censor_prob < 0.0 || p.crossing.censor_prob > 1.0)
    throw error(errc::invalid_spec, where + ": censor_prob outside [0, 1]");
  if (p.crossing.min_step < 1 || p.crossing.max_step < p.crossing.min_step)
    throw error(errc::invalid_spec, where + ": bad crossing range");
}

}  // namespace

double solve_success_mean(double rp, double asr, double failed_mean, double benign_mean) {
  double denom = (1.0 - asr) + rp * asr;
  if (std::abs(denom) < 1e-12)
    throw error(errc::invalid_spec, "relative position unreachable at this attack success rate");
  return (rp * benign_mean + (1.0 - asr) * failed_mean * (1.0 - rp)) / denom;
}

DatasetSpec spec_from_json(const json& j) {
  DatasetSpec spec;
  if (!j.is_object() || !j.contains("conditions") || !j.at("conditions").is_array())
    throw error(errc::invalid_spec, "dataset spec needs a conditions array");
  spec.seed = j.value("seed", 0ull);
  spec.tokenizer_id = j.value("tokenizer_id", spec.tokenizer_id);
  spec.vocabulary_size = j.value("vocabulary_size", spec.vocabulary_size);
  spec.payload = j.value("payload", spec.payload);
  spec.emit_words = j.value("emit_words", spec.emit_words);
  spec.emit_hidden = j.value("emit_hidden", spec.emit_hidden);
  spec.hidden_dim = j.value("hidden_dim", spec.hidden_dim);
  spec.hidden_noise = j.value("hidden_noise", spec.hidden_noise);
  spec.hidden_layer_tag = j.value("hidden_layer_tag", spec.hidden_layer_tag);
  for (const auto& cj : j.at("conditions")) {
    ConditionSpec c;
    c.condition_id = cj.value("condition_id", std::string());
    c.model_id = cj.value("model_id", std::string());
    c.attack_id = cj.value("attack_id", std::string());
    c.n_harmful = cj.value("n_harmful", 0);
    c.n_benign_af = cj.value("n_benign_af", 0);
    c.n_benign_ff = cj.value("n_benign_ff", 0);
    c.target_asr = cj.value("target_asr", 0.0);
    c.t_steps = cj.value("t_steps", c.t_steps);
    c.prompt_pool = cj.value("prompt_pool", c.prompt_pool);
    if (cj.contains("success")) c.success = class_from_json(cj.at("success"));
    if (cj.contains("failure")) c.failure = class_from_json(cj.at("failure"));
    if (cj.contains("benign_af")) c.benign_af = class_from_json(cj.at("benign_af"));
    if (cj.contains("benign_ff")) c.benign_ff = class_from_json(cj.at("benign_ff"));
    spec.conditions.push_back(std::move(c));
  }
  return spec;
}

json spec_to_json(const DatasetSpec& spec) {
  json j;
  j["seed"] = spec.seed;
  j["tokenizer_id"] = spec.tokenizer_id;
  j["vocabulary_size"] = spec.vocabulary_size;
  j["payload"] = spec.payload;
  j["emit_words"] = spec.emit_words;
  j["emit_hidden"] = spec.emit_hidden;
  j["hidden_dim"] = spec.hidden_dim;
  j["hidden_noise"] = spec.hidden_noise;
  j["hidden_layer_tag"] = spec.hidden_layer_tag;
  json cs = json::array();
  for (const auto& c : spec.conditions) {
    json cj;
    cj["condition_id"] = c.condition_id;
    cj["model_id"] = c.model_id;
    cj["attack_id"] = c.attack_id;
    cj["n_harmful"] = c.n_harmful;
    cj["n_benign_af"] = c.n_benign_af;
    cj["n_benign_ff"] = c.n_benign_ff;
    cj["target_asr"] = c.target_asr;
    cj["t_steps"] = c.t_steps;
    cj["prompt_pool"] = c.prompt_pool;
    cj["success"] = class_to_json(c.success);
    cj["failure"] = class_to_json(c.failure);
    cj["benign_af"] = class_to_json(c.benign_af);
    cj["benign_ff"] = class_to_json(c.benign_ff);
    cs.push_back(cj);
  }
  j["conditions"] = cs;
  return j;
}

DatasetHandle generate(const DatasetSpec& spec) {
  if (spec.conditions.empty()) throw error(errc::invalid_spec, "spec lists no conditions");
  if (spec.payload != "precomputed" && spec.payload != "slice" && spec.payload != "full")
    throw error(errc::invalid_spec, "payload must be precomputed, slice or full");
  if (spec.payload != "precomputed" && spec.vocabulary_size < 17)
    throw error(errc::invalid_spec, spec.payload + " payload needs vocabulary_size >= 17");
  if (spec.vocabulary_size < 1) throw error(errc::invalid_spec, "vocabulary_size must be positive");
  if (spec.emit_hidden && spec.hidden_dim < 1)
    throw error(errc::invalid_spec, "hidden_dim must be positive");

  DatasetHandle h;
  h.schema_version = kSchemaVersion;

  for (const auto& c : spec.conditions) {
    if (c.condition_id.empty() || c.model_id.empty() || c.attack_id.empty())
      throw error(errc::invalid_spec, "condition needs condition_id, model_id, attack_id");
    if (c.n_harmful < 0 || c.n_benign_af < 0 || c.n_benign_ff < 0 || c.t_steps < 0 ||
        c.prompt_pool < 0)
      throw error(errc::invalid_spec, c.condition_id + ": negative size");
    if (c.target_asr < 0.0 || c.target_asr > 1.0)
      throw error(errc::invalid_spec, c.condition_id + ": target_asr outside [0, 1]");
    check_class(c.success, c.condition_id + ".success");
    check_class(c.failure, c.condition_id + ".failure");
    check_class(c.benign_af, c.condition_id + ".benign_af");
    check_class(c.benign_ff, c.condition_id + ".benign_ff");

    ConditionManifest man;
    man.condition_id = c.condition_id;
    man.model_id = c.model_id;
    man.attack_id = c.attack_id;
    man.tokenizer_id = spec.tokenizer_id;
    man.vocabulary_size = spec.vocabulary_size;
    man.records_file = c.condition_id + ".jsonl";

    auto rs = rng::stream::substream(spec.seed, util::fnv1a(c.condition_id));

    int n_success = static_cast<int>(std::lround(c.target_asr * c.n_harmful));
    std::vector<char> success(static_cast<std::size_t>(c.n_harmful), 0);
    for (int i = 0; i < n_success; ++i) success[static_cast<std::size_t>(i)] = 1;
    rs.shuffle(success);

    auto make_record = [&](const std::string& rid, Role role, std::optional<bool> label,
                           const ClassParams& params, int prompt_index) {
      TrajectoryRecord r;
      r.record_id = rid;
      r.model_id = c.model_id;
      r.attack_id = c.attack_id;
      r.role = role;
      r.success_label = label;
      int pi = c.prompt_pool > 0 ? prompt_index % c.prompt_pool : prompt_index;
      r.prompt_id = "p" + std::to_string(pi);
      r.decoding_config_id = "greedy";
      r.response_token_count = c.t_steps;

      DrawnShape shape = draw_shape(rs, params, c.t_steps);
      std::vector<double> s_all;
      s_all.push_back(shape.s0);
      s_all.insert(s_all.end(), shape.s.begin(), shape.s.end());

      for (int t = 0; t <= c.t_steps; ++t) {
        StepObservation obs;
        obs.step_index = t;
        double s = s_all[static_cast<std::size_t>(t)];
        double mu_cmp = 1.0 + s / 2.0;
        double mu_ref = 1.0 - s / 2.0;
        if (spec.payload == "precomputed") {
          PrecomputedStep ps;
          ps.s = mu_cmp - mu_ref;  // exact by construction
          ps.mu_cmp = mu_cmp;
          ps.mu_ref = mu_ref;
          obs.payload = ps;
        } else if (spec.payload == "slice") {
          LexiconSlice slice;
          for (int id : kToyRefusalIds) slice.logits[id] = mu_ref;
          for (int id : kToyComplianceIds) slice.logits[id] = mu_cmp;
          obs.payload = std::move(slice);
        } else {
          FullLogits fl;
          fl.logits.resize(static_cast<std::size_t>(spec.vocabulary_size));
          for (auto& x : fl.logits) x = rs.normal(-1.0, 0.7);
          for (int id : kToyRefusalIds) fl.logits[static_cast<std::size_t>(id)] = mu_ref;
          for (int id : kToyComplianceIds) fl.logits[static_cast<std::size_t>(id)] = mu_cmp;
          obs.payload = std::move(fl);
        }
        r.steps.push_back(std::move(obs));
      }

      if (spec.emit_words) {
        bool compliant = role == Role::harmful ? (label && *label) : false;
        if (role == Role::harmful) {
          r.response_words = draw_words(rs, compliant ? kComplianceWords : kRefusalWords,
                                        compliant ? kRefusalWords : kComplianceWords, 0.1);
        } else {
          r.response_words = draw_words(rs, kNeutralWords, kComplianceWords, 0.3);
        }
      }

      if (spec.emit_hidden) {
        std::vector<std::vector<double>> states;
        states.reserve(s_all.size());
        for (double s : s_all) {
          std::vector<double> v(static_cast<std::size_t>(spec.hidden_dim));
          for (auto& x : v) x = rs.normal(0.0, spec.hidden_noise);
          v[0] += -s;  // anti-aligned with the score by construction
          states.push_back(std::move(v));
        }
        r.hidden_states[spec.hidden_layer_tag] = std::move(states);
      }
      return r;
    };

    for (int i = 0; i < c.n_harmful; ++i) {
      bool ok = success[static_cast<std::size_t>(i)] != 0;
      const ClassParams& params = ok ? c.success : c.failure;
      std::string rid = c.condition_id + "-h" + std::to_string(i);
      man.harmful_record_ids.push_back(rid);
      h.records_by_id.emplace(rid, make_record(rid, Role::harmful, ok, params, i));
    }
    for (int i = 0; i < c.n_benign_af; ++i) {
      std::string rid = c.condition_id + "-baf" + std::to_string(i);
      man.benign_attack_formatted_ids.push_back(rid);
      h.records_by_id.emplace(
          rid, make_record(rid, Role::benign_attack_formatted, std::nullopt, c.benign_af, i));
    }
    for (int i = 0; i < c.n_benign_ff; ++i) {
      std::string rid = c.condition_id + "-bff" + std::to_string(i);
      man.benign_format_free_ids.push_back(rid);
      h.records_by_id.emplace(
          rid, make_record(rid, Role::benign_format_free, std::nullopt, c.benign_ff, i));
    }
    std::sort(man.harmful_record_ids.begin(), man.harmful_record_ids.end());
    std::sort(man.benign_attack_formatted_ids.begin(), man.benign_attack_formatted_ids.end());
    std::sort(man.benign_format_free_ids.begin(), man.benign_format_free_ids.end());
    h.conditions.push_back(std::move(man));
  }
  std::sort(h.conditions.begin(), h.conditions.end(),
            [](const auto& a, const auto& b) { return a.condition_id < b.condition_id; });
  for (std::size_t i = 1; i < h.conditions.size(); ++i)
    if (h.conditions[i].condition_id == h.conditions[i - 1].condition_id)
      throw error(errc::invalid_spec, "duplicate condition_id " + h.conditions[i].condition_id);
  return h;
}

void generate_to_dir(const DatasetSpec& spec, const std::filesystem::path& dir) {
  DatasetHandle h = generate(spec);
  serialize(h, dir);

  // Realized per-class moments so tests can assert against what was actually
  // sampled rather than the asymptotic targets.
  json truth;
  truth["seed"] = spec.seed;
  json by_cond = json::object();
  auto margin_at = [](const TrajectoryRecord& r, std::size_t t) {
    const auto& p = r.steps[t].payload;
    if (std::holds_alternative<PrecomputedStep>(p)) {
      const auto& ps = std::get<PrecomputedStep>(p);
      return ps.mu_cmp - ps.mu_ref;
    }
    // Slice and full payloads write one shared value per side, so any
    // representative pair recovers the exact margin.
    if (std::holds_alternative<LexiconSlice>(p)) {
      const auto& sl = std::get<LexiconSlice>(p);
      return sl.logits.at(kToyComplianceIds[0]) - sl.logits.at(kToyRefusalIds[0]);
    }
    const auto& fl = std::get<FullLogits>(p);
    return fl.logits[static_cast<std::size_t>(kToyComplianceIds[0])] -
           fl.logits[static_cast<std::size_t>(kToyRefusalIds[0])];
  };
  for (const auto& c : h.conditions) {
    json cc;
    auto acc = [&](const std::vector<std::string>& ids, auto pred) {
      double s0_sum = 0.0, sbar_sum = 0.0;
      int n = 0;
      for (const auto& id : ids) {
        const auto& r = h.record(id);
        if (!pred(r)) continue;
        s0_sum += margin_at(r, 0);
        double acc_s = 0.0;
        for (std::size_t t = 1; t < r.steps.size(); ++t) acc_s += margin_at(r, t);
        if (r.steps.size() > 1) sbar_sum += acc_s / static_cast<double>(r.steps.size() - 1);
        ++n;
      }
      json side;
      side["n"] = n;
      if (n > 0) {
        side["s0_mean"] = s0_sum / n;
        side["sbar_mean"] = sbar_sum / n;
      }
      return side;
    };
    cc["success"] = acc(c.harmful_record_ids,
                        [](const TrajectoryRecord& r) { return r.success_label == true; });
    cc["failure"] = acc(c.harmful_record_ids,
                        [](const TrajectoryRecord& r) { return r.success_label == false; });
    cc["benign_af"] =
        acc(c.benign_attack_formatted_ids, [](const TrajectoryRecord&) { return true; });
    cc["benign_ff"] =
        acc(c.benign_format_free_ids, [](const TrajectoryRecord&) { return true; });
    by_cond[c.condition_id] = cc;
  }
  truth["conditions"] = by_cond;
  util::spit(dir / "ground_truth.json", truth.dump(2) + "\n");
}

}  // namespace lmdiag::synthetic
