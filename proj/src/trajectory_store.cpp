#include "lmdiag/trajectory_store.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <memory>
#include <set>
#include <sstream>

#include "lmdiag/util.hpp"

namespace lmdiag {

namespace {

using nlohmann::json;

[[noreturn]] void malformed(const std::string& where, const std::string& reason) {
  throw error(errc::malformed_record, where + ": " + reason);
}

double finite_number(const json& j, const std::string& where, const char* field) {
  if (!j.is_number()) malformed(where, std::string(field) + " is not a number");
  double v = j.get<double>();
  if (!std::isfinite(v)) malformed(where, std::string(field) + " is not finite");
  return v;
}

std::string required_string(const json& j, const std::string& where, const char* field) {
  auto it = j.find(field);
  if (it == j.end() || !it->is_string())
    malformed(where, std::string("missing string field ") + field);
  return it->get<std::string>();
}

const std::set<std::string>& record_keys() {
  static const std::set<std::string> keys = {
      "record_id", "model_id", "attack_id", "role", "success_label",
      "prompt_id", "decoding_config_id", "response_token_count",
      "steps", "response_words", "hidden_states"};
  return keys;
}

const std::set<std::string>& condition_keys() {
  static const std::set<std::string> keys = {
      "condition_id", "model_id", "attack_id", "tokenizer_id", "vocabulary_size",
      "records_file", "harmful_record_ids", "benign_attack_formatted_ids",
      "benign_format_free_ids"};
  return keys;
}

}  // namespace

const char* role_name(Role r) {
  switch (r) {
    case Role::harmful: return "harmful";
    case Role::benign_attack_formatted: return "benign_attack_formatted";
    case Role::benign_format_free: return "benign_format_free";
  }
  return "?";
}

Role role_from_string(const std::string& s) {
  if (s == "harmful") return Role::harmful;
  if (s == "benign_attack_formatted") return Role::benign_attack_formatted;
  if (s == "benign_format_free") return Role::benign_format_free;
  throw error(errc::malformed_record, "unknown role: " + s);
}

const char* tier_name(Tier t) {
  switch (t) {
    case Tier::full: return "full";
    case Tier::slice: return "slice";
    case Tier::precomputed: return "precomputed";
  }
  return "?";
}

Tier TrajectoryRecord::tier() const {
  Tier t = Tier::full;
  for (const auto& s : steps) t = std::min(t, s.tier());
  return t;
}

TrajectoryRecord record_from_json(const json& j, const std::string& where) {
  if (!j.is_object()) malformed(where, "record is not a JSON object");
  TrajectoryRecord r;
  r.record_id = required_string(j, where, "record_id");
  r.model_id = required_string(j, where, "model_id");
  r.attack_id = required_string(j, where, "attack_id");
  try {
    r.role = role_from_string(required_string(j, where, "role"));
  } catch (const error& e) {
    malformed(where, e.what());
  }
  r.prompt_id = required_string(j, where, "prompt_id");
  r.decoding_config_id = required_string(j, where, "decoding_config_id");

  if (auto it = j.find("success_label"); it != j.end() && !it->is_null()) {
    if (!it->is_boolean()) malformed(where, "success_label must be boolean");
    r.success_label = it->get<bool>();
  }

  auto tc = j.find("response_token_count");
  if (tc == j.end() || !tc->is_number_integer())
    malformed(where, "missing integer field response_token_count");
  r.response_token_count = tc->get<int>();
  if (r.response_token_count < 0) malformed(where, "response_token_count < 0");

  auto st = j.find("steps");
  if (st == j.end() || !st->is_array() || st->empty())
    malformed(where, "steps must be a non-empty array");
  int idx = 0;
  for (const auto& sj : *st) {
    std::string sw = where + " step " + std::to_string(idx);
    if (!sj.is_object()) malformed(sw, "step is not an object");
    StepObservation obs;
    auto si = sj.find("step_index");
    if (si == sj.end() || !si->is_number_integer()) malformed(sw, "missing step_index");
    obs.step_index = si->get<int>();
    int payloads = static_cast<int>(sj.contains("full_logits")) +
                   static_cast<int>(sj.contains("lexicon_slice")) +
                   static_cast<int>(sj.contains("precomputed"));
    if (payloads != 1) malformed(sw, "step must carry exactly one payload");
    if (auto p = sj.find("full_logits"); p != sj.end()) {
      if (!p->is_array()) malformed(sw, "full_logits must be an array");
      FullLogits fl;
      fl.logits.reserve(p->size());
      for (const auto& v : *p) fl.logits.push_back(finite_number(v, sw, "logit"));
      obs.payload = std::move(fl);
    } else if (auto q = sj.find("lexicon_slice"); q != sj.end()) {
      if (!q->is_object()) malformed(sw, "lexicon_slice must be an object");
      LexiconSlice ls;
      for (const auto& [k, v] : q->items()) {
        int id;
        try {
          std::size_t pos = 0;
          id = std::stoi(k, &pos);
          if (pos != k.size()) throw std::invalid_argument(k);
        } catch (const std::exception&) {
          malformed(sw, "lexicon_slice key is not an integer token ID: " + k);
        }
        if (id < 0) malformed(sw, "negative token ID in lexicon_slice");
        ls.logits[id] = finite_number(v, sw, "slice logit");
      }
      obs.payload = std::move(ls);
    } else {
      const auto& pc = sj.at("precomputed");
      if (!pc.is_object()) malformed(sw, "precomputed must be an object");
      PrecomputedStep ps;
      if (!pc.contains("s") || !pc.contains("mu_cmp") || !pc.contains("mu_ref"))
        malformed(sw, "precomputed needs s, mu_cmp, mu_ref");
      ps.s = finite_number(pc.at("s"), sw, "s");
      ps.mu_cmp = finite_number(pc.at("mu_cmp"), sw, "mu_cmp");
      ps.mu_ref = finite_number(pc.at("mu_ref"), sw, "mu_ref");
      if (auto e = pc.find("entropy"); e != pc.end() && !e->is_null())
        ps.entropy = finite_number(*e, sw, "entropy");
      if (auto n = pc.find("logit_norm"); n != pc.end() && !n->is_null())
        ps.logit_norm = finite_number(*n, sw, "logit_norm");
      obs.payload = ps;
    }
    r.steps.push_back(std::move(obs));
    ++idx;
  }

  if (auto it = j.find("response_words"); it != j.end() && !it->is_null()) {
    if (!it->is_array()) malformed(where, "response_words must be an array");
    std::vector<std::string> words;
    words.reserve(it->size());
    for (const auto& w : *it) {
      if (!w.is_string()) malformed(where, "response_words entries must be strings");
      words.push_back(w.get<std::string>());
    }
    r.response_words = std::move(words);
  }

  if (auto it = j.find("hidden_states"); it != j.end() && !it->is_null()) {
    if (!it->is_object()) malformed(where, "hidden_states must be an object");
    for (const auto& [tag, arr] : it->items()) {
      if (!arr.is_array()) malformed(where, "hidden_states." + tag + " must be an array");
      std::vector<std::vector<double>> vs;
      vs.reserve(arr.size());
      for (const auto& vec : arr) {
        if (!vec.is_array()) malformed(where, "hidden state entries must be arrays");
        std::vector<double> v;
        v.reserve(vec.size());
        for (const auto& x : vec) v.push_back(finite_number(x, where, "hidden state"));
        vs.push_back(std::move(v));
      }
      r.hidden_states[tag] = std::move(vs);
    }
  }

  for (const auto& [k, v] : j.items())
    if (!record_keys().count(k)) r.extras[k] = v;

  return r;
}

json record_to_json(const TrajectoryRecord& r) {
  json j = r.extras.is_object() ? r.extras : json::object();
  j["record_id"] = r.record_id;
  j["model_id"] = r.model_id;
  j["attack_id"] = r.attack_id;
  j["role"] = role_name(r.role);
  if (r.success_label) j["success_label"] = *r.success_label;
  j["prompt_id"] = r.prompt_id;
  j["decoding_config_id"] = r.decoding_config_id;
  j["response_token_count"] = r.response_token_count;
  json steps = json::array();
  for (const auto& s : r.steps) {
    json sj;
    sj["step_index"] = s.step_index;
    if (const auto* fl = std::get_if<FullLogits>(&s.payload)) {
      sj["full_logits"] = fl->logits;
    } else if (const auto* ls = std::get_if<LexiconSlice>(&s.payload)) {
      json o = json::object();
      for (const auto& [id, v] : ls->logits) o[std::to_string(id)] = v;
      sj["lexicon_slice"] = o;
    } else {
      const auto& ps = std::get<PrecomputedStep>(s.payload);
      json o;
      o["s"] = ps.s;
      o["mu_cmp"] = ps.mu_cmp;
      o["mu_ref"] = ps.mu_ref;
      if (ps.entropy) o["entropy"] = *ps.entropy;
      if (ps.logit_norm) o["logit_norm"] = *ps.logit_norm;
      sj["precomputed"] = o;
    }
    steps.push_back(sj);
  }
  j["steps"] = steps;
  if (r.response_words) j["response_words"] = *r.response_words;
  if (!r.hidden_states.empty()) {
    json hs = json::object();
    for (const auto& [tag, vs] : r.hidden_states) hs[tag] = vs;
    j["hidden_states"] = hs;
  }
  return j;
}

ConditionManifest condition_from_json(const json& j, const std::string& where) {
  if (!j.is_object()) malformed(where, "condition is not a JSON object");
  ConditionManifest c;
  c.condition_id = required_string(j, where, "condition_id");
  c.model_id = required_string(j, where, "model_id");
  c.attack_id = required_string(j, where, "attack_id");
  c.tokenizer_id = required_string(j, where, "tokenizer_id");
  c.records_file = required_string(j, where, "records_file");
  auto vs = j.find("vocabulary_size");
  if (vs == j.end() || !vs->is_number_integer())
    malformed(where, "missing integer field vocabulary_size");
  c.vocabulary_size = vs->get<long>();
  if (c.vocabulary_size <= 0) malformed(where, "vocabulary_size must be positive");
  auto read_ids = [&](const char* field, std::vector<std::string>& out) {
    auto it = j.find(field);
    if (it == j.end() || !it->is_array())
      malformed(where, std::string("missing array field ") + field);
    for (const auto& v : *it) {
      if (!v.is_string()) malformed(where, std::string(field) + " entries must be strings");
      out.push_back(v.get<std::string>());
    }
    std::sort(out.begin(), out.end());
  };
  read_ids("harmful_record_ids", c.harmful_record_ids);
  read_ids("benign_attack_formatted_ids", c.benign_attack_formatted_ids);
  read_ids("benign_format_free_ids", c.benign_format_free_ids);
  for (const auto& [k, v] : j.items())
    if (!condition_keys().count(k)) c.extras[k] = v;
  return c;
}

json condition_to_json(const ConditionManifest& c) {
  json j = c.extras.is_object() ? c.extras : json::object();
  j["condition_id"] = c.condition_id;
  j["model_id"] = c.model_id;
  j["attack_id"] = c.attack_id;
  j["tokenizer_id"] = c.tokenizer_id;
  j["vocabulary_size"] = c.vocabulary_size;
  j["records_file"] = c.records_file;
  j["harmful_record_ids"] = c.harmful_record_ids;
  j["benign_attack_formatted_ids"] = c.benign_attack_formatted_ids;
  j["benign_format_free_ids"] = c.benign_format_free_ids;
  return j;
}

std::vector<std::string> validate_record(const TrajectoryRecord& r, const ConditionManifest& c) {
  std::vector<std::string> out;
  auto complain = [&](const std::string& msg) { out.push_back(r.record_id + ": " + msg); };

  if (r.model_id != c.model_id) complain("model_id does not match condition " + c.condition_id);
  if (r.attack_id != c.attack_id) complain("attack_id does not match condition " + c.condition_id);

  if (r.role == Role::harmful && !r.success_label)
    complain("harmful record lacks success_label");
  if (r.role != Role::harmful && r.success_label)
    complain("benign record carries success_label");

  std::size_t expected = static_cast<std::size_t>(r.response_token_count) + 1;
  if (r.steps.size() != expected)
    complain("steps length " + std::to_string(r.steps.size()) + " != T+1 = " + std::to_string(expected));
  for (std::size_t i = 0; i < r.steps.size(); ++i)
    if (r.steps[i].step_index != static_cast<int>(i)) {
      complain("step_index not contiguous from 0");
      break;
    }
  for (const auto& s : r.steps)
    if (const auto* fl = std::get_if<FullLogits>(&s.payload))
      if (static_cast<long>(fl->logits.size()) != c.vocabulary_size) {
        complain("full_logits length does not match vocabulary_size");
        break;
      }
  bool slice_out_of_range = false;
  for (const auto& s : r.steps) {
    if (slice_out_of_range) break;
    if (const auto* sl = std::get_if<LexiconSlice>(&s.payload))
      for (const auto& [id, logit] : sl->logits)
        if (id < 0 || static_cast<long>(id) >= c.vocabulary_size) {
          complain("slice token id outside vocabulary_size");
          slice_out_of_range = true;
          break;
        }
  }

  for (const auto& [tag, vs] : r.hidden_states) {
    if (vs.size() != r.steps.size())
      complain("hidden_states." + tag + " length does not match steps");
    std::size_t dim = vs.empty() ? 0 : vs.front().size();
    if (dim == 0 && !vs.empty()) complain("hidden_states." + tag + " has empty vectors");
    for (const auto& v : vs)
      if (v.size() != dim) {
        complain("hidden_states." + tag + " has inconsistent dimensions");
        break;
      }
  }
  return out;
}

namespace {

using LineSource = std::function<std::unique_ptr<std::istream>(const std::string&)>;

DatasetHandle ingest_core(const std::string& manifest_text, const LineSource& open,
                          const std::string& schema_version) {
  json mj;
  try {
    mj = json::parse(manifest_text);
  } catch (const json::exception& e) {
    malformed("manifest.json", e.what());
  }
  if (!mj.is_object() || !mj.contains("schema_version") || !mj["schema_version"].is_string())
    malformed("manifest.json", "missing schema_version");
  std::string version = mj["schema_version"].get<std::string>();
  if (version != schema_version)
    throw error(errc::schema_mismatch,
                "manifest schema_version " + version + ", expected " + schema_version);
  if (!mj.contains("conditions") || !mj["conditions"].is_array())
    malformed("manifest.json", "missing conditions array");

  DatasetHandle h;
  h.schema_version = version;
  for (const auto& cj : mj["conditions"])
    h.conditions.push_back(condition_from_json(cj, "manifest.json"));
  std::sort(h.conditions.begin(), h.conditions.end(),
            [](const auto& a, const auto& b) { return a.condition_id < b.condition_id; });
  for (std::size_t i = 1; i < h.conditions.size(); ++i)
    if (h.conditions[i].condition_id == h.conditions[i - 1].condition_id)
      malformed("manifest.json", "duplicate condition_id " + h.conditions[i].condition_id);

  // Which condition owns each record ID; a record must be claimed exactly once.
  std::unordered_map<std::string, std::pair<const ConditionManifest*, Role>> owner;
  for (const auto& c : h.conditions) {
    auto claim = [&](const std::vector<std::string>& ids, Role role) {
      for (const auto& id : ids) {
        auto [it, fresh] = owner.emplace(id, std::make_pair(&c, role));
        if (!fresh)
          throw error(errc::dangling_reference,
                      "record " + id + " listed by both " + it->second.first->condition_id +
                          " and " + c.condition_id);
      }
    };
    claim(c.harmful_record_ids, Role::harmful);
    claim(c.benign_attack_formatted_ids, Role::benign_attack_formatted);
    claim(c.benign_format_free_ids, Role::benign_format_free);
  }

  std::uint64_t hash = util::fnv1a(manifest_text);
  for (const auto& c : h.conditions) {
    auto in = open(c.records_file);
    if (!in || !*in)
      throw error(errc::io_error, "cannot open records file " + c.records_file);
    std::string line;
    long line_no = 0;
    while (std::getline(*in, line)) {
      ++line_no;
      hash = util::fnv1a(line, hash);
      if (line.empty()) continue;
      std::string where = c.records_file + ":" + std::to_string(line_no);
      json rj;
      try {
        rj = json::parse(line);
      } catch (const json::exception& e) {
        malformed(where, e.what());
      }
      TrajectoryRecord r = record_from_json(rj, where);
      auto own = owner.find(r.record_id);
      if (own == owner.end())
        throw error(errc::dangling_reference,
                    where + ": record " + r.record_id + " not listed in manifest");
      if (own->second.first->condition_id != c.condition_id)
        throw error(errc::dangling_reference,
                    where + ": record " + r.record_id + " belongs to " +
                        own->second.first->condition_id);
      if (r.role != own->second.second)
        malformed(where, "role " + std::string(role_name(r.role)) + " does not match manifest list");
      auto violations = validate_record(r, c);
      if (!violations.empty()) malformed(where, violations.front());
      if (!h.records_by_id.emplace(r.record_id, std::move(r)).second)
        malformed(where, "duplicate record_id");
    }
  }

  for (const auto& [id, who] : owner)
    if (!h.records_by_id.count(id))
      throw error(errc::dangling_reference,
                  "manifest lists " + id + " for " + who.first->condition_id +
                      " but no such record exists");
  h.content_hash = hash;
  return h;
}

}  // namespace

const ConditionManifest& DatasetHandle::condition(const std::string& condition_id) const {
  for (const auto& c : conditions)
    if (c.condition_id == condition_id) return c;
  throw error(errc::dangling_reference, "no condition " + condition_id);
}

const TrajectoryRecord& DatasetHandle::record(const std::string& record_id) const {
  auto it = records_by_id.find(record_id);
  if (it == records_by_id.end())
    throw error(errc::dangling_reference, "no record " + record_id);
  return it->second;
}

std::vector<const TrajectoryRecord*> DatasetHandle::records_for(const ConditionManifest& c,
                                                                Role role) const {
  const std::vector<std::string>* ids = nullptr;
  switch (role) {
    case Role::harmful: ids = &c.harmful_record_ids; break;
    case Role::benign_attack_formatted: ids = &c.benign_attack_formatted_ids; break;
    case Role::benign_format_free: ids = &c.benign_format_free_ids; break;
  }
  std::vector<const TrajectoryRecord*> out;
  out.reserve(ids->size());
  for (const auto& id : *ids) out.push_back(&record(id));
  return out;
}

bool DatasetHandle::operator==(const DatasetHandle& other) const {
  // content_hash tracks source bytes, not logical content; two handles with
  // differently formatted source files can still be equal.
  return schema_version == other.schema_version && conditions == other.conditions &&
         records_by_id == other.records_by_id;
}

DatasetHandle ingest(const std::filesystem::path& dir, const std::string& schema_version) {
  std::string manifest = util::slurp(dir / "manifest.json");
  LineSource open = [&dir](const std::string& name) -> std::unique_ptr<std::istream> {
    return std::make_unique<std::ifstream>(dir / name, std::ios::binary);
  };
  return ingest_core(manifest, open, schema_version);
}

DatasetHandle ingest_from_memory(const std::string& manifest_json,
                                 const std::map<std::string, std::string>& files,
                                 const std::string& schema_version) {
  LineSource open = [&files](const std::string& name) -> std::unique_ptr<std::istream> {
    auto it = files.find(name);
    if (it == files.end()) return nullptr;
    return std::make_unique<std::istringstream>(it->second);
  };
  return ingest_core(manifest_json, open, schema_version);
}

void serialize(const DatasetHandle& h, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json mj;
  mj["schema_version"] = h.schema_version;
  json cs = json::array();
  for (const auto& c : h.conditions) cs.push_back(condition_to_json(c));
  mj["conditions"] = cs;
  util::spit(dir / "manifest.json", mj.dump(2) + "\n");
  for (const auto& c : h.conditions) {
    std::string out;
    auto emit = [&](const std::vector<std::string>& ids) {
      for (const auto& id : ids) out += record_to_json(h.record(id)).dump() + "\n";
    };
    emit(c.harmful_record_ids);
    emit(c.benign_attack_formatted_ids);
    emit(c.benign_format_free_ids);
    util::spit(dir / c.records_file, out);
  }
}

}  // namespace lmdiag
