#include "lmdiag/lexicon.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "lmdiag/stats.hpp"
#include "lmdiag/util.hpp"

namespace lmdiag::lexicon {

namespace {

using nlohmann::json;

std::vector<std::string> string_list(const json& j, const std::string& what) {
  if (!j.is_array()) throw error(errc::invalid_spec, what + " must be an array");
  std::vector<std::string> out;
  for (const auto& v : j) {
    if (!v.is_string()) throw error(errc::invalid_spec, what + " entries must be strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

std::string lower(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t inter = 0;
  for (const auto& w : a) inter += b.count(w);
  return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

}  // namespace

Expansion Lexicon::expand(const std::string& tokenizer_id) const {
  auto mit = tokenizer_maps.find(tokenizer_id);
  if (mit == tokenizer_maps.end())
    throw error(errc::missing_tokenizer_map, "no token map for tokenizer " + tokenizer_id);
  const auto& phrase_ids = mit->second;
  auto expand_side = [&](const std::vector<std::string>& phrases, const char* side) {
    std::vector<int> ids;
    for (const auto& p : phrases) {
      auto pit = phrase_ids.find(p);
      if (pit == phrase_ids.end())
        throw error(errc::missing_tokenizer_map,
                    "tokenizer " + tokenizer_id + " has no entry for phrase \"" + p + "\"");
      ids.insert(ids.end(), pit->second.begin(), pit->second.end());
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    if (ids.empty())
      throw error(errc::empty_side,
                  std::string(side) + " side expands to no token IDs for " + tokenizer_id);
    return ids;
  };
  Expansion out;
  out.refusal_ids = expand_side(refusal_phrases, "refusal");
  out.compliance_ids = expand_side(compliance_phrases, "compliance");
  std::vector<int> shared;
  std::set_intersection(out.refusal_ids.begin(), out.refusal_ids.end(),
                        out.compliance_ids.begin(), out.compliance_ids.end(),
                        std::back_inserter(shared));
  out.intersection_size = static_cast<int>(shared.size());
  return out;
}

Lexicon lexicon_from_json(const json& j) {
  if (!j.is_object()) throw error(errc::invalid_spec, "lexicon must be a JSON object");
  Lexicon lx;
  lx.name = j.value("name", std::string("unnamed"));
  lx.refusal_phrases = string_list(j.at("refusal_phrases"), "refusal_phrases");
  lx.compliance_phrases = string_list(j.at("compliance_phrases"), "compliance_phrases");
  if (lx.refusal_phrases.empty() || lx.compliance_phrases.empty())
    throw error(errc::empty_side, "lexicon " + lx.name + " has an empty side");
  if (auto it = j.find("tokenizer_maps"); it != j.end()) {
    if (!it->is_object()) throw error(errc::invalid_spec, "tokenizer_maps must be an object");
    for (const auto& [tok, phrases] : it->items()) {
      if (!phrases.is_object())
        throw error(errc::invalid_spec, "tokenizer_maps." + tok + " must be an object");
      for (const auto& [phrase, ids] : phrases.items()) {
        if (!ids.is_array())
          throw error(errc::invalid_spec, "token IDs for \"" + phrase + "\" must be an array");
        std::vector<int> v;
        for (const auto& id : ids) {
          if (!id.is_number_integer())
            throw error(errc::invalid_spec, "token IDs must be integers");
          v.push_back(id.get<int>());
        }
        lx.tokenizer_maps[tok][phrase] = std::move(v);
      }
    }
  }
  if (auto it = j.find("variants"); it != j.end() && it->is_object()) lx.variants = *it;
  if (auto it = j.find("provenance"); it != j.end() && it->is_object()) lx.provenance = *it;
  return lx;
}

json lexicon_to_json(const Lexicon& lx) {
  json j;
  j["name"] = lx.name;
  j["refusal_phrases"] = lx.refusal_phrases;
  j["compliance_phrases"] = lx.compliance_phrases;
  json maps = json::object();
  for (const auto& [tok, phrases] : lx.tokenizer_maps) {
    json pm = json::object();
    for (const auto& [phrase, ids] : phrases) pm[phrase] = ids;
    maps[tok] = pm;
  }
  j["tokenizer_maps"] = maps;
  j["variants"] = lx.variants;
  j["provenance"] = lx.provenance;
  return j;
}

Lexicon load_lexicon(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(util::slurp(path));
  } catch (const json::exception& e) {
    throw error(errc::invalid_spec, path.string() + ": " + e.what());
  }
  return lexicon_from_json(j);
}

Lexicon perturb(const Lexicon& lx, const std::string& variant) {
  Lexicon out = lx;
  out.provenance["variant"] = variant;
  if (variant == "original") return out;
  auto it = lx.variants.find(variant);
  if (it == lx.variants.end() || !it->is_object())
    throw error(errc::unknown_variant, "lexicon " + lx.name + " declares no variant " + variant);
  const json& delta = *it;

  auto apply = [&](std::vector<std::string>& phrases, const char* replace_key,
                   const char* remove_key, const char* add_key) {
    if (auto r = delta.find(replace_key); r != delta.end())
      phrases = string_list(*r, replace_key);
    if (auto r = delta.find(remove_key); r != delta.end()) {
      auto gone = string_list(*r, remove_key);
      std::erase_if(phrases, [&](const std::string& p) {
        return std::find(gone.begin(), gone.end(), p) != gone.end();
      });
    }
    if (auto a = delta.find(add_key); a != delta.end())
      for (auto& p : string_list(*a, add_key))
        if (std::find(phrases.begin(), phrases.end(), p) == phrases.end())
          phrases.push_back(std::move(p));
  };
  apply(out.refusal_phrases, "replace_refusal", "remove_refusal", "add_refusal");
  apply(out.compliance_phrases, "replace_compliance", "remove_compliance", "add_compliance");
  if (out.refusal_phrases.empty() || out.compliance_phrases.empty())
    throw error(errc::empty_side, "variant " + variant + " empties one lexicon side");
  return out;
}

WordSets word_sets_from_phrases(const Lexicon& lx) {
  WordSets out;
  for (const auto& p : lx.refusal_phrases)
    for (auto& w : split_words(lower(p))) out.refusal.insert(std::move(w));
  for (const auto& p : lx.compliance_phrases)
    for (auto& w : split_words(lower(p))) out.compliance.insert(std::move(w));
  return out;
}

BowScore bow_score(const std::vector<std::string>& words, const WordSets& sets) {
  BowScore out;
  for (const auto& w : words) {
    if (sets.refusal.count(w)) ++out.n_refusal;
    if (sets.compliance.count(w)) ++out.n_compliance;
  }
  int total = out.n_refusal + out.n_compliance;
  if (total == 0) {
    out.undefined = true;
    return out;
  }
  out.score = static_cast<double>(out.n_refusal - out.n_compliance) / total;
  return out;
}

WordSets InducedLexicon::word_sets() const {
  WordSets out;
  out.refusal.insert(refusal_words.begin(), refusal_words.end());
  out.compliance.insert(compliance_words.begin(), compliance_words.end());
  return out;
}

InducedLexicon induce_log_odds(const std::vector<LabeledText>& corpus,
                               const InductionConfig& cfg) {
  if (cfg.min_count < 1 || cfg.alpha <= 0.0 || cfg.top_n < 1)
    throw error(errc::invalid_config, "induction needs min_count >= 1, alpha > 0, top_n >= 1");
  std::map<std::string, std::pair<long, long>> counts;  // word -> (compliant, refusal)
  long n_cmp = 0, n_ref = 0;
  for (const auto& doc : corpus) {
    for (const auto& w : doc.words) {
      auto& c = counts[w];
      if (doc.compliant) {
        ++c.first;
        ++n_cmp;
      } else {
        ++c.second;
        ++n_ref;
      }
    }
  }
  if (n_cmp == 0 || n_ref == 0)
    throw error(errc::degenerate_labels, "induction needs text in both classes");

  InducedLexicon out;
  out.n_compliant_tokens = n_cmp;
  out.n_refusal_tokens = n_ref;
  out.joint_vocabulary = static_cast<long>(counts.size());
  double v = static_cast<double>(out.joint_vocabulary);
  for (const auto& [word, c] : counts) {
    if (c.first + c.second < cfg.min_count) continue;
    double lor = std::log((static_cast<double>(c.first) + cfg.alpha) /
                          (static_cast<double>(n_cmp) + cfg.alpha * v)) -
                 std::log((static_cast<double>(c.second) + cfg.alpha) /
                          (static_cast<double>(n_ref) + cfg.alpha * v));
    out.log_odds[word] = lor;
  }

  std::vector<std::pair<std::string, double>> ranked(out.log_odds.begin(), out.log_odds.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  auto top = static_cast<std::size_t>(cfg.top_n);
  for (std::size_t i = 0; i < ranked.size() && i < top; ++i)
    out.compliance_words.push_back(ranked[i].first);
  for (std::size_t i = 0; i < ranked.size() && i < top; ++i)
    out.refusal_words.push_back(ranked[ranked.size() - 1 - i].first);

  out.provenance["min_count"] = cfg.min_count;
  out.provenance["alpha"] = cfg.alpha;
  out.provenance["top_n"] = cfg.top_n;
  out.provenance["n_documents"] = corpus.size();
  return out;
}

TransferMatrix transfer_matrix(const std::map<std::string, InducedLexicon>& induced,
                               const std::map<std::string, EvalSlice>& slices) {
  if (induced.empty()) throw error(errc::invalid_config, "no induced lexicons");
  for (const auto& [id, lx] : induced)
    if (!slices.count(id))
      throw error(errc::invalid_config, "no evaluation slice for " + id);
  for (const auto& [id, sl] : slices) {
    if (!induced.count(id))
      throw error(errc::invalid_config, "no induced lexicon for slice " + id);
    if (sl.word_lists.size() != sl.success.size())
      throw error(errc::invalid_config, "slice " + id + " labels not parallel to word lists");
  }

  TransferMatrix out;
  for (const auto& [id, lx] : induced) out.slice_ids.push_back(id);
  std::size_t n = out.slice_ids.size();
  out.auc.assign(n, std::vector<double>(n, 0.0));
  out.refusal_jaccard.assign(n, std::vector<double>(n, 0.0));
  out.compliance_jaccard.assign(n, std::vector<double>(n, 0.0));

  std::vector<WordSets> sets;
  sets.reserve(n);
  for (const auto& id : out.slice_ids) sets.push_back(induced.at(id).word_sets());

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const EvalSlice& sl = slices.at(out.slice_ids[j]);
      std::vector<double> scores;
      scores.reserve(sl.word_lists.size());
      for (const auto& words : sl.word_lists)
        scores.push_back(bow_score(words, sets[i]).score);
      std::vector<bool> labels(sl.success.begin(), sl.success.end());
      // Compliant text scores low, so successes rank first under this flip.
      out.auc[i][j] = stats::roc_auc(scores, labels, stats::Orientation::lower_is_positive);
      out.refusal_jaccard[i][j] = jaccard(sets[i].refusal, sets[j].refusal);
      out.compliance_jaccard[i][j] = jaccard(sets[i].compliance, sets[j].compliance);
    }
  }
  return out;
}

std::vector<TokenPercentile> probe_rank_percentiles(
    const std::vector<std::vector<double>>& embeddings, const std::vector<double>& direction,
    const Lexicon& lx, const std::string& tokenizer_id) {
  if (embeddings.empty()) throw error(errc::invalid_spec, "empty embedding matrix");
  Expansion ex = lx.expand(tokenizer_id);
  auto v = static_cast<long>(embeddings.size());
  std::vector<double> proj(embeddings.size());
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    if (embeddings[i].size() != direction.size())
      throw error(errc::invalid_spec, "embedding row dimension does not match direction");
    double dot = 0.0;
    for (std::size_t j = 0; j < direction.size(); ++j) dot += embeddings[i][j] * direction[j];
    proj[i] = dot;
  }
  std::vector<double> sorted = proj;
  std::sort(sorted.begin(), sorted.end());

  auto counts = [&](double p) {
    auto lo = std::lower_bound(sorted.begin(), sorted.end(), p) - sorted.begin();
    auto hi = std::upper_bound(sorted.begin(), sorted.end(), p) - sorted.begin();
    return std::pair<double, double>(static_cast<double>(lo), static_cast<double>(hi - lo));
  };
  double total = static_cast<double>(v);

  std::vector<TokenPercentile> out;
  auto emit = [&](const std::vector<int>& ids, const char* side, bool from_top) {
    for (int id : ids) {
      if (id < 0 || id >= v)
        throw error(errc::invalid_spec,
                    "token ID " + std::to_string(id) + " outside the embedding matrix");
      auto [less, equal] = counts(proj[static_cast<std::size_t>(id)]);
      double greater = total - less - equal;
      // Mid-rank from the relevant end; the extreme token lands exactly at 100.
      double rank = (from_top ? greater : less) + (equal + 1.0) / 2.0;
      TokenPercentile tp;
      tp.token_id = id;
      tp.side = side;
      tp.projection = proj[static_cast<std::size_t>(id)];
      tp.percentile = 100.0 * (total - rank + 1.0) / total;
      out.push_back(tp);
    }
  };
  emit(ex.refusal_ids, "refusal", true);
  emit(ex.compliance_ids, "compliance", false);
  return out;
}

}  // namespace lmdiag::lexicon
