#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "lmdiag/errors.hpp"

namespace lmdiag::lexicon {

// A lexicon is two phrase lists (refusal side, compliance side) plus, per
// tokenizer, a map from each phrase to the token IDs its surface forms start
// with. Expansion takes the union of those IDs per side; scoring never looks
// at phrases again after that.

struct Expansion {
  std::vector<int> refusal_ids;     // sorted, unique
  std::vector<int> compliance_ids;  // sorted, unique
  int intersection_size = 0;        // IDs shared by the two sides
};

struct Lexicon {
  std::string name;
  std::vector<std::string> refusal_phrases;
  std::vector<std::string> compliance_phrases;
  // tokenizer_id -> phrase -> token IDs
  std::map<std::string, std::map<std::string, std::vector<int>>> tokenizer_maps;
  // named perturbations shipped with the lexicon; see perturb()
  nlohmann::json variants = nlohmann::json::object();
  nlohmann::json provenance = nlohmann::json::object();

  // Throws MissingTokenizerMap when the tokenizer or one of the phrases has
  // no entry; EmptySide when a side expands to zero IDs.
  Expansion expand(const std::string& tokenizer_id) const;
};

Lexicon lexicon_from_json(const nlohmann::json& j);
nlohmann::json lexicon_to_json(const Lexicon& lx);
Lexicon load_lexicon(const std::filesystem::path& path);

// Applies a named variant's add/remove/replace phrase deltas. "original" is
// the identity; anything else must be declared in lx.variants.
Lexicon perturb(const Lexicon& lx, const std::string& variant);

// ---- word-level scoring ------------------------------------------------

struct WordSets {
  std::set<std::string> refusal;
  std::set<std::string> compliance;
};

// Lowercases each phrase and splits it on whitespace; the resulting word sets
// drive the bag-of-words baseline for hand-written lexicons.
WordSets word_sets_from_phrases(const Lexicon& lx);

struct BowScore {
  double score = 0.0;  // (n_refusal - n_compliance) / (n_refusal + n_compliance)
  bool undefined = false;  // no word matched either side; score forced to 0
  int n_refusal = 0;
  int n_compliance = 0;
};

BowScore bow_score(const std::vector<std::string>& words, const WordSets& sets);

// ---- lexicon induction from labeled text --------------------------------

struct InductionConfig {
  int min_count = 5;
  double alpha = 1.0;  // Laplace smoothing
  int top_n = 25;
};

struct LabeledText {
  std::vector<std::string> words;  // pre-lowercased
  bool compliant = false;          // true: compliant side, false: refusal side
};

struct InducedLexicon {
  std::vector<std::string> refusal_words;     // most refusal-leaning, by log-odds
  std::vector<std::string> compliance_words;  // most compliance-leaning
  std::map<std::string, double> log_odds;     // every word passing min_count
  long n_compliant_tokens = 0;
  long n_refusal_tokens = 0;
  long joint_vocabulary = 0;
  nlohmann::json provenance = nlohmann::json::object();

  WordSets word_sets() const;
};

// Smoothed log-odds of each word under the compliant class versus the refusal
// class. Positive values lean compliant. The smoothing denominator uses the
// joint vocabulary of both classes; only words whose total count reaches
// min_count receive a score.
InducedLexicon induce_log_odds(const std::vector<LabeledText>& corpus, const InductionConfig& cfg);

// ---- cross-slice transfer -----------------------------------------------

struct EvalSlice {
  std::vector<std::vector<std::string>> word_lists;
  std::vector<bool> success;  // per entry: attack succeeded (compliant text)
};

struct TransferMatrix {
  std::vector<std::string> slice_ids;                 // row/column order
  std::vector<std::vector<double>> auc;               // [train][test]
  std::vector<std::vector<double>> refusal_jaccard;   // word-set overlap
  std::vector<std::vector<double>> compliance_jaccard;
};

// Scores each evaluation slice with each slice's induced word sets through
// bow_score; AUC treats success as the positive class, so lower bag-of-words
// scores (compliance-leaning) should rank successes first.
TransferMatrix transfer_matrix(const std::map<std::string, InducedLexicon>& induced,
                               const std::map<std::string, EvalSlice>& slices);

// ---- embedding probe ----------------------------------------------------

struct TokenPercentile {
  int token_id = 0;
  std::string side;        // "refusal" or "compliance"
  double projection = 0.0;
  double percentile = 0.0;  // refusal: from the top; compliance: from the bottom
};

// Projects every vocabulary embedding onto `direction`, then locates each
// lexicon token in that ranking. Mid-rank ties; the single most refusal-
// aligned token scores 100 on the refusal side, the single least aligned
// token scores 100 on the compliance side.
std::vector<TokenPercentile> probe_rank_percentiles(
    const std::vector<std::vector<double>>& embeddings,
    const std::vector<double>& direction, const Lexicon& lx,
    const std::string& tokenizer_id);

}  // namespace lmdiag::lexicon
