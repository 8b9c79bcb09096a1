#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include <json.hpp>

#include "lmdiag/errors.hpp"

namespace lmdiag {

// A dataset is a manifest plus one line-delimited JSON file of trajectory
// records per condition (model x attack). A record holds one observation per
// decoding step: step 0 is the pre-generation position at the final prompt
// token, steps 1..T cover the generated tokens. Records arrive at one of
// three payload tiers depending on what the producing harness captured:
//
//   full         - the complete logit vector per step
//   slice        - logits for the lexicon's token IDs only
//   precomputed  - per-step aggregate scores, nothing token-level
//
// Everything downstream accepts any tier and degrades capability explicitly
// rather than silently (see signal::compute_trajectory).

enum class Role { harmful, benign_attack_formatted, benign_format_free };

const char* role_name(Role r);
Role role_from_string(const std::string& s);

enum class Tier { precomputed = 0, slice = 1, full = 2 };

const char* tier_name(Tier t);

struct FullLogits {
  std::vector<double> logits;
  bool operator==(const FullLogits&) const = default;
};

struct LexiconSlice {
  std::map<int, double> logits;  // token ID -> logit
  bool operator==(const LexiconSlice&) const = default;
};

struct PrecomputedStep {
  double s = 0.0;
  double mu_cmp = 0.0;
  double mu_ref = 0.0;
  std::optional<double> entropy;
  std::optional<double> logit_norm;
  bool operator==(const PrecomputedStep&) const = default;
};

struct StepObservation {
  int step_index = 0;
  std::variant<FullLogits, LexiconSlice, PrecomputedStep> payload;
  Tier tier() const { return static_cast<Tier>(2 - payload.index()); }
  bool operator==(const StepObservation&) const = default;
};

struct TrajectoryRecord {
  std::string record_id;
  std::string model_id;
  std::string attack_id;
  Role role = Role::harmful;
  std::optional<bool> success_label;  // required for harmful, absent for benign
  std::string prompt_id;
  std::string decoding_config_id;
  int response_token_count = 0;  // T; steps has length T+1
  std::vector<StepObservation> steps;
  std::optional<std::vector<std::string>> response_words;  // pre-lowercased
  // layer tag -> one vector per step, aligned with steps
  std::map<std::string, std::vector<std::vector<double>>> hidden_states;
  nlohmann::json extras = nlohmann::json::object();  // unknown fields, kept for round-trips

  Tier tier() const;  // weakest tier across steps
  bool operator==(const TrajectoryRecord&) const = default;
};

struct ConditionManifest {
  std::string condition_id;
  std::string model_id;
  std::string attack_id;
  std::string tokenizer_id;
  long vocabulary_size = 0;
  std::string records_file;
  std::vector<std::string> harmful_record_ids;
  std::vector<std::string> benign_attack_formatted_ids;
  std::vector<std::string> benign_format_free_ids;
  nlohmann::json extras = nlohmann::json::object();
  bool operator==(const ConditionManifest&) const = default;
};

// Immutable once ingested. Conditions are kept sorted by condition_id and
// per-condition ID lists sorted, so downstream output never depends on the
// order records appeared on disk.
struct DatasetHandle {
  std::string schema_version;
  std::vector<ConditionManifest> conditions;
  std::unordered_map<std::string, TrajectoryRecord> records_by_id;
  std::uint64_t content_hash = 0;

  const ConditionManifest& condition(const std::string& condition_id) const;
  const TrajectoryRecord& record(const std::string& record_id) const;
  std::vector<const TrajectoryRecord*> records_for(const ConditionManifest& c, Role role) const;
  bool operator==(const DatasetHandle& other) const;
};

inline const std::string kSchemaVersion = "1";

// Parses one record object; `where` names the source location for errors.
TrajectoryRecord record_from_json(const nlohmann::json& j, const std::string& where);
nlohmann::json record_to_json(const TrajectoryRecord& r);

ConditionManifest condition_from_json(const nlohmann::json& j, const std::string& where);
nlohmann::json condition_to_json(const ConditionManifest& c);

// Reads manifest.json plus the per-condition record files under `dir`.
// Throws: SchemaMismatch when the manifest declares a different version,
// MalformedRecord (with file and line) on any unparsable or non-finite value,
// DanglingReference when manifest IDs and record files disagree.
DatasetHandle ingest(const std::filesystem::path& dir, const std::string& schema_version = kSchemaVersion);

// Same contract as ingest() but over in-memory buffers, keyed by file name.
DatasetHandle ingest_from_memory(const std::string& manifest_json,
                                 const std::map<std::string, std::string>& files,
                                 const std::string& schema_version = kSchemaVersion);

// Structural checks for one record against its owning condition. Returns
// human-readable violations; empty means clean.
std::vector<std::string> validate_record(const TrajectoryRecord& r, const ConditionManifest& c);

// Writes manifest.json and per-condition record files; ingest(serialize(h))
// reproduces an equal handle.
void serialize(const DatasetHandle& h, const std::filesystem::path& dir);

}  // namespace lmdiag
