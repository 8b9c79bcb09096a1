#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lmdiag/intervention.hpp"
#include "lmdiag/lexicon.hpp"
#include "lmdiag/signal.hpp"
#include "lmdiag/stats.hpp"
#include "lmdiag/util.hpp"

namespace lmdiag::pipeline {

inline const std::string kVersion = "0.1.0";

// One shot of the whole analysis: ingest, score, summarize, calibrate, test,
// and write a report bundle. Given (dataset, config, seed) the bundle is
// byte-identical across reruns and across worker counts.

struct RunConfig {
  std::filesystem::path dataset_dir;
  std::filesystem::path lexicon_path;
  std::string lexicon_variant = "original";
  signal::LmsConfig lms;
  std::vector<int> windows = {1, 3, 5};
  int horizon = 64;
  int n_confirm = 1;
  stats::StatsConfig stats;
  std::vector<intervention::HaltRule> halt_rules;
  double asr_neighbor_pp = 5.0;  // pair conditions within this ASR distance
  int workers = 1;
  std::vector<std::string> condition_filter;  // substrings; empty = all
  std::vector<std::string> layer_tags;        // hidden-state layers; empty = all present
  int align_early_window = 5;
  int align_max_lag = 3;
};

RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& cfg);

// Sub-object parsers, shared with the narrower subcommand configs below.
signal::LmsConfig lms_config_from_json(const nlohmann::json& j);
stats::StatsConfig stats_config_from_json(const nlohmann::json& j);
intervention::HaltRule halt_rule_from_json(const nlohmann::json& j);

struct RunResult {
  std::filesystem::path out_dir;
  std::string config_hash;
  std::string dataset_hash;
  std::vector<std::string> files;
};

// Writes the bundle under out_dir (created atomically; an existing non-empty
// out_dir is an error). Nothing is written on failure.
RunResult run_pipeline(const RunConfig& cfg, const std::filesystem::path& out_dir);

// ---- narrower entry points backing the other CLI subcommands -------------

struct IngestReport {
  std::string schema_version;
  std::string dataset_hash;
  int n_conditions = 0;
  int n_records = 0;
  std::vector<std::string> notes;  // e.g. conditions with empty role lists
};

IngestReport ingest_check(const std::filesystem::path& dataset_dir,
                          const std::string& schema_version);

struct InduceConfig {
  std::filesystem::path dataset_dir;
  lexicon::InductionConfig induction;
  std::string slice_by = "condition";  // "condition" | "model" | "attack"
  stats::StatsConfig stats;
};

InduceConfig induce_config_from_json(const nlohmann::json& j);

void run_induce_lexicon(const InduceConfig& cfg, const std::filesystem::path& out_dir);

struct TruncateConfig {
  std::filesystem::path dataset_dir;
  std::filesystem::path lexicon_path;
  signal::LmsConfig lms;
  std::vector<long> k_values = {5, 10, 20, 50, 100, 200};
  std::vector<std::string> condition_filter;
};

TruncateConfig truncate_config_from_json(const nlohmann::json& j);

void run_truncate_sim(const TruncateConfig& cfg, const std::filesystem::path& out_dir,
                      std::uint64_t seed);

struct ProbeConfig {
  std::filesystem::path dataset_dir;
  std::filesystem::path lexicon_path;
  signal::LmsConfig lms;
  int horizon = 64;
  std::vector<intervention::HaltRule> rules;
};

ProbeConfig probe_config_from_json(const nlohmann::json& j);

void run_probe(const ProbeConfig& cfg, const std::filesystem::path& out_dir, std::uint64_t seed);

struct AlignConfig {
  std::filesystem::path dataset_dir;
  std::filesystem::path lexicon_path;
  signal::LmsConfig lms;
  std::vector<std::string> layer_tags;
  int early_window = 5;
  int max_lag = 3;
};

AlignConfig align_config_from_json(const nlohmann::json& j);

void run_align(const AlignConfig& cfg, const std::filesystem::path& out_dir, std::uint64_t seed);

// Provenance line stamped into every report file.
std::string provenance_line(const std::string& config_hash, const std::string& dataset_hash,
                            std::uint64_t seed);

}  // namespace lmdiag::pipeline
