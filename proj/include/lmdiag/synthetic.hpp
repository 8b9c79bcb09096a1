#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "lmdiag/trajectory_store.hpp"

namespace lmdiag::synthetic {

// Dataset generator with known ground truth. Trajectories are built
// backwards from the quantities the diagnostics measure: a record draws its
// pre-generation score, its generation mean and its crossing step from
// class-conditional distributions, then a two-level step pattern realizes
// exactly that mean and exactly that crossing (positive plateau before the
// crossing, negative after). Censored records stay positive throughout,
// which forces their generation mean positive; the generator clamps and
// records such adjustments.

struct CrossingDist {
  int min_step = 1;
  int max_step = 6;
  double censor_prob = 0.0;
};

struct ClassParams {
  double s0_mean = 0.0;
  double s0_sd = 0.1;
  double sbar_mean = 0.0;
  double sbar_sd = 0.1;
  CrossingDist crossing;
};

struct ConditionSpec {
  std::string condition_id;
  std::string model_id;
  std::string attack_id;
  int n_harmful = 0;
  int n_benign_af = 0;
  int n_benign_ff = 0;
  double target_asr = 0.0;  // realized as round(target_asr * n_harmful) successes
  int t_steps = 24;
  int prompt_pool = 0;  // >0 reuses prompt IDs round-robin, giving repeated prompts
  ClassParams success;
  ClassParams failure;
  ClassParams benign_af;
  ClassParams benign_ff;
};

struct DatasetSpec {
  std::vector<ConditionSpec> conditions;
  std::uint64_t seed = 0;
  std::string tokenizer_id = "toy";
  long vocabulary_size = 64;
  std::string payload = "precomputed";  // or "slice" / "full"
  bool emit_words = false;              // class-flavored response words
  bool emit_hidden = false;             // hidden states anti-aligned with s
  int hidden_dim = 8;
  double hidden_noise = 0.05;
  std::string hidden_layer_tag = "L1";
};

DatasetSpec spec_from_json(const nlohmann::json& j);
nlohmann::json spec_to_json(const DatasetSpec& spec);

// Builds the dataset in memory. Throws InvalidSpec on impossible parameters.
DatasetHandle generate(const DatasetSpec& spec);

// generate() + serialize() + a ground_truth.json sidecar with the realized
// per-class means each condition actually sampled.
void generate_to_dir(const DatasetSpec& spec, const std::filesystem::path& dir);

// Success-class mean that lands a condition at relative position `rp` given
// the anchor identity: with m_harmful = (1-asr)*m_failed + asr*m_success,
// rp = (m_success - m_harmful) / (m_benign - m_harmful) is solved for
// m_success. Throws InvalidSpec when the target is unreachable.
double solve_success_mean(double rp, double asr, double failed_mean, double benign_mean);

}  // namespace lmdiag::synthetic
