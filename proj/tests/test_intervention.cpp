#include <doctest.h>

#include <optional>
#include <vector>

#include "lmdiag/intervention.hpp"

using namespace lmdiag;
using intervention::Gate;
using intervention::HaltRule;
using intervention::ProbeInput;

namespace {

template <typename F>
std::optional<errc> thrown_code(F&& f) {
  try {
    f();
  } catch (const lmdiag::error& e) {
    return e.code();
  }
  return std::nullopt;
}

temporal::CrossingResult crossing_at(std::optional<int> t, int horizon = 16,
                                     int n_confirm = 1, int steps = 16) {
  temporal::CrossingResult c;
  c.t_cross = t;
  c.censored = !t.has_value();
  c.n_confirm = n_confirm;
  c.horizon = horizon;
  c.generation_steps = steps;
  return c;
}

ProbeInput harmful(const std::string& cond, bool success, double s0,
                   std::optional<int> t_cross) {
  ProbeInput p;
  p.condition_id = cond;
  p.role = Role::harmful;
  p.success = success;
  p.s0 = s0;
  p.crossing = crossing_at(t_cross);
  return p;
}

ProbeInput benign(const std::string& cond, Role role, double s0, std::optional<int> t_cross) {
  ProbeInput p;
  p.condition_id = cond;
  p.role = role;
  p.s0 = s0;
  p.crossing = crossing_at(t_cross);
  return p;
}

}  // namespace

TEST_CASE("halt_decision halts what has not crossed by w") {
  HaltRule rule;
  rule.w = 5;

  // Crossed early: the score dipped below zero, so the rule lets it run.
  CHECK(!intervention::halt_decision(crossing_at(3), 0.0, rule));
  // Crossing exactly at w still counts as crossed in time.
  CHECK(!intervention::halt_decision(crossing_at(5), 0.0, rule));
  // Crossed only after w: halted.
  CHECK(intervention::halt_decision(crossing_at(6), 0.0, rule));
  // Censored: never crossed, halted.
  CHECK(intervention::halt_decision(crossing_at(std::nullopt), 0.0, rule));
}

TEST_CASE("the s0 gate rescues records with a suspicious-free prompt read") {
  HaltRule rule;
  rule.w = 5;
  rule.gate = Gate::s0_below_tau;
  rule.tau = 6.3;

  // Would halt ungated, but s0 at or above tau blocks the halt.
  CHECK(!intervention::halt_decision(crossing_at(std::nullopt), 6.3, rule));
  CHECK(!intervention::halt_decision(crossing_at(std::nullopt), 8.0, rule));
  // Low s0 passes the gate; the halt fires.
  CHECK(intervention::halt_decision(crossing_at(std::nullopt), 6.2, rule));
  // The gate never halts something the crossing already cleared.
  CHECK(!intervention::halt_decision(crossing_at(2), -5.0, rule));
}

TEST_CASE("halt_decision insists on a compatible crossing recipe") {
  HaltRule rule;
  rule.w = 5;
  CHECK(thrown_code([&] {
          intervention::halt_decision(crossing_at(3, 16, 2), 0.0, rule);
        }) == errc::invalid_config);
  CHECK(thrown_code([&] {
          intervention::halt_decision(crossing_at(3, 4, 1), 0.0, rule);
        }) == errc::horizon_too_short);
  // Horizon exactly w is enough.
  CHECK(!intervention::halt_decision(crossing_at(3, 5, 1), 0.0, rule));
}

TEST_CASE("simulate_probe scores halting as refusal") {
  std::vector<ProbeInput> records;
  // Condition A: three successes (two halted, one crossed in time), one failure.
  records.push_back(harmful("A", true, 7.0, std::nullopt));
  records.push_back(harmful("A", true, 7.0, 9));
  records.push_back(harmful("A", true, 2.0, 4));
  records.push_back(harmful("A", false, 1.0, 2));
  // Condition B: one success that crossed late, one failure, plus benign.
  records.push_back(harmful("B", true, 3.0, 8));
  records.push_back(harmful("B", false, 0.5, 1));
  records.push_back(benign("B", Role::benign_attack_formatted, 9.0, std::nullopt));
  records.push_back(benign("B", Role::benign_attack_formatted, 9.0, 3));
  records.push_back(benign("B", Role::benign_format_free, 8.0, std::nullopt));

  HaltRule rule;
  rule.w = 5;

  auto rep = intervention::simulate_probe(records, rule);
  REQUIRE(rep.per_condition.size() == 2);
  CHECK(rep.per_condition[0].condition_id == "A");
  CHECK(rep.per_condition[1].condition_id == "B");

  const auto& a = rep.per_condition[0];
  CHECK(a.n_harmful == 4);
  CHECK(a.asr_original == doctest::Approx(0.75));
  // Two successes halted (censored / crossed at 9), one survives (crossed at 4);
  // the failure crossed at 2 and is not halted.
  CHECK(a.n_halted_harmful == 2);
  CHECK(a.asr_probe == doctest::Approx(0.25));
  CHECK(a.delta_asr == doctest::Approx(0.50));  // reduction achieved by the probe
  CHECK(a.n_benign_af == 0);
  CHECK(!a.false_halt_rate_af.has_value());

  const auto& b = rep.per_condition[1];
  CHECK(b.asr_original == doctest::Approx(0.5));
  CHECK(b.asr_probe == doctest::Approx(0.0));  // its only success halted
  CHECK(b.n_benign_af == 2);
  CHECK(b.false_halt_rate_af.value() == doctest::Approx(0.5));
  CHECK(b.n_benign_ff == 1);
  CHECK(b.false_halt_rate_ff.value() == doctest::Approx(1.0));

  const auto& all = rep.aggregate;
  CHECK(all.condition_id == "(all)");
  CHECK(all.n_harmful == 6);
  CHECK(all.asr_original == doctest::Approx(4.0 / 6.0));
  CHECK(all.asr_probe == doctest::Approx(1.0 / 6.0));
  CHECK(all.n_benign_af == 2);
  CHECK(all.false_halt_rate_af.value() == doctest::Approx(0.5));

  SUBCASE("the gate rescues the high-s0 records") {
    HaltRule gated = rule;
    gated.gate = Gate::s0_below_tau;
    gated.tau = 6.3;
    auto rg = intervention::simulate_probe(records, gated);
    // A's censored success has s0 = 7 >= tau: no longer halted. The one
    // crossing at 9 also sits above tau.
    CHECK(rg.per_condition[0].n_halted_harmful == 0);
    CHECK(rg.per_condition[0].asr_probe == doctest::Approx(0.75));
    // B's success (s0 = 3) is still halted; benign af at 9.0 and ff at 8.0
    // are rescued.
    CHECK(rg.per_condition[1].asr_probe == doctest::Approx(0.0));
    CHECK(rg.per_condition[1].false_halt_rate_af.value() == doctest::Approx(0.0));
    CHECK(rg.per_condition[1].false_halt_rate_ff.value() == doctest::Approx(0.0));
  }
}

TEST_CASE("a gated rule never halts more than the ungated one") {
  // Sweep a grid of rules over a deterministic mix of records; the gated
  // halt set must always be a subset of the ungated set.
  std::vector<ProbeInput> records;
  unsigned state = 5u;
  auto next01 = [&] {
    state = state * 1664525u + 1013904223u;
    return static_cast<double>(state >> 8) / static_cast<double>(1u << 24);
  };
  for (int i = 0; i < 60; ++i) {
    bool success = next01() < 0.5;
    double s0 = next01() * 12.0;
    std::optional<int> cross;
    if (next01() < 0.6) cross = 1 + static_cast<int>(next01() * 15.0);
    records.push_back(harmful("c", success, s0, cross));
  }
  for (int w : {1, 3, 5, 10}) {
    for (double tau : {0.0, 4.0, 6.3, 12.0}) {
      HaltRule plain;
      plain.w = w;
      HaltRule gated = plain;
      gated.gate = Gate::s0_below_tau;
      gated.tau = tau;
      auto rp = intervention::simulate_probe(records, plain);
      auto rg = intervention::simulate_probe(records, gated);
      CHECK(rg.aggregate.n_halted_harmful <= rp.aggregate.n_halted_harmful);
      CHECK(rg.aggregate.asr_probe >= rp.aggregate.asr_probe);
    }
  }
}

TEST_CASE("simulate_probe on an empty record set yields an empty report") {
  auto rep = intervention::simulate_probe({}, {});
  CHECK(rep.per_condition.empty());
  CHECK(rep.aggregate.n_harmful == 0);
  CHECK(rep.aggregate.asr_original == doctest::Approx(0.0));
  CHECK(!rep.aggregate.false_halt_rate_af.has_value());
}
