#include <doctest.h>

#include <cmath>
#include <optional>
#include <vector>

#include "lmdiag/signal.hpp"
#include "lmdiag/temporal.hpp"

using namespace lmdiag;

namespace {

signal::LmsTrajectory traj_of(std::vector<double> s) {
  signal::LmsTrajectory t;
  t.record_id = "r";
  t.s = std::move(s);
  t.mu_cmp.assign(t.s.size(), 0.0);
  t.mu_ref.assign(t.s.size(), 0.0);
  return t;
}

template <typename F>
std::optional<errc> thrown_code(F&& f) {
  try {
    f();
  } catch (const lmdiag::error& e) {
    return e.code();
  }
  return std::nullopt;
}

}  // namespace

TEST_CASE("summarize reproduces hand-computed descriptors") {
  // s0 = 2, generation scores 1, -1, 3, -2, 0 (T = 5).
  auto traj = traj_of({2.0, 1.0, -1.0, 3.0, -2.0, 0.0});
  auto sum = temporal::summarize(traj, {1, 3, 5});

  CHECK(sum.s0 == doctest::Approx(2.0));
  CHECK(sum.generation_steps == 5);
  CHECK(sum.s_bar.value() == doctest::Approx(0.2));
  CHECK(sum.prefix_means.at(1) == doctest::Approx(1.0));
  CHECK(sum.prefix_means.at(3) == doctest::Approx(1.0));
  CHECK(sum.prefix_means.at(5) == doctest::Approx(0.2));
  CHECK(sum.s_min.value() == doctest::Approx(-2.0));
  CHECK(sum.s_max.value() == doctest::Approx(3.0));
  CHECK(sum.s_range.value() == doctest::Approx(5.0));
  // Population standard deviation of {1, -1, 3, -2, 0}: mean 0.2,
  // sum of squared deviations 14.8, divide by T = 5.
  CHECK(sum.s_std.value() == doctest::Approx(std::sqrt(14.8 / 5.0)).epsilon(1e-12));
  CHECK(sum.positive_step_rate.value() == doctest::Approx(2.0 / 5.0));
  // Signs across steps 1..5: +, -, +, -, 0: flips at t=2,3,4,5.
  CHECK(sum.sign_flips.value() == 4);
  CHECK(sum.sign_reversal.value() == false);  // s_bar is positive
}

TEST_CASE("summarize clamps prefix windows to T") {
  auto traj = traj_of({0.5, 2.0, 4.0});  // T = 2
  auto sum = temporal::summarize(traj, {1, 3, 5});
  CHECK(sum.prefix_means.at(1) == doctest::Approx(2.0));
  CHECK(sum.prefix_means.at(3) == doctest::Approx(3.0));
  CHECK(sum.prefix_means.at(5) == doctest::Approx(3.0));
}

TEST_CASE("summarize flags a sign reversal") {
  auto sum = temporal::summarize(traj_of({1.0, -2.0, -3.0}), {1});
  CHECK(sum.sign_reversal.value() == true);
  auto no_rev = temporal::summarize(traj_of({-1.0, -2.0, -3.0}), {1});
  CHECK(no_rev.sign_reversal.value() == false);  // s0 already negative
}

TEST_CASE("summarize treats exact zeros as their own sign") {
  // Signs: +, 0, +: two changes (+ to 0, 0 to +).
  auto sum = temporal::summarize(traj_of({5.0, 1.0, 0.0, 1.0}), {1});
  CHECK(sum.sign_flips.value() == 2);
}

TEST_CASE("summarize with no generated steps leaves generation fields empty") {
  auto sum = temporal::summarize(traj_of({1.5}), {1, 3});
  CHECK(sum.s0 == doctest::Approx(1.5));
  CHECK(sum.generation_steps == 0);
  CHECK(!sum.s_bar.has_value());
  CHECK(sum.prefix_means.empty());
  CHECK(!sum.s_std.has_value());
  CHECK(!sum.sign_flips.has_value());
  CHECK(!sum.sign_reversal.has_value());
}

TEST_CASE("first_crossing finds the earliest confirmed run") {
  auto traj = traj_of({3.0, 1.0, -1.0, 2.0, -1.0, -2.0, -3.0});  // T = 6

  SUBCASE("single-step confirmation") {
    auto c = temporal::first_crossing(traj, 1, 16);
    CHECK(c.t_cross.value() == 2);
    CHECK(!c.censored);
    CHECK(c.generation_steps == 6);
  }

  SUBCASE("two-step confirmation skips the isolated dip") {
    auto c = temporal::first_crossing(traj, 2, 16);
    CHECK(c.t_cross.value() == 4);
  }

  SUBCASE("three-step confirmation") {
    CHECK(temporal::first_crossing(traj, 3, 16).t_cross.value() == 4);
  }

  SUBCASE("the confirm run must fit inside the horizon") {
    // Horizon 5: the run 4..6 would need step 6, outside the search range
    // for n_confirm = 3.
    auto c = temporal::first_crossing(traj, 3, 5);
    CHECK(c.censored);
    CHECK(!c.t_cross.has_value());
  }

  SUBCASE("horizon below the first dip censors") {
    auto c = temporal::first_crossing(traj, 1, 1);
    CHECK(c.censored);
  }
}

TEST_CASE("first_crossing on an always-positive trajectory censors") {
  auto c = temporal::first_crossing(traj_of({1.0, 2.0, 3.0}), 1, 16);
  CHECK(c.censored);
  CHECK(c.horizon == 16);
  CHECK(c.generation_steps == 2);
}

TEST_CASE("zero is not a crossing") {
  auto c = temporal::first_crossing(traj_of({1.0, 0.0, 0.0}), 1, 16);
  CHECK(c.censored);
}

TEST_CASE("crossing_rank_scores encodes censoring past the horizon") {
  auto t1 = temporal::first_crossing(traj_of({1.0, -1.0}), 1, 8);
  auto t2 = temporal::first_crossing(traj_of({1.0, 1.0, 1.0}), 1, 8);
  auto t3 = temporal::first_crossing(traj_of({1.0, 1.0, -1.0, -1.0}), 1, 8);
  auto scores = temporal::crossing_rank_scores({t1, t2, t3});
  CHECK(scores == std::vector<double>{1.0, 9.0, 2.0});

  SUBCASE("mixed horizons are rejected") {
    auto other = temporal::first_crossing(traj_of({1.0, -1.0}), 1, 12);
    CHECK(thrown_code([&] { temporal::crossing_rank_scores({t1, other}); }) ==
          errc::mixed_horizon);
  }
}

TEST_CASE("features flatten in a fixed order") {
  auto traj = traj_of({2.0, 1.0, -1.0, 3.0, -2.0, 0.0});
  auto sum = temporal::summarize(traj, {1, 3, 5});
  auto cross = temporal::first_crossing(traj, 1, 16);
  REQUIRE(cross.t_cross.value() == 2);

  auto f5 = temporal::features(sum, cross, temporal::FeatureSet::f5);
  REQUIRE(f5.names.size() == 5);
  REQUIRE(f5.values.size() == 5);
  CHECK(f5.names[0] == "s0");
  CHECK(f5.values[0] == doctest::Approx(2.0));

  auto f9 = temporal::features(sum, cross, temporal::FeatureSet::f9);
  CHECK(f9.values.size() == 9);
  // f9 extends f5 in place.
  for (std::size_t i = 0; i < 5; ++i) CHECK(f9.values[i] == f5.values[i]);

  auto f13 = temporal::features(sum, cross, temporal::FeatureSet::f13);
  REQUIRE(f13.values.size() == 13);
  for (std::size_t i = 0; i < 9; ++i) CHECK(f13.values[i] == f9.values[i]);

  // Crossing features: t_cross = 2 out of T = 5 generation steps.
  auto at = [&](const std::string& name) {
    for (std::size_t i = 0; i < f13.names.size(); ++i)
      if (f13.names[i] == name) return f13.values[i];
    FAIL("missing feature");
    return 0.0;
  };
  CHECK(at("t_cross") == doctest::Approx(2.0));
  CHECK(at("t_cross_frac") == doctest::Approx(2.0 / 5.0));
}

TEST_CASE("censored crossings map to the penalty encoding") {
  auto traj = traj_of({2.0, 1.0, 1.0, 1.0});
  auto sum = temporal::summarize(traj, {1, 3, 5});
  auto cross = temporal::first_crossing(traj, 1, 16);
  REQUIRE(cross.censored);
  auto f13 = temporal::features(sum, cross, temporal::FeatureSet::f13);
  auto at = [&](const std::string& name) {
    for (std::size_t i = 0; i < f13.names.size(); ++i)
      if (f13.names[i] == name) return f13.values[i];
    FAIL("missing feature");
    return 0.0;
  };
  CHECK(at("t_cross") == doctest::Approx(17.0));
  CHECK(at("t_cross_frac") == doctest::Approx(1.0));
}

TEST_CASE("features refuse an empty generation") {
  auto traj = traj_of({2.0});
  auto sum = temporal::summarize(traj, {1, 3, 5});
  auto cross = temporal::first_crossing(traj, 1, 16);
  CHECK(thrown_code([&] { temporal::features(sum, cross, temporal::FeatureSet::f5); }) ==
        errc::undefined_feature);
}

TEST_CASE("feature set names") {
  CHECK(std::string(temporal::feature_set_name(temporal::FeatureSet::f5)) == "f5");
  CHECK(std::string(temporal::feature_set_name(temporal::FeatureSet::f9)) == "f9");
  CHECK(std::string(temporal::feature_set_name(temporal::FeatureSet::f13)) == "f13");
}
