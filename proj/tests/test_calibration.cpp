#include <doctest.h>

#include <cmath>
#include <optional>
#include <vector>

#include "lmdiag/calibration.hpp"
#include "lmdiag/rng.hpp"

using namespace lmdiag;
using calibration::AnchorMode;
using calibration::AxisSample;
using calibration::ConditionSample;

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

// Six harmful records (two successes), four benign references, hand-pickable
// numbers on both axes.
ConditionSample hand_condition() {
  ConditionSample c;
  c.condition_id = "m+a";
  c.model_id = "m";
  c.attack_id = "a";
  c.harmful = {
      {4.0, 2.0}, {6.0, 4.0},            // successes
      {1.0, -1.0}, {2.0, 0.0}, {3.0, 1.0}, {0.0, -2.0},  // failures
  };
  c.success = {true, true, false, false, false, false};
  c.benign = {{8.0, 6.0}, {10.0, 8.0}, {9.0, 7.0}, {13.0, 11.0}};
  return c;
}

}  // namespace

TEST_CASE("compute_anchors under each mode") {
  ConditionSample c = hand_condition();

  SUBCASE("condition_all_harmful") {
    auto an = calibration::compute_anchors(c, AnchorMode::condition_all_harmful);
    CHECK(an.a.m_success == doctest::Approx(5.0));
    CHECK(an.a.m_harmful == doctest::Approx(16.0 / 6.0));
    CHECK(an.a.m_benign == doctest::Approx(10.0));
    CHECK(an.a.delta == doctest::Approx(10.0 - 16.0 / 6.0));
    CHECK(!an.a.degenerate);
    CHECK(an.a.n_success == 2);
    CHECK(an.a.n_harmful == 6);
    CHECK(an.a.n_benign == 4);
    CHECK(an.a.excluded == 0);
    CHECK(an.b.m_success == doctest::Approx(3.0));
    CHECK(an.b.m_harmful == doctest::Approx(4.0 / 6.0));
    CHECK(an.b.m_benign == doctest::Approx(8.0));
  }

  SUBCASE("failed_only uses only the failures as baseline") {
    auto an = calibration::compute_anchors(c, AnchorMode::failed_only);
    CHECK(an.a.m_success == doctest::Approx(5.0));
    CHECK(an.a.m_harmful == doctest::Approx(6.0 / 4.0));
    CHECK(an.a.n_harmful == 4);
  }

  SUBCASE("model_global swaps in the pooled anchors") {
    calibration::ModelPool pool;
    pool.harmful = {{0.0, 0.0}, {2.0, 2.0}};
    pool.benign = {{20.0, 20.0}, {22.0, 22.0}};
    auto an = calibration::compute_anchors(c, AnchorMode::model_global, &pool);
    CHECK(an.a.m_success == doctest::Approx(5.0));  // still the condition's own
    CHECK(an.a.m_harmful == doctest::Approx(1.0));
    CHECK(an.a.m_benign == doctest::Approx(21.0));
    CHECK(an.a.n_harmful == 2);
    CHECK(an.a.n_benign == 2);
  }

  SUBCASE("model_global without a pool is a config error") {
    CHECK(thrown_code([&] {
            calibration::compute_anchors(c, AnchorMode::model_global, nullptr);
          }) == errc::invalid_config);
  }

  SUBCASE("no successful record") {
    ConditionSample none = c;
    none.success.assign(none.success.size(), false);
    CHECK(thrown_code([&] {
            calibration::compute_anchors(none, AnchorMode::condition_all_harmful);
          }) == errc::no_successes);
  }

  SUBCASE("failed_only with no failures") {
    ConditionSample all = c;
    all.success.assign(all.success.size(), true);
    CHECK(thrown_code([&] { calibration::compute_anchors(all, AnchorMode::failed_only); }) ==
          errc::no_failures);
  }
}

TEST_CASE("records without a generation mean drop off axis B only") {
  ConditionSample c = hand_condition();
  c.harmful[2].b.reset();
  c.benign[0].b.reset();
  auto an = calibration::compute_anchors(c, AnchorMode::condition_all_harmful);
  CHECK(an.a.n_harmful == 6);
  CHECK(an.a.excluded == 0);
  CHECK(an.b.n_harmful == 5);
  CHECK(an.b.excluded == 2);
  CHECK(an.b.n_benign == 3);
  // Axis B harmful mean over {4, 0, 1, -2} plus success values {2, 4}.
  CHECK(an.b.m_harmful == doctest::Approx(5.0 / 5.0));
  CHECK(an.b.m_benign == doctest::Approx((8.0 + 7.0 + 11.0) / 3.0));
}

TEST_CASE("relative_position reproduces a hand-checked value") {
  // (4.33 - 0.62) / (4.29 - 0.62) = 3.71 / 3.67.
  CHECK(calibration::relative_position(4.33, 0.62, 4.29) ==
        doctest::Approx(3.71 / 3.67).epsilon(1e-12));
  CHECK(calibration::relative_position(5.0, 0.0, 10.0) == doctest::Approx(0.5));
  // Above the benign reference and below the harmful baseline stay unclipped.
  CHECK(calibration::relative_position(12.0, 0.0, 10.0) == doctest::Approx(1.2));
  CHECK(calibration::relative_position(-2.0, 0.0, 10.0) == doctest::Approx(-0.2));
  CHECK(thrown_code([] { calibration::relative_position(1.0, 3.0, 3.0); }) ==
        errc::degenerate_denominator);
}

TEST_CASE("rp_coordinate combines both axes") {
  ConditionSample c = hand_condition();
  auto an = calibration::compute_anchors(c, AnchorMode::condition_all_harmful);
  auto rp = calibration::rp_coordinate(c, an);

  double exp_a = (5.0 - 16.0 / 6.0) / (10.0 - 16.0 / 6.0);
  double exp_b = (3.0 - 4.0 / 6.0) / (8.0 - 4.0 / 6.0);
  CHECK(rp.rp_a == doctest::Approx(exp_a).epsilon(1e-12));
  CHECK(rp.rp_b == doctest::Approx(exp_b).epsilon(1e-12));
  CHECK(rp.r == doctest::Approx(std::hypot(exp_a, exp_b)).epsilon(1e-12));
  CHECK(rp.asr == doctest::Approx(2.0 / 6.0));
  CHECK(rp.n_success == 2);
  CHECK(rp.n_harmful == 6);
  CHECK(!rp.degenerate_a);
  CHECK(!rp.degenerate_b);

  SUBCASE("the pooling identity holds exactly on both axes") {
    REQUIRE(rp.identity_gap_a.has_value());
    REQUIRE(rp.identity_gap_b.has_value());
    CHECK(std::abs(*rp.identity_gap_a) < 1e-12);
    CHECK(std::abs(*rp.identity_gap_b) < 1e-12);
  }
}

TEST_CASE("pooling identity survives random conditions") {
  rng::stream rs(417u);
  for (int trial = 0; trial < 200; ++trial) {
    ConditionSample c;
    c.condition_id = "t";
    int n = 3 + static_cast<int>(rs.uniform_int(0, 9));
    int n_succ = 1 + static_cast<int>(rs.uniform_int(0, n - 2));
    for (int i = 0; i < n; ++i) {
      c.harmful.push_back({rs.normal(0.0, 3.0), rs.normal(0.0, 3.0)});
      c.success.push_back(i < n_succ);
    }
    c.benign = {{rs.normal(10.0, 1.0), rs.normal(10.0, 1.0)},
                {rs.normal(10.0, 1.0), rs.normal(10.0, 1.0)}};
    auto an = calibration::compute_anchors(c, AnchorMode::condition_all_harmful);
    auto rp = calibration::rp_coordinate(c, an);
    REQUIRE(rp.identity_gap_a.has_value());
    CHECK(std::abs(*rp.identity_gap_a) < 1e-9);
    CHECK(std::abs(*rp.identity_gap_b) < 1e-9);
  }
}

TEST_CASE("a narrow anchor spread is flagged but still computed") {
  ConditionSample c;
  c.condition_id = "m+a";
  c.harmful = {{1.0, 1.0}, {1.02, 1.02}};
  c.success = {true, false};
  c.benign = {{1.05, 1.05}};
  auto an = calibration::compute_anchors(c, AnchorMode::condition_all_harmful);
  CHECK(an.a.degenerate);
  CHECK(an.a.delta == doctest::Approx(0.04));
  auto rp = calibration::rp_coordinate(c, an);
  CHECK(rp.degenerate_a);
  CHECK(rp.rp_a == doctest::Approx((1.0 - 1.01) / 0.04));
}

TEST_CASE("rp_distance is the Euclidean distance in the plane") {
  calibration::RpCoordinate x, y;
  x.rp_a = 0.35;
  x.rp_b = 0.84;
  y.rp_a = 0.14;
  y.rp_b = 0.31;
  CHECK(calibration::rp_distance(x, y) ==
        doctest::Approx(std::hypot(0.21, 0.53)).epsilon(1e-12));
  CHECK(calibration::rp_distance(x, x) == doctest::Approx(0.0));
}

TEST_CASE("rank_rp runs the anchor arithmetic on mid-rank percentiles") {
  // Axis A values: harmful {1, 2, 3, 4}, benign {5, 6}. Pooled ranking is
  // 1..6 with no ties; percentile of value v is (rank - 0.5) / 6.
  ConditionSample c;
  c.condition_id = "m+a";
  c.harmful = {{4.0, 4.0}, {1.0, 1.0}, {2.0, 2.0}, {3.0, 3.0}};
  c.success = {true, false, false, false};
  c.benign = {{5.0, 5.0}, {6.0, 6.0}};

  auto rp = calibration::rank_rp(c);
  double p = [](double rank) { return (rank - 0.5) / 6.0; }(4.0);  // success value 4
  double m_harm = ((0.5 / 6) + (1.5 / 6) + (2.5 / 6) + (3.5 / 6)) / 4.0;
  double m_benign = ((4.5 / 6) + (5.5 / 6)) / 2.0;
  double expected = (p - m_harm) / (m_benign - m_harm);
  CHECK(rp.rp_a == doctest::Approx(expected).epsilon(1e-12));
  CHECK(rp.rp_b == doctest::Approx(expected).epsilon(1e-12));

  SUBCASE("ties share a mid-rank") {
    ConditionSample t = c;
    t.harmful[0].a = 5.0;  // ties the first benign value
    auto rp2 = calibration::rank_rp(t);
    // Pooled: {1, 2, 3, 5, 5, 6}. Percentiles: 0.5/6, 1.5/6, 2.5/6 for the
    // singletons, 4/6 shared by the tied 5s, 5.5/6 for the 6.
    double p2 = 4.0 / 6.0;
    double mh = (4.0 / 6 + 0.5 / 6 + 1.5 / 6 + 2.5 / 6) / 4.0;
    double mb = (4.0 / 6 + 5.5 / 6) / 2.0;
    CHECK(rp2.rp_a == doctest::Approx((p2 - mh) / (mb - mh)).epsilon(1e-12));
  }
}

TEST_CASE("annotate assigns gap labels") {
  calibration::RpCoordinate c;
  c.rp_a = 0.8;
  c.rp_b = 0.2;

  SUBCASE("insignificant displacement is NGB") {
    auto an = calibration::annotate(c, 0.20, 0.30, 0.05);
    CHECK(an.label == calibration::GapLabel::ngb);
    CHECK(an.p_perm == doctest::Approx(0.20));
    CHECK(an.p_bh == doctest::Approx(0.30));
  }

  SUBCASE("significant with |rp_a| dominant is PGB") {
    auto an = calibration::annotate(c, 0.001, 0.004, 0.05);
    CHECK(an.label == calibration::GapLabel::pgb);
    CHECK(an.axis_margin == doctest::Approx(0.6));
  }

  SUBCASE("significant with |rp_b| dominant is IGB") {
    calibration::RpCoordinate d;
    d.rp_a = 0.1;
    d.rp_b = -0.9;
    auto an = calibration::annotate(d, 0.001, 0.004, 0.05);
    CHECK(an.label == calibration::GapLabel::igb);
  }

  SUBCASE("an exact tie refuses to pick a side") {
    calibration::RpCoordinate e;
    e.rp_a = 0.5;
    e.rp_b = -0.5;
    auto an = calibration::annotate(e, 0.001, 0.004, 0.05);
    CHECK(an.label == calibration::GapLabel::na);
  }

  SUBCASE("boundary p_bh equal to q counts as significant") {
    auto an = calibration::annotate(c, 0.01, 0.05, 0.05);
    CHECK(an.label == calibration::GapLabel::pgb);
  }
}

TEST_CASE("anchor mode names round-trip") {
  for (auto m : {AnchorMode::condition_all_harmful, AnchorMode::failed_only,
                 AnchorMode::model_global})
    CHECK(calibration::anchor_mode_from_string(calibration::anchor_mode_name(m)) == m);
  CHECK(thrown_code([] { calibration::anchor_mode_from_string("nope"); }) ==
        errc::invalid_config);
}
