#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "edg/rates.hpp"

using edg::Hypothesis;
using edg::KernelBounds;
using edg::KernelSpec;
using edg::MonotoneFlags;
using edg::RateSequence;

TEST_CASE("rate sequences evaluate their closed forms", "[rates]") {
  const RateSequence c = RateSequence::constant(2.5);
  CHECK(c(0) == 2.5);
  CHECK(c(17) == 2.5);

  const RateSequence p = RateSequence::power(2.0, 1.5);
  CHECK(p(0) == 0.0);
  CHECK(p(1) == 2.0);
  CHECK(p(4) == Catch::Approx(16.0).epsilon(1e-14));

  // Negative exponents clamp the index to 1 at j = 0 so import factors stay
  // finite there.
  const RateSequence inv = RateSequence::power(3.0, -2.0);
  CHECK(inv(0) == 3.0);
  CHECK(inv(2) == Catch::Approx(0.75).epsilon(1e-14));

  const RateSequence lin = RateSequence::linear(0.5);
  CHECK(lin(0) == 0.0);
  CHECK(lin(6) == 3.0);

  const RateSequence logc = RateSequence::log_corrected(2.0);
  CHECK(logc(0) == 0.0);
  CHECK(logc(5) == Catch::Approx(10.0 / std::log(5.0 + std::numbers::e)).epsilon(1e-14));
}

TEST_CASE("telescoping ladders compound to pure powers", "[rates]") {
  const RateSequence r = RateSequence::telescoping(4.0);
  CHECK(r(0) == 1.0);
  CHECK(r(1) == 1.0);
  CHECK(r(2) == Catch::Approx(16.0).epsilon(1e-14));

  double product = 1.0;
  for (edg::index_t j = 1; j <= 30; ++j) {
    product *= r(j);
    CHECK(product == Catch::Approx(std::pow(static_cast<double>(j), 4.0)).epsilon(1e-12));
  }
}

TEST_CASE("table sequences extend by their declared tail rule", "[rates]") {
  const RateSequence held = RateSequence::table({1.0, 2.0, 5.0});
  CHECK(held(0) == 1.0);
  CHECK(held(2) == 5.0);
  CHECK(held(9) == 5.0);

  const RateSequence grown =
      RateSequence::table({1.0, 2.0, 5.0}, RateSequence::TailRule::power, 2.0);
  CHECK(grown(1) == 2.0);
  CHECK(grown(4) == Catch::Approx(20.0).epsilon(1e-14));  // 5 * (4/2)^2

  const RateSequence single =
      RateSequence::table({3.0}, RateSequence::TailRule::power, 2.0);
  CHECK(single(7) == 3.0);  // no reference index to scale from: hold
}

TEST_CASE("rate sequence construction rejects invalid input", "[rates]") {
  CHECK_THROWS_AS(RateSequence::constant(-1.0), std::invalid_argument);
  CHECK_THROWS_AS(RateSequence::linear(std::nan("")), std::invalid_argument);
  CHECK_THROWS_AS(RateSequence::table({}), std::invalid_argument);
  CHECK_THROWS_AS(RateSequence::table({1.0, -2.0}), std::invalid_argument);
  CHECK_THROWS_AS(RateSequence::power(1.0, std::numeric_limits<double>::infinity()),
                  std::invalid_argument);
  const RateSequence r = RateSequence::constant(1.0);
  CHECK_THROWS_AS(r(-1), std::invalid_argument);
}

TEST_CASE("kernel point values follow the declared form", "[rates]") {
  // Product form: K(j, k) = b_j * a_k.
  const KernelSpec product =
      KernelSpec::product(RateSequence::linear(1.0), RateSequence::constant(2.0));
  CHECK(product.eval(3, 4) == 8.0);
  CHECK(product.eval(1, 0) == 0.0);  // a_0 = 0 for a linear import factor
  CHECK(product.eval(0, 4) == 0.0);  // empty sites never export

  // Sum form: K(j, k) = j a_k + b_j + eps beta_j alpha_k.
  const KernelSpec sum =
      KernelSpec::sum(RateSequence::constant(1.0), RateSequence::linear(1.0),
                      RateSequence::constant(1.0), RateSequence::constant(1.0), 0.25);
  CHECK(sum.eval(2, 7) == Catch::Approx(2.0 + 2.0 + 0.25).epsilon(1e-14));
  CHECK(sum.eval(0, 7) == 0.0);
}

TEST_CASE("declared bounds are checked against the actual sequences", "[rates]") {
  KernelBounds good;
  good.a_min = 1.0;
  good.b_min = 2.0;
  good.a_slope = 1.0;  // a_j = 1 <= j for j >= 1
  good.b_slope = 2.0;
  const KernelSpec ok = KernelSpec::product(RateSequence::constant(1.0),
                                            RateSequence::constant(2.0), good);
  CHECK(ok.validate_bounds(500).empty());

  KernelBounds bad = good;
  bad.a_min = 1.5;  // claims a_j >= 1.5 but a_j = 1
  const KernelSpec broken = KernelSpec::product(RateSequence::constant(1.0),
                                                RateSequence::constant(2.0), bad);
  const auto violations = broken.validate_bounds(500);
  REQUIRE_FALSE(violations.empty());
  CHECK(violations.front().find("a_min") != std::string::npos);

  MonotoneFlags flags;
  flags.a_nonincreasing = true;
  const KernelSpec rising = KernelSpec::product(RateSequence::table({1.0, 2.0}),
                                                RateSequence::constant(1.0), {}, flags);
  CHECK_FALSE(rising.validate_bounds(10).empty());
}

TEST_CASE("hypothesis checks classify the canonical kernels", "[rates]") {
  SECTION("constant export over constant import keeps a positive ratio") {
    const KernelSpec geometric =
        KernelSpec::product(RateSequence::constant(1.0), RateSequence::constant(2.0));
    const auto report = edg::validate_hypotheses(
        geometric, 2000, {Hypothesis::ratio_vanishes, Hypothesis::ratio_above_radius});
    const auto* vanish = report.find(Hypothesis::ratio_vanishes);
    REQUIRE(vanish != nullptr);
    CHECK_FALSE(vanish->passed);  // a_j / b_{j+1} = 1/2, nowhere near 0
    CHECK(vanish->observed == Catch::Approx(0.5).margin(1e-6));
    const auto* above = report.find(Hypothesis::ratio_above_radius);
    REQUIRE(above != nullptr);
    CHECK(above->passed);
    CHECK(above->observed == Catch::Approx(2.0).margin(1e-6));
  }

  SECTION("linearly growing export dominates constant import") {
    const KernelSpec linear =
        KernelSpec::product(RateSequence::constant(1.0), RateSequence::linear(1.0));
    const auto report = edg::validate_hypotheses(
        linear, 2000, {Hypothesis::ratio_vanishes, Hypothesis::ratio_above_radius,
                       Hypothesis::growth_linear});
    CHECK(report.find(Hypothesis::ratio_vanishes)->passed);
    const auto* above = report.find(Hypothesis::ratio_above_radius);
    CHECK(above->passed);  // ratio diverges: every fugacity is admissible
    CHECK(std::isinf(above->observed));
    CHECK(report.find(Hypothesis::growth_linear)->passed);
  }

  SECTION("superlinear export violates the linear growth hypothesis") {
    const KernelSpec quadratic =
        KernelSpec::product(RateSequence::constant(1.0), RateSequence::power(1.0, 2.0));
    const auto report =
        edg::validate_hypotheses(quadratic, 2000, {Hypothesis::growth_linear});
    CHECK_FALSE(report.find(Hypothesis::growth_linear)->passed);
  }

  SECTION("log-corrected growth matches its own envelope") {
    const KernelSpec logc = KernelSpec::product(RateSequence::log_corrected(1.0),
                                                RateSequence::log_corrected(2.0));
    const auto report =
        edg::validate_hypotheses(logc, 2000, {Hypothesis::growth_log_corrected});
    CHECK(report.find(Hypothesis::growth_log_corrected)->passed);
  }

  SECTION("uniform import floor applies to sum-form kernels only") {
    const KernelSpec product =
        KernelSpec::product(RateSequence::constant(1.0), RateSequence::constant(1.0));
    const auto na = edg::validate_hypotheses(product, 100,
                                             {Hypothesis::uniform_import_floor});
    CHECK_FALSE(na.find(Hypothesis::uniform_import_floor)->applicable);

    KernelBounds bounds;
    bounds.a_min = 0.7;
    bounds.pert_sup = 1.0;
    const KernelSpec sum = KernelSpec::sum(
        RateSequence::table({1.3, 0.7, 1.3, 0.7}), RateSequence::linear(1.0),
        RateSequence::constant(1.0), RateSequence::constant(1.0), 0.01, bounds);
    const auto report =
        edg::validate_hypotheses(sum, 100, {Hypothesis::uniform_import_floor});
    const auto* floor = report.find(Hypothesis::uniform_import_floor);
    REQUIRE(floor != nullptr);
    CHECK(floor->applicable);
    CHECK(floor->passed);
  }

  SECTION("declared linear caps are required before the cap check applies") {
    const KernelSpec bare =
        KernelSpec::product(RateSequence::constant(1.0), RateSequence::linear(1.0));
    const auto na = edg::validate_hypotheses(bare, 100, {Hypothesis::linear_growth_caps});
    CHECK_FALSE(na.find(Hypothesis::linear_growth_caps)->applicable);

    KernelBounds bounds;
    bounds.a_slope = 1.0;
    bounds.b_slope = 1.0;
    const KernelSpec capped = KernelSpec::product(RateSequence::constant(1.0),
                                                  RateSequence::linear(1.0), bounds);
    const auto report =
        edg::validate_hypotheses(capped, 100, {Hypothesis::linear_growth_caps});
    const auto* caps = report.find(Hypothesis::linear_growth_caps);
    REQUIRE(caps != nullptr);
    CHECK(caps->applicable);
    CHECK(caps->passed);
    CHECK(caps->observed > 0.0);  // echoed kernel-cap constant
    CHECK(caps->observed <= 1.0 + 1e-9);
  }
}

TEST_CASE("weak contraction rate floors follow the declared data", "[rates]") {
  KernelBounds bounds;
  bounds.a_min = 0.7;
  bounds.pert_sup = 1.0;
  const KernelSpec sum = KernelSpec::sum(
      RateSequence::constant(0.7), RateSequence::linear(1.0), RateSequence::constant(1.0),
      RateSequence::constant(1.0), 0.05, bounds);
  CHECK(edg::weak_contraction_rate(sum) == Catch::Approx(0.7 - 8.0 * 0.05).epsilon(1e-14));

  const KernelSpec product =
      KernelSpec::product(RateSequence::constant(1.0), RateSequence::constant(1.0));
  CHECK_THROWS_AS(edg::weak_contraction_rate(product), std::invalid_argument);
}
