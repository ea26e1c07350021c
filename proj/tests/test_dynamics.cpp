#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "edg/dynamics.hpp"
#include "edg/equilibrium.hpp"
#include "edg/experiments.hpp"

using edg::ClusterState;
using edg::EdgSystem;
using edg::IntegratorConfig;
using edg::KernelSpec;
using edg::RateSequence;
using edg::SamplingPlan;
using edg::index_t;

namespace {

KernelSpec unit_kernel() {
  return KernelSpec::product(RateSequence::constant(1.0), RateSequence::constant(1.0));
}

}  // namespace

TEST_CASE("the exchange right-hand side matches a hand computation", "[dynamics]") {
  // Order 2, K(j, k) = 1 for j >= 1, state (0.5, 0.3, 0.2).
  // Export sums: S_exp = c_0 + c_1 = 0.8; import sums: S_imp = c_1 + c_2 = 0.5.
  // Bond fluxes: W_1 = 0.5 * 0.5 - 0.3 * 0.8 = 0.01,
  //              W_2 = 0.3 * 0.5 - 0.2 * 0.8 = -0.01.
  const EdgSystem system(unit_kernel(), 2);
  const std::vector<double> c{0.5, 0.3, 0.2};
  std::vector<double> dcdt(3);
  system.rhs(c, dcdt);
  CHECK(dcdt[0] == Catch::Approx(-0.01).margin(1e-15));
  CHECK(dcdt[1] == Catch::Approx(0.02).margin(1e-15));
  CHECK(dcdt[2] == Catch::Approx(-0.01).margin(1e-15));

  std::vector<double> flux(2);
  system.bond_fluxes(c, flux);
  CHECK(flux[0] == Catch::Approx(0.01).margin(1e-15));
  CHECK(flux[1] == Catch::Approx(-0.01).margin(1e-15));
}

TEST_CASE("the cached right-hand side agrees with the dense reference", "[dynamics]") {
  std::mt19937_64 rng(2026);
  double worst = 0.0;
  for (int trial = 0; trial < 40; ++trial) {
    const index_t n = 8 + 7 * (trial % 8);
    const KernelSpec kernel = edg::detail::random_kernel(rng, n, trial % 2 == 0);
    const auto c = edg::detail::random_densities(rng, n, 0.25);
    const auto ref = edg::detail::reference_rhs(kernel, c);
    const EdgSystem system(kernel, n);
    std::vector<double> fast(c.size());
    system.rhs(c, fast);
    double scale = 1e-30;
    for (double v : ref) scale = std::max(scale, std::abs(v));
    for (std::size_t j = 0; j < c.size(); ++j)
      worst = std::max(worst, std::abs(fast[j] - ref[j]) / scale);
  }
  CHECK(worst <= 1e-13);
}

TEST_CASE("exchange dynamics conserve volume and mass identically", "[dynamics]") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const index_t n = 16 + 16 * (trial % 4);
    const KernelSpec kernel = edg::detail::random_kernel(rng, n, trial % 2 == 1);
    const auto c = edg::detail::random_densities(rng, n, 0.1);
    const EdgSystem system(kernel, n);
    std::vector<double> dcdt(c.size());
    system.rhs(c, dcdt);
    double m0 = 0.0, m1 = 0.0, scale = 0.0;
    for (std::size_t j = 0; j < c.size(); ++j) {
      m0 += dcdt[j];
      m1 += static_cast<double>(j) * dcdt[j];
      scale += std::abs(dcdt[j]) * (1.0 + static_cast<double>(j));
    }
    CHECK(std::abs(m0) <= 1e-13 * std::max(scale, 1.0));
    CHECK(std::abs(m1) <= 1e-13 * std::max(scale, 1.0));
  }
}

TEST_CASE("the weighted moment identity holds for the computed rhs", "[dynamics]") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const index_t n = 24;
    const KernelSpec kernel = edg::detail::random_kernel(rng, n, trial % 2 == 0);
    const ClusterState state(edg::detail::random_densities(rng, n, 0.0));
    const EdgSystem system(kernel, n);
    std::vector<double> dcdt(state.densities().size());
    system.rhs(state.densities(), dcdt);
    std::vector<double> g(state.densities().size());
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (double& v : g) v = dist(rng);
    const double resid = edg::moment_identity_residual(kernel, state, g);
    double scale = 1.0;
    for (std::size_t j = 0; j < g.size(); ++j) scale += std::abs(g[j] * dcdt[j]);
    CHECK(resid <= 1e-12 * scale);
  }
}

TEST_CASE("truncated detailed-balance profiles are exact stationary points", "[dynamics]") {
  // c_j proportional to Q_j z^j makes every bond flux vanish identically,
  // for any fugacity z, because the truncated chain satisfies detailed balance.
  const KernelSpec kernel =
      KernelSpec::product(RateSequence::constant(1.0), RateSequence::telescoping(4.0));
  const index_t n = 32;
  std::vector<double> c(static_cast<std::size_t>(n) + 1);
  const double y = 0.3, z = 0.9;
  c[0] = y;
  for (index_t j = 1; j <= n; ++j)
    c[static_cast<std::size_t>(j)] =
        y * std::pow(static_cast<double>(j), -4.0) * std::pow(z, static_cast<double>(j));
  const EdgSystem system(kernel, n);
  std::vector<double> dcdt(c.size());
  system.rhs(c, dcdt);
  double worst = 0.0;
  for (double v : dcdt) worst = std::max(worst, std::abs(v));
  CHECK(worst <= 1e-14);
}

TEST_CASE("the adaptive integrator hits requested sample times exactly", "[dynamics]") {
  const ClusterState initial = edg::monomer_state(0.5, 1.0, 16);
  SamplingPlan plan;
  plan.explicit_times = {0.25, 1.0, 2.5};
  const auto traj = edg::integrate(unit_kernel(), initial, 4.0, {}, plan);
  REQUIRE(traj.samples.size() == 5);  // t0 and t_end added around the three
  CHECK(traj.samples[0].time() == 0.0);
  CHECK(traj.samples[1].time() == 0.25);
  CHECK(traj.samples[2].time() == 1.0);
  CHECK(traj.samples[3].time() == 2.5);
  CHECK(traj.samples[4].time() == 4.0);
  CHECK(traj.stats.stop_reason == "t_end");
}

TEST_CASE("tightening tolerances converges the integrator", "[dynamics]") {
  const ClusterState initial = edg::monomer_state(0.8, 1.0, 24);
  IntegratorConfig loose;
  loose.rel_tol = 1e-5;
  loose.abs_tol = 1e-9;
  IntegratorConfig tight;
  tight.rel_tol = 1e-12;
  tight.abs_tol = 1e-14;
  const auto coarse = edg::integrate(unit_kernel(), initial, 5.0, loose);
  const auto fine = edg::integrate(unit_kernel(), initial, 5.0, tight);
  const double gap = edg::distance(coarse.samples.back(), fine.samples.back(),
                                   edg::Distance::strong1);
  CHECK(gap <= 1e-4);
  CHECK(fine.stats.steps_accepted > coarse.stats.steps_accepted);
  CHECK(fine.stats.max_mass_drift <= 1e-10);
  CHECK(fine.stats.max_volume_drift <= 1e-10);
}

TEST_CASE("integration from an equilibrium profile stalls immediately", "[dynamics]") {
  const KernelSpec kernel = unit_kernel();
  const auto profile = edg::equilibrium_profile(kernel, 0.5, 1.0, 32);
  REQUIRE(profile.state.has_value());
  const auto traj = edg::integrate(kernel, *profile.state, 100.0, {}, {}, {1e-12});
  CHECK(traj.stats.stop_reason == "stall");
  CHECK(traj.stats.stop_time < 100.0);
  const double moved =
      edg::distance(traj.samples.back(), *profile.state, edg::Distance::strong1);
  CHECK(moved <= 1e-10);
}

TEST_CASE("integration is deterministic run to run", "[dynamics]") {
  const ClusterState initial = edg::geometric_state(0.6, 1.0, 0.4, 20);
  const KernelSpec kernel =
      KernelSpec::sum(RateSequence::constant(1.0), RateSequence::linear(1.0),
                      RateSequence::constant(1.0), RateSequence::constant(1.0), 0.05);
  const auto run1 = edg::integrate(kernel, initial, 3.0);
  const auto run2 = edg::integrate(kernel, initial, 3.0);
  REQUIRE(run1.samples.size() == run2.samples.size());
  for (std::size_t i = 0; i < run1.samples.size(); ++i) {
    REQUIRE(run1.samples[i].time() == run2.samples[i].time());
    for (index_t j = 0; j <= initial.order(); ++j)
      REQUIRE(run1.samples[i][j] == run2.samples[i][j]);  // bit-for-bit
  }
}

TEST_CASE("the fixed-step integrator tracks the adaptive one", "[dynamics]") {
  const ClusterState initial = edg::monomer_state(0.5, 1.0, 16);
  IntegratorConfig fixed;
  fixed.method = edg::Method::rk4;
  fixed.max_step = 1e-3;
  const auto rk4 = edg::integrate(unit_kernel(), initial, 2.0, fixed);
  const auto rk45 = edg::integrate(unit_kernel(), initial, 2.0);
  const double gap =
      edg::distance(rk4.samples.back(), rk45.samples.back(), edg::Distance::strong1);
  CHECK(gap <= 1e-8);
  CHECK(rk4.stats.max_mass_drift <= 1e-12);
}

TEST_CASE("paired integration shares sample times and conserves both members",
          "[dynamics]") {
  const KernelSpec kernel =
      KernelSpec::sum(RateSequence::constant(1.0), RateSequence::linear(1.0),
                      RateSequence::constant(0.5), RateSequence::constant(0.5), 0.02);
  const ClusterState a = edg::monomer_state(0.4, 1.0, 24);
  const ClusterState b = edg::geometric_state(0.4, 1.0, 0.5, 24);
  const auto pair = edg::integrate_pair(kernel, a, b, 2.0);
  REQUIRE(pair.first.size() == pair.second.size());
  REQUIRE(pair.first.size() >= 2);
  for (std::size_t i = 0; i < pair.first.size(); ++i)
    CHECK(pair.first[i].time() == pair.second[i].time());
  CHECK(pair.first.front().mass() == Catch::Approx(0.4).epsilon(1e-12));
  CHECK(pair.second.front().mass() == Catch::Approx(0.4).epsilon(1e-12));
  CHECK(pair.stats.max_mass_drift <= 1e-9);
  CHECK(pair.stats.max_volume_drift <= 1e-9);

  // Each half agrees with its standalone integration to error-control accuracy.
  const auto solo = edg::integrate(kernel, a, 2.0);
  const double gap =
      edg::distance(pair.first.back(), solo.samples.back(), edg::Distance::strong1);
  CHECK(gap <= 1e-5);
}

TEST_CASE("integrator configuration is validated", "[dynamics]") {
  IntegratorConfig bad;
  bad.rel_tol = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = IntegratorConfig{};
  bad.negativity_floor = -1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  SamplingPlan plan;
  plan.count = 1;
  CHECK_THROWS_AS(plan.build(0.0, 1.0), std::invalid_argument);
  plan = SamplingPlan{};
  CHECK_THROWS_AS(plan.build(1.0, 1.0), std::invalid_argument);
}
