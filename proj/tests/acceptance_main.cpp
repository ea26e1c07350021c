// Acceptance gate for the exchange-driven growth laboratory.
//
// Each criterion below is self-contained: it pins its configuration and
// tolerances in code, runs the computation, and reports one [PASS]/[FAIL]
// line with the measured numbers.  The process exit code is the number of
// failed criteria, so this binary doubles as a CI gate.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "edg/edg.hpp"

namespace {

using edg::ClusterState;
using edg::Distance;
using edg::index_t;
using edg::IntegratorConfig;
using edg::KernelBounds;
using edg::KernelForm;
using edg::KernelSpec;
using edg::RateSequence;
using edg::SamplingPlan;
using edg::StallRule;
using edg::Trajectory;

struct Criterion {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string detail;
};

std::vector<Criterion> g_results;

std::string fmt(double x) {
  std::ostringstream os;
  os.precision(4);
  os << x;
  return os.str();
}

void record(int id, const std::string& name, bool passed, const std::string& detail) {
  g_results.push_back({id, name, passed, detail});
  std::cout << (passed ? "[PASS] " : "[FAIL] ") << id << ". " << name << " — " << detail
            << std::endl;
}

template <class Fn>
void run_criterion(int id, const std::string& name, Fn&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    record(id, name, false, std::string("exception: ") + e.what());
  }
}

// Independent dense evaluation of the truncated right-hand side, written from
// the per-bond balance W_{j+1} = c_j S_imp(j) - c_{j+1} S_exp(j+1) with the
// exchange sums assembled from kernel point values (O(N^2) double loop).
std::vector<double> naive_rhs(const KernelSpec& kernel, std::span<const double> c) {
  const auto n = static_cast<index_t>(c.size()) - 1;
  std::vector<double> s_exp(c.size(), 0.0), s_imp(c.size(), 0.0);
  for (index_t j = 0; j <= n; ++j) {
    for (index_t k = 0; k <= n - 1; ++k)
      s_exp[static_cast<std::size_t>(j)] += kernel.eval(j, k) * c[static_cast<std::size_t>(k)];
    for (index_t k = 1; k <= n; ++k)
      s_imp[static_cast<std::size_t>(j)] += kernel.eval(k, j) * c[static_cast<std::size_t>(k)];
  }
  std::vector<double> dcdt(c.size(), 0.0);
  double w_prev = 0.0;  // W_j entering size j from below
  for (index_t j = 0; j <= n; ++j) {
    const auto ju = static_cast<std::size_t>(j);
    const double w_next = (j == n) ? 0.0
                                   : c[ju] * s_imp[ju] - c[ju + 1] * s_exp[ju + 1];
    dcdt[ju] = w_prev - w_next;
    w_prev = w_next;
  }
  return dcdt;
}

RateSequence random_table(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_int_distribution<int> len(8, 40);
  std::uniform_real_distribution<double> value(lo, hi);
  std::vector<double> values(static_cast<std::size_t>(len(rng)));
  for (double& v : values) v = value(rng);
  return RateSequence::table(std::move(values));
}

KernelSpec random_kernel(std::mt19937_64& rng, KernelForm form) {
  RateSequence a = random_table(rng, 0.3, 1.7);
  RateSequence b = random_table(rng, 0.3, 1.7);
  if (form == KernelForm::product) return KernelSpec::product(std::move(a), std::move(b));
  std::uniform_real_distribution<double> eps(0.0, 0.08);
  return KernelSpec::sum(std::move(a), std::move(b), random_table(rng, 0.0, 1.2),
                         random_table(rng, 0.0, 1.2), eps(rng));
}

ClusterState random_state(std::mt19937_64& rng, index_t order, double zero_fraction) {
  std::uniform_real_distribution<double> value(0.0, 1.0);
  std::vector<double> c(static_cast<std::size_t>(order) + 1);
  for (double& v : c) v = value(rng) < zero_fraction ? 0.0 : value(rng);
  if (std::all_of(c.begin(), c.end(), [](double v) { return v == 0.0; })) c[0] = 0.5;
  return ClusterState(std::move(c));
}

// The telescoping-4 export ladder gives equilibrium weights Q_j = j^{-4}
// (fugacity radius 1); its critical density is zeta(3) / (1 + zeta(4)) and
// the critical monomer scale is 1 / (1 + zeta(4)).  Frozen from the series.
constexpr double kTele4CriticalDensity = 0.5772672002594313;

KernelSpec tele4_kernel() {
  return KernelSpec::product(RateSequence::constant(1.0), RateSequence::telescoping(4.0));
}

// Shared between criteria 1 and 5: one long conservation run on the unit
// kernel, sampled densely on a log grid.
struct UnitRun {
  KernelSpec kernel = KernelSpec::product(RateSequence::constant(1.0), RateSequence::constant(1.0));
  Trajectory traj;
};
std::optional<UnitRun> g_unit_run;

void criterion_1_conservation() {
  UnitRun run;
  const ClusterState ic = edg::monomer_state(0.5, 1.0, 200);
  IntegratorConfig cfg;
  cfg.rel_tol = 1e-10;
  cfg.abs_tol = 1e-14;
  // Dense log-spaced sampling: criterion 5 trapezoids the dissipation over
  // these same snapshots, and 401 nodes leave ~4e-5 of quadrature error.
  SamplingPlan plan;
  plan.count = 2049;
  plan.log_spaced = true;
  plan.first_fraction = 1e-6;
  run.traj = edg::integrate(run.kernel, ic, 100.0, cfg, plan);

  double worst_volume = 0.0, worst_mass = 0.0;
  for (const auto& s : run.traj.samples) {
    worst_volume = std::max(worst_volume, std::abs(s.volume() - 1.0));
    worst_mass = std::max(worst_mass, std::abs(s.mass() - 0.5));
  }
  const bool finished = run.traj.stats.stop_reason == "t_end";
  const bool passed = finished && worst_volume <= 1e-8 && worst_mass <= 1e-8;
  record(1, "volume and mass conservation over a long run", passed,
         "N=200, t_end=100, rel_tol=1e-10: max |M0-1| = " + fmt(worst_volume) +
             ", max |M1-0.5| = " + fmt(worst_mass) + " (tol 1e-8), " +
             std::to_string(run.traj.samples.size()) + " samples, stop=" +
             run.traj.stats.stop_reason);
  g_unit_run = std::move(run);
}

void criterion_2_rhs_oracle_and_scaling() {
  std::mt19937_64 rng(0xED6);
  double worst_rel = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::uniform_int_distribution<index_t> order_dist(8, 64);
    const index_t n = order_dist(rng);
    const ClusterState state = random_state(rng, n, 0.2);
    for (KernelForm form : {KernelForm::product, KernelForm::sum}) {
      const KernelSpec kernel = random_kernel(rng, form);
      edg::EdgSystem system(kernel, n);
      std::vector<double> fast(static_cast<std::size_t>(n) + 1);
      system.rhs(state.densities(), fast);
      const std::vector<double> naive = naive_rhs(kernel, state.densities());
      double scale = 0.0, err = 0.0;
      for (std::size_t j = 0; j < naive.size(); ++j) {
        scale = std::max(scale, std::abs(naive[j]));
        err = std::max(err, std::abs(fast[j] - naive[j]));
      }
      worst_rel = std::max(worst_rel, err / std::max(scale, 1e-30));
    }
  }

  // Cost scaling: time the O(N) right-hand side at N = 1000 and N = 2000.
  auto time_rhs = [](index_t n) {
    const KernelSpec kernel =
        KernelSpec::product(RateSequence::table({1.1, 0.6, 1.4, 0.9, 1.2, 0.8}),
                            RateSequence::table({0.7, 1.3, 0.5, 1.6, 1.0, 0.9}));
    edg::EdgSystem system(kernel, n);
    std::vector<double> c(static_cast<std::size_t>(n) + 1), dcdt(c.size());
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> value(0.1, 1.0);
    for (double& v : c) v = value(rng);

    index_t reps = 1 << 10;
    double sink = 0.0;
    auto batch_seconds = [&](index_t count) {
      const auto start = std::chrono::steady_clock::now();
      for (index_t r = 0; r < count; ++r) {
        system.rhs(c, dcdt);
        sink += dcdt[static_cast<std::size_t>(n) / 2];
      }
      return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    };
    while (batch_seconds(reps) < 0.02 && reps < (index_t{1} << 24)) reps *= 2;
    double best = std::numeric_limits<double>::infinity();
    for (int trial = 0; trial < 5; ++trial) best = std::min(best, batch_seconds(reps));
    if (sink == 12345.6789) std::cout << "";  // keep the loop observable
    return best / static_cast<double>(reps);
  };
  const double t1000 = time_rhs(1000);
  const double t2000 = time_rhs(2000);
  const double ratio = t2000 / t1000;

  const bool passed = worst_rel <= 1e-12 && ratio <= 2.3;
  record(2, "fast right-hand side matches the dense double loop and scales linearly", passed,
         "100 random states x both forms: max rel err = " + fmt(worst_rel) +
             " (tol 1e-12); cost N=1000 -> 2000 ratio = " + fmt(ratio) + " (tol 2.3)");
}

void criterion_3_moment_identity() {
  std::mt19937_64 rng(0x3AC);
  const index_t n = 20;
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const ClusterState state = random_state(rng, n, 0.15);
    for (KernelForm form : {KernelForm::product, KernelForm::sum}) {
      const KernelSpec kernel = random_kernel(rng, form);
      edg::EdgSystem system(kernel, n);
      std::vector<double> dcdt(static_cast<std::size_t>(n) + 1);
      system.rhs(state.densities(), dcdt);

      std::vector<std::vector<double>> weight_sets;
      weight_sets.emplace_back(static_cast<std::size_t>(n) + 1, 1.0);
      std::vector<double> g_linear(static_cast<std::size_t>(n) + 1), g_square(g_linear.size()),
          g_random(g_linear.size());
      std::uniform_real_distribution<double> value(0.0, 1.0);
      for (index_t j = 0; j <= n; ++j) {
        const auto ju = static_cast<std::size_t>(j);
        g_linear[ju] = static_cast<double>(j);
        g_square[ju] = static_cast<double>(j) * static_cast<double>(j);
        g_random[ju] = value(rng);
      }
      weight_sets.push_back(std::move(g_linear));
      weight_sets.push_back(std::move(g_square));
      weight_sets.push_back(std::move(g_random));

      for (const auto& g : weight_sets) {
        double scale = 0.0;
        for (std::size_t j = 0; j < g.size(); ++j) scale += std::abs(g[j] * dcdt[j]);
        const double residual = edg::moment_identity_residual(kernel, state, g);
        worst = std::max(worst, residual / std::max(scale, 1e-30));
      }
    }
  }
  record(3, "weighted moment identity holds for arbitrary weights", worst <= 1e-12,
         "50 states x both forms x {1, j, j^2, random}: max scaled residual = " + fmt(worst) +
             " (tol 1e-12)");
}

void criterion_4_dissipation_sign() {
  std::mt19937_64 rng(0xD155);
  double worst = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 10; ++k) {
    const KernelSpec kernel = random_kernel(rng, KernelForm::product);
    for (int s = 0; s < 100; ++s) {
      std::vector<double> c(33);
      std::uniform_real_distribution<double> value(1e-6, 1.0);
      for (double& v : c) v = value(rng);
      const double d = edg::dissipation(kernel, ClusterState(std::move(c)));
      worst = std::min(worst, d);
    }
  }
  record(4, "entropy dissipation is non-negative on random positive states", worst >= -1e-12,
         "10 kernels x 100 states: min D = " + fmt(worst) + " (tol -1e-12)");
}

void criterion_5_entropy_decay() {
  if (!g_unit_run) {
    record(5, "relative entropy decreases and matches the dissipation integral", false,
           "skipped: the conservation run was not available");
    return;
  }
  const auto& samples = g_unit_run->traj.samples;
  const std::vector<double> logq =
      edg::log_q_factors(g_unit_run->kernel, samples.front().order());

  std::vector<double> v(samples.size()), d(samples.size());
  for (std::size_t k = 0; k < samples.size(); ++k) {
    v[k] = edg::relative_entropy(logq, samples[k]);
    d[k] = edg::dissipation(g_unit_run->kernel, samples[k]);
  }

  double worst_rise = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k + 1 < v.size(); ++k) worst_rise = std::max(worst_rise, v[k + 1] - v[k]);

  // Trapezoid the dissipation from the first sample where it is finite.  The
  // dissipation convention reports +inf whenever a populated size sits next to
  // an exactly empty one; the integrator's advancing front can produce such
  // cliffs at isolated early samples, so those are bridged by the trapezoid
  // over their finite neighbours (and counted — more than 2% dropped fails).
  std::size_t k0 = 0;
  while (k0 < d.size() && !std::isfinite(d[k0])) ++k0;
  std::vector<double> ts, ds;
  std::size_t dropped = 0;
  for (std::size_t k = k0; k < d.size(); ++k) {
    if (!std::isfinite(d[k])) {
      ++dropped;
      continue;
    }
    ts.push_back(samples[k].time());
    ds.push_back(d[k]);
  }
  double integral = 0.0;
  for (std::size_t k = 0; k + 1 < ds.size(); ++k)
    integral += 0.5 * (ds[k] + ds[k + 1]) * (ts[k + 1] - ts[k]);
  const bool usable = ds.size() >= 2 && std::isfinite(d.back()) &&
                      dropped * 50 <= d.size() - k0;
  const double defect =
      usable ? std::abs(v.back() - v[k0] + integral) : std::numeric_limits<double>::infinity();

  const bool passed = worst_rise <= 1e-7 && defect <= 1e-5;
  record(5, "relative entropy decreases and matches the dissipation integral", passed,
         "max rise between samples = " + fmt(worst_rise) + " (tol 1e-7), |dV + int D dt| = " +
             fmt(defect) + " (tol 1e-5, from t = " + fmt(samples[k0].time()) + ", " +
             std::to_string(dropped) + " empty-frontier samples bridged)");
}

void criterion_6_subcritical_strong_convergence() {
  const KernelSpec kernel = tele4_kernel();

  const double rho_s = edg::critical_density(kernel);
  const double oracle_gap = std::abs(rho_s - kTele4CriticalDensity);

  const auto profile = edg::equilibrium_profile(kernel, 0.4, 1.0, 400);
  if (!profile.state) {
    record(6, "subcritical relaxation reaches the detailed-balance profile", false,
           "no equilibrium profile was produced");
    return;
  }
  edg::EdgSystem system(kernel, 400);
  std::vector<double> dcdt(401);
  system.rhs(profile.state->densities(), dcdt);
  double residual = 0.0;
  for (double x : dcdt) residual = std::max(residual, std::abs(x));

  IntegratorConfig cfg;
  cfg.rel_tol = 1e-10;
  cfg.abs_tol = 1e-14;
  SamplingPlan sparse;
  sparse.count = 2;
  sparse.log_spaced = false;
  // Stall once max |dc/dt| < 5e-10: reachable above the rel_tol noise floor,
  // and still within a strong1 error ~1e-9 of the true equilibrium.
  const Trajectory traj =
      edg::integrate(kernel, edg::monomer_state(0.4, 1.0, 400), 1e5, cfg, sparse, StallRule{5e-10});
  const double gap = edg::distance(traj.samples.back(), *profile.state, Distance::strong1);

  const bool passed = oracle_gap <= 1e-6 && residual <= 1e-9 && gap <= 1e-4 &&
                      traj.stats.stop_reason == "stall";
  record(6, "subcritical relaxation reaches the detailed-balance profile", passed,
         "rho_s = " + fmt(rho_s) + " (oracle gap " + fmt(oracle_gap) +
             ", tol 1e-6); profile residual = " + fmt(residual) +
             " (tol 1e-9); strong1 at stall = " + fmt(gap) + " (tol 1e-4, stop=" +
             traj.stats.stop_reason + " at t = " + fmt(traj.stats.stop_time) + ")");
}

void criterion_7_supercritical_weak_convergence() {
  const KernelSpec kernel = tele4_kernel();
  const index_t n = 800;
  const auto profile = edg::equilibrium_profile(kernel, 0.9, 1.0, n);
  if (!profile.state || profile.regime != edg::Regime::supercritical) {
    record(7, "supercritical runs approach the critical profile on low sizes", false,
           "expected a supercritical critical-fugacity profile");
    return;
  }

  IntegratorConfig cfg;
  cfg.rel_tol = 1e-8;
  cfg.abs_tol = 1e-12;
  SamplingPlan sparse;
  sparse.count = 2;
  sparse.log_spaced = false;
  const Trajectory traj =
      edg::integrate(kernel, edg::monomer_state(0.9, 1.0, n), 30000.0, cfg, sparse);
  const ClusterState& end = traj.samples.back();

  double low_dev = 0.0;
  for (index_t j = 0; j <= 20; ++j) {
    const auto ju = static_cast<std::size_t>(j);
    low_dev = std::max(low_dev,
                       std::abs(end.densities()[ju] - profile.state->densities()[ju]));
  }
  const double mass_err = std::abs(end.mass() - 0.9);
  double tail_mass = 0.0;
  for (index_t j = n / 2 + 1; j <= n; ++j)
    tail_mass += static_cast<double>(j) * end.densities()[static_cast<std::size_t>(j)];

  const bool passed = low_dev <= 1e-3 && mass_err <= 1e-6 && tail_mass > 0.25;
  record(7, "supercritical runs approach the critical profile on low sizes", passed,
         "N=800, rho=0.9, t=30000: max low-size deviation = " + fmt(low_dev) +
             " (tol 1e-3), |M1 - 0.9| = " + fmt(mass_err) +
             " (tol 1e-6), mass beyond N/2 = " + fmt(tail_mass) + " (needs > 0.25)");
}

void criterion_8_weak_contraction_rate() {
  std::string detail;
  bool all = true;
  for (const double eps : {0.0, 0.05}) {
    KernelBounds bounds;
    bounds.a_min = 1.0;
    bounds.pert_sup = 1.0;
    const KernelSpec kernel =
        KernelSpec::sum(RateSequence::constant(1.0), RateSequence::linear(1.0),
                        RateSequence::constant(1.0), RateSequence::constant(1.0), eps, bounds);

    const index_t n = 128;
    IntegratorConfig cfg;
    cfg.rel_tol = 1e-12;
    cfg.abs_tol = 1e-16;
    SamplingPlan plan;
    plan.count = 51;
    plan.log_spaced = false;
    const auto pair = edg::integrate_pair(kernel, edg::monomer_state(0.5, 1.0, n),
                                          edg::geometric_state(0.5, 1.0, 0.5, n), 5.0, cfg, plan);

    std::vector<double> times(pair.first.size()), tails(pair.first.size());
    for (std::size_t k = 0; k < pair.first.size(); ++k) {
      times[k] = pair.first[k].time();
      tails[k] = edg::distance(pair.first[k], pair.second[k], Distance::tail_l1);
    }
    bool monotone = true;
    const double slack = 1e-12 * (tails.front() + 1.0);
    for (std::size_t k = 0; k + 1 < tails.size(); ++k)
      if (tails[k + 1] > tails[k] + slack) monotone = false;

    const auto fit = edg::fit_exponential_rate(times, tails, 0.5);
    const double floor = edg::weak_contraction_rate(kernel);
    const bool ok =
        monotone && fit.rate >= 0.9 * floor && fit.r_squared >= 0.99;
    all = all && ok;
    if (!detail.empty()) detail += "; ";
    detail += "eps=" + fmt(eps) + ": gamma_fit = " + fmt(fit.rate) + " vs 0.9*floor = " +
              fmt(0.9 * floor) + ", r^2 = " + fmt(fit.r_squared) +
              (monotone ? ", tail distance non-increasing" : ", tail distance ROSE");
  }
  record(8, "tail-sum distance contracts at least at the perturbation-adjusted rate", all,
         detail);
}

// Criteria 9 and 12 share one small-mass run on a non-monotone import kernel.
struct SmallMassRun {
  std::optional<KernelSpec> kernel;
  std::vector<double> times, dist, m2;
  edg::RateFit fit;
  bool relax_stalled = false;
  bool envelope_ok = false;
  std::size_t bound_violations = 0;
};
std::optional<SmallMassRun> g_small_mass;

KernelSpec small_mass_kernel() {
  std::vector<double> a_values(1024);
  for (std::size_t j = 0; j < a_values.size(); ++j)
    a_values[j] = 1.0 + 0.3 * (j % 2 == 0 ? 1.0 : -1.0);
  KernelBounds bounds;
  bounds.a_min = 0.7;
  bounds.a_slope = 0.7;
  bounds.b_min = 1.0;
  bounds.b_slope = 1.0;
  bounds.alpha_slope = 1.0;
  bounds.beta_slope = 1.0;
  bounds.pert_sup = 1.0;
  return KernelSpec::sum(RateSequence::table(std::move(a_values)), RateSequence::linear(1.0),
                         RateSequence::constant(1.0), RateSequence::constant(1.0), 0.01, bounds);
}

void criterion_9_small_mass_contraction() {
  SmallMassRun run;
  run.kernel = small_mass_kernel();
  run.bound_violations = run.kernel->validate_bounds(5000).size();

  const double rho = 0.05;
  const index_t n = 64;
  IntegratorConfig cfg;
  cfg.rel_tol = 1e-12;
  cfg.abs_tol = 1e-16;

  const auto relax = edg::equilibrium_by_relaxation(*run.kernel, rho, n, cfg, 1e-11, 1e4);
  run.relax_stalled = relax.stalled;

  SamplingPlan plan;
  plan.count = 46;
  plan.log_spaced = false;
  const Trajectory traj =
      edg::integrate(*run.kernel, edg::monomer_state(rho, 1.0, n), 4.5, cfg, plan);
  for (const auto& s : traj.samples) {
    run.times.push_back(s.time());
    run.dist.push_back(edg::distance(s, relax.equilibrium, Distance::strong1));
    run.m2.push_back(s.second_moment());
  }
  run.fit = edg::fit_exponential_rate(run.times, run.dist, 0.5);

  run.envelope_ok = true;
  double worst_ratio = 0.0;
  for (std::size_t k = 0; k < run.times.size(); ++k) {
    const double envelope = 2.0 * rho * std::exp(-run.fit.rate * run.times[k]);
    worst_ratio = std::max(worst_ratio, run.dist[k] / envelope);
    if (run.dist[k] > envelope) run.envelope_ok = false;
  }

  const bool passed = run.bound_violations == 0 && run.relax_stalled && run.fit.rate > 0.0 &&
                      run.fit.r_squared >= 0.99 && run.envelope_ok;
  record(9, "small-mass strong distance decays inside the 2*rho exponential envelope", passed,
         "gamma_fit = " + fmt(run.fit.rate) + " (needs > 0), r^2 = " + fmt(run.fit.r_squared) +
             " (tol 0.99), max data/envelope = " + fmt(worst_ratio) +
             " (needs <= 1), declared bounds violations = " +
             std::to_string(run.bound_violations));
  g_small_mass = std::move(run);
}

void criterion_10_uniqueness_without_detailed_balance() {
  const KernelSpec kernel =
      KernelSpec::sum(RateSequence::constant(1.0), RateSequence::linear(1.0),
                      RateSequence::constant(0.0), RateSequence::constant(0.0), 0.0);
  IntegratorConfig cfg;
  cfg.rel_tol = 1e-11;
  cfg.abs_tol = 1e-15;
  const auto relax = edg::equilibrium_by_relaxation(kernel, 0.5, 64, cfg, 1e-10, 1e4);
  const bool passed = relax.stalled && relax.cross_check <= 1e-8;
  record(10, "relaxation limits from different starts coincide (no detailed balance)", passed,
         "weak0 gap between the two limits = " + fmt(relax.cross_check) +
             " (tol 1e-8), residual = " + fmt(relax.residual) +
             (relax.stalled ? ", both runs stalled" : ", a run hit the time cap"));
}

void criterion_11_mean_size_closed_forms() {
  // Q_j = 1: the mean size is z / (1 - z), so F(1/2) = 1.
  const KernelSpec unit =
      KernelSpec::product(RateSequence::constant(1.0), RateSequence::constant(1.0));
  const double f_half = edg::big_f(unit, 0.5);
  const double geometric_err = std::abs(f_half - 1.0);

  // Q_j = 1/j!: the mean size is z, so F(1) = 1.
  const KernelSpec poisson =
      KernelSpec::product(RateSequence::constant(1.0), RateSequence::linear(1.0));
  const double f_one = edg::big_f(poisson, 1.0);
  const double poisson_err = std::abs(f_one - 1.0);

  // Strict monotonicity of F by central differences on random kernels.
  std::mt19937_64 rng(0xF2);
  double min_slope = std::numeric_limits<double>::infinity();
  for (int trial = 0; trial < 5; ++trial) {
    const KernelSpec kernel = random_kernel(rng, KernelForm::product);
    const auto radius = edg::radius_of_convergence(kernel);
    if (radius.trend != edg::RadiusEstimate::Trend::finite) continue;
    const double zs = radius.value;
    for (int i = 0; i < 100; ++i) {
      const double z = (static_cast<double>(i) + 0.5) / 100.0 * 0.9 * zs;
      const double h = std::max(1e-7 * zs, 1e-9);
      const double slope = (edg::big_f(kernel, z + h) - edg::big_f(kernel, std::max(z - h, 0.0))) /
                           (z + h - std::max(z - h, 0.0));
      min_slope = std::min(min_slope, slope);
    }
  }

  const bool passed = geometric_err <= 1e-10 && poisson_err <= 1e-8 && min_slope > 0.0;
  record(11, "mean cluster size matches closed forms and increases with fugacity", passed,
         "|F(1/2) - 1| = " + fmt(geometric_err) + " (tol 1e-10, geometric weights), |F(1) - 1| = " +
             fmt(poisson_err) + " (tol 1e-8, factorial weights), min dF/dz = " + fmt(min_slope) +
             " over 5 kernels x 100 points");
}

void criterion_12_second_moment_ceiling() {
  if (!g_small_mass) {
    record(12, "second moment stays under the small-mass ceiling", false,
           "skipped: the small-mass run was not available");
    return;
  }
  const double ceiling = edg::second_moment_ceiling(*g_small_mass->kernel, 0.05);
  // Frozen evaluation of the ceiling for this kernel's declared envelope.
  const double ceiling_gap = std::abs(ceiling - 0.14333584337349398);
  const double m2_max = *std::max_element(g_small_mass->m2.begin(), g_small_mass->m2.end());
  const bool passed = ceiling_gap <= 1e-12 && m2_max <= 1.05 * ceiling;
  record(12, "second moment stays under the small-mass ceiling", passed,
         "max M2 = " + fmt(m2_max) + " vs 1.05 * ceiling = " + fmt(1.05 * ceiling) +
             " (ceiling = " + fmt(ceiling) + ", frozen-value gap " + fmt(ceiling_gap) + ")");
}

}  // namespace

int main() {
  std::cout << "exchange-driven growth laboratory: acceptance checks\n" << std::endl;
  run_criterion(1, "volume and mass conservation over a long run", criterion_1_conservation);
  run_criterion(2, "fast right-hand side matches the dense double loop and scales linearly",
                criterion_2_rhs_oracle_and_scaling);
  run_criterion(3, "weighted moment identity holds for arbitrary weights",
                criterion_3_moment_identity);
  run_criterion(4, "entropy dissipation is non-negative on random positive states",
                criterion_4_dissipation_sign);
  run_criterion(5, "relative entropy decreases and matches the dissipation integral",
                criterion_5_entropy_decay);
  run_criterion(6, "subcritical relaxation reaches the detailed-balance profile",
                criterion_6_subcritical_strong_convergence);
  run_criterion(7, "supercritical runs approach the critical profile on low sizes",
                criterion_7_supercritical_weak_convergence);
  run_criterion(8, "tail-sum distance contracts at least at the perturbation-adjusted rate",
                criterion_8_weak_contraction_rate);
  run_criterion(9, "small-mass strong distance decays inside the 2*rho exponential envelope",
                criterion_9_small_mass_contraction);
  run_criterion(10, "relaxation limits from different starts coincide (no detailed balance)",
                criterion_10_uniqueness_without_detailed_balance);
  run_criterion(11, "mean cluster size matches closed forms and increases with fugacity",
                criterion_11_mean_size_closed_forms);
  run_criterion(12, "second moment stays under the small-mass ceiling",
                criterion_12_second_moment_ceiling);

  int failures = 0;
  for (const auto& r : g_results) failures += r.passed ? 0 : 1;
  std::cout << "\nacceptance: " << (g_results.size() - static_cast<std::size_t>(failures)) << "/"
            << g_results.size() << " criteria passed" << std::endl;
  return failures;
}
