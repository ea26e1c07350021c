#pragma once

// Detailed-balance equilibria of the exchange dynamics.
//
// Product-form kernels K(j, k) = b_j a_k satisfy detailed balance against the
// one-parameter family c_j = y Q_j z^j, where the partition factors obey
// Q_0 = 1 and Q_j / Q_{j-1} = a_{j-1} / b_j.  The fugacity z sets the mean
// cluster size through F(z) = S1(z) / S0(z) with the partition sums
//
//   S0(z) = sum_j Q_j z^j,     S1(z) = sum_j j Q_j z^j,
//
// and the monomer scale y = eta / S0(z) fixes the volume.  F is increasing on
// [0, z_s), where z_s is the radius of convergence of the series; the critical
// density rho_s = eta * sup F separates the regime where all mass fits into an
// equilibrium profile from the condensing regime where the excess has no
// equilibrium carrier.
//
// Everything works in log space (log Q_j can traverse hundreds of orders of
// magnitude without the factors themselves being representable).

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "edg/dynamics.hpp"
#include "edg/rates.hpp"
#include "edg/state.hpp"

namespace edg {

/// Thrown when a partition series is evaluated outside its disk of convergence.
class SeriesDiverged : public Error {
 public:
  using Error::Error;
};

/// Thrown when an equilibrium profile is requested for mass at or above the
/// critical density.
class SupercriticalMass : public Error {
 public:
  SupercriticalMass(const std::string& what, double rho, double rho_critical)
      : Error(what), rho_(rho), rho_critical_(rho_critical) {}
  double rho() const { return rho_; }
  double rho_critical() const { return rho_critical_; }

 private:
  double rho_;
  double rho_critical_;
};

// ---------------------------------------------------------------------------
// Partition factors
// ---------------------------------------------------------------------------

/// Lazily extended table of log Q_j for a product-form kernel.  A vanishing
/// import factor a_{m-1} = 0 makes Q_j = 0 for all j >= m (log Q = -inf, the
/// chain is absorbing at size m - 1); a vanishing export factor b_m with
/// a_{m-1} > 0 leaves the factor undefined and throws.
class LogQSeries {
 public:
  explicit LogQSeries(const KernelSpec& kernel) : kernel_(kernel) {
    detail::require(kernel.form() == KernelForm::product,
                    "LogQSeries: partition factors exist for product-form kernels only");
    logq_.push_back(0.0);
  }

  double operator()(index_t j) {
    detail::require(j >= 0, "LogQSeries: index must be >= 0");
    extend(j);
    return logq_[static_cast<std::size_t>(j)];
  }

 private:
  void extend(index_t j) {
    while (static_cast<index_t>(logq_.size()) <= j) {
      const auto m = static_cast<index_t>(logq_.size());
      const double prev = logq_.back();
      if (std::isinf(prev)) {
        logq_.push_back(prev);
        continue;
      }
      const double a_prev = kernel_.a()(m - 1);
      const double b_m = kernel_.b()(m);
      if (b_m <= 0.0) {
        if (a_prev <= 0.0)
          logq_.push_back(-std::numeric_limits<double>::infinity());
        else
          throw Error("partition factor undefined: export rate b_" + std::to_string(m) +
                      " vanishes while import a_" + std::to_string(m - 1) + " does not");
      } else if (a_prev <= 0.0) {
        logq_.push_back(-std::numeric_limits<double>::infinity());
      } else {
        logq_.push_back(prev + std::log(a_prev) - std::log(b_m));
      }
    }
  }

  KernelSpec kernel_;
  std::vector<double> logq_;
};

/// log Q_j for j = 0..order as a dense table.
inline std::vector<double> log_q_factors(const KernelSpec& kernel, index_t order) {
  detail::require(order >= 0, "log_q_factors: order must be >= 0");
  LogQSeries q(kernel);
  std::vector<double> out(static_cast<std::size_t>(order) + 1);
  for (index_t j = 0; j <= order; ++j) out[static_cast<std::size_t>(j)] = q(j);
  return out;
}

// ---------------------------------------------------------------------------
// Partition sums
// ---------------------------------------------------------------------------

struct PartitionSums {
  double s0 = 0.0;  ///< sum Q_j z^j over the accumulated terms
  double s1 = 0.0;  ///< sum j Q_j z^j
  index_t terms = 0;
  bool converged = false;  ///< tail resolved below tolerance (or series ended exactly)
  bool diverged = false;   ///< sustained term growth or overflow guard tripped

  double mean_size() const { return s1 / s0; }
};

/// Accumulate the partition sums at fugacity z >= 0 until the mass-series tail
/// falls below tol (ten consecutive terms under tol * S1), the series is
/// detected as divergent (fifty consecutive non-decreasing mass terms that
/// also at least double across the window, or a term beyond double range), or
/// the term budget runs out (neither flag set).
template <class LogQ>
  requires(!std::is_same_v<std::remove_cvref_t<LogQ>, KernelSpec>)
PartitionSums partition_sums(LogQ&& logq, double z, double tol = 1e-13,
                             index_t max_terms = 10'000'000) {
  detail::require(std::isfinite(z) && z >= 0.0, "partition_sums: z must be finite and >= 0");
  detail::require(tol > 0.0, "partition_sums: tol must be > 0");
  detail::require(max_terms >= 100, "partition_sums: term budget too small");
  PartitionSums out;
  if (z == 0.0) {
    out.s0 = std::exp(logq(0));
    out.s1 = 0.0;
    out.terms = 1;
    out.converged = true;
    return out;
  }
  const double lz = std::log(z);
  double prev_t1 = 0.0;
  double run_start_t1 = 0.0;
  index_t small_run = 0, nondec_run = 0;
  for (index_t j = 0; j < max_terms; ++j) {
    const double lq = logq(j);
    if (std::isinf(lq) && lq < 0.0) {
      // Absorbing kernel: all further factors vanish, the series ends exactly.
      out.converged = true;
      break;
    }
    const double lt = lq + static_cast<double>(j) * lz;
    if (lt + std::log(static_cast<double>(j) + 1.0) > 700.0) {
      out.diverged = true;  // next accumulation would leave double range
      break;
    }
    const double t0 = std::exp(lt);
    const double t1 = static_cast<double>(j) * t0;
    out.s0 += t0;
    out.s1 += t1;
    out.terms = j + 1;
    if (j >= 1) {
      if (out.s1 > 0.0 && t1 < tol * out.s1) {
        if (++small_run >= 10) {
          out.converged = true;
          break;
        }
      } else {
        small_run = 0;
      }
      // Divergence: a long non-decreasing stretch of mass terms that also
      // grows substantially.  The growth requirement keeps slow pre-peak humps
      // of convergent series (z just below z_s) from tripping the detector.
      if (t1 > 0.0 && t1 >= prev_t1 * (1.0 - 1e-15)) {
        if (nondec_run == 0) run_start_t1 = prev_t1 > 0.0 ? prev_t1 : t1;
        ++nondec_run;
        if (nondec_run >= 50 && t1 >= 2.0 * run_start_t1) {
          out.diverged = true;
          break;
        }
      } else {
        nondec_run = 0;
      }
    }
    prev_t1 = t1;
  }
  return out;
}

inline PartitionSums partition_sums(const KernelSpec& kernel, double z, double tol = 1e-13,
                                    index_t max_terms = 10'000'000) {
  LogQSeries q(kernel);
  return partition_sums(q, z, tol, max_terms);
}

/// Mean cluster size F(z) = S1(z) / S0(z).  Throws SeriesDiverged outside the
/// disk of convergence and Error when the term budget is exhausted undecided.
inline double big_f(const KernelSpec& kernel, double z, double tol = 1e-13) {
  const PartitionSums ps = partition_sums(kernel, z, tol);
  if (ps.diverged)
    throw SeriesDiverged("partition series diverges at z = " + std::to_string(z));
  if (!ps.converged)
    throw Error("partition series undecided within the term budget at z = " + std::to_string(z));
  return ps.s1 / ps.s0;
}

// ---------------------------------------------------------------------------
// Radius of convergence and critical density
// ---------------------------------------------------------------------------

struct RadiusEstimate {
  enum class Trend { finite, divergent, indeterminate };
  Trend trend = Trend::indeterminate;
  /// The radius: extrapolated limit of b_{k+1} / a_k (finite trend), +inf for
  /// a divergent trend, NaN when indeterminate.
  double value = std::numeric_limits<double>::quiet_NaN();
  /// Root-test cross check exp(-log Q_range / range); NaN for absorbing kernels.
  double root_value = std::numeric_limits<double>::quiet_NaN();
  bool root_agrees = false;  ///< root test within 25% of the ratio limit
};

/// Estimate the radius of convergence z_s of the partition series by the ratio
/// test b_{k+1} / a_k with tail extrapolation, cross-checked by the root test.
inline RadiusEstimate radius_of_convergence(const KernelSpec& kernel, index_t range = 10'000) {
  detail::require(kernel.form() == KernelForm::product,
                  "radius_of_convergence: product-form kernels only");
  detail::require(range >= 64, "radius_of_convergence: range must be >= 64");
  RadiusEstimate out;

  auto ratio = [&kernel](index_t k) {
    const double ak = kernel.a()(k);
    const double bk1 = kernel.b()(k + 1);
    if (ak <= 0.0) return std::numeric_limits<double>::infinity();
    return bk1 / ak;
  };
  const auto trend = detail::estimate_tail_limit(ratio, range);

  LogQSeries q(kernel);
  const double lq_end = q(range);
  if (std::isfinite(lq_end))
    out.root_value = std::exp(-lq_end / static_cast<double>(range));

  switch (trend.kind) {
    case detail::TrendEstimate::Kind::divergent:
      out.trend = RadiusEstimate::Trend::divergent;
      out.value = std::numeric_limits<double>::infinity();
      out.root_agrees = !std::isfinite(out.root_value) || out.root_value > 10.0;
      break;
    case detail::TrendEstimate::Kind::indeterminate:
      out.trend = RadiusEstimate::Trend::indeterminate;
      break;
    case detail::TrendEstimate::Kind::finite:
      out.trend = RadiusEstimate::Trend::finite;
      out.value = std::max(trend.limit, 0.0);
      if (std::isfinite(out.root_value))
        out.root_agrees =
            std::abs(out.root_value - out.value) <= 0.25 * std::max(out.value, 1e-3);
      break;
  }
  return out;
}

namespace detail {

/// Richardson extrapolation of F(z_s (1 - 2^{-m})) toward m -> inf, assuming
/// an error expansion in powers of h = 2^{-m}.  Returns the stabilized limit,
/// or nullopt when the diagonal fails to settle (signature of a divergent or
/// logarithmically divergent mass series at z_s).
inline std::optional<double> extrapolate_mean_size_at_radius(LogQSeries& q, double zs,
                                                             index_t max_terms) {
  std::vector<std::vector<double>> table;
  double prev_diag = std::numeric_limits<double>::quiet_NaN();
  for (int m = 3; m <= 14; ++m) {
    const double h = std::pow(2.0, -m);
    const double zm = zs * (1.0 - h);
    const PartitionSums ps = partition_sums(q, zm, 1e-13, max_terms);
    if (!ps.converged) return std::nullopt;
    std::vector<double> row{ps.s1 / ps.s0};
    const std::size_t i = table.size();
    double scale = 2.0;
    for (std::size_t k = 1; k <= i; ++k) {
      row.push_back((scale * row[k - 1] - table[i - 1][k - 1]) / (scale - 1.0));
      scale *= 2.0;
    }
    table.push_back(row);
    const double diag = row.back();
    if (i >= 2 && std::isfinite(prev_diag) &&
        std::abs(diag - prev_diag) <= 1e-8 * std::max(1.0, std::abs(diag)))
      return diag;
    prev_diag = diag;
  }
  return std::nullopt;
}

}  // namespace detail

/// Critical density rho_s(eta) = eta * sup_{z < z_s} F(z).  Returns +inf when
/// the mass series still diverges at z_s (no finite density exhausts the
/// profile family); for kernels with infinite radius the supremum is finite
/// only when the chain is absorbing (polynomial partition series), in which
/// case it equals eta times the largest supported size.
inline double critical_density(const KernelSpec& kernel, double eta = 1.0,
                               index_t range = 10'000) {
  detail::require(std::isfinite(eta) && eta > 0.0,
                  "critical_density: eta must be finite and > 0");
  const RadiusEstimate radius = radius_of_convergence(kernel, range);
  if (radius.trend == RadiusEstimate::Trend::indeterminate)
    throw Error("critical density: radius of convergence could not be determined");

  LogQSeries q(kernel);
  if (radius.trend == RadiusEstimate::Trend::divergent) {
    for (index_t j = 1; j <= range; ++j)
      if (std::isinf(q(j))) return eta * static_cast<double>(j - 1);
    return std::numeric_limits<double>::infinity();
  }

  const double zs = radius.value;
  if (zs <= 0.0) return 0.0;

  constexpr index_t kMaxTerms = 10'000'000;
  const PartitionSums direct = partition_sums(q, zs, 1e-13, kMaxTerms);
  if (direct.diverged) return std::numeric_limits<double>::infinity();
  if (direct.converged) return eta * direct.mean_size();

  // Budget exhausted undecided at z_s: approach from below and extrapolate.
  const auto limit = detail::extrapolate_mean_size_at_radius(q, zs, kMaxTerms);
  if (limit) return eta * *limit;
  return std::numeric_limits<double>::infinity();
}

// ---------------------------------------------------------------------------
// Fugacity solve and equilibrium profiles
// ---------------------------------------------------------------------------

namespace detail {

/// Bisection for F(z) = target on (lo, hi] given F(hi) >= target >= F(lo).
inline double bisect_mean_size(LogQSeries& q, double lo, double hi, double target, double tol,
                               double series_tol, index_t max_terms) {
  auto mean_size = [&](double z) {
    const PartitionSums ps = partition_sums(q, z, series_tol, max_terms);
    if (ps.diverged || !ps.converged)
      throw Error("fugacity solve: partition series unresolved at z = " + std::to_string(z));
    return ps.mean_size();
  };
  for (int iter = 0; iter < 200; ++iter) {
    const double mid = 0.5 * (lo + hi);
    const double f = mean_size(mid);
    if (std::abs(f - target) <= tol * target) return mid;
    if (f < target)
      lo = mid;
    else
      hi = mid;
    if (hi - lo <= 1e-16 * std::max(hi, 1.0)) return 0.5 * (lo + hi);
  }
  throw Error("fugacity solve: bisection failed to reach tolerance");
}

}  // namespace detail

/// Solve F(z) = rho / eta for the equilibrium fugacity of a subcritical mass.
/// Throws SupercriticalMass when rho >= rho_s(eta).
inline double solve_fugacity(const KernelSpec& kernel, double rho, double eta = 1.0,
                             double tol = 1e-10, index_t range = 10'000) {
  detail::require(std::isfinite(rho) && rho > 0.0, "solve_fugacity: rho must be finite and > 0");
  detail::require(std::isfinite(eta) && eta > 0.0, "solve_fugacity: eta must be finite and > 0");
  detail::require(tol > 0.0 && tol < 1.0, "solve_fugacity: tol must be in (0, 1)");
  const RadiusEstimate radius = radius_of_convergence(kernel, range);
  if (radius.trend == RadiusEstimate::Trend::indeterminate)
    throw Error("solve_fugacity: radius of convergence could not be determined");

  const double target = rho / eta;
  const double series_tol = std::min(1e-13, tol * 1e-3);
  constexpr index_t kMaxTerms = 10'000'000;
  LogQSeries q(kernel);
  auto mean_size = [&](double z) {
    const PartitionSums ps = partition_sums(q, z, series_tol, kMaxTerms);
    if (ps.diverged || !ps.converged)
      throw Error("solve_fugacity: partition series unresolved at z = " + std::to_string(z));
    return ps.mean_size();
  };

  double lo = 0.0, hi = 0.0;
  if (radius.trend == RadiusEstimate::Trend::divergent) {
    hi = 1.0;
    bool bracketed = false;
    for (int iter = 0; iter < 80; ++iter) {
      if (mean_size(hi) >= target) {
        bracketed = true;
        break;
      }
      lo = hi;
      hi *= 2.0;
    }
    if (!bracketed)
      throw Error("solve_fugacity: target mean size exceeds the kernel's reachable range");
  } else {
    const double zs = radius.value;
    const double rho_s = critical_density(kernel, eta, range);
    if (!(rho < rho_s))
      throw SupercriticalMass("solve_fugacity: mass at or above the critical density", rho, rho_s);
    bool bracketed = false;
    for (int m = 1; m <= 20; ++m) {
      const double zm = zs * (1.0 - std::pow(2.0, -m));
      if (zm <= lo) continue;
      if (mean_size(zm) >= target) {
        hi = zm;
        bracketed = true;
        break;
      }
      lo = zm;
    }
    if (!bracketed)
      throw Error(
          "solve_fugacity: mass lies within the unresolved sliver below the critical density");
  }
  return detail::bisect_mean_size(q, lo, hi, target, tol, series_tol, kMaxTerms);
}

enum class Regime { subcritical, critical, supercritical, no_equilibrium };

inline const char* regime_name(Regime r) {
  switch (r) {
    case Regime::subcritical: return "subcritical";
    case Regime::critical: return "critical";
    case Regime::supercritical: return "supercritical";
    case Regime::no_equilibrium: return "no_equilibrium";
  }
  return "?";
}

/// A detailed-balance profile truncated to sizes 0..order, with the regime
/// classification and the series data behind it.  In the supercritical regime
/// the profile is the critical one (z = z_s): the excess mass rho - rho_s has
/// no equilibrium carrier, so profile_mass falls short of target_mass.
struct EquilibriumProfile {
  std::optional<ClusterState> state;  ///< absent in the no_equilibrium regime
  Regime regime = Regime::no_equilibrium;
  double fugacity = std::numeric_limits<double>::quiet_NaN();       ///< z
  double monomer_scale = std::numeric_limits<double>::quiet_NaN();  ///< y = eta / S0(z)
  double radius = std::numeric_limits<double>::quiet_NaN();         ///< z_s
  double critical_mass = std::numeric_limits<double>::quiet_NaN();  ///< rho_s(eta)
  double target_mass = 0.0;     ///< requested rho
  double target_volume = 0.0;   ///< requested eta
  double profile_mass = 0.0;    ///< mass actually carried by the truncated profile
  double profile_volume = 0.0;  ///< volume actually carried by the truncated profile
};

/// Construct the truncated detailed-balance profile for mass rho and volume
/// eta.  rho = 0 yields the pure-substrate state (all volume at size 0).
inline EquilibriumProfile equilibrium_profile(const KernelSpec& kernel, double rho, double eta,
                                              index_t order, index_t range = 10'000) {
  detail::require(std::isfinite(rho) && rho >= 0.0,
                  "equilibrium_profile: rho must be finite and >= 0");
  detail::require(std::isfinite(eta) && eta > 0.0,
                  "equilibrium_profile: eta must be finite and > 0");
  detail::require(order >= 1, "equilibrium_profile: order must be >= 1");

  EquilibriumProfile out;
  out.target_mass = rho;
  out.target_volume = eta;

  if (rho == 0.0) {
    std::vector<double> c(static_cast<std::size_t>(order) + 1, 0.0);
    c[0] = eta;
    out.state = ClusterState(std::move(c));
    out.regime = Regime::subcritical;
    out.fugacity = 0.0;
    out.monomer_scale = eta;
    const RadiusEstimate radius = radius_of_convergence(kernel, range);
    out.radius = radius.value;
    out.profile_mass = 0.0;
    out.profile_volume = eta;
    return out;
  }

  const RadiusEstimate radius = radius_of_convergence(kernel, range);
  if (radius.trend == RadiusEstimate::Trend::indeterminate)
    throw Error("equilibrium_profile: radius of convergence could not be determined");
  out.radius = radius.value;
  out.critical_mass = critical_density(kernel, eta, range);

  if (radius.trend == RadiusEstimate::Trend::finite && radius.value <= 0.0) {
    out.regime = Regime::no_equilibrium;  // no positive fugacity exists
    return out;
  }

  const double crit_tol = 1e-9 * std::max(out.critical_mass, 1.0);
  double z;
  if (!std::isfinite(out.critical_mass) || rho < out.critical_mass - crit_tol) {
    out.regime = Regime::subcritical;
    z = solve_fugacity(kernel, rho, eta, 1e-12, range);
  } else if (rho <= out.critical_mass + crit_tol) {
    out.regime = Regime::critical;
    z = radius.value;
  } else {
    out.regime = Regime::supercritical;
    z = radius.value;
  }

  LogQSeries q(kernel);
  const PartitionSums ps = partition_sums(q, z, 1e-13);
  if (ps.diverged || !ps.converged)
    throw Error("equilibrium_profile: partition series unresolved at the solved fugacity");
  const double log_y = std::log(eta) - std::log(ps.s0);
  out.fugacity = z;
  out.monomer_scale = std::exp(log_y);

  const double lz = std::log(z);
  std::vector<double> c(static_cast<std::size_t>(order) + 1, 0.0);
  for (index_t j = 0; j <= order; ++j) {
    const double lq = q(j);
    c[static_cast<std::size_t>(j)] =
        std::isinf(lq) ? 0.0 : std::exp(lq + static_cast<double>(j) * lz + log_y);
  }
  ClusterState state(std::move(c));
  out.profile_mass = state.mass();
  out.profile_volume = state.volume();
  out.state = std::move(state);
  return out;
}

// ---------------------------------------------------------------------------
// Relaxation builder (for kernels without detailed balance)
// ---------------------------------------------------------------------------

struct RelaxationResult {
  ClusterState equilibrium;  ///< terminal state of the primary run
  double residual = 0.0;     ///< max_j |dc_j/dt| at the terminal state
  double t_stop = 0.0;
  bool stalled = false;       ///< both runs stopped on the stall rule before t_max
  double cross_check = 0.0;   ///< weak0 distance between the two terminal states
  IntegratorStats stats_primary;
  IntegratorStats stats_secondary;
};

/// Find the stationary state at mass rho and unit volume by integrating to a
/// stall from two different initial conditions (single-size and geometric) and
/// cross-checking that both land on the same state.  Works for any kernel;
/// it is the only equilibrium constructor available for sum-form kernels,
/// which lack detailed balance.
inline RelaxationResult equilibrium_by_relaxation(const KernelSpec& kernel, double rho,
                                                  index_t order, IntegratorConfig cfg = {},
                                                  double stall_tol = 1e-12,
                                                  double t_max = 1e4) {
  detail::require(std::isfinite(rho) && rho >= 0.0,
                  "equilibrium_by_relaxation: rho must be finite and >= 0");
  detail::require(stall_tol > 0.0, "equilibrium_by_relaxation: stall_tol must be > 0");
  detail::require(t_max > 0.0, "equilibrium_by_relaxation: t_max must be > 0");

  const ClusterState primary = monomer_state(rho, 1.0, order);
  const ClusterState secondary =
      rho > 0.0 ? geometric_state(rho, 1.0, 0.5, order) : monomer_state(rho, 1.0, order);

  const SamplingPlan sparse{.count = 2, .log_spaced = false, .first_fraction = 1e-5,
                            .explicit_times = {}};
  const StallRule stall{stall_tol};
  Trajectory run1 = integrate(kernel, primary, t_max, cfg, sparse, stall);
  Trajectory run2 = integrate(kernel, secondary, t_max, cfg, sparse, stall);

  const ClusterState& end1 = run1.samples.back();
  const ClusterState& end2 = run2.samples.back();

  EdgSystem system(kernel, order);
  std::vector<double> dcdt(static_cast<std::size_t>(order) + 1);
  system.rhs(end1.densities(), dcdt);
  double residual = 0.0;
  for (double v : dcdt) residual = std::max(residual, std::abs(v));

  RelaxationResult out{
      .equilibrium = end1,
      .residual = residual,
      .t_stop = run1.stats.stop_time,
      .stalled = run1.stats.stop_reason == "stall" && run2.stats.stop_reason == "stall",
      .cross_check = distance(end1, end2, Distance::weak0),
      .stats_primary = run1.stats,
      .stats_secondary = run2.stats,
  };
  return out;
}

}  // namespace edg
