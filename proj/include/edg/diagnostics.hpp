#pragma once

// Scalar diagnostics along exchange trajectories: entropy functionals, the
// entropy production rate (dissipation), detailed-balance fluxes, pairwise
// distances with conservation guards, exponential-rate fits, and the a-priori
// second-moment ceiling for weakly perturbed sum-form kernels.
//
// Conventions: densities below 1e-300 are treated as exactly zero inside
// x log x expressions (the limit value 0 is used); a genuinely vanishing
// density paired with a positive equilibrium weight makes the relative entropy
// and the dissipation +inf, which is reported in-band rather than thrown.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "edg/dynamics.hpp"
#include "edg/equilibrium.hpp"
#include "edg/rates.hpp"
#include "edg/state.hpp"

namespace edg {

namespace detail {
inline constexpr double kDensityFloor = 1e-300;  ///< below this a density is "zero"
inline constexpr double kPairFloor = 1e-250;     ///< dissipation pairs below this contribute 0
}  // namespace detail

/// Entropy G(c) = sum_j c_j (log c_j - 1), with 0 log 0 = 0.
inline double entropy(const ClusterState& state) {
  double g = 0.0;
  for (double c : state.densities()) {
    if (c < detail::kDensityFloor) continue;
    g += c * (std::log(c) - 1.0);
  }
  return g;
}

/// Relative entropy against the partition weights: V(c) = sum_j c_j
/// (log c_j - log Q_j - 1).  +inf when some c_j > 0 sits on Q_j = 0.
inline double relative_entropy(std::span<const double> log_q, const ClusterState& state) {
  detail::require(log_q.size() == state.densities().size(),
                  "relative_entropy: log Q table must cover sizes 0..N");
  double v = 0.0;
  const auto c = state.densities();
  for (std::size_t j = 0; j < c.size(); ++j) {
    if (c[j] < detail::kDensityFloor) continue;
    if (std::isinf(log_q[j]) && log_q[j] < 0.0) return std::numeric_limits<double>::infinity();
    v += c[j] * (std::log(c[j]) - log_q[j] - 1.0);
  }
  return v;
}

/// Tilted relative entropy V_{z,y}(c) = V(c) - log(z) M1(c) - log(y) M0(c),
/// the Lyapunov functional whose minimiser over fixed (M0, M1) is the
/// detailed-balance profile with fugacity z and monomer scale y.
inline double modified_relative_entropy(std::span<const double> log_q, const ClusterState& state,
                                        double z, double y) {
  detail::require(std::isfinite(z) && z > 0.0,
                  "modified_relative_entropy: z must be finite and > 0");
  detail::require(std::isfinite(y) && y > 0.0,
                  "modified_relative_entropy: y must be finite and > 0");
  const double v = relative_entropy(log_q, state);
  return v - std::log(z) * state.mass() - std::log(y) * state.volume();
}

/// Detailed-balance bond fluxes for a product-form kernel:
/// I_j = a_j c_j B - b_{j+1} c_{j+1} A for j = 0..N-1, with A = sum a c and
/// B = sum b c.  Identically the net upward current across bond (j, j+1); all
/// entries vanish exactly on a detailed-balance profile.
inline std::vector<double> detailed_balance_flux(const KernelSpec& kernel,
                                                 const ClusterState& state) {
  detail::require(kernel.form() == KernelForm::product,
                  "detailed_balance_flux: product-form kernels only");
  const index_t n = state.order();
  const auto c = state.densities();
  std::vector<double> a(static_cast<std::size_t>(n) + 1), b(static_cast<std::size_t>(n) + 1);
  for (index_t j = 0; j <= n; ++j) a[static_cast<std::size_t>(j)] = kernel.a()(j);
  b[0] = 0.0;
  for (index_t j = 1; j <= n; ++j) b[static_cast<std::size_t>(j)] = kernel.b()(j);
  double big_a = 0.0, big_b = 0.0;
  for (std::size_t j = 0; j + 1 < c.size(); ++j) big_a += a[j] * c[j];
  for (std::size_t j = 1; j < c.size(); ++j) big_b += b[j] * c[j];
  std::vector<double> flux(static_cast<std::size_t>(n));
  for (std::size_t j = 0; j < flux.size(); ++j)
    flux[j] = a[j] * c[j] * big_b - b[j + 1] * c[j + 1] * big_a;
  return flux;
}

/// Entropy production rate for a product-form kernel:
///
///   D(c) = sum_{j=0}^{N-1} (B a_j c_j - A b_{j+1} c_{j+1})
///                          log( a_j c_j / (b_{j+1} c_{j+1}) )  >= 0.
///
/// Evaluated in the decomposition (u - v) log(u / v) + (u - v) log(A / B) with
/// u = B a_j c_j, v = A b_{j+1} c_{j+1}: the first part is term-wise >= 0 and
/// the second telescopes to zero in exact arithmetic, so the result cannot go
/// below round-off level.  A pair with one side exactly zero and the other
/// positive yields +inf (reported in-band); pairs entirely below the floor
/// contribute nothing.
inline double dissipation(const KernelSpec& kernel, const ClusterState& state) {
  detail::require(kernel.form() == KernelForm::product, "dissipation: product-form kernels only");
  const index_t n = state.order();
  const auto c = state.densities();
  std::vector<double> a(static_cast<std::size_t>(n) + 1), b(static_cast<std::size_t>(n) + 1);
  for (index_t j = 0; j <= n; ++j) a[static_cast<std::size_t>(j)] = kernel.a()(j);
  b[0] = 0.0;
  for (index_t j = 1; j <= n; ++j) b[static_cast<std::size_t>(j)] = kernel.b()(j);
  double big_a = 0.0, big_b = 0.0;
  for (std::size_t j = 0; j + 1 < c.size(); ++j) big_a += a[j] * c[j];
  for (std::size_t j = 1; j < c.size(); ++j) big_b += b[j] * c[j];

  double main = 0.0, correction = 0.0;
  for (std::size_t j = 0; j + 1 < c.size(); ++j) {
    const double x = c[j] >= detail::kDensityFloor ? a[j] * c[j] : 0.0;
    const double y = c[j + 1] >= detail::kDensityFloor ? b[j + 1] * c[j + 1] : 0.0;
    const double u = big_b * x;
    const double v = big_a * y;
    if (u + v < detail::kPairFloor) continue;
    if (u == 0.0 || v == 0.0) return std::numeric_limits<double>::infinity();
    const double d = u - v;
    main += d * std::log1p(d / v);
    correction += d;
  }
  if (correction == 0.0) return main;
  return main + correction * std::log(big_a / big_b);
}

// ---------------------------------------------------------------------------
// Pair metrics
// ---------------------------------------------------------------------------

/// Distances between two states sharing order and conserved quantities.
struct PairDistance {
  double weak0 = 0.0;
  double strong1 = 0.0;
  double tail_l1 = 0.0;
  double volume_gap = 0.0;
  double mass_gap = 0.0;
};

/// All pair metrics at once.  Throws when the masses differ by more than
/// mass_tol * max(1, mass): the tail-sum contraction theory compares states
/// on the same conservation shell, and a silent mismatch invalidates it.
inline PairDistance pair_distance(const ClusterState& c, const ClusterState& d,
                                  double mass_tol = 1e-9) {
  detail::require(c.order() == d.order(), "pair_distance: states must share a truncation order");
  PairDistance out;
  out.volume_gap = std::abs(c.volume() - d.volume());
  out.mass_gap = std::abs(c.mass() - d.mass());
  const double scale = std::max({1.0, c.mass(), d.mass()});
  detail::require(out.mass_gap <= mass_tol * scale,
                  "pair_distance: states carry different mass (gap " +
                      std::to_string(out.mass_gap) + ")");
  out.weak0 = distance(c, d, Distance::weak0);
  out.strong1 = distance(c, d, Distance::strong1);
  out.tail_l1 = distance(c, d, Distance::tail_l1);
  return out;
}

// ---------------------------------------------------------------------------
// Exponential-rate fitting
// ---------------------------------------------------------------------------

struct RateFit {
  double rate = 0.0;           ///< gamma in v ~ exp(log_intercept - gamma t)
  double log_intercept = 0.0;
  double r_squared = 0.0;
  index_t points_used = 0;
  bool truncated = false;  ///< the window was cut at a non-positive value
};

/// Least-squares fit of log v against t over the trailing fraction of the time
/// range.  Points after the first non-positive value in the window are
/// dropped and the fit flagged as truncated.  Requires at least three usable
/// points.  A constant positive series fits rate 0 with r^2 = 1.
inline RateFit fit_exponential_rate(std::span<const double> t, std::span<const double> v,
                                    double trailing_fraction = 0.5) {
  detail::require(t.size() == v.size() && t.size() >= 2,
                  "fit_exponential_rate: need matching t/v series with >= 2 points");
  detail::require(trailing_fraction > 0.0 && trailing_fraction <= 1.0,
                  "fit_exponential_rate: trailing_fraction must be in (0, 1]");
  const double t_cut = t.back() - trailing_fraction * (t.back() - t.front());

  RateFit fit;
  std::vector<double> ts, ys;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] < t_cut - 1e-15 * std::max(1.0, std::abs(t_cut))) continue;
    if (!(v[i] > 0.0)) {
      fit.truncated = true;
      break;
    }
    ts.push_back(t[i]);
    ys.push_back(std::log(v[i]));
  }
  detail::require(ts.size() >= 3, "fit_exponential_rate: fewer than 3 usable points in window");

  const double m = static_cast<double>(ts.size());
  double st = 0.0, sy = 0.0, stt = 0.0, sty = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    st += ts[i];
    sy += ys[i];
    stt += ts[i] * ts[i];
    sty += ts[i] * ys[i];
  }
  const double denom = m * stt - st * st;
  detail::require(std::abs(denom) > 0.0, "fit_exponential_rate: degenerate time window");
  const double slope = (m * sty - st * sy) / denom;
  const double intercept = (sy - slope * st) / m;

  double ss_res = 0.0, ss_tot = 0.0;
  const double y_mean = sy / m;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const double r = ys[i] - (intercept + slope * ts[i]);
    ss_res += r * r;
    const double d = ys[i] - y_mean;
    ss_tot += d * d;
  }
  fit.rate = -slope;
  fit.log_intercept = intercept;
  fit.r_squared = ss_tot > 1e-30 ? 1.0 - ss_res / ss_tot : 1.0;
  fit.points_used = static_cast<index_t>(ts.size());
  return fit;
}

// ---------------------------------------------------------------------------
// Second-moment ceiling
// ---------------------------------------------------------------------------

/// A-priori asymptotic bound on M2 for weakly perturbed sum-form kernels with
/// declared linear caps and a uniform import floor, valid when the mass is
/// small enough that mu = 2 (a_slope rho + 2 eps alpha_slope beta_slope rho -
/// a_min) is negative:
///
///   limsup_t M2(t) <= nu / |mu|,
///   nu = rho (2 a_0 + 3 a_slope rho + 2 b_slope rho + 2 b_slope
///             + 2 eps beta_slope (alpha_0 + alpha_slope) rho - b_min).
///
/// Throws when the kernel form or declarations don't support the bound, or
/// when mu >= 0 (mass too large for this small-mass estimate).
inline double second_moment_ceiling(const KernelSpec& kernel, double rho) {
  detail::require(std::isfinite(rho) && rho > 0.0,
                  "second_moment_ceiling: rho must be finite and > 0");
  if (kernel.form() != KernelForm::sum)
    throw Error("second_moment_ceiling: sum-form kernels only");
  const auto& bounds = kernel.bounds();
  if (bounds.a_min <= 0.0 || bounds.a_slope <= 0.0 || bounds.b_slope <= 0.0)
    throw Error("second_moment_ceiling: declare a_min, a_slope and b_slope first");
  if (kernel.eps() > 0.0 && (bounds.alpha_slope <= 0.0 || bounds.beta_slope <= 0.0))
    throw Error("second_moment_ceiling: declare alpha_slope and beta_slope for eps > 0");

  const double eps = kernel.eps();
  const double a0 = kernel.a()(0);
  const double alpha0 = kernel.eps() > 0.0 ? kernel.alpha()(0) : 0.0;
  const double mu =
      2.0 * (bounds.a_slope * rho + 2.0 * eps * bounds.alpha_slope * bounds.beta_slope * rho -
             bounds.a_min);
  if (mu >= 0.0)
    throw Error("second_moment_ceiling: mass too large, the small-mass bound does not apply");
  const double nu =
      rho * (2.0 * a0 + 3.0 * bounds.a_slope * rho + 2.0 * bounds.b_slope * rho +
             2.0 * bounds.b_slope + 2.0 * eps * bounds.beta_slope * (alpha0 + bounds.alpha_slope) * rho -
             bounds.b_min);
  return nu / std::abs(mu);
}

// ---------------------------------------------------------------------------
// Assembled per-sample record
// ---------------------------------------------------------------------------

/// One row of trajectory diagnostics.  Product-form-only quantities are NaN
/// for sum-form kernels; reference comparisons are NaN without a reference.
struct DiagnosticsRecord {
  double t = std::numeric_limits<double>::quiet_NaN();
  double volume = 0.0;
  double mass = 0.0;
  double second_moment = 0.0;
  double entropy_value = 0.0;
  double relative_entropy_value = std::numeric_limits<double>::quiet_NaN();
  double modified_entropy_value = std::numeric_limits<double>::quiet_NaN();
  double dissipation_value = std::numeric_limits<double>::quiet_NaN();
  double max_abs_flux = std::numeric_limits<double>::quiet_NaN();
  double weak0_to_reference = std::numeric_limits<double>::quiet_NaN();
  double strong1_to_reference = std::numeric_limits<double>::quiet_NaN();
};

/// Assemble the diagnostics row for one snapshot.  For product-form kernels
/// the entropy family and dissipation are computed against the kernel's own
/// partition weights; a reference profile additionally provides the tilted
/// entropy and distances to equilibrium.
inline DiagnosticsRecord diagnose(const KernelSpec& kernel, const ClusterState& state,
                                  const EquilibriumProfile* reference = nullptr) {
  DiagnosticsRecord rec;
  rec.t = state.time();
  rec.volume = state.volume();
  rec.mass = state.mass();
  rec.second_moment = state.second_moment();
  rec.entropy_value = entropy(state);
  if (kernel.form() == KernelForm::product) {
    const auto log_q = log_q_factors(kernel, state.order());
    rec.relative_entropy_value = relative_entropy(log_q, state);
    rec.dissipation_value = dissipation(kernel, state);
    const auto flux = detailed_balance_flux(kernel, state);
    double worst = 0.0;
    for (double f : flux) worst = std::max(worst, std::abs(f));
    rec.max_abs_flux = worst;
    if (reference && std::isfinite(reference->fugacity) && reference->fugacity > 0.0 &&
        std::isfinite(reference->monomer_scale) && reference->monomer_scale > 0.0)
      rec.modified_entropy_value =
          modified_relative_entropy(log_q, state, reference->fugacity, reference->monomer_scale);
  }
  if (reference && reference->state && reference->state->order() == state.order()) {
    rec.weak0_to_reference = distance(state, *reference->state, Distance::weak0);
    rec.strong1_to_reference = distance(state, *reference->state, Distance::strong1);
  }
  return rec;
}

}  // namespace edg
