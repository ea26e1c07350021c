#pragma once

// Truncated mean-field exchange dynamics and its time integrator.
//
// On the size range 0..N the densities evolve by nearest-neighbour mass
// exchange: a cluster of size j hands a monomer to a cluster of size k at rate
// K(j, k).  Writing the per-size exchange propensities
//
//   S_exp(j) = sum_{k=0}^{N-1} K(j, k) c_k   (j exports; recipient must stay <= N)
//   S_imp(j) = sum_{k=1}^{N}   K(k, j) c_k   (j imports; donor must hold mass)
//
// the truncated system reads, in net-flux form with W_j = c_{j-1} S_imp(j-1)
// - c_j S_exp(j) (the net probability current across the bond (j-1, j)):
//
//   dc_j/dt = W_j - W_{j+1},   W_0 = W_{N+1} = 0.
//
// The telescoping makes volume conservation exact and mass conservation exact
// up to round-off.  For the two separable kernel families both propensities
// collapse onto a handful of weighted sums over the state (SumCache below), so
// one right-hand-side evaluation costs O(N).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "edg/rates.hpp"
#include "edg/state.hpp"

namespace edg {

/// Thrown when the integrator cannot continue (step size underflow while
/// controlling error or positivity).
class IntegrationError : public Error {
 public:
  IntegrationError(const std::string& what, double t, index_t component = -1)
      : Error(what), t_(t), component_(component) {}
  double time() const { return t_; }
  /// Offending density index for positivity failures, -1 otherwise.
  index_t component() const { return component_; }

 private:
  double t_;
  index_t component_;
};

// ---------------------------------------------------------------------------
// The truncated exchange system
// ---------------------------------------------------------------------------

/// Weighted sums over a state that the separable kernels reduce to.  One pass
/// over the densities fills all fields.
struct SumCache {
  double sum_a = 0.0;      ///< sum_{j=0}^{N-1} a_j c_j   (import side)
  double sum_b = 0.0;      ///< sum_{j=1}^{N}   b_j c_j   (export side)
  double sum_alpha = 0.0;  ///< sum_{j=0}^{N-1} alpha_j c_j (sum form)
  double sum_beta = 0.0;   ///< sum_{j=1}^{N}   beta_j c_j  (sum form)
  double mass = 0.0;       ///< sum_{j=1}^{N} j c_j
  double volume = 0.0;     ///< sum_{j=0}^{N} c_j
};

/// The truncated exchange system for one kernel at a fixed order N.  Rate
/// sequences are tabulated once at construction; rhs() and flux evaluations
/// are then allocation-free and O(N).
class EdgSystem {
 public:
  EdgSystem(const KernelSpec& kernel, index_t order)
      : form_(kernel.form()), eps_(kernel.eps()), n_(order) {
    detail::require(order >= 1, "EdgSystem: order must be >= 1");
    const auto size = static_cast<std::size_t>(order) + 1;
    a_.resize(size);
    b_.resize(size);
    for (index_t j = 0; j <= order; ++j) a_[static_cast<std::size_t>(j)] = kernel.a()(j);
    b_[0] = 0.0;  // empty sites never export
    for (index_t j = 1; j <= order; ++j) b_[static_cast<std::size_t>(j)] = kernel.b()(j);
    if (form_ == KernelForm::sum) {
      alpha_.resize(size);
      beta_.resize(size);
      for (index_t j = 0; j <= order; ++j) alpha_[static_cast<std::size_t>(j)] = kernel.alpha()(j);
      beta_[0] = 0.0;
      for (index_t j = 1; j <= order; ++j) beta_[static_cast<std::size_t>(j)] = kernel.beta()(j);
    }
  }

  index_t order() const { return n_; }
  KernelForm form() const { return form_; }
  std::span<const double> import_rates() const { return a_; }
  std::span<const double> export_rates() const { return b_; }

  /// One pass of weighted sums over densities c (size N + 1).
  SumCache sums(std::span<const double> c) const {
    check_size(c);
    SumCache s;
    const auto n = static_cast<std::size_t>(n_);
    for (std::size_t j = 0; j <= n; ++j) {
      const double cj = c[j];
      s.volume += cj;
      if (j < n) s.sum_a += a_[j] * cj;
      if (j >= 1) {
        s.sum_b += b_[j] * cj;
        s.mass += static_cast<double>(j) * cj;
      }
    }
    if (form_ == KernelForm::sum) {
      for (std::size_t j = 0; j < n; ++j) s.sum_alpha += alpha_[j] * c[j];
      for (std::size_t j = 1; j <= n; ++j) s.sum_beta += beta_[j] * c[j];
    }
    return s;
  }

  /// Right-hand side dc/dt of the truncated system.  c and dcdt must both have
  /// size N + 1; aliasing is not allowed.
  void rhs(std::span<const double> c, std::span<double> dcdt) const {
    check_size(c);
    detail::require(dcdt.size() == c.size(), "EdgSystem::rhs: output size mismatch");
    const SumCache s = sums(c);
    const auto n = static_cast<std::size_t>(n_);
    // Volume of potential recipients (sizes 0..N-1): the constant part of the
    // sum-form export propensity.
    const double import_volume = s.volume - c[n];

    auto s_exp = [&](std::size_t j) {
      if (form_ == KernelForm::product) return b_[j] * s.sum_a;
      return static_cast<double>(j) * s.sum_a + b_[j] * import_volume +
             eps_ * beta_[j] * s.sum_alpha;
    };
    auto s_imp = [&](std::size_t j) {
      if (form_ == KernelForm::product) return a_[j] * s.sum_b;
      return a_[j] * s.mass + s.sum_b + eps_ * alpha_[j] * s.sum_beta;
    };

    // Single pass over bonds: w_prev = W_j, w_next = W_{j+1}.
    double w_prev = 0.0;
    for (std::size_t j = 0; j <= n; ++j) {
      const double w_next = (j == n) ? 0.0 : c[j] * s_imp(j) - c[j + 1] * s_exp(j + 1);
      dcdt[j] = w_prev - w_next;
      w_prev = w_next;
    }
  }

  /// Net upward flux across each bond: W_{j+1} = c_j S_imp(j) - c_{j+1} S_exp(j+1)
  /// for j = 0..N-1 (so out[j] is the current from size j to j + 1).
  void bond_fluxes(std::span<const double> c, std::span<double> out) const {
    check_size(c);
    detail::require(out.size() + 1 == c.size(), "EdgSystem::bond_fluxes: output must have size N");
    const SumCache s = sums(c);
    const auto n = static_cast<std::size_t>(n_);
    const double import_volume = s.volume - c[n];
    for (std::size_t j = 0; j < n; ++j) {
      double sexp, simp;
      if (form_ == KernelForm::product) {
        simp = a_[j] * s.sum_b;
        sexp = b_[j + 1] * s.sum_a;
      } else {
        simp = a_[j] * s.mass + s.sum_b + eps_ * alpha_[j] * s.sum_beta;
        sexp = static_cast<double>(j + 1) * s.sum_a + b_[j + 1] * import_volume +
               eps_ * beta_[j + 1] * s.sum_alpha;
      }
      out[j] = c[j] * simp - c[j + 1] * sexp;
    }
  }

 private:
  void check_size(std::span<const double> c) const {
    detail::require(static_cast<index_t>(c.size()) == n_ + 1,
                    "EdgSystem: state size must be order + 1");
  }

  KernelForm form_;
  double eps_;
  index_t n_;
  std::vector<double> a_, b_, alpha_, beta_;
};

/// Residual of the moment identity: for any weights g_0..g_N,
///
///   sum_j g_j dc_j/dt  =  sum_{j=1}^{N} (g_{j-1} - g_j) c_j S_exp(j)
///                       + sum_{j=0}^{N-1} (g_{j+1} - g_j) c_j S_imp(j).
///
/// Returns |lhs - rhs| with the right-hand side evaluated from kernel point
/// values in O(N^2) — a deliberate, independent cross-check of the fast path.
inline double moment_identity_residual(const KernelSpec& kernel, const ClusterState& state,
                                       std::span<const double> g) {
  const index_t n = state.order();
  detail::require(static_cast<index_t>(g.size()) == n + 1,
                  "moment_identity_residual: weights must have size order + 1");
  EdgSystem system(kernel, n);
  std::vector<double> dcdt(static_cast<std::size_t>(n) + 1);
  system.rhs(state.densities(), dcdt);
  double lhs = 0.0;
  for (index_t j = 0; j <= n; ++j)
    lhs += g[static_cast<std::size_t>(j)] * dcdt[static_cast<std::size_t>(j)];

  const auto c = state.densities();
  double rhs_sum = 0.0;
  for (index_t j = 1; j <= n; ++j) {
    double sexp = 0.0;
    for (index_t k = 0; k <= n - 1; ++k) sexp += kernel.eval(j, k) * c[static_cast<std::size_t>(k)];
    rhs_sum += (g[static_cast<std::size_t>(j - 1)] - g[static_cast<std::size_t>(j)]) *
               c[static_cast<std::size_t>(j)] * sexp;
  }
  for (index_t j = 0; j <= n - 1; ++j) {
    double simp = 0.0;
    for (index_t k = 1; k <= n; ++k) simp += kernel.eval(k, j) * c[static_cast<std::size_t>(k)];
    rhs_sum += (g[static_cast<std::size_t>(j + 1)] - g[static_cast<std::size_t>(j)]) *
               c[static_cast<std::size_t>(j)] * simp;
  }
  return std::abs(lhs - rhs_sum);
}

// ---------------------------------------------------------------------------
// Integrator configuration and statistics
// ---------------------------------------------------------------------------

enum class Method { rk45, rk4 };

struct IntegratorConfig {
  Method method = Method::rk45;
  double rel_tol = 1e-8;
  double abs_tol = 1e-12;
  double max_step = 0.0;      ///< 0 = unlimited (rk45); rk4 uses this as its fixed step
  double min_step = 1e-14;
  double initial_step = 0.0;  ///< 0 = choose automatically
  /// Accepted-step components in [-floor, 0) are clamped to 0 (with an audit
  /// and FSAL refresh); components below -floor reject the step.
  double negativity_floor = 1e-12;
  /// Conservation audit cadence, in accepted steps.
  index_t conservation_check_every = 100;

  void validate() const {
    detail::require(rel_tol > 0.0 && rel_tol < 1.0, "IntegratorConfig: rel_tol must be in (0, 1)");
    detail::require(abs_tol >= 0.0, "IntegratorConfig: abs_tol must be >= 0");
    detail::require(max_step >= 0.0, "IntegratorConfig: max_step must be >= 0");
    detail::require(min_step > 0.0, "IntegratorConfig: min_step must be > 0");
    detail::require(initial_step >= 0.0, "IntegratorConfig: initial_step must be >= 0");
    detail::require(negativity_floor >= 0.0, "IntegratorConfig: negativity_floor must be >= 0");
    detail::require(conservation_check_every >= 1,
                    "IntegratorConfig: conservation_check_every must be >= 1");
  }
};

struct IntegratorStats {
  index_t steps_accepted = 0;
  index_t steps_rejected = 0;
  index_t rhs_evaluations = 0;
  index_t clamped_components = 0;  ///< total components clamped to 0
  double stop_time = 0.0;
  std::string stop_reason;         ///< "t_end" or "stall"
  double max_volume_drift = 0.0;   ///< max relative |M0(t) - M0(0)| over audits
  double max_mass_drift = 0.0;     ///< max relative |M1(t) - M1(0)| over audits
};

/// Where along [t0, t_end] to record snapshots.  Endpoints are always included.
struct SamplingPlan {
  index_t count = 129;          ///< total snapshot count (>= 2) when times are generated
  bool log_spaced = true;       ///< geometric spacing from the first offset; else uniform
  double first_fraction = 1e-5; ///< first interior sample at t0 + first_fraction * (t_end - t0)
  std::vector<double> explicit_times;  ///< overrides generation when non-empty (ascending)

  std::vector<double> build(double t0, double t_end) const {
    detail::require(t_end > t0, "SamplingPlan: t_end must exceed t0");
    std::vector<double> times;
    if (!explicit_times.empty()) {
      times = explicit_times;
      std::sort(times.begin(), times.end());
      detail::require(times.front() >= t0 && times.back() <= t_end,
                      "SamplingPlan: explicit times must lie in [t0, t_end]");
      if (times.front() > t0) times.insert(times.begin(), t0);
      if (times.back() < t_end) times.push_back(t_end);
      return times;
    }
    detail::require(count >= 2, "SamplingPlan: count must be >= 2");
    detail::require(first_fraction > 0.0 && first_fraction < 1.0,
                    "SamplingPlan: first_fraction must be in (0, 1)");
    times.reserve(static_cast<std::size_t>(count));
    times.push_back(t0);
    const double span = t_end - t0;
    if (log_spaced) {
      const double first = first_fraction * span;
      const auto interior = static_cast<double>(count - 1);
      const double ratio = std::pow(span / first, 1.0 / std::max(interior - 1.0, 1.0));
      double offset = first;
      for (index_t i = 1; i < count; ++i) {
        times.push_back(t0 + offset);
        offset *= ratio;
      }
    } else {
      for (index_t i = 1; i < count; ++i)
        times.push_back(t0 + span * static_cast<double>(i) / static_cast<double>(count - 1));
    }
    times.back() = t_end;
    // Strictly increasing after rounding.
    times.erase(std::unique(times.begin(), times.end()), times.end());
    return times;
  }
};

/// Stop early once the dynamics stall: max_j |dc_j/dt| < tol.  tol = 0 disables.
struct StallRule {
  double tol = 0.0;
};

struct Trajectory {
  std::vector<ClusterState> samples;  ///< includes t0 and the terminal state
  IntegratorStats stats;
};

/// Two trajectories integrated as one stacked system on a shared adaptive grid
/// (so step-size decisions never differ between the members of the pair).
struct PairTrajectory {
  std::vector<ClusterState> first;
  std::vector<ClusterState> second;
  IntegratorStats stats;
};

// ---------------------------------------------------------------------------
// Embedded Dormand–Prince 5(4) driver (internal)
// ---------------------------------------------------------------------------

namespace detail {

struct StepHooks {
  std::span<const double> sample_times;  ///< ascending, within [t0, t_end]
  std::function<void(double, std::span<const double>)> on_sample;
  /// Called with (t, y, dy/dt at t) after each accepted step; return true to stop.
  std::function<bool(double, std::span<const double>, std::span<const double>)> stop;
  /// Called every conservation_check_every accepted steps and after any clamp.
  std::function<void(double, std::span<const double>)> on_audit;
};

// Dormand–Prince coefficients (the classic 5(4) pair with FSAL).
inline constexpr double kDp_c2 = 1.0 / 5.0, kDp_c3 = 3.0 / 10.0, kDp_c4 = 4.0 / 5.0,
                        kDp_c5 = 8.0 / 9.0;
inline constexpr double kDp_a21 = 1.0 / 5.0;
inline constexpr double kDp_a31 = 3.0 / 40.0, kDp_a32 = 9.0 / 40.0;
inline constexpr double kDp_a41 = 44.0 / 45.0, kDp_a42 = -56.0 / 15.0, kDp_a43 = 32.0 / 9.0;
inline constexpr double kDp_a51 = 19372.0 / 6561.0, kDp_a52 = -25360.0 / 2187.0,
                        kDp_a53 = 64448.0 / 6561.0, kDp_a54 = -212.0 / 729.0;
inline constexpr double kDp_a61 = 9017.0 / 3168.0, kDp_a62 = -355.0 / 33.0,
                        kDp_a63 = 46732.0 / 5247.0, kDp_a64 = 49.0 / 176.0,
                        kDp_a65 = -5103.0 / 18656.0;
inline constexpr double kDp_b1 = 35.0 / 384.0, kDp_b3 = 500.0 / 1113.0, kDp_b4 = 125.0 / 192.0,
                        kDp_b5 = -2187.0 / 6784.0, kDp_b6 = 11.0 / 84.0;
inline constexpr double kDp_e1 = 71.0 / 57600.0, kDp_e3 = -71.0 / 16695.0,
                        kDp_e4 = 71.0 / 1920.0, kDp_e5 = -17253.0 / 339200.0,
                        kDp_e6 = 22.0 / 525.0, kDp_e7 = -1.0 / 40.0;

template <class Rhs>
IntegratorStats run_rk45(Rhs&& rhs, std::vector<double>& y, double t0, double t_end,
                         const IntegratorConfig& cfg, const StepHooks& hooks) {
  cfg.validate();
  require(t_end > t0, "run_rk45: t_end must exceed t0");
  const std::size_t n = y.size();
  IntegratorStats stats;
  stats.stop_reason = "t_end";

  std::vector<double> k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), ytmp(n), ynew(n);
  auto eval = [&](const std::vector<double>& state, std::vector<double>& out) {
    rhs(std::span<const double>(state), std::span<double>(out));
    ++stats.rhs_evaluations;
  };

  const double t_eps = 1e-12 * std::max({1.0, std::abs(t0), std::abs(t_end)});
  std::size_t si = 0;
  while (si < hooks.sample_times.size() && hooks.sample_times[si] <= t0 + t_eps) {
    if (hooks.on_sample) hooks.on_sample(t0, y);
    ++si;
  }

  eval(y, k1);

  const double span = t_end - t0;
  const double h_cap = cfg.max_step > 0.0 ? std::min(cfg.max_step, span) : span;
  double h = cfg.initial_step > 0.0 ? cfg.initial_step : 0.0;
  if (h <= 0.0) {
    // Conservative automatic start: relate state and slope scales.
    double ynorm = 0.0, fnorm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      ynorm = std::max(ynorm, std::abs(y[i]));
      fnorm = std::max(fnorm, std::abs(k1[i]));
    }
    h = fnorm > 0.0 ? 0.01 * (ynorm + cfg.abs_tol) / fnorm : span / 100.0;
  }
  h = std::clamp(h, cfg.min_step, h_cap);

  double t = t0;
  index_t since_audit = 0;

  while (t < t_end - t_eps) {
    const double target =
        si < hooks.sample_times.size() ? std::min(hooks.sample_times[si], t_end) : t_end;
    bool clipped = false;
    double hs = h;
    if (t + hs >= target - t_eps) {
      hs = target - t;
      clipped = true;
    }
    if (hs <= 0.0) {  // target already reached within tolerance
      if (si < hooks.sample_times.size() && std::abs(target - hooks.sample_times[si]) <= t_eps) {
        if (hooks.on_sample) hooks.on_sample(t, y);
        ++si;
        continue;
      }
      break;
    }

    // Stage values.
    for (std::size_t i = 0; i < n; ++i) ytmp[i] = y[i] + hs * kDp_a21 * k1[i];
    eval(ytmp, k2);
    for (std::size_t i = 0; i < n; ++i)
      ytmp[i] = y[i] + hs * (kDp_a31 * k1[i] + kDp_a32 * k2[i]);
    eval(ytmp, k3);
    for (std::size_t i = 0; i < n; ++i)
      ytmp[i] = y[i] + hs * (kDp_a41 * k1[i] + kDp_a42 * k2[i] + kDp_a43 * k3[i]);
    eval(ytmp, k4);
    for (std::size_t i = 0; i < n; ++i)
      ytmp[i] = y[i] + hs * (kDp_a51 * k1[i] + kDp_a52 * k2[i] + kDp_a53 * k3[i] +
                             kDp_a54 * k4[i]);
    eval(ytmp, k5);
    for (std::size_t i = 0; i < n; ++i)
      ytmp[i] = y[i] + hs * (kDp_a61 * k1[i] + kDp_a62 * k2[i] + kDp_a63 * k3[i] +
                             kDp_a64 * k4[i] + kDp_a65 * k5[i]);
    eval(ytmp, k6);
    for (std::size_t i = 0; i < n; ++i)
      ynew[i] = y[i] + hs * (kDp_b1 * k1[i] + kDp_b3 * k3[i] + kDp_b4 * k4[i] +
                             kDp_b5 * k5[i] + kDp_b6 * k6[i]);
    eval(ynew, k7);

    // Error norm (RMS of component errors against mixed tolerance).
    double err_sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double err = hs * (kDp_e1 * k1[i] + kDp_e3 * k3[i] + kDp_e4 * k4[i] +
                               kDp_e5 * k5[i] + kDp_e6 * k6[i] + kDp_e7 * k7[i]);
      const double scale = cfg.abs_tol + cfg.rel_tol * std::max(std::abs(y[i]), std::abs(ynew[i]));
      const double r = scale > 0.0 ? err / scale : 0.0;
      err_sq += r * r;
    }
    const double err_norm = std::sqrt(err_sq / static_cast<double>(n));

    double most_negative = 0.0;
    index_t worst = -1;
    for (std::size_t i = 0; i < n; ++i) {
      if (ynew[i] < most_negative) {
        most_negative = ynew[i];
        worst = static_cast<index_t>(i);
      }
    }

    if (err_norm <= 1.0 && most_negative >= -cfg.negativity_floor) {
      // Accept; clamp round-off negatives, which invalidates the FSAL stage.
      bool clamped = false;
      for (std::size_t i = 0; i < n; ++i) {
        if (ynew[i] < 0.0) {
          ynew[i] = 0.0;
          clamped = true;
          ++stats.clamped_components;
        }
      }
      y.swap(ynew);
      t = clipped ? target : t + hs;
      ++stats.steps_accepted;
      if (clamped)
        eval(y, k1);
      else
        k1.swap(k7);

      if (clipped && si < hooks.sample_times.size() &&
          std::abs(t - hooks.sample_times[si]) <= t_eps) {
        if (hooks.on_sample) hooks.on_sample(t, y);
        ++si;
      }
      if (hooks.on_audit && (++since_audit >= cfg.conservation_check_every || clamped)) {
        hooks.on_audit(t, y);
        since_audit = 0;
      }
      if (hooks.stop && hooks.stop(t, y, k1)) {
        stats.stop_reason = "stall";
        break;
      }
      const double grow =
          err_norm > 0.0 ? std::clamp(0.9 * std::pow(err_norm, -0.2), 0.2, 5.0) : 5.0;
      h = std::clamp(hs * grow, cfg.min_step, h_cap);
    } else {
      ++stats.steps_rejected;
      const double shrink =
          err_norm > 1.0 ? std::clamp(0.9 * std::pow(err_norm, -0.2), 0.2, 1.0) : 0.5;
      h = hs * shrink;
      if (h < cfg.min_step) {
        if (most_negative < -cfg.negativity_floor)
          throw IntegrationError(
              "integration stalled: component driven negative beyond the floor at t = " +
                  std::to_string(t),
              t, worst);
        throw IntegrationError("integration stalled: step size underflow at t = " +
                                   std::to_string(t),
                               t);
      }
    }
  }
  stats.stop_time = t;
  return stats;
}

template <class Rhs>
IntegratorStats run_rk4(Rhs&& rhs, std::vector<double>& y, double t0, double t_end,
                        const IntegratorConfig& cfg, const StepHooks& hooks) {
  cfg.validate();
  require(t_end > t0, "run_rk4: t_end must exceed t0");
  const std::size_t n = y.size();
  IntegratorStats stats;
  stats.stop_reason = "t_end";

  std::vector<double> k1(n), k2(n), k3(n), k4(n), ytmp(n), ynew(n);
  auto eval = [&](const std::vector<double>& state, std::vector<double>& out) {
    rhs(std::span<const double>(state), std::span<double>(out));
    ++stats.rhs_evaluations;
  };

  const double t_eps = 1e-12 * std::max({1.0, std::abs(t0), std::abs(t_end)});
  std::size_t si = 0;
  while (si < hooks.sample_times.size() && hooks.sample_times[si] <= t0 + t_eps) {
    if (hooks.on_sample) hooks.on_sample(t0, y);
    ++si;
  }

  const double h_fixed = cfg.max_step > 0.0 ? cfg.max_step : (t_end - t0) / 1000.0;
  double t = t0;
  index_t since_audit = 0;
  while (t < t_end - t_eps) {
    const double target =
        si < hooks.sample_times.size() ? std::min(hooks.sample_times[si], t_end) : t_end;
    bool clipped = false;
    double hs = h_fixed;
    if (t + hs >= target - t_eps) {
      hs = target - t;
      clipped = true;
    }
    if (hs <= 0.0) {
      if (si < hooks.sample_times.size() && std::abs(target - hooks.sample_times[si]) <= t_eps) {
        if (hooks.on_sample) hooks.on_sample(t, y);
        ++si;
      } else {
        break;
      }
      continue;
    }

    eval(y, k1);
    for (std::size_t i = 0; i < n; ++i) ytmp[i] = y[i] + 0.5 * hs * k1[i];
    eval(ytmp, k2);
    for (std::size_t i = 0; i < n; ++i) ytmp[i] = y[i] + 0.5 * hs * k2[i];
    eval(ytmp, k3);
    for (std::size_t i = 0; i < n; ++i) ytmp[i] = y[i] + hs * k3[i];
    eval(ytmp, k4);
    bool clamped = false;
    for (std::size_t i = 0; i < n; ++i) {
      double v = y[i] + hs / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
      if (v < -cfg.negativity_floor)
        throw IntegrationError("fixed-step integration drove a component negative at t = " +
                                   std::to_string(t) + "; reduce the step",
                               t, static_cast<index_t>(i));
      if (v < 0.0) {
        v = 0.0;
        clamped = true;
        ++stats.clamped_components;
      }
      ynew[i] = v;
    }
    y.swap(ynew);
    t = clipped ? target : t + hs;
    ++stats.steps_accepted;

    if (clipped && si < hooks.sample_times.size() &&
        std::abs(t - hooks.sample_times[si]) <= t_eps) {
      if (hooks.on_sample) hooks.on_sample(t, y);
      ++si;
    }
    if (hooks.on_audit && (++since_audit >= cfg.conservation_check_every || clamped)) {
      hooks.on_audit(t, y);
      since_audit = 0;
    }
    if (hooks.stop) {
      eval(y, k1);
      if (hooks.stop(t, y, k1)) {
        stats.stop_reason = "stall";
        break;
      }
    }
  }
  stats.stop_time = t;
  return stats;
}

template <class Rhs>
IntegratorStats run_driver(Rhs&& rhs, std::vector<double>& y, double t0, double t_end,
                           const IntegratorConfig& cfg, const StepHooks& hooks) {
  if (cfg.method == Method::rk45)
    return run_rk45(std::forward<Rhs>(rhs), y, t0, t_end, cfg, hooks);
  return run_rk4(std::forward<Rhs>(rhs), y, t0, t_end, cfg, hooks);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// High-level integration entry points
// ---------------------------------------------------------------------------

/// Integrate the truncated system from `initial` to t_end (or to a stall),
/// recording snapshots per the sampling plan.  The terminal state is always
/// the last sample.  Conservation drift is audited on the configured cadence
/// and reported in the stats.
inline Trajectory integrate(const KernelSpec& kernel, const ClusterState& initial, double t_end,
                            const IntegratorConfig& cfg = {}, const SamplingPlan& sampling = {},
                            StallRule stall = {}) {
  const double t0 = initial.time();
  detail::require(t_end > t0, "integrate: t_end must exceed the initial time");
  EdgSystem system(kernel, initial.order());
  std::vector<double> y(initial.densities().begin(), initial.densities().end());

  Trajectory traj;
  const std::vector<double> times = sampling.build(t0, t_end);
  const double m0_ref = std::max(initial.volume(), 1e-300);
  const double m1_ref = std::max(initial.mass(), 1e-300);
  double vol_drift = 0.0, mass_drift = 0.0;

  detail::StepHooks hooks;
  hooks.sample_times = times;
  hooks.on_sample = [&traj](double t, std::span<const double> state) {
    traj.samples.emplace_back(std::vector<double>(state.begin(), state.end()), t);
  };
  hooks.on_audit = [&](double, std::span<const double> state) {
    double m0 = 0.0, m1 = 0.0;
    for (std::size_t j = 0; j < state.size(); ++j) {
      m0 += state[j];
      m1 += static_cast<double>(j) * state[j];
    }
    vol_drift = std::max(vol_drift, std::abs(m0 - m0_ref) / m0_ref);
    mass_drift = std::max(mass_drift, std::abs(m1 - m1_ref) / m1_ref);
  };
  if (stall.tol > 0.0) {
    hooks.stop = [tol = stall.tol](double, std::span<const double>,
                                   std::span<const double> dydt) {
      double worst = 0.0;
      for (double v : dydt) worst = std::max(worst, std::abs(v));
      return worst < tol;
    };
  }

  auto rhs = [&system](std::span<const double> c, std::span<double> dcdt) {
    system.rhs(c, dcdt);
  };
  IntegratorStats stats = detail::run_driver(rhs, y, t0, t_end, cfg, hooks);
  hooks.on_audit(stats.stop_time, y);  // final audit regardless of cadence
  stats.max_volume_drift = vol_drift;
  stats.max_mass_drift = mass_drift;

  const double t_eps = 1e-12 * std::max(1.0, std::abs(t_end));
  if (traj.samples.empty() || std::abs(traj.samples.back().time() - stats.stop_time) > t_eps)
    traj.samples.emplace_back(std::move(y), stats.stop_time);
  traj.stats = stats;
  return traj;
}

/// Integrate two states under the same kernel as one stacked system, so both
/// see identical accepted steps.  Used for contraction experiments where the
/// pair distance must be sampled on a shared grid.
inline PairTrajectory integrate_pair(const KernelSpec& kernel, const ClusterState& first,
                                     const ClusterState& second, double t_end,
                                     const IntegratorConfig& cfg = {},
                                     const SamplingPlan& sampling = {}, StallRule stall = {}) {
  detail::require(first.order() == second.order(),
                  "integrate_pair: states must share a truncation order");
  detail::require(first.time() == second.time(),
                  "integrate_pair: states must share a start time");
  const double t0 = first.time();
  detail::require(t_end > t0, "integrate_pair: t_end must exceed the initial time");
  EdgSystem system(kernel, first.order());
  const std::size_t m = first.densities().size();
  std::vector<double> y;
  y.reserve(2 * m);
  y.insert(y.end(), first.densities().begin(), first.densities().end());
  y.insert(y.end(), second.densities().begin(), second.densities().end());

  PairTrajectory traj;
  const std::vector<double> times = sampling.build(t0, t_end);
  const double m0_ref = std::max(std::min(first.volume(), second.volume()), 1e-300);
  const double m1_ref = std::max(std::min(first.mass(), second.mass()), 1e-300);
  double vol_drift = 0.0, mass_drift = 0.0;

  detail::StepHooks hooks;
  hooks.sample_times = times;
  hooks.on_sample = [&traj, m](double t, std::span<const double> state) {
    traj.first.emplace_back(std::vector<double>(state.begin(), state.begin() + m), t);
    traj.second.emplace_back(std::vector<double>(state.begin() + m, state.end()), t);
  };
  hooks.on_audit = [&](double, std::span<const double> state) {
    for (std::size_t half = 0; half < 2; ++half) {
      double m0 = 0.0, m1 = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        m0 += state[half * m + j];
        m1 += static_cast<double>(j) * state[half * m + j];
      }
      vol_drift = std::max(vol_drift, std::abs(m0 - m0_ref) / m0_ref);
      mass_drift = std::max(mass_drift, std::abs(m1 - m1_ref) / m1_ref);
    }
  };
  if (stall.tol > 0.0) {
    hooks.stop = [tol = stall.tol](double, std::span<const double>,
                                   std::span<const double> dydt) {
      double worst = 0.0;
      for (double v : dydt) worst = std::max(worst, std::abs(v));
      return worst < tol;
    };
  }

  auto rhs = [&system, m](std::span<const double> c, std::span<double> dcdt) {
    system.rhs(c.subspan(0, m), dcdt.subspan(0, m));
    system.rhs(c.subspan(m, m), dcdt.subspan(m, m));
  };
  IntegratorStats stats = detail::run_driver(rhs, y, t0, t_end, cfg, hooks);
  stats.max_volume_drift = vol_drift;
  stats.max_mass_drift = mass_drift;

  const double t_eps = 1e-12 * std::max(1.0, std::abs(t_end));
  if (traj.first.empty() || std::abs(traj.first.back().time() - stats.stop_time) > t_eps) {
    traj.first.emplace_back(std::vector<double>(y.begin(), y.begin() + static_cast<long>(m)),
                            stats.stop_time);
    traj.second.emplace_back(std::vector<double>(y.begin() + static_cast<long>(m), y.end()),
                             stats.stop_time);
  }
  traj.stats = stats;
  return traj;
}

}  // namespace edg
