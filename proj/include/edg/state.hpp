#pragma once

// Truncated cluster-density states and the metrics used to compare them.
//
// A state holds densities c_j for sizes j = 0..N on a fixed truncation order N,
// together with the time stamp it was sampled at.  Densities are non-negative;
// the volume M0 = sum c_j and the mass M1 = sum j c_j are the two conserved
// quantities of the exchange dynamics.

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "edg/rates.hpp"

namespace edg {

/// Distances between two states on the same truncation order.
enum class Distance {
  weak0,      ///< sum_j |c_j - d_j|
  strong1,    ///< sum_j (1 + j) |c_j - d_j|
  tail_l1,    ///< sum_j |C_j - D_j| with C_j = sum_{k >= j} c_k (tail sums)
  tail_weak,  ///< sup_j |C_j - D_j|
};

/// Densities c_0..c_N at a fixed truncation order N, stamped with a time.
/// Value type: cheap to copy for snapshotting along trajectories.
class ClusterState {
 public:
  /// Construct from densities; size must be >= 2 (orders N >= 1) and every
  /// entry finite and >= 0.
  explicit ClusterState(std::vector<double> densities, double time = 0.0)
      : c_(std::move(densities)), time_(time) {
    detail::require(c_.size() >= 2, "ClusterState: need densities for sizes 0..N with N >= 1");
    detail::require(std::isfinite(time_), "ClusterState: time must be finite");
    for (std::size_t j = 0; j < c_.size(); ++j)
      detail::require(std::isfinite(c_[j]) && c_[j] >= 0.0,
                      "ClusterState: density at size " + std::to_string(j) +
                          " must be finite and >= 0");
  }

  index_t order() const { return static_cast<index_t>(c_.size()) - 1; }
  double time() const { return time_; }
  double operator[](index_t j) const { return c_[static_cast<std::size_t>(j)]; }
  std::span<const double> densities() const { return c_; }

  /// p-th moment sum_j j^p c_j (j^0 := 1 at j = 0, also for p < 0).
  double moment(double p) const {
    double s = (p == 0.0) ? c_[0] : 0.0;
    for (std::size_t j = 1; j < c_.size(); ++j)
      s += std::pow(static_cast<double>(j), p) * c_[j];
    return s;
  }

  /// Total volume M0 = sum_j c_j.
  double volume() const {
    double s = 0.0;
    for (double v : c_) s += v;
    return s;
  }

  /// Total mass M1 = sum_j j c_j.
  double mass() const {
    double s = 0.0;
    for (std::size_t j = 1; j < c_.size(); ++j) s += static_cast<double>(j) * c_[j];
    return s;
  }

  /// Second moment M2 = sum_j j^2 c_j.
  double second_moment() const {
    double s = 0.0;
    for (std::size_t j = 1; j < c_.size(); ++j)
      s += static_cast<double>(j) * static_cast<double>(j) * c_[j];
    return s;
  }

  /// Tail sums C_j = sum_{k >= j} c_k for j = 1..N (summed back-to-front so
  /// each entry is an exact prefix of the same accumulation).
  std::vector<double> tail_sums() const {
    std::vector<double> tails(c_.size() - 1);
    double acc = 0.0;
    for (std::size_t j = c_.size(); j-- > 1;) {
      acc += c_[j];
      tails[j - 1] = acc;
    }
    return tails;
  }

 private:
  std::vector<double> c_;
  double time_;
};

/// Distance between two states of equal truncation order.
inline double distance(const ClusterState& c, const ClusterState& d, Distance kind) {
  detail::require(c.order() == d.order(), "distance: states must share a truncation order");
  const auto n = static_cast<std::size_t>(c.order());
  switch (kind) {
    case Distance::weak0: {
      double s = 0.0;
      for (std::size_t j = 0; j <= n; ++j) s += std::abs(c[static_cast<index_t>(j)] - d[static_cast<index_t>(j)]);
      return s;
    }
    case Distance::strong1: {
      double s = 0.0;
      for (std::size_t j = 0; j <= n; ++j)
        s += (1.0 + static_cast<double>(j)) *
             std::abs(c[static_cast<index_t>(j)] - d[static_cast<index_t>(j)]);
      return s;
    }
    case Distance::tail_l1: {
      const auto tc = c.tail_sums();
      const auto td = d.tail_sums();
      double s = 0.0;
      for (std::size_t j = 0; j < tc.size(); ++j) s += std::abs(tc[j] - td[j]);
      return s;
    }
    case Distance::tail_weak: {
      const auto tc = c.tail_sums();
      const auto td = d.tail_sums();
      double s = 0.0;
      for (std::size_t j = 0; j < tc.size(); ++j) s = std::max(s, std::abs(tc[j] - td[j]));
      return s;
    }
  }
  throw std::logic_error("distance: unknown kind");
}

// ---------------------------------------------------------------------------
// Canonical initial states
// ---------------------------------------------------------------------------

/// State carrying mass rho and volume eta with all mass on a single size m:
/// the smallest m with rho / m <= eta (m = 1 whenever rho <= eta), so that
/// c_m = rho / m and c_0 = eta - rho / m >= 0.  Requires m <= order.
inline ClusterState monomer_state(double rho, double eta, index_t order) {
  detail::require(std::isfinite(rho) && rho >= 0.0, "monomer_state: rho must be finite and >= 0");
  detail::require(std::isfinite(eta) && eta > 0.0, "monomer_state: eta must be finite and > 0");
  detail::require(order >= 1, "monomer_state: order must be >= 1");
  std::vector<double> c(static_cast<std::size_t>(order) + 1, 0.0);
  if (rho == 0.0) {
    c[0] = eta;
    return ClusterState(std::move(c));
  }
  const auto m = static_cast<index_t>(std::max(1.0, std::ceil(rho / eta - 1e-12)));
  detail::require(m <= order, "monomer_state: rho / eta exceeds the truncation order");
  c[static_cast<std::size_t>(m)] = rho / static_cast<double>(m);
  c[0] = eta - rho / static_cast<double>(m);
  if (c[0] < 0.0) c[0] = 0.0;  // guard round-off at rho / m == eta
  return ClusterState(std::move(c));
}

/// State with geometrically decaying cluster densities c_j = k * decay^j for
/// j >= 1 scaled to carry mass rho, and c_0 chosen to reach volume eta.
/// Throws when eta is too small to accommodate the cluster volume.
inline ClusterState geometric_state(double rho, double eta, double decay, index_t order) {
  detail::require(std::isfinite(rho) && rho > 0.0, "geometric_state: rho must be finite and > 0");
  detail::require(std::isfinite(eta) && eta > 0.0, "geometric_state: eta must be finite and > 0");
  detail::require(decay > 0.0 && decay < 1.0, "geometric_state: decay must lie in (0, 1)");
  detail::require(order >= 1, "geometric_state: order must be >= 1");
  std::vector<double> shape(static_cast<std::size_t>(order) + 1, 0.0);
  double cluster_volume = 0.0, cluster_mass = 0.0;
  double q = 1.0;
  for (index_t j = 1; j <= order; ++j) {
    q *= decay;
    shape[static_cast<std::size_t>(j)] = q;
    cluster_volume += q;
    cluster_mass += static_cast<double>(j) * q;
  }
  const double scale = rho / cluster_mass;
  const double c0 = eta - scale * cluster_volume;
  detail::require(c0 >= 0.0,
                  "geometric_state: volume eta too small for the requested mass at this decay");
  std::vector<double> c(shape.size());
  c[0] = c0;
  for (std::size_t j = 1; j < c.size(); ++j) c[j] = scale * shape[j];
  return ClusterState(std::move(c));
}

}  // namespace edg
