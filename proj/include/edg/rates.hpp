#pragma once

// Rate sequences and exchange kernels for mean-field exchange-driven growth.
//
// An exchange kernel K(j, k) is the rate at which a cluster of size j hands one
// monomer to a cluster of size k.  Empty sites never export, so K(0, k) == 0 by
// construction.  Two separable families are supported:
//
//   product form:  K(j, k) = b_j * a_k
//   sum form:      K(j, k) = j * a_k + b_j + eps * beta_j * alpha_k
//
// The export factors (b, beta) are indexed from 1, the import factors (a, alpha)
// from 0.  Both families admit O(N) evaluation of the exchange sums, which is
// what makes large truncation orders affordable (see dynamics.hpp).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace edg {

using index_t = std::int64_t;

/// Base class for all domain errors thrown by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

inline bool is_finite(double x) { return std::isfinite(x); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Rate sequences
// ---------------------------------------------------------------------------

/// A non-negative sequence j -> r_j used as a kernel factor.  Cheap to copy.
///
/// Construction validates parameters (coefficients must be finite and
/// non-negative, tables non-empty); evaluation never yields a negative value.
class RateSequence {
 public:
  struct Constant {
    double value;
  };
  /// coeff * j^exponent.  For a negative exponent the index is clamped to 1 at
  /// j = 0 so the sequence stays finite (import factors are evaluated at j = 0).
  struct Power {
    double coeff;
    double exponent;
  };
  /// coeff * j.
  struct Linear {
    double coeff;
  };
  /// coeff * j / log(j + e); the shift by e keeps the denominator >= 1.
  struct LogCorrected {
    double coeff;
  };
  /// Telescoping export ladder: r_1 = 1 and r_j = (j / (j - 1))^exponent for
  /// j >= 2, so that prefix ratios telescope to r_2 * ... * r_j = j^exponent.
  /// Evaluates to 1 at j = 0 (the value is never used there by kernels).
  struct Telescoping {
    double exponent;
  };
  enum class TailRule { constant, power };
  /// Explicit values for j < values.size(); beyond the table either the last
  /// value is held (constant tail) or extended as last * (j / j_last)^tail_exponent.
  struct Table {
    std::vector<double> values;
    TailRule tail = TailRule::constant;
    double tail_exponent = 0.0;
  };

  using Spec = std::variant<Constant, Power, Linear, LogCorrected, Telescoping, Table>;

  static RateSequence constant(double value) {
    detail::require(detail::is_finite(value) && value >= 0.0,
                    "RateSequence::constant: value must be finite and >= 0");
    return RateSequence(Constant{value});
  }

  static RateSequence power(double coeff, double exponent) {
    detail::require(detail::is_finite(coeff) && coeff >= 0.0,
                    "RateSequence::power: coeff must be finite and >= 0");
    detail::require(detail::is_finite(exponent), "RateSequence::power: exponent must be finite");
    return RateSequence(Power{coeff, exponent});
  }

  static RateSequence linear(double coeff) {
    detail::require(detail::is_finite(coeff) && coeff >= 0.0,
                    "RateSequence::linear: coeff must be finite and >= 0");
    return RateSequence(Linear{coeff});
  }

  static RateSequence log_corrected(double coeff) {
    detail::require(detail::is_finite(coeff) && coeff >= 0.0,
                    "RateSequence::log_corrected: coeff must be finite and >= 0");
    return RateSequence(LogCorrected{coeff});
  }

  static RateSequence telescoping(double exponent) {
    detail::require(detail::is_finite(exponent), "RateSequence::telescoping: exponent must be finite");
    return RateSequence(Telescoping{exponent});
  }

  static RateSequence table(std::vector<double> values, TailRule tail = TailRule::constant,
                            double tail_exponent = 0.0) {
    detail::require(!values.empty(), "RateSequence::table: values must be non-empty");
    for (double v : values)
      detail::require(detail::is_finite(v) && v >= 0.0,
                      "RateSequence::table: values must be finite and >= 0");
    detail::require(detail::is_finite(tail_exponent),
                    "RateSequence::table: tail exponent must be finite");
    return RateSequence(Table{std::move(values), tail, tail_exponent});
  }

  /// Evaluate r_j.  Throws std::invalid_argument for j < 0.
  double operator()(index_t j) const {
    detail::require(j >= 0, "RateSequence: index must be >= 0");
    return std::visit([j](const auto& s) { return eval(s, j); }, spec_);
  }

  const Spec& spec() const { return spec_; }

 private:
  explicit RateSequence(Spec spec) : spec_(std::move(spec)) {}

  static double eval(const Constant& s, index_t) { return s.value; }

  static double eval(const Power& s, index_t j) {
    if (j == 0 && s.exponent < 0.0) j = 1;
    if (j == 0) return s.exponent == 0.0 ? s.coeff : 0.0;
    return s.coeff * std::pow(static_cast<double>(j), s.exponent);
  }

  static double eval(const Linear& s, index_t j) { return s.coeff * static_cast<double>(j); }

  static double eval(const LogCorrected& s, index_t j) {
    const double x = static_cast<double>(j);
    return s.coeff * x / std::log(x + std::numbers::e);
  }

  static double eval(const Telescoping& s, index_t j) {
    if (j <= 1) return 1.0;
    const double x = static_cast<double>(j);
    return std::pow(x / (x - 1.0), s.exponent);
  }

  static double eval(const Table& s, index_t j) {
    const auto n = static_cast<index_t>(s.values.size());
    if (j < n) return s.values[static_cast<std::size_t>(j)];
    const double last = s.values.back();
    if (s.tail == TailRule::constant) return last;
    const double j_last = static_cast<double>(n - 1);
    if (j_last <= 0.0) return last;  // single-entry table: hold the value
    return last * std::pow(static_cast<double>(j) / j_last, s.tail_exponent);
  }

  Spec spec_;
};

// ---------------------------------------------------------------------------
// Kernel specification
// ---------------------------------------------------------------------------

enum class KernelForm { product, sum };

/// Declared envelope data for a kernel.  These are *claims* made by the caller
/// about the sequences; validate_bounds() and validate_hypotheses() check them
/// against the actual values over a finite range.  All fields default to 0
/// (= "not declared").
struct KernelBounds {
  double a_min = 0.0;        ///< uniform lower bound: a_j >= a_min for all j >= 0
  double a_slope = 0.0;      ///< linear cap: a_j <= a_slope * j for j >= 1
  double b_min = 0.0;        ///< lower bound: b_j >= b_min for j >= 1
  double b_slope = 0.0;      ///< linear cap: b_j <= b_slope * j for j >= 1
  double alpha_slope = 0.0;  ///< linear cap on alpha_j for j >= 1 (sum form)
  double beta_slope = 0.0;   ///< linear cap on beta_j for j >= 1 (sum form)
  double pert_sup = 0.0;     ///< uniform sup bound on alpha_j and beta_j (sum form)
  /// Optional growth floor: b_j >= C * j^lower_exponent for some C > 0.
  std::optional<double> lower_exponent;
};

/// Declared monotonicity structure (checked, not assumed).
struct MonotoneFlags {
  bool a_nonincreasing = false;  ///< import factor a_j non-increasing in j
  bool b_nondecreasing = false;  ///< export factor b_j non-decreasing in j
};

/// Immutable description of an exchange kernel: form, factor sequences,
/// perturbation strength, and declared envelope data.  Construction is cheap
/// and does not scan sequences; use validate_bounds() / validate_hypotheses()
/// to check declarations over a finite index range.
class KernelSpec {
 public:
  /// Product-form kernel K(j, k) = b_j * a_k.
  static KernelSpec product(RateSequence a, RateSequence b, KernelBounds bounds = {},
                            MonotoneFlags monotone = {}) {
    return KernelSpec(KernelForm::product, std::move(a), std::move(b), std::nullopt, std::nullopt,
                      0.0, bounds, monotone);
  }

  /// Sum-form kernel K(j, k) = j * a_k + b_j + eps * beta_j * alpha_k.
  static KernelSpec sum(RateSequence a, RateSequence b, RateSequence alpha, RateSequence beta,
                        double eps, KernelBounds bounds = {}, MonotoneFlags monotone = {}) {
    detail::require(detail::is_finite(eps) && eps >= 0.0,
                    "KernelSpec::sum: eps must be finite and >= 0");
    return KernelSpec(KernelForm::sum, std::move(a), std::move(b), std::move(alpha),
                      std::move(beta), eps, bounds, monotone);
  }

  KernelForm form() const { return form_; }
  const RateSequence& a() const { return a_; }
  const RateSequence& b() const { return b_; }
  const RateSequence& alpha() const { return *alpha_; }
  const RateSequence& beta() const { return *beta_; }
  double eps() const { return eps_; }
  const KernelBounds& bounds() const { return bounds_; }
  const MonotoneFlags& monotone() const { return monotone_; }

  /// Point evaluation of K(j, k).  K(0, k) == 0 identically (empty sites do
  /// not export).  Intended for oracles and spot checks; the dynamics use the
  /// O(N) exchange sums instead.
  double eval(index_t j, index_t k) const {
    detail::require(j >= 0 && k >= 0, "KernelSpec::eval: indices must be >= 0");
    if (j == 0) return 0.0;
    if (form_ == KernelForm::product) return b_(j) * a_(k);
    return static_cast<double>(j) * a_(k) + b_(j) + eps_ * (*beta_)(j) * (*alpha_)(k);
  }

  /// Check every declared bound and monotone flag for indices 1..range (a and
  /// alpha also at 0).  Returns human-readable violation messages; empty means
  /// all declared claims hold on the scanned range.
  std::vector<std::string> validate_bounds(index_t range) const;

 private:
  KernelSpec(KernelForm form, RateSequence a, RateSequence b, std::optional<RateSequence> alpha,
             std::optional<RateSequence> beta, double eps, KernelBounds bounds,
             MonotoneFlags monotone)
      : form_(form),
        a_(std::move(a)),
        b_(std::move(b)),
        alpha_(std::move(alpha)),
        beta_(std::move(beta)),
        eps_(eps),
        bounds_(bounds),
        monotone_(monotone) {}

  KernelForm form_;
  RateSequence a_;
  RateSequence b_;
  std::optional<RateSequence> alpha_;
  std::optional<RateSequence> beta_;
  double eps_ = 0.0;
  KernelBounds bounds_;
  MonotoneFlags monotone_;
};

// ---------------------------------------------------------------------------
// Tail-trend estimation (shared by hypothesis checks and the radius estimate)
// ---------------------------------------------------------------------------

namespace detail {

struct TrendEstimate {
  enum class Kind { finite, divergent, indeterminate };
  Kind kind = Kind::indeterminate;
  double limit = std::numeric_limits<double>::quiet_NaN();  ///< extrapolated limit (finite kind)
  double at_end = std::numeric_limits<double>::quiet_NaN(); ///< raw value at k = range
};

/// Estimate lim_{k->inf} f(k) from samples on [1, range], assuming the tail
/// behaves like L + beta / k.  Classification:
///   - divergent: non-finite tail values, or sustained growth across scales
///     (f(range) > 2 f(range/2) > 4 f(range/4)) with a non-decreasing tail;
///   - indeterminate: persistent oscillation with non-vanishing relative spread;
///   - finite: otherwise; the limit is the intercept of a least-squares fit of
///     f(k) against 1/k over the trailing ~10% of the range.
template <class F>
TrendEstimate estimate_tail_limit(F&& f, index_t range) {
  require(range >= 16, "estimate_tail_limit: range must be >= 16");
  TrendEstimate out;

  const index_t tail_begin = std::max<index_t>(2, range - std::max<index_t>(range / 10, 8));
  const index_t stride = std::max<index_t>(1, (range - tail_begin) / 512);
  std::vector<double> ks, vs;
  for (index_t k = tail_begin; k <= range; k += stride) {
    ks.push_back(static_cast<double>(k));
    vs.push_back(f(k));
  }
  if (ks.back() != static_cast<double>(range)) {
    ks.push_back(static_cast<double>(range));
    vs.push_back(f(range));
  }
  out.at_end = vs.back();

  std::size_t bad = 0;
  for (double v : vs)
    if (!std::isfinite(v)) ++bad;
  if (bad > 0) {
    // A tail that ends non-finite is treated as divergent; isolated interior
    // spikes leave the limit undecidable.
    out.kind = std::isfinite(vs.back()) ? TrendEstimate::Kind::indeterminate
                                        : TrendEstimate::Kind::divergent;
    return out;
  }

  // Sustained multiplicative growth across octaves => divergent.
  const double v_end = vs.back();
  const double v_half = f(std::max<index_t>(1, range / 2));
  const double v_quarter = f(std::max<index_t>(1, range / 4));
  bool non_decreasing = true;
  for (std::size_t i = 1; i < vs.size(); ++i) {
    if (vs[i] < vs[i - 1] - 1e-12 * (1.0 + std::abs(vs[i - 1]))) {
      non_decreasing = false;
      break;
    }
  }
  if (non_decreasing && std::isfinite(v_half) && std::isfinite(v_quarter) && v_end > 0.0 &&
      v_end >= 2.0 * v_half * (1.0 - 1e-9) && v_half >= 2.0 * v_quarter * (1.0 - 1e-9)) {
    out.kind = TrendEstimate::Kind::divergent;
    return out;
  }

  // Persistent oscillation with non-vanishing spread => indeterminate.
  double lo = vs[0], hi = vs[0], mean = 0.0;
  std::size_t flips = 0;
  int last_sign = 0;
  for (std::size_t i = 0; i < vs.size(); ++i) {
    lo = std::min(lo, vs[i]);
    hi = std::max(hi, vs[i]);
    mean += vs[i];
    if (i > 0) {
      const double dv = vs[i] - vs[i - 1];
      const int sign = dv > 0.0 ? 1 : (dv < 0.0 ? -1 : 0);
      if (sign != 0 && last_sign != 0 && sign != last_sign) ++flips;
      if (sign != 0) last_sign = sign;
    }
  }
  mean /= static_cast<double>(vs.size());
  const double spread = (hi - lo) / std::max(std::abs(mean), 1e-300);
  if (vs.size() >= 8 && flips > vs.size() / 3 && spread > 0.05) {
    out.kind = TrendEstimate::Kind::indeterminate;
    return out;
  }

  // Least squares of v against x = 1/k: v ~ L + beta * x; the intercept L is
  // the extrapolated limit.
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  const double m = static_cast<double>(vs.size());
  for (std::size_t i = 0; i < vs.size(); ++i) {
    const double x = 1.0 / ks[i];
    sx += x;
    sy += vs[i];
    sxx += x * x;
    sxy += x * vs[i];
  }
  const double denom = m * sxx - sx * sx;
  out.kind = TrendEstimate::Kind::finite;
  out.limit = (std::abs(denom) < 1e-300) ? mean : (sy * sxx - sx * sxy) / denom;
  // A fit that extrapolates well above the sampled tail of a non-decreasing
  // sequence signals sublinear divergence (~k/log k growth, say) rather than
  // convergence: the L + beta/k model has no headroom for a rising tail.
  if (non_decreasing && out.limit > out.at_end + 0.5 * (std::abs(out.at_end) + 1.0)) {
    out.kind = TrendEstimate::Kind::divergent;
    out.limit = std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Hypothesis checks
// ---------------------------------------------------------------------------

/// Structural hypotheses on a kernel that the convergence and contraction
/// theory relies on.  Each is checked numerically over a finite index range;
/// trend-based checks extrapolate the tail.
enum class Hypothesis {
  ratio_vanishes,        ///< a_j / b_{j+1} -> 0 (import loses to export at large sizes)
  ratio_above_radius,    ///< b_j / a_j >= z_s for all j (fugacities fill (0, z_s))
  uniform_import_floor,  ///< sum form: a_j >= a_min > 0 and sup(alpha, beta) <= pert_sup
  linear_growth_caps,    ///< declared linear caps and floors hold; kernel <= c * (caps)
  growth_linear,         ///< a_j and b_j are O(j)
  growth_log_corrected,  ///< a_j and b_j are O(j / log j)
};

struct HypothesisCheck {
  Hypothesis id;
  bool applicable = true;  ///< false when the kernel form or declarations don't support the check
  bool passed = false;
  std::optional<index_t> witness;  ///< first violating index, for scan-based checks
  double observed = std::numeric_limits<double>::quiet_NaN();  ///< check-specific scalar
  std::string note;
};

struct HypothesisReport {
  std::vector<HypothesisCheck> checks;

  bool all_passed() const {
    return std::all_of(checks.begin(), checks.end(),
                       [](const HypothesisCheck& c) { return !c.applicable || c.passed; });
  }

  const HypothesisCheck* find(Hypothesis id) const {
    for (const auto& c : checks)
      if (c.id == id) return &c;
    return nullptr;
  }
};

/// Tolerance used by the ratio_vanishes trend check: the extrapolated limit of
/// a_j / b_{j+1} must not exceed this.
inline constexpr double kRatioVanishTol = 1e-2;

namespace detail {

inline const char* hypothesis_name(Hypothesis h) {
  switch (h) {
    case Hypothesis::ratio_vanishes: return "ratio_vanishes";
    case Hypothesis::ratio_above_radius: return "ratio_above_radius";
    case Hypothesis::uniform_import_floor: return "uniform_import_floor";
    case Hypothesis::linear_growth_caps: return "linear_growth_caps";
    case Hypothesis::growth_linear: return "growth_linear";
    case Hypothesis::growth_log_corrected: return "growth_log_corrected";
  }
  return "?";
}

}  // namespace detail

/// Check the requested hypotheses for indices up to `range` (default: all six).
/// Trend checks extrapolate the tail; scan checks record the first violating
/// index as a witness.  Checks that do not apply to the kernel form (or lack
/// the needed declarations) are reported with applicable = false.
HypothesisReport validate_hypotheses(const KernelSpec& kernel, index_t range,
                                     std::vector<Hypothesis> which = {
                                         Hypothesis::ratio_vanishes,
                                         Hypothesis::ratio_above_radius,
                                         Hypothesis::uniform_import_floor,
                                         Hypothesis::linear_growth_caps,
                                         Hypothesis::growth_linear,
                                         Hypothesis::growth_log_corrected,
                                     });

/// Exponential contraction floor for sum-form kernels with a uniform import
/// floor: a_min - 8 * pert_sup^2 * eps.  Positive only when the perturbation
/// is weak; meaningful only when uniform_import_floor passes.
inline double weak_contraction_rate(const KernelSpec& kernel) {
  detail::require(kernel.form() == KernelForm::sum,
                  "weak_contraction_rate: sum-form kernel required");
  const auto& b = kernel.bounds();
  return b.a_min - 8.0 * b.pert_sup * b.pert_sup * kernel.eps();
}

// ---------------------------------------------------------------------------
// Implementation: bound validation and hypothesis checks
// ---------------------------------------------------------------------------

inline std::vector<std::string> KernelSpec::validate_bounds(index_t range) const {
  detail::require(range >= 1, "validate_bounds: range must be >= 1");
  std::vector<std::string> violations;
  auto complain = [&violations](const std::string& msg) {
    if (violations.size() < 32) violations.push_back(msg);
  };
  const double slack = 1e-12;

  double prev_a = a_(0);
  if (bounds_.a_min > 0.0 && prev_a < bounds_.a_min * (1.0 - slack))
    complain("a_0 = " + std::to_string(prev_a) + " below declared a_min");
  double prev_b = 0.0;
  for (index_t j = 1; j <= range; ++j) {
    const double aj = a_(j);
    const double bj = b_(j);
    const double x = static_cast<double>(j);
    if (bounds_.a_min > 0.0 && aj < bounds_.a_min * (1.0 - slack))
      complain("a_" + std::to_string(j) + " below declared a_min");
    if (bounds_.a_slope > 0.0 && aj > bounds_.a_slope * x * (1.0 + slack))
      complain("a_" + std::to_string(j) + " above declared a_slope * j");
    if (bounds_.b_min > 0.0 && bj < bounds_.b_min * (1.0 - slack))
      complain("b_" + std::to_string(j) + " below declared b_min");
    if (bounds_.b_slope > 0.0 && bj > bounds_.b_slope * x * (1.0 + slack))
      complain("b_" + std::to_string(j) + " above declared b_slope * j");
    if (monotone_.a_nonincreasing && aj > prev_a * (1.0 + slack) + slack)
      complain("a_" + std::to_string(j) + " increases though declared non-increasing");
    if (monotone_.b_nondecreasing && j >= 2 && bj < prev_b * (1.0 - slack) - slack)
      complain("b_" + std::to_string(j) + " decreases though declared non-decreasing");
    if (form_ == KernelForm::sum) {
      const double alj = (*alpha_)(j);
      const double bej = (*beta_)(j);
      if (bounds_.alpha_slope > 0.0 && alj > bounds_.alpha_slope * x * (1.0 + slack))
        complain("alpha_" + std::to_string(j) + " above declared alpha_slope * j");
      if (bounds_.beta_slope > 0.0 && bej > bounds_.beta_slope * x * (1.0 + slack))
        complain("beta_" + std::to_string(j) + " above declared beta_slope * j");
      if (bounds_.pert_sup > 0.0 &&
          (alj > bounds_.pert_sup * (1.0 + slack) || bej > bounds_.pert_sup * (1.0 + slack)))
        complain("perturbation factor at j = " + std::to_string(j) + " above declared pert_sup");
    }
    prev_a = aj;
    prev_b = bj;
  }
  if (form_ == KernelForm::sum && bounds_.pert_sup > 0.0 &&
      (*alpha_)(0) > bounds_.pert_sup * (1.0 + slack))
    complain("alpha_0 above declared pert_sup");
  return violations;
}

inline HypothesisReport validate_hypotheses(const KernelSpec& kernel, index_t range,
                                            std::vector<Hypothesis> which) {
  detail::require(range >= 16, "validate_hypotheses: range must be >= 16");
  HypothesisReport report;
  const auto& bounds = kernel.bounds();

  for (Hypothesis h : which) {
    HypothesisCheck chk;
    chk.id = h;
    switch (h) {
      case Hypothesis::ratio_vanishes: {
        auto ratio = [&kernel](index_t j) {
          const double bj1 = kernel.b()(j + 1);
          const double aj = kernel.a()(j);
          if (bj1 <= 0.0) return aj > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
          return aj / bj1;
        };
        const auto trend = detail::estimate_tail_limit(ratio, range);
        chk.observed = trend.kind == detail::TrendEstimate::Kind::finite ? trend.limit
                                                                         : trend.at_end;
        chk.passed = trend.kind == detail::TrendEstimate::Kind::finite &&
                     std::abs(trend.limit) <= kRatioVanishTol;
        chk.note = trend.kind == detail::TrendEstimate::Kind::finite
                       ? "extrapolated limit of a_j / b_{j+1}"
                       : "a_j / b_{j+1} does not settle";
        break;
      }
      case Hypothesis::ratio_above_radius: {
        auto ratio = [&kernel](index_t k) {
          const double ak = kernel.a()(k);
          if (ak <= 0.0) return std::numeric_limits<double>::infinity();
          return kernel.b()(k + 1) / ak;
        };
        const auto trend = detail::estimate_tail_limit(ratio, range);
        if (trend.kind == detail::TrendEstimate::Kind::divergent) {
          // Infinite radius: every fugacity is admissible, nothing to scan.
          chk.applicable = true;
          chk.passed = true;
          chk.observed = std::numeric_limits<double>::infinity();
          chk.note = "export/import ratio diverges; all fugacities admissible";
          break;
        }
        if (trend.kind == detail::TrendEstimate::Kind::indeterminate) {
          chk.passed = false;
          chk.note = "export/import ratio trend indeterminate";
          break;
        }
        const double zs = std::max(trend.limit, 0.0);
        chk.observed = zs;
        chk.passed = true;
        for (index_t j = 1; j <= range; ++j) {
          const double aj = kernel.a()(j);
          const double bj = kernel.b()(j);
          if (aj <= 0.0) continue;  // ratio is +inf, trivially above
          if (bj / aj < zs * (1.0 - 1e-9)) {
            chk.passed = false;
            chk.witness = j;
            break;
          }
        }
        chk.note = "b_j / a_j scanned against extrapolated radius";
        if (chk.passed && bounds.lower_exponent) {
          // Echo the observed growth-floor constant for the declared exponent.
          double c_min = std::numeric_limits<double>::infinity();
          for (index_t j = 1; j <= range; ++j)
            c_min = std::min(c_min,
                             kernel.b()(j) / std::pow(static_cast<double>(j), *bounds.lower_exponent));
          chk.note += "; observed growth-floor constant " + std::to_string(c_min);
        }
        break;
      }
      case Hypothesis::uniform_import_floor: {
        if (kernel.form() != KernelForm::sum) {
          chk.applicable = false;
          chk.note = "sum-form kernels only";
          break;
        }
        if (bounds.a_min <= 0.0) {
          chk.passed = false;
          chk.note = "a_min not declared positive";
          break;
        }
        chk.passed = true;
        chk.observed = bounds.a_min;
        for (index_t j = 0; j <= range; ++j) {
          if (kernel.a()(j) < bounds.a_min * (1.0 - 1e-12)) {
            chk.passed = false;
            chk.witness = j;
            chk.note = "import factor dips below declared floor";
            break;
          }
        }
        if (chk.passed && bounds.pert_sup > 0.0) {
          for (index_t j = 0; j <= range; ++j) {
            const double al = kernel.alpha()(j);
            const double be = j >= 1 ? kernel.beta()(j) : 0.0;
            if (al > bounds.pert_sup * (1.0 + 1e-12) || be > bounds.pert_sup * (1.0 + 1e-12)) {
              chk.passed = false;
              chk.witness = j;
              chk.note = "perturbation factor exceeds declared sup";
              break;
            }
          }
        }
        if (chk.passed) chk.note = "uniform floor and perturbation sup hold on scanned range";
        break;
      }
      case Hypothesis::linear_growth_caps: {
        const bool declared =
            bounds.a_slope > 0.0 && bounds.b_slope > 0.0 &&
            (kernel.form() == KernelForm::product ||
             (bounds.alpha_slope > 0.0 && bounds.beta_slope > 0.0));
        if (!declared) {
          chk.applicable = false;
          chk.note = "declare a_slope/b_slope (and alpha_slope/beta_slope for sum form) first";
          break;
        }
        auto violations = kernel.validate_bounds(range);
        chk.passed = violations.empty();
        if (!chk.passed) chk.note = violations.front();
        // Observed kernel-cap constant: max K(j,k) / (a_slope*k + b_slope*j + cross)
        // over a subsampled grid.  Echoed, not asserted against a fixed value.
        const index_t grid = std::min<index_t>(range, 256);
        const index_t step = std::max<index_t>(1, grid / 32);
        double c_obs = 0.0;
        for (index_t j = 1; j <= grid; j += step) {
          for (index_t k = 0; k <= grid; k += step) {
            double cap = bounds.b_slope * static_cast<double>(j) +
                         bounds.a_slope * static_cast<double>(std::max<index_t>(k, 1));
            if (kernel.form() == KernelForm::sum)
              cap += kernel.eps() * bounds.beta_slope * bounds.alpha_slope *
                     static_cast<double>(j) * static_cast<double>(std::max<index_t>(k, 1));
            if (cap > 0.0) c_obs = std::max(c_obs, kernel.eval(j, k) / cap);
          }
        }
        chk.observed = c_obs;
        if (chk.passed)
          chk.note = "declared caps hold; observed kernel-cap constant " + std::to_string(c_obs);
        break;
      }
      case Hypothesis::growth_linear:
      case Hypothesis::growth_log_corrected: {
        const bool logc = h == Hypothesis::growth_log_corrected;
        auto scale = [logc](index_t j) {
          const double x = static_cast<double>(std::max<index_t>(j, 1));
          return logc ? x / std::log(x + std::numbers::e) : x;
        };
        auto fa = [&](index_t j) { return kernel.a()(j) / scale(j); };
        auto fb = [&](index_t j) { return kernel.b()(j) / scale(j); };
        const auto ta = detail::estimate_tail_limit(fa, range);
        const auto tb = detail::estimate_tail_limit(fb, range);
        const bool ok_a = ta.kind != detail::TrendEstimate::Kind::divergent;
        const bool ok_b = tb.kind != detail::TrendEstimate::Kind::divergent;
        chk.passed = ok_a && ok_b;
        chk.observed = std::max(ta.at_end, tb.at_end);
        chk.note = std::string(logc ? "a_j, b_j vs j / log j" : "a_j, b_j vs j") +
                   (chk.passed ? ": bounded" : ": unbounded");
        break;
      }
    }
    report.checks.push_back(std::move(chk));
  }
  return report;
}

}  // namespace edg
