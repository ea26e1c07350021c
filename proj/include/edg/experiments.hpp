#pragma once

// Config-driven experiment runners: JSON config model, deterministic CSV
// emission, a machine-readable run manifest with pass/fail checks, and the
// self-contained invariant verification suite.
//
// Determinism contract: identical config (including seed) produces
// byte-identical CSV and metric output.  All floating-point output goes
// through printf "%.17g"; randomness comes only from the config seed; the
// phase-diagram worker pool merges rows in grid order.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "edg/diagnostics.hpp"
#include "edg/dynamics.hpp"
#include "edg/equilibrium.hpp"
#include "edg/rates.hpp"
#include "edg/state.hpp"

namespace edg {

inline constexpr const char* kVersion = "0.1.0";

/// Thrown for malformed or semantically invalid configurations.  Messages
/// carry the JSON field path that failed.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Config model
// ---------------------------------------------------------------------------

enum class ExperimentKind { simulate, equilibrium, phase_diagram, contraction, relax, verify };

inline const char* experiment_name(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::simulate: return "simulate";
    case ExperimentKind::equilibrium: return "equilibrium";
    case ExperimentKind::phase_diagram: return "phase-diagram";
    case ExperimentKind::contraction: return "contraction";
    case ExperimentKind::relax: return "relax";
    case ExperimentKind::verify: return "verify";
  }
  return "?";
}

inline ExperimentKind experiment_from_name(const std::string& name) {
  if (name == "simulate") return ExperimentKind::simulate;
  if (name == "equilibrium") return ExperimentKind::equilibrium;
  if (name == "phase-diagram" || name == "phase_diagram") return ExperimentKind::phase_diagram;
  if (name == "contraction") return ExperimentKind::contraction;
  if (name == "relax") return ExperimentKind::relax;
  if (name == "verify") return ExperimentKind::verify;
  throw ConfigError("experiment: unknown kind '" + name + "'");
}

enum class InitialKind { monomer_only, geometric, equilibrium_start, custom };

struct InitialSpec {
  InitialKind kind = InitialKind::monomer_only;
  double rho = 0.5;
  double eta = 1.0;
  double decay = 0.5;          ///< geometric kind only
  std::vector<double> values;  ///< custom kind: densities for sizes 0..order
};

/// Materialize an initial state at the given truncation order.
inline ClusterState build_initial(const InitialSpec& spec, const KernelSpec& kernel,
                                  index_t order) {
  switch (spec.kind) {
    case InitialKind::monomer_only:
      return monomer_state(spec.rho, spec.eta, order);
    case InitialKind::geometric:
      return geometric_state(spec.rho, spec.eta, spec.decay, order);
    case InitialKind::equilibrium_start: {
      if (kernel.form() != KernelForm::product)
        throw ConfigError(
            "initial.kind: equilibrium_start needs a product-form kernel (no closed-form "
            "equilibrium otherwise)");
      const EquilibriumProfile profile = equilibrium_profile(kernel, spec.rho, spec.eta, order);
      if (!profile.state)
        throw ConfigError("initial.kind: no equilibrium profile exists for this kernel");
      return *profile.state;
    }
    case InitialKind::custom: {
      if (static_cast<index_t>(spec.values.size()) != order + 1)
        throw ConfigError("initial.values: need exactly order + 1 densities");
      return ClusterState(spec.values);
    }
  }
  throw ConfigError("initial.kind: unknown kind");
}

struct RhoGrid {
  double lo = 0.0;
  double hi = 0.0;
  index_t points = 0;

  bool empty() const { return points <= 0; }

  std::vector<double> values() const {
    detail::require(points >= 1, "RhoGrid: points must be >= 1");
    detail::require(lo <= hi, "RhoGrid: lo must be <= hi");
    std::vector<double> v;
    v.reserve(static_cast<std::size_t>(points));
    if (points == 1) {
      v.push_back(lo);
      return v;
    }
    for (index_t i = 0; i < points; ++i)
      v.push_back(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1));
    return v;
  }
};

/// Parse "lo:hi:points" (the CLI --rho-grid syntax).
inline RhoGrid parse_rho_grid(const std::string& text) {
  RhoGrid grid;
  const auto c1 = text.find(':');
  const auto c2 = text.find(':', c1 == std::string::npos ? c1 : c1 + 1);
  if (c1 == std::string::npos || c2 == std::string::npos)
    throw ConfigError("rho-grid: expected lo:hi:points, got '" + text + "'");
  try {
    grid.lo = std::stod(text.substr(0, c1));
    grid.hi = std::stod(text.substr(c1 + 1, c2 - c1 - 1));
    grid.points = std::stoll(text.substr(c2 + 1));
  } catch (const std::exception&) {
    throw ConfigError("rho-grid: could not parse '" + text + "'");
  }
  if (grid.points < 1 || !(grid.lo <= grid.hi) || !std::isfinite(grid.lo) ||
      !std::isfinite(grid.hi))
    throw ConfigError("rho-grid: need finite lo <= hi and points >= 1");
  return grid;
}

struct VerifyOptions {
  index_t trials = 60;  ///< random trials per invariant family
  index_t order = 48;   ///< truncation order of the random systems
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::simulate;
  KernelSpec kernel = KernelSpec::product(RateSequence::constant(1.0), RateSequence::constant(1.0));
  InitialSpec initial;
  std::optional<InitialSpec> initial_b;  ///< contraction partner (defaults to geometric)
  index_t order = 100;
  double t_end = 100.0;
  IntegratorConfig integrator;
  SamplingPlan sampling;
  double stall_tol = 0.0;   ///< 0 disables the stall stop
  double fit_window = 0.5;  ///< trailing fraction used by rate fits
  std::uint64_t seed = 0;
  RhoGrid rho_grid;
  VerifyOptions verify;
};

// ---------------------------------------------------------------------------
// JSON serialization
// ---------------------------------------------------------------------------

namespace detail {

[[noreturn]] inline void config_fail(const std::string& path, const std::string& msg) {
  throw ConfigError(path + ": " + msg);
}

inline const nlohmann::json* find(const nlohmann::json& j, const char* key) {
  if (!j.is_object()) return nullptr;
  const auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

inline const nlohmann::json& member(const nlohmann::json& j, const std::string& path,
                                    const char* key) {
  if (!j.is_object()) config_fail(path, "expected an object");
  const auto it = j.find(key);
  if (it == j.end()) config_fail(path + "." + key, "required field missing");
  return *it;
}

inline double number_field(const nlohmann::json& j, const std::string& path) {
  if (!j.is_number()) config_fail(path, "expected a number");
  return j.get<double>();
}

inline double number_or(const nlohmann::json& j, const std::string& path, const char* key,
                        double fallback) {
  const auto* f = find(j, key);
  return f ? number_field(*f, path + "." + key) : fallback;
}

inline index_t integer_or(const nlohmann::json& j, const std::string& path, const char* key,
                          index_t fallback) {
  const auto* f = find(j, key);
  if (!f) return fallback;
  if (!f->is_number_integer()) config_fail(path + "." + key, "expected an integer");
  return f->get<index_t>();
}

inline bool boolean_or(const nlohmann::json& j, const std::string& path, const char* key,
                       bool fallback) {
  const auto* f = find(j, key);
  if (!f) return fallback;
  if (!f->is_boolean()) config_fail(path + "." + key, "expected a boolean");
  return f->get<bool>();
}

inline std::string string_field(const nlohmann::json& j, const std::string& path) {
  if (!j.is_string()) config_fail(path, "expected a string");
  return j.get<std::string>();
}

}  // namespace detail

inline nlohmann::json to_json(const RateSequence& r) {
  using nlohmann::json;
  struct Visitor {
    json operator()(const RateSequence::Constant& s) const {
      return {{"kind", "constant"}, {"value", s.value}};
    }
    json operator()(const RateSequence::Power& s) const {
      return {{"kind", "power"}, {"coeff", s.coeff}, {"exponent", s.exponent}};
    }
    json operator()(const RateSequence::Linear& s) const {
      return {{"kind", "linear"}, {"coeff", s.coeff}};
    }
    json operator()(const RateSequence::LogCorrected& s) const {
      return {{"kind", "log_corrected"}, {"coeff", s.coeff}};
    }
    json operator()(const RateSequence::Telescoping& s) const {
      return {{"kind", "telescoping"}, {"exponent", s.exponent}};
    }
    json operator()(const RateSequence::Table& s) const {
      json out{{"kind", "table"},
               {"values", s.values},
               {"tail", s.tail == RateSequence::TailRule::constant ? "constant" : "power"}};
      if (s.tail == RateSequence::TailRule::power) out["tail_exponent"] = s.tail_exponent;
      return out;
    }
  };
  return std::visit(Visitor{}, r.spec());
}

inline RateSequence rate_from_json(const nlohmann::json& j, const std::string& path) {
  const std::string kind = detail::string_field(detail::member(j, path, "kind"), path + ".kind");
  try {
    if (kind == "constant")
      return RateSequence::constant(
          detail::number_field(detail::member(j, path, "value"), path + ".value"));
    if (kind == "power")
      return RateSequence::power(
          detail::number_field(detail::member(j, path, "coeff"), path + ".coeff"),
          detail::number_field(detail::member(j, path, "exponent"), path + ".exponent"));
    if (kind == "linear")
      return RateSequence::linear(
          detail::number_field(detail::member(j, path, "coeff"), path + ".coeff"));
    if (kind == "log_corrected")
      return RateSequence::log_corrected(
          detail::number_field(detail::member(j, path, "coeff"), path + ".coeff"));
    if (kind == "telescoping")
      return RateSequence::telescoping(
          detail::number_field(detail::member(j, path, "exponent"), path + ".exponent"));
    if (kind == "table") {
      const auto& vals = detail::member(j, path, "values");
      if (!vals.is_array()) detail::config_fail(path + ".values", "expected an array");
      std::vector<double> values;
      values.reserve(vals.size());
      for (std::size_t i = 0; i < vals.size(); ++i)
        values.push_back(
            detail::number_field(vals[i], path + ".values[" + std::to_string(i) + "]"));
      const auto* tail = detail::find(j, "tail");
      RateSequence::TailRule rule = RateSequence::TailRule::constant;
      if (tail) {
        const std::string name = detail::string_field(*tail, path + ".tail");
        if (name == "power")
          rule = RateSequence::TailRule::power;
        else if (name != "constant")
          detail::config_fail(path + ".tail", "expected 'constant' or 'power'");
      }
      return RateSequence::table(std::move(values), rule,
                                 detail::number_or(j, path, "tail_exponent", 0.0));
    }
  } catch (const std::invalid_argument& e) {
    detail::config_fail(path, e.what());
  }
  detail::config_fail(path + ".kind", "unknown rate sequence kind '" + kind + "'");
}

inline nlohmann::json to_json(const KernelSpec& k) {
  nlohmann::json out;
  out["form"] = k.form() == KernelForm::product ? "product" : "sum";
  out["a"] = to_json(k.a());
  out["b"] = to_json(k.b());
  if (k.form() == KernelForm::sum) {
    out["alpha"] = to_json(k.alpha());
    out["beta"] = to_json(k.beta());
    out["eps"] = k.eps();
  }
  const auto& b = k.bounds();
  nlohmann::json jb;
  if (b.a_min > 0.0) jb["a_min"] = b.a_min;
  if (b.a_slope > 0.0) jb["a_slope"] = b.a_slope;
  if (b.b_min > 0.0) jb["b_min"] = b.b_min;
  if (b.b_slope > 0.0) jb["b_slope"] = b.b_slope;
  if (b.alpha_slope > 0.0) jb["alpha_slope"] = b.alpha_slope;
  if (b.beta_slope > 0.0) jb["beta_slope"] = b.beta_slope;
  if (b.pert_sup > 0.0) jb["pert_sup"] = b.pert_sup;
  if (b.lower_exponent) jb["lower_exponent"] = *b.lower_exponent;
  if (!jb.empty()) out["bounds"] = jb;
  const auto& m = k.monotone();
  if (m.a_nonincreasing || m.b_nondecreasing)
    out["monotone"] = {{"a_nonincreasing", m.a_nonincreasing},
                       {"b_nondecreasing", m.b_nondecreasing}};
  return out;
}

inline KernelSpec kernel_from_json(const nlohmann::json& j, const std::string& path) {
  const std::string form = detail::string_field(detail::member(j, path, "form"), path + ".form");
  RateSequence a = rate_from_json(detail::member(j, path, "a"), path + ".a");
  RateSequence b = rate_from_json(detail::member(j, path, "b"), path + ".b");

  KernelBounds bounds;
  if (const auto* jb = detail::find(j, "bounds")) {
    const std::string bp = path + ".bounds";
    bounds.a_min = detail::number_or(*jb, bp, "a_min", 0.0);
    bounds.a_slope = detail::number_or(*jb, bp, "a_slope", 0.0);
    bounds.b_min = detail::number_or(*jb, bp, "b_min", 0.0);
    bounds.b_slope = detail::number_or(*jb, bp, "b_slope", 0.0);
    bounds.alpha_slope = detail::number_or(*jb, bp, "alpha_slope", 0.0);
    bounds.beta_slope = detail::number_or(*jb, bp, "beta_slope", 0.0);
    bounds.pert_sup = detail::number_or(*jb, bp, "pert_sup", 0.0);
    if (detail::find(*jb, "lower_exponent"))
      bounds.lower_exponent = detail::number_or(*jb, bp, "lower_exponent", 0.0);
  }
  MonotoneFlags monotone;
  if (const auto* jm = detail::find(j, "monotone")) {
    const std::string mp = path + ".monotone";
    monotone.a_nonincreasing = detail::boolean_or(*jm, mp, "a_nonincreasing", false);
    monotone.b_nondecreasing = detail::boolean_or(*jm, mp, "b_nondecreasing", false);
  }

  if (form == "product") return KernelSpec::product(std::move(a), std::move(b), bounds, monotone);
  if (form == "sum") {
    RateSequence alpha = rate_from_json(detail::member(j, path, "alpha"), path + ".alpha");
    RateSequence beta = rate_from_json(detail::member(j, path, "beta"), path + ".beta");
    const double eps = detail::number_or(j, path, "eps", 0.0);
    if (!(eps >= 0.0) || !std::isfinite(eps))
      detail::config_fail(path + ".eps", "must be finite and >= 0");
    return KernelSpec::sum(std::move(a), std::move(b), std::move(alpha), std::move(beta), eps,
                           bounds, monotone);
  }
  detail::config_fail(path + ".form", "expected 'product' or 'sum'");
}

inline nlohmann::json to_json(const InitialSpec& s) {
  nlohmann::json out;
  switch (s.kind) {
    case InitialKind::monomer_only: out["kind"] = "monomer_only"; break;
    case InitialKind::geometric: out["kind"] = "geometric"; break;
    case InitialKind::equilibrium_start: out["kind"] = "equilibrium_start"; break;
    case InitialKind::custom: out["kind"] = "custom"; break;
  }
  out["rho"] = s.rho;
  out["eta"] = s.eta;
  if (s.kind == InitialKind::geometric) out["decay"] = s.decay;
  if (s.kind == InitialKind::custom) out["values"] = s.values;
  return out;
}

inline InitialSpec initial_from_json(const nlohmann::json& j, const std::string& path) {
  InitialSpec out;
  const std::string kind = detail::string_field(detail::member(j, path, "kind"), path + ".kind");
  if (kind == "monomer_only")
    out.kind = InitialKind::monomer_only;
  else if (kind == "geometric")
    out.kind = InitialKind::geometric;
  else if (kind == "equilibrium_start")
    out.kind = InitialKind::equilibrium_start;
  else if (kind == "custom")
    out.kind = InitialKind::custom;
  else
    detail::config_fail(path + ".kind", "unknown initial kind '" + kind + "'");
  out.rho = detail::number_or(j, path, "rho", 0.5);
  out.eta = detail::number_or(j, path, "eta", 1.0);
  out.decay = detail::number_or(j, path, "decay", 0.5);
  if (!(out.rho >= 0.0) || !std::isfinite(out.rho))
    detail::config_fail(path + ".rho", "must be finite and >= 0");
  if (!(out.eta > 0.0) || !std::isfinite(out.eta))
    detail::config_fail(path + ".eta", "must be finite and > 0");
  if (const auto* vals = detail::find(j, "values")) {
    if (!vals->is_array()) detail::config_fail(path + ".values", "expected an array");
    for (std::size_t i = 0; i < vals->size(); ++i)
      out.values.push_back(
          detail::number_field((*vals)[i], path + ".values[" + std::to_string(i) + "]"));
  }
  return out;
}

inline nlohmann::json to_json(const IntegratorConfig& c) {
  return {{"method", c.method == Method::rk45 ? "rk45" : "rk4"},
          {"rel_tol", c.rel_tol},
          {"abs_tol", c.abs_tol},
          {"max_step", c.max_step},
          {"min_step", c.min_step},
          {"initial_step", c.initial_step},
          {"negativity_floor", c.negativity_floor},
          {"conservation_check_every", c.conservation_check_every}};
}

inline IntegratorConfig integrator_from_json(const nlohmann::json& j, const std::string& path) {
  IntegratorConfig out;
  if (const auto* m = detail::find(j, "method")) {
    const std::string name = detail::string_field(*m, path + ".method");
    if (name == "rk45")
      out.method = Method::rk45;
    else if (name == "rk4")
      out.method = Method::rk4;
    else
      detail::config_fail(path + ".method", "expected 'rk45' or 'rk4'");
  }
  out.rel_tol = detail::number_or(j, path, "rel_tol", out.rel_tol);
  out.abs_tol = detail::number_or(j, path, "abs_tol", out.abs_tol);
  out.max_step = detail::number_or(j, path, "max_step", out.max_step);
  out.min_step = detail::number_or(j, path, "min_step", out.min_step);
  out.initial_step = detail::number_or(j, path, "initial_step", out.initial_step);
  out.negativity_floor = detail::number_or(j, path, "negativity_floor", out.negativity_floor);
  out.conservation_check_every =
      detail::integer_or(j, path, "conservation_check_every", out.conservation_check_every);
  try {
    out.validate();
  } catch (const std::invalid_argument& e) {
    detail::config_fail(path, e.what());
  }
  return out;
}

inline nlohmann::json to_json(const SamplingPlan& s) {
  nlohmann::json out{{"count", s.count},
                     {"log_spaced", s.log_spaced},
                     {"first_fraction", s.first_fraction}};
  if (!s.explicit_times.empty()) out["times"] = s.explicit_times;
  return out;
}

inline SamplingPlan sampling_from_json(const nlohmann::json& j, const std::string& path) {
  SamplingPlan out;
  out.count = detail::integer_or(j, path, "count", out.count);
  out.log_spaced = detail::boolean_or(j, path, "log_spaced", out.log_spaced);
  out.first_fraction = detail::number_or(j, path, "first_fraction", out.first_fraction);
  if (const auto* times = detail::find(j, "times")) {
    if (!times->is_array()) detail::config_fail(path + ".times", "expected an array");
    for (std::size_t i = 0; i < times->size(); ++i)
      out.explicit_times.push_back(
          detail::number_field((*times)[i], path + ".times[" + std::to_string(i) + "]"));
  }
  if (out.count < 2) detail::config_fail(path + ".count", "must be >= 2");
  if (!(out.first_fraction > 0.0 && out.first_fraction < 1.0))
    detail::config_fail(path + ".first_fraction", "must lie in (0, 1)");
  return out;
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json out;
  out["experiment"] = experiment_name(c.kind);
  out["kernel"] = to_json(c.kernel);
  out["initial"] = to_json(c.initial);
  if (c.initial_b) out["initial_b"] = to_json(*c.initial_b);
  out["order"] = c.order;
  out["t_end"] = c.t_end;
  out["integrator"] = to_json(c.integrator);
  out["sampling"] = to_json(c.sampling);
  out["stall_tol"] = c.stall_tol;
  out["fit_window"] = c.fit_window;
  out["seed"] = c.seed;
  if (!c.rho_grid.empty())
    out["rho_grid"] = {{"lo", c.rho_grid.lo}, {"hi", c.rho_grid.hi}, {"points", c.rho_grid.points}};
  if (c.kind == ExperimentKind::verify)
    out["verify"] = {{"trials", c.verify.trials}, {"order", c.verify.order}};
  return out;
}

/// Parse and validate a full experiment configuration.  When the experiment
/// kind is supplied externally (CLI subcommand) it must agree with any
/// "experiment" field present in the config.
inline ExperimentConfig parse_config(const nlohmann::json& j,
                                     std::optional<ExperimentKind> kind_override = {}) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  ExperimentConfig out;

  const auto* kind_field = detail::find(j, "experiment");
  if (kind_field) {
    const ExperimentKind declared =
        experiment_from_name(detail::string_field(*kind_field, "experiment"));
    if (kind_override && declared != *kind_override)
      throw ConfigError("experiment: config says '" + std::string(experiment_name(declared)) +
                        "' but the subcommand is '" + experiment_name(*kind_override) + "'");
    out.kind = declared;
  } else if (kind_override) {
    out.kind = *kind_override;
  } else {
    throw ConfigError("experiment: required field missing");
  }

  if (const auto* k = detail::find(j, "kernel"))
    out.kernel = kernel_from_json(*k, "kernel");
  else if (out.kind != ExperimentKind::verify)
    throw ConfigError("kernel: required field missing");

  if (const auto* ini = detail::find(j, "initial")) out.initial = initial_from_json(*ini, "initial");
  if (const auto* ini = detail::find(j, "initial_b"))
    out.initial_b = initial_from_json(*ini, "initial_b");

  out.order = detail::integer_or(j, "config", "order", out.order);
  if (out.order < 1) throw ConfigError("order: must be >= 1");
  out.t_end = detail::number_or(j, "config", "t_end", out.t_end);
  if (!(out.t_end >= 0.0) || !std::isfinite(out.t_end))
    throw ConfigError("t_end: must be finite and >= 0");
  out.stall_tol = detail::number_or(j, "config", "stall_tol", out.stall_tol);
  if (out.stall_tol < 0.0) throw ConfigError("stall_tol: must be >= 0");
  out.fit_window = detail::number_or(j, "config", "fit_window", out.fit_window);
  if (!(out.fit_window > 0.0 && out.fit_window <= 1.0))
    throw ConfigError("fit_window: must lie in (0, 1]");
  if (const auto* s = detail::find(j, "seed")) {
    if (!s->is_number_unsigned() && !s->is_number_integer())
      throw ConfigError("seed: expected a non-negative integer");
    out.seed = s->get<std::uint64_t>();
  }
  if (const auto* integ = detail::find(j, "integrator"))
    out.integrator = integrator_from_json(*integ, "integrator");
  if (const auto* samp = detail::find(j, "sampling"))
    out.sampling = sampling_from_json(*samp, "sampling");
  if (const auto* grid = detail::find(j, "rho_grid")) {
    out.rho_grid.lo = detail::number_or(*grid, "rho_grid", "lo", 0.0);
    out.rho_grid.hi = detail::number_or(*grid, "rho_grid", "hi", 0.0);
    out.rho_grid.points = detail::integer_or(*grid, "rho_grid", "points", 0);
    if (out.rho_grid.points < 1 || !(out.rho_grid.lo <= out.rho_grid.hi))
      throw ConfigError("rho_grid: need lo <= hi and points >= 1");
  }
  if (const auto* v = detail::find(j, "verify")) {
    out.verify.trials = detail::integer_or(*v, "verify", "trials", out.verify.trials);
    out.verify.order = detail::integer_or(*v, "verify", "order", out.verify.order);
    if (out.verify.trials < 1 || out.verify.order < 4)
      throw ConfigError("verify: trials must be >= 1 and order >= 4");
  }

  // Kind-specific semantics.
  const bool unit_volume_needed =
      out.kind == ExperimentKind::contraction || out.kind == ExperimentKind::relax;
  if (unit_volume_needed && std::abs(out.initial.eta - 1.0) > 1e-12)
    throw ConfigError(
        "initial.eta: contraction and relax experiments are stated per unit volume; set eta = 1");
  if (out.kind == ExperimentKind::contraction) {
    if (out.kernel.form() != KernelForm::sum)
      throw ConfigError(
          "kernel.form: the contraction experiment targets sum-form kernels; for product-form "
          "kernels use simulate with an equilibrium reference");
    if (out.initial_b && std::abs(out.initial_b->eta - 1.0) > 1e-12)
      throw ConfigError("initial_b.eta: contraction pairs must both have unit volume");
    if (out.initial_b && std::abs(out.initial_b->rho - out.initial.rho) > 1e-9)
      throw ConfigError("initial_b.rho: contraction pairs must carry equal mass");
  }
  if (out.kind == ExperimentKind::equilibrium && out.kernel.form() != KernelForm::product)
    throw ConfigError(
        "kernel.form: equilibrium profiles exist in closed form for product-form kernels only; "
        "use the relax experiment for sum-form kernels");
  return out;
}

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct RunManifest {
  std::string version = kVersion;
  std::string experiment;
  nlohmann::json config_echo;
  std::vector<CheckResult> checks;
  nlohmann::json metrics = nlohmann::json::object();
  std::vector<std::string> outputs;

  bool all_passed() const {
    return std::all_of(checks.begin(), checks.end(),
                       [](const CheckResult& c) { return c.passed; });
  }

  nlohmann::json to_json() const {
    nlohmann::json jc = nlohmann::json::array();
    for (const auto& c : checks)
      jc.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
    return {{"version", version}, {"experiment", experiment}, {"config", config_echo},
            {"checks", jc},       {"metrics", metrics},       {"outputs", outputs},
            {"passed", all_passed()}};
  }
};

// ---------------------------------------------------------------------------
// Deterministic CSV output
// ---------------------------------------------------------------------------

namespace detail {

inline std::string g17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open output file " + path.string());
  return out;
}

}  // namespace detail

inline void write_trajectory_csv(const std::filesystem::path& path,
                                 const std::vector<ClusterState>& samples) {
  detail::require(!samples.empty(), "write_trajectory_csv: no samples");
  auto out = detail::open_output(path);
  const index_t order = samples.front().order();
  out << "t,order";
  for (index_t j = 0; j <= order; ++j) out << ",c_" << j;
  out << "\n";
  for (const auto& s : samples) {
    out << detail::g17(s.time()) << "," << order;
    for (double c : s.densities()) out << "," << detail::g17(c);
    out << "\n";
  }
}

inline void write_diagnostics_csv(const std::filesystem::path& path,
                                  const std::vector<DiagnosticsRecord>& records) {
  auto out = detail::open_output(path);
  out << "t,volume,mass,second_moment,entropy,relative_entropy,modified_entropy,dissipation,"
         "max_abs_flux,weak0_to_reference,strong1_to_reference\n";
  for (const auto& r : records) {
    out << detail::g17(r.t) << "," << detail::g17(r.volume) << "," << detail::g17(r.mass) << ","
        << detail::g17(r.second_moment) << "," << detail::g17(r.entropy_value) << ","
        << detail::g17(r.relative_entropy_value) << "," << detail::g17(r.modified_entropy_value)
        << "," << detail::g17(r.dissipation_value) << "," << detail::g17(r.max_abs_flux) << ","
        << detail::g17(r.weak0_to_reference) << "," << detail::g17(r.strong1_to_reference)
        << "\n";
  }
}

inline void write_profile_csv(const std::filesystem::path& path, const EquilibriumProfile& profile,
                              std::span<const double> log_q) {
  detail::require(profile.state.has_value(), "write_profile_csv: profile carries no state");
  auto out = detail::open_output(path);
  out << "j,log_q,density\n";
  const auto c = profile.state->densities();
  detail::require(log_q.size() == c.size(), "write_profile_csv: log Q table size mismatch");
  for (std::size_t j = 0; j < c.size(); ++j)
    out << j << "," << detail::g17(log_q[j]) << "," << detail::g17(c[j]) << "\n";
}

inline void write_pair_csv(const std::filesystem::path& path, std::span<const double> times,
                           std::span<const PairDistance> rows) {
  detail::require(times.size() == rows.size(), "write_pair_csv: size mismatch");
  auto out = detail::open_output(path);
  out << "t,weak0,strong1,tail_l1,volume_gap,mass_gap\n";
  for (std::size_t i = 0; i < rows.size(); ++i)
    out << detail::g17(times[i]) << "," << detail::g17(rows[i].weak0) << ","
        << detail::g17(rows[i].strong1) << "," << detail::g17(rows[i].tail_l1) << ","
        << detail::g17(rows[i].volume_gap) << "," << detail::g17(rows[i].mass_gap) << "\n";
}

// ---------------------------------------------------------------------------
// Invariant verification suite
// ---------------------------------------------------------------------------

namespace detail {

/// Dense O(N^2) right-hand side straight from the per-size exchange balance,
/// via kernel point values.  Deliberately independent of EdgSystem's cached
/// flux loop: this is the oracle the fast path is checked against.
inline std::vector<double> reference_rhs(const KernelSpec& kernel, std::span<const double> c) {
  const auto n = static_cast<index_t>(c.size()) - 1;
  std::vector<double> sexp(c.size(), 0.0), simp(c.size(), 0.0), dcdt(c.size(), 0.0);
  for (index_t j = 1; j <= n; ++j)
    for (index_t k = 0; k <= n - 1; ++k)
      sexp[static_cast<std::size_t>(j)] += kernel.eval(j, k) * c[static_cast<std::size_t>(k)];
  for (index_t j = 0; j <= n - 1; ++j)
    for (index_t k = 1; k <= n; ++k)
      simp[static_cast<std::size_t>(j)] += kernel.eval(k, j) * c[static_cast<std::size_t>(k)];
  const auto at = [&c](index_t j) { return c[static_cast<std::size_t>(j)]; };
  dcdt[0] = at(1) * sexp[1] - at(0) * simp[0];
  for (index_t j = 1; j <= n - 1; ++j)
    dcdt[static_cast<std::size_t>(j)] =
        at(j + 1) * sexp[static_cast<std::size_t>(j + 1)] -
        at(j) * sexp[static_cast<std::size_t>(j)] - at(j) * simp[static_cast<std::size_t>(j)] +
        at(j - 1) * simp[static_cast<std::size_t>(j - 1)];
  dcdt[static_cast<std::size_t>(n)] = -at(n) * sexp[static_cast<std::size_t>(n)] +
                                      at(n - 1) * simp[static_cast<std::size_t>(n - 1)];
  return dcdt;
}

inline std::vector<double> random_table_values(std::mt19937_64& rng, std::size_t len, double lo,
                                               double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(len);
  for (double& x : v) x = dist(rng);
  return v;
}

inline KernelSpec random_kernel(std::mt19937_64& rng, index_t order, bool sum_form) {
  const auto len = static_cast<std::size_t>(order) + 2;
  RateSequence a = RateSequence::table(random_table_values(rng, len, 0.3, 1.7));
  RateSequence b = RateSequence::table(random_table_values(rng, len, 0.3, 1.7));
  if (!sum_form) return KernelSpec::product(std::move(a), std::move(b));
  RateSequence alpha = RateSequence::table(random_table_values(rng, len, 0.0, 1.2));
  RateSequence beta = RateSequence::table(random_table_values(rng, len, 0.0, 1.2));
  std::uniform_real_distribution<double> deps(0.0, 0.08);
  return KernelSpec::sum(std::move(a), std::move(b), std::move(alpha), std::move(beta), deps(rng));
}

inline std::vector<double> random_densities(std::mt19937_64& rng, index_t order,
                                            double zero_fraction) {
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::vector<double> c(static_cast<std::size_t>(order) + 1);
  for (double& x : c) {
    x = dist(rng);
    if (zero_fraction > 0.0 && dist(rng) < zero_fraction) x = 0.0;
  }
  return c;
}

}  // namespace detail

/// Self-contained invariant checks on randomized systems: fast-path /
/// reference agreement, the weighted moment identity, dissipation
/// non-negativity, monotonicity of the mean cluster size in the fugacity,
/// vanishing detailed-balance flux at computed profiles, and the norm
/// inequality weak0 <= 2 tail_l1 on equal-conservation pairs.
inline std::vector<CheckResult> verify_suite(std::uint64_t seed, VerifyOptions opts = {}) {
  std::mt19937_64 rng(seed);
  std::vector<CheckResult> checks;
  const index_t n_max = opts.order;

  {  // Fast rhs against the dense reference, both kernel forms.
    std::uniform_int_distribution<index_t> dorder(8, std::max<index_t>(n_max, 9));
    double worst = 0.0;
    for (index_t trial = 0; trial < opts.trials; ++trial) {
      const index_t n = dorder(rng);
      const KernelSpec kernel = detail::random_kernel(rng, n, trial % 2 == 1);
      const auto c = detail::random_densities(rng, n, 0.2);
      const auto ref = detail::reference_rhs(kernel, c);
      EdgSystem system(kernel, n);
      std::vector<double> fast(c.size());
      system.rhs(c, fast);
      double scale = 0.0;
      for (double v : ref) scale = std::max(scale, std::abs(v));
      scale = std::max(scale, 1e-30);
      for (std::size_t j = 0; j < c.size(); ++j)
        worst = std::max(worst, std::abs(fast[j] - ref[j]) / scale);
    }
    checks.push_back({"rhs_matches_reference", worst <= 1e-12,
                      "max relative deviation " + detail::g17(worst) + " over " +
                          std::to_string(opts.trials) + " random systems"});
  }

  {  // Weighted moment identity for constant, linear, quadratic and random weights.
    double worst = 0.0;
    for (index_t trial = 0; trial < opts.trials; ++trial) {
      const index_t n = 8 + (trial % 5) * 8;
      const KernelSpec kernel = detail::random_kernel(rng, n, trial % 2 == 0);
      const ClusterState state(detail::random_densities(rng, n, 0.1));
      EdgSystem system(kernel, n);
      std::vector<double> dcdt(state.densities().size());
      system.rhs(state.densities(), dcdt);
      for (int which = 0; which < 4; ++which) {
        std::vector<double> g(state.densities().size());
        std::uniform_real_distribution<double> dist(0.0, 2.0);
        for (std::size_t j = 0; j < g.size(); ++j) {
          const double x = static_cast<double>(j);
          g[j] = which == 0 ? 1.0 : which == 1 ? x : which == 2 ? x * x : dist(rng);
        }
        const double resid = moment_identity_residual(kernel, state, g);
        double scale = 1.0;
        for (std::size_t j = 0; j < g.size(); ++j) scale += std::abs(g[j] * dcdt[j]);
        worst = std::max(worst, resid / scale);
      }
    }
    checks.push_back({"moment_identity_holds", worst <= 1e-12,
                      "max scaled residual " + detail::g17(worst)});
  }

  {  // Dissipation is non-negative (up to round-off) on random product systems.
    double worst = std::numeric_limits<double>::infinity();
    bool finite_seen = false;
    const index_t kernels = 10;
    const index_t states = std::max<index_t>(opts.trials * 10, 100);
    for (index_t ki = 0; ki < kernels; ++ki) {
      const index_t n = 16 + 8 * (ki % 3);
      const KernelSpec kernel = detail::random_kernel(rng, n, false);
      for (index_t si = 0; si < states / kernels; ++si) {
        const ClusterState state(detail::random_densities(rng, n, si % 4 == 0 ? 0.15 : 0.0));
        const double d = dissipation(kernel, state);
        if (std::isfinite(d)) {
          finite_seen = true;
          worst = std::min(worst, d);
        }
      }
    }
    checks.push_back({"dissipation_nonnegative", finite_seen && worst >= -1e-12,
                      "min dissipation " + detail::g17(worst)});
  }

  {  // Mean cluster size F(z) is strictly increasing below the radius.
    bool ok = true;
    double worst_slope = std::numeric_limits<double>::infinity();
    std::uniform_real_distribution<double> du(0.5, 2.0);
    for (index_t trial = 0; trial < std::max<index_t>(opts.trials / 10, 3) && ok; ++trial) {
      KernelSpec kernel = [&]() {
        switch (trial % 3) {
          case 0:
            return KernelSpec::product(RateSequence::constant(du(rng)),
                                       RateSequence::linear(du(rng)));
          case 1:
            return KernelSpec::product(RateSequence::constant(1.0),
                                       RateSequence::telescoping(1.5 + du(rng)));
          default:
            return KernelSpec::product(RateSequence::constant(du(rng)),
                                       RateSequence::constant(du(rng)));
        }
      }();
      const RadiusEstimate radius = radius_of_convergence(kernel, 2000);
      const double z_hi =
          0.9 * std::min(std::isfinite(radius.value) ? radius.value : 4.0, 4.0);
      for (int i = 1; i <= 20 && ok; ++i) {
        const double z = z_hi * static_cast<double>(i) / 20.0;
        const double h = 1e-6 * z;
        const double slope = (big_f(kernel, z + h) - big_f(kernel, z - h)) / (2.0 * h);
        worst_slope = std::min(worst_slope, slope);
        ok = slope > 0.0;
      }
    }
    checks.push_back({"mean_size_strictly_increasing", ok,
                      "min central-difference slope " + detail::g17(worst_slope)});
  }

  {  // Detailed-balance flux vanishes at computed equilibrium profiles.
    double worst = 0.0;
    for (index_t trial = 0; trial < std::max<index_t>(opts.trials / 6, 4); ++trial) {
      std::uniform_real_distribution<double> dv(1.2, 3.0), drho(0.1, 2.5);
      const KernelSpec kernel =
          KernelSpec::product(RateSequence::constant(1.0), RateSequence::constant(dv(rng)));
      const EquilibriumProfile profile = equilibrium_profile(kernel, drho(rng), 1.0, n_max);
      const auto flux = detailed_balance_flux(kernel, *profile.state);
      const auto c = profile.state->densities();
      double scale = 1e-300;
      const double b_rate = kernel.b()(1);
      double big_a = 0.0, big_b = 0.0;
      for (std::size_t j = 0; j + 1 < c.size(); ++j) big_a += c[j];
      for (std::size_t j = 1; j < c.size(); ++j) big_b += b_rate * c[j];
      for (std::size_t j = 0; j + 1 < c.size(); ++j)
        scale = std::max(scale, std::abs(c[j] * big_b) + std::abs(b_rate * c[j + 1] * big_a));
      for (double f : flux) worst = std::max(worst, std::abs(f) / scale);
    }
    checks.push_back({"equilibrium_flux_vanishes", worst <= 1e-12,
                      "max scaled flux residual " + detail::g17(worst)});
  }

  {  // weak0 <= 2 tail_l1 on pairs with equal volume and mass.
    bool ok = true;
    double worst_gap = 0.0;
    for (index_t trial = 0; trial < opts.trials && ok; ++trial) {
      const index_t n = 16;
      auto base = detail::random_densities(rng, n, 0.0);
      auto other = base;
      std::uniform_int_distribution<index_t> dj(1, n - 1);
      std::uniform_real_distribution<double> dd(0.0, 1.0);
      for (int moves = 0; moves < 10; ++moves) {
        const auto jc = static_cast<std::size_t>(dj(rng));
        // Second-difference move: preserves both volume and mass exactly.
        const double room = std::min(other[jc - 1], other[jc + 1]);
        const double delta = 0.5 * room * dd(rng);
        other[jc - 1] -= delta;
        other[jc + 1] -= delta;
        other[jc] += 2.0 * delta;
      }
      const ClusterState c(base), d(other);
      const double w0 = distance(c, d, Distance::weak0);
      const double tl1 = distance(c, d, Distance::tail_l1);
      worst_gap = std::max(worst_gap, w0 - 2.0 * tl1);
      ok = w0 <= 2.0 * tl1 + 1e-12;
    }
    checks.push_back({"weak0_bounded_by_tails", ok,
                      "max violation of weak0 - 2 tail_l1: " + detail::g17(worst_gap)});
  }

  return checks;
}

// ---------------------------------------------------------------------------
// Experiment runners
// ---------------------------------------------------------------------------

namespace detail {

inline void note_integrator_metrics(nlohmann::json& metrics, const IntegratorStats& stats) {
  metrics["steps_accepted"] = stats.steps_accepted;
  metrics["steps_rejected"] = stats.steps_rejected;
  metrics["rhs_evaluations"] = stats.rhs_evaluations;
  metrics["clamped_components"] = stats.clamped_components;
  metrics["stop_time"] = stats.stop_time;
  metrics["stop_reason"] = stats.stop_reason;
  metrics["max_volume_drift"] = stats.max_volume_drift;
  metrics["max_mass_drift"] = stats.max_mass_drift;
}

inline void run_simulate(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                         RunManifest& manifest) {
  const ClusterState initial = build_initial(cfg.initial, cfg.kernel, cfg.order);

  std::optional<EquilibriumProfile> reference;
  if (cfg.kernel.form() == KernelForm::product) {
    try {
      reference = equilibrium_profile(cfg.kernel, initial.mass(), initial.volume(), cfg.order);
    } catch (const Error& e) {
      manifest.metrics["reference_note"] = e.what();
    }
  }

  const Trajectory traj =
      integrate(cfg.kernel, initial, cfg.t_end, cfg.integrator, cfg.sampling, {cfg.stall_tol});

  std::vector<DiagnosticsRecord> records;
  records.reserve(traj.samples.size());
  for (const auto& s : traj.samples)
    records.push_back(diagnose(cfg.kernel, s, reference ? &*reference : nullptr));

  write_trajectory_csv(out_dir / "trajectory.csv", traj.samples);
  write_diagnostics_csv(out_dir / "diagnostics.csv", records);
  manifest.outputs = {"trajectory.csv", "diagnostics.csv"};

  const double drift_budget = 10.0 * cfg.integrator.rel_tol * std::max(cfg.t_end, 1.0);
  manifest.checks.push_back({"volume_conserved",
                             traj.stats.max_volume_drift <= drift_budget,
                             "max relative drift " + g17(traj.stats.max_volume_drift) +
                                 " vs budget " + g17(drift_budget)});
  manifest.checks.push_back({"mass_conserved", traj.stats.max_mass_drift <= drift_budget,
                             "max relative drift " + g17(traj.stats.max_mass_drift) +
                                 " vs budget " + g17(drift_budget)});

  note_integrator_metrics(manifest.metrics, traj.stats);
  manifest.metrics["initial_mass"] = initial.mass();
  manifest.metrics["initial_volume"] = initial.volume();
  if (reference) {
    manifest.metrics["regime"] = regime_name(reference->regime);
    manifest.metrics["fugacity"] = reference->fugacity;
    manifest.metrics["radius"] = reference->radius;
    manifest.metrics["critical_mass"] = reference->critical_mass;
    if (!records.empty()) {
      manifest.metrics["terminal_weak0_to_reference"] = records.back().weak0_to_reference;
      manifest.metrics["terminal_strong1_to_reference"] = records.back().strong1_to_reference;
    }
  }
}

inline void run_equilibrium(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                            RunManifest& manifest) {
  const EquilibriumProfile profile =
      equilibrium_profile(cfg.kernel, cfg.initial.rho, cfg.initial.eta, cfg.order);
  manifest.metrics["regime"] = regime_name(profile.regime);
  manifest.metrics["radius"] = profile.radius;
  manifest.metrics["critical_mass"] = profile.critical_mass;
  manifest.metrics["fugacity"] = profile.fugacity;
  manifest.metrics["monomer_scale"] = profile.monomer_scale;
  manifest.metrics["profile_mass"] = profile.profile_mass;
  manifest.metrics["profile_volume"] = profile.profile_volume;

  if (!profile.state) {
    manifest.checks.push_back(
        {"profile_exists", false, "no equilibrium profile in this regime"});
    return;
  }

  const auto log_q = log_q_factors(cfg.kernel, cfg.order);
  write_profile_csv(out_dir / "profile.csv", profile, log_q);
  manifest.outputs = {"profile.csv"};

  EdgSystem system(cfg.kernel, cfg.order);
  std::vector<double> dcdt(profile.state->densities().size());
  system.rhs(profile.state->densities(), dcdt);
  double residual = 0.0;
  for (double v : dcdt) residual = std::max(residual, std::abs(v));
  manifest.checks.push_back({"profile_stationary", residual <= 1e-9,
                             "max |dc/dt| at the profile " + g17(residual)});

  const auto flux = detailed_balance_flux(cfg.kernel, *profile.state);
  const auto c = profile.state->densities();
  double big_a = 0.0, big_b = 0.0;
  for (std::size_t j = 0; j + 1 < c.size(); ++j) big_a += cfg.kernel.a()(static_cast<index_t>(j)) * c[j];
  for (std::size_t j = 1; j < c.size(); ++j) big_b += cfg.kernel.b()(static_cast<index_t>(j)) * c[j];
  double scale = 1e-300;
  for (std::size_t j = 0; j + 1 < c.size(); ++j)
    scale = std::max(scale, std::abs(cfg.kernel.a()(static_cast<index_t>(j)) * c[j] * big_b) +
                                std::abs(cfg.kernel.b()(static_cast<index_t>(j + 1)) * c[j + 1] * big_a));
  double flux_residual = 0.0;
  for (double f : flux) flux_residual = std::max(flux_residual, std::abs(f));
  manifest.checks.push_back({"flux_vanishes", flux_residual <= 1e-10 * scale,
                             "max |flux| " + g17(flux_residual) + " at scale " + g17(scale)});

  if (profile.regime == Regime::subcritical) {
    const double gap = std::abs(profile.profile_mass - profile.target_mass);
    manifest.checks.push_back(
        {"mass_resolved", gap <= 1e-6 * std::max(profile.target_mass, 1.0),
         "truncated-profile mass gap " + g17(gap) + "; increase order if this fails"});
  }
}

struct PhaseRow {
  double rho = 0.0;
  Regime regime = Regime::subcritical;
  double fugacity = std::numeric_limits<double>::quiet_NaN();
  double terminal_strong1 = std::numeric_limits<double>::quiet_NaN();
  double terminal_lowj_gap = std::numeric_limits<double>::quiet_NaN();
  double tail_fraction = std::numeric_limits<double>::quiet_NaN();
  std::string classification;
  bool order_adequate = true;
};

inline void run_phase_diagram(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                              RunManifest& manifest) {
  if (cfg.kernel.form() != KernelForm::product)
    throw ConfigError("kernel.form: the phase diagram requires a product-form kernel");
  if (cfg.rho_grid.empty())
    throw ConfigError("rho_grid: required for phase-diagram runs (config or --rho-grid)");
  const std::vector<double> grid = cfg.rho_grid.values();

  auto run_point = [&cfg](double rho) -> PhaseRow {
    PhaseRow row;
    row.rho = rho;
    const EquilibriumProfile profile =
        equilibrium_profile(cfg.kernel, rho, cfg.initial.eta, cfg.order);
    row.regime = profile.regime;
    row.fugacity = profile.fugacity;
    if (cfg.t_end > 0.0 && profile.state) {
      InitialSpec init = cfg.initial;
      init.rho = rho;
      const ClusterState ic = build_initial(init, cfg.kernel, cfg.order);
      const Trajectory traj = integrate(cfg.kernel, ic, cfg.t_end, cfg.integrator,
                                        SamplingPlan{.count = 2, .log_spaced = false,
                                                     .first_fraction = 1e-5,
                                                     .explicit_times = {}},
                                        {cfg.stall_tol});
      const ClusterState& terminal = traj.samples.back();
      row.terminal_strong1 = distance(terminal, *profile.state, Distance::strong1);
      double lowj = 0.0;
      const index_t j_hi = std::min<index_t>(20, cfg.order);
      for (index_t j = 0; j <= j_hi; ++j)
        lowj = std::max(lowj, std::abs(terminal[j] - (*profile.state)[j]));
      row.terminal_lowj_gap = lowj;
      double tail_mass = 0.0;
      for (index_t j = cfg.order / 2; j <= cfg.order; ++j)
        tail_mass += static_cast<double>(j) * terminal[j];
      row.tail_fraction = rho > 0.0 ? tail_mass / rho : 0.0;
      if (row.regime == Regime::subcritical) {
        row.classification = row.terminal_strong1 <= 1e-3 ? "equilibrated" : "relaxing";
        row.order_adequate = row.tail_fraction <= 1e-6;
      } else {
        row.classification = "condensing";
      }
    } else {
      row.classification = regime_name(row.regime);
    }
    return row;
  };

  std::vector<std::future<PhaseRow>> futures;
  futures.reserve(grid.size());
  for (double rho : grid)
    futures.push_back(std::async(std::launch::async, run_point, rho));
  std::vector<PhaseRow> rows;
  rows.reserve(grid.size());
  for (auto& f : futures) rows.push_back(f.get());

  auto out = open_output(out_dir / "phase.csv");
  out << "rho,regime,fugacity,terminal_strong1,terminal_lowj_gap,tail_fraction,classification\n";
  for (const auto& r : rows)
    out << g17(r.rho) << "," << regime_name(r.regime) << "," << g17(r.fugacity) << ","
        << g17(r.terminal_strong1) << "," << g17(r.terminal_lowj_gap) << ","
        << g17(r.tail_fraction) << "," << r.classification << "\n";
  manifest.outputs = {"phase.csv"};

  index_t subcritical = 0, supercritical = 0, critical = 0;
  bool order_ok = true;
  std::string order_note = "no subcritical tail pile-up";
  for (const auto& r : rows) {
    if (r.regime == Regime::subcritical) ++subcritical;
    if (r.regime == Regime::supercritical) ++supercritical;
    if (r.regime == Regime::critical) ++critical;
    if (!r.order_adequate && order_ok) {
      order_ok = false;
      order_note = "tail mass piles up at rho = " + g17(r.rho) +
                   " (fraction " + g17(r.tail_fraction) + "); increase order";
    }
  }
  manifest.checks.push_back({"order_adequate_on_subcritical_points", order_ok, order_note});
  manifest.metrics["points"] = static_cast<index_t>(rows.size());
  manifest.metrics["subcritical_points"] = subcritical;
  manifest.metrics["critical_points"] = critical;
  manifest.metrics["supercritical_points"] = supercritical;
  manifest.metrics["critical_mass"] =
      critical_density(cfg.kernel, cfg.initial.eta);
}

inline void run_contraction(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                            RunManifest& manifest) {
  const ClusterState ic_a = build_initial(cfg.initial, cfg.kernel, cfg.order);
  InitialSpec spec_b;
  if (cfg.initial_b) {
    spec_b = *cfg.initial_b;
  } else {
    spec_b.kind = InitialKind::geometric;
    spec_b.rho = cfg.initial.rho;
    spec_b.eta = cfg.initial.eta;
    spec_b.decay = 0.5;
  }
  const ClusterState ic_b = build_initial(spec_b, cfg.kernel, cfg.order);

  const double mass_gap = std::abs(ic_a.mass() - ic_b.mass());
  manifest.checks.push_back({"pair_mass_matched", mass_gap <= 1e-9,
                             "initial mass gap " + g17(mass_gap)});

  const PairTrajectory pair = integrate_pair(cfg.kernel, ic_a, ic_b, cfg.t_end, cfg.integrator,
                                             cfg.sampling, {cfg.stall_tol});
  std::vector<double> times;
  std::vector<PairDistance> rows;
  times.reserve(pair.first.size());
  rows.reserve(pair.first.size());
  for (std::size_t i = 0; i < pair.first.size(); ++i) {
    times.push_back(pair.first[i].time());
    rows.push_back(pair_distance(pair.first[i], pair.second[i], 1e-6));
  }
  write_pair_csv(out_dir / "pair.csv", times, rows);
  manifest.outputs = {"pair.csv"};

  const double d0 = rows.front().tail_l1;
  bool monotone = true;
  double worst_rise = 0.0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double rise = rows[i].tail_l1 - rows[i - 1].tail_l1;
    worst_rise = std::max(worst_rise, rise);
    if (rise > 1e-12 * (d0 + 1.0)) monotone = false;
  }
  manifest.checks.push_back({"tail_distance_nonincreasing", monotone,
                             "worst sample-to-sample rise " + g17(worst_rise)});

  std::vector<double> tails;
  tails.reserve(rows.size());
  for (const auto& r : rows) tails.push_back(r.tail_l1);
  const RateFit fit = fit_exponential_rate(times, tails, cfg.fit_window);
  manifest.metrics["gamma_fit"] = fit.rate;
  manifest.metrics["r_squared"] = fit.r_squared;
  manifest.metrics["initial_tail_distance"] = d0;
  manifest.metrics["final_tail_distance"] = tails.back();

  const HypothesisReport hypotheses = validate_hypotheses(
      cfg.kernel, std::max<index_t>(10 * cfg.order, 1000), {Hypothesis::uniform_import_floor});
  const double floor = weak_contraction_rate(cfg.kernel);
  manifest.metrics["rate_floor"] = floor;
  const bool theory_applies = hypotheses.all_passed() && floor > 0.0;
  manifest.metrics["rate_floor_applicable"] = theory_applies;
  if (theory_applies) {
    manifest.checks.push_back({"contraction_rate_respects_floor", fit.rate >= 0.9 * floor,
                               "gamma_fit " + g17(fit.rate) + " vs floor " + g17(floor)});
    manifest.checks.push_back(
        {"contraction_fit_clean", fit.r_squared >= 0.99, "r^2 " + g17(fit.r_squared)});
  } else {
    manifest.checks.push_back({"tail_distance_decays", tails.back() < d0,
                               "d(0) = " + g17(d0) + ", d(T) = " + g17(tails.back())});
  }
  note_integrator_metrics(manifest.metrics, pair.stats);
}

inline void run_relax(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                      RunManifest& manifest) {
  const double stall = cfg.stall_tol > 0.0 ? cfg.stall_tol : 1e-12;
  const RelaxationResult result = equilibrium_by_relaxation(
      cfg.kernel, cfg.initial.rho, cfg.order, cfg.integrator, stall, cfg.t_end);

  auto out = open_output(out_dir / "equilibrium.csv");
  out << "j,density\n";
  const auto c = result.equilibrium.densities();
  for (std::size_t j = 0; j < c.size(); ++j) out << j << "," << g17(c[j]) << "\n";
  manifest.outputs = {"equilibrium.csv"};

  manifest.checks.push_back(
      {"relaxation_stalled", result.stalled,
       "stop reasons: " + result.stats_primary.stop_reason + " / " +
           result.stats_secondary.stop_reason + " at t = " + g17(result.t_stop)});
  const double cross_tol = std::max(1e-8, 1000.0 * stall);
  manifest.checks.push_back({"limit_independent_of_start", result.cross_check <= cross_tol,
                             "weak0 gap between the two limits " + g17(result.cross_check)});
  manifest.checks.push_back({"residual_small", result.residual <= 10.0 * stall,
                             "max |dc/dt| " + g17(result.residual)});
  manifest.metrics["residual"] = result.residual;
  manifest.metrics["cross_check"] = result.cross_check;
  manifest.metrics["t_stop"] = result.t_stop;
  manifest.metrics["second_moment"] = result.equilibrium.second_moment();
}

inline void run_verify(const ExperimentConfig& cfg, const std::filesystem::path&,
                       RunManifest& manifest) {
  manifest.checks = verify_suite(cfg.seed, cfg.verify);
  manifest.metrics["seed"] = cfg.seed;
  manifest.metrics["trials"] = cfg.verify.trials;
}

}  // namespace detail

/// Run one experiment into out_dir (created if needed).  Writes the data
/// files and manifest.json; returns the manifest.  Configuration and usage
/// errors propagate as exceptions; runtime failures inside the experiment are
/// recorded as a failed "run_completed" check instead.
inline RunManifest run_experiment(const ExperimentConfig& cfg,
                                  const std::filesystem::path& out_dir) {
  RunManifest manifest;
  manifest.experiment = experiment_name(cfg.kind);
  manifest.config_echo = to_json(cfg);
  std::filesystem::create_directories(out_dir);

  try {
    switch (cfg.kind) {
      case ExperimentKind::simulate: detail::run_simulate(cfg, out_dir, manifest); break;
      case ExperimentKind::equilibrium: detail::run_equilibrium(cfg, out_dir, manifest); break;
      case ExperimentKind::phase_diagram: detail::run_phase_diagram(cfg, out_dir, manifest); break;
      case ExperimentKind::contraction: detail::run_contraction(cfg, out_dir, manifest); break;
      case ExperimentKind::relax: detail::run_relax(cfg, out_dir, manifest); break;
      case ExperimentKind::verify: detail::run_verify(cfg, out_dir, manifest); break;
    }
    manifest.checks.push_back({"run_completed", true, ""});
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument&) {
    throw;
  } catch (const Error& e) {
    manifest.checks.push_back({"run_completed", false, e.what()});
  }

  manifest.outputs.push_back("manifest.json");
  auto out = detail::open_output(out_dir / "manifest.json");
  out << manifest.to_json().dump(2) << "\n";
  return manifest;
}

}  // namespace edg
