#pragma once

// Umbrella header for the exchange-driven growth laboratory.
//
// The library simulates the truncated mean-field exchange-driven growth
// equations, computes detailed-balance equilibrium profiles and critical
// densities for separable kernels, and measures convergence and contraction
// rates against their theoretical floors.
//
//   rates.hpp        kernels, rate sequences, hypothesis checks
//   state.hpp        cluster-size distributions, moments, distances
//   dynamics.hpp     O(N)-per-step truncated ODE system and integrators
//   equilibrium.hpp  partition sums, fugacity, critical density, profiles
//   diagnostics.hpp  entropy functionals, dissipation, rate fits
//   experiments.hpp  config-driven runners, manifests, verification suite

#define EDG_VERSION "0.1.0"

#include "edg/diagnostics.hpp"
#include "edg/dynamics.hpp"
#include "edg/equilibrium.hpp"
#include "edg/experiments.hpp"
#include "edg/rates.hpp"
#include "edg/state.hpp"
