#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fedbary/barycenter.hpp"

// Brute-force verification oracles. Everything here checks the closed-form
// implementations against an independent route (multi-start numerical
// minimization, Monte-Carlo estimation, finite differences) and must stay
// independent of the code paths it validates.

namespace fedbary::oracles {

struct SuiteResult {
    bool pass = false;
    double max_residual = 0.0;
    std::vector<std::string> failures;  // offending seeds / cases, for reproduction
};

/// Derivative-free Nelder-Mead minimizer for small dimensions.
std::vector<double> nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                                std::vector<double> start, double step, int max_iter = 1000);

/// Closed-form RKLB/WB objective vs a 10-start numerical minimizer of
/// sum_k w_k D(p_k || q), on random instances with N <= 5, d <= 4.
/// Residual = closed-form objective - best numerical objective.
SuiteResult barycenter_suite(int n_instances, std::uint64_t seed, double tolerance = 1e-6);

/// Discrete alpha-barycenter closed form vs simplex minimization for
/// alpha in {-0.5, 0.5, 1, 2} (per-coordinate tolerance), plus the
/// alpha -> 0 consistency check against the geometric-mean form.
SuiteResult discrete_barycenter_suite(int n_instances, std::uint64_t seed,
                                      double tolerance = 1e-4);

/// Analytic ELBO gradients vs central finite differences (h = 1e-5) under
/// common fixed noise on random small nets. Residual = max relative error.
SuiteResult gradient_suite(int n_nets, std::uint64_t seed, double tolerance = 1e-4);

/// RKLB/WB means vs the FedAvg weighted mean at variance epsilon in
/// {1e-6, 1e-8, 1e-10}; deviation must stay within 10 * epsilon.
SuiteResult dirac_suite(int n_instances, std::uint64_t seed);

/// Closed-form barycenters vs inverse-map(weighted-mean(forward-map(.))),
/// max relative deviation over random posterior sets.
SuiteResult reparam_suite(int n_instances, std::uint64_t seed, double tolerance = 1e-10);

/// Closed-form KL and W2^2 vs Monte-Carlo / comonotone-coupling estimates
/// with n_samples draws; each pair must agree within 3 standard errors.
SuiteResult divergence_mc_suite(int n_pairs, std::size_t n_samples, std::uint64_t seed);

}  // namespace fedbary::oracles
