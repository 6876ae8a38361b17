#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedbary/gaussian.hpp"
#include "fedbary/layers.hpp"

namespace fedbary {

/// Normalized, nonnegative aggregation weights.
class WeightVector {
public:
    /// Throws unless all entries are >= 0 and they sum to 1 within 1e-9.
    explicit WeightVector(std::vector<double> weights);

    const std::vector<double>& values() const { return weights_; }
    std::size_t size() const { return weights_.size(); }
    double operator[](std::size_t i) const { return weights_[i]; }

private:
    std::vector<double> weights_;
};

enum class AggregationMethod { RKLB, WB, EAA, GAA, AALV, FedAvg };

std::string to_string(AggregationMethod m);
AggregationMethod parse_aggregation_method(const std::string& name);

// Gaussian aggregation rules. All operate coordinatewise over posteriors of
// a common dimension, summing in client-index-ascending order with
// compensated accumulation.

/// Reverse-KL barycenter: precision-weighted mean, harmonic-mean variance.
/// Aggregated precision is capped at 1e12.
DiagGaussian rkl_barycenter(std::span<const DiagGaussian> posteriors,
                            const WeightVector& weights);

/// 2-Wasserstein barycenter: arithmetic mean of means and of standard deviations.
DiagGaussian w2_barycenter(std::span<const DiagGaussian> posteriors,
                           const WeightVector& weights);

/// Weighted mean of means and of variances.
DiagGaussian eaa(std::span<const DiagGaussian> posteriors, const WeightVector& weights);

/// Weighted mean of means; variance = sum_k w_k^2 sigma_k^2.
DiagGaussian gaa(std::span<const DiagGaussian> posteriors, const WeightVector& weights);

/// Weighted mean of means; geometric-mean variance.
DiagGaussian aalv(std::span<const DiagGaussian> posteriors, const WeightVector& weights);

/// Deterministic weighted parameter average.
std::vector<double> fedavg_point(const std::vector<std::vector<double>>& means,
                                 const WeightVector& weights);

/// Builds variance-epsilon Gaussians around the given means and aggregates
/// them; as epsilon -> 0 the mean converges to fedavg_point.
DiagGaussian dirac_limit_check(const std::vector<std::vector<double>>& means,
                               const WeightVector& weights, double epsilon,
                               AggregationMethod method = AggregationMethod::RKLB);

/// Probability vector over a finite support.
class DiscretePMF {
public:
    explicit DiscretePMF(std::vector<double> probabilities);
    const std::vector<double>& probabilities() const { return probs_; }
    std::size_t support_size() const { return probs_.size(); }

private:
    std::vector<double> probs_;
};

struct AlphaParam {
    double alpha;
    explicit AlphaParam(double a);
};

/// Normalized power mean (sum_k w_k p_k^alpha)^(1/alpha). Validation oracle
/// only; not wired into the federated loop.
DiscretePMF alpha_barycenter_discrete(std::span<const DiscretePMF> pmfs,
                                      const WeightVector& weights, AlphaParam alpha);

/// Normalized weighted geometric mean (the alpha -> 0 limit).
DiscretePMF rkl_barycenter_discrete(std::span<const DiscretePMF> pmfs,
                                    const WeightVector& weights);

/// Entry-wise invertible maps under which each barycentric rule becomes an
/// arithmetic mean: RKL -> (mu/var, 1/var) (an involution), W2 -> (mu, sigma).
enum class ReparamMap { RKL, W2 };

std::pair<double, double> reparam_forward(double mean, double variance, ReparamMap map);
std::pair<double, double> reparam_inverse(double a, double b, ReparamMap map);

/// Aggregates structured model posteriors: point-mass layers by fedavg_point,
/// Gaussian layers by the selected rule. All clients must share an identical
/// layer structure. FedAvg on any Gaussian layer is a configuration error.
PosteriorParams aggregate(AggregationMethod method,
                          std::span<const PosteriorParams> client_params,
                          const WeightVector& weights);

/// Same contract as aggregate() for RKLB/WB, but Gaussian layers are combined
/// by forward-map / arithmetic mean / inverse-map instead of the closed form.
PosteriorParams aggregate_reparam(AggregationMethod method,
                                  std::span<const PosteriorParams> client_params,
                                  const WeightVector& weights);

}  // namespace fedbary
