#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace fedbary {

/// Diagonal-covariance Gaussian: a mean vector and a variance vector of
/// equal length. Variances are stored as variances (sigma^2), never as
/// standard deviations. Immutable after construction.
class DiagGaussian {
public:
    static constexpr double kMinVariance = 1e-12;

    /// Validates finiteness, matching lengths and the variance floor;
    /// throws std::invalid_argument on violation.
    DiagGaussian(std::vector<double> mean, std::vector<double> variance);

    const std::vector<double>& mean() const { return mean_; }
    const std::vector<double>& variance() const { return variance_; }
    std::size_t dim() const { return mean_.size(); }

    bool operator==(const DiagGaussian& other) const {
        return mean_ == other.mean_ && variance_ == other.variance_;
    }

private:
    std::vector<double> mean_;
    std::vector<double> variance_;
};

/// The prior N(0_d, I_d). Only the dimension is free.
struct PriorSpec {
    std::size_t dimension;
    DiagGaussian distribution() const;
};

/// KL(p || q) in closed form. Nonnegative; zero iff p == q.
double kl_divergence(const DiagGaussian& p, const DiagGaussian& q);

/// Squared 2-Wasserstein distance: sum_i (mu_p - mu_q)^2 + (sigma_p - sigma_q)^2.
double w2_squared(const DiagGaussian& p, const DiagGaussian& q);

/// Reparameterized draw mean + sqrt(variance) * noise; deterministic given noise.
std::vector<double> sample(const DiagGaussian& p, std::span<const double> noise);

/// Exact log density at x.
double log_density(const DiagGaussian& p, std::span<const double> x);

}  // namespace fedbary
