#include "fedbary/gaussian.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <utility>

#include "fedbary/common.hpp"

namespace fedbary {

namespace {

void check_same_dim(const DiagGaussian& p, const DiagGaussian& q) {
    if (p.dim() != q.dim())
        throw std::invalid_argument("DiagGaussian dimension mismatch");
}

}  // namespace

DiagGaussian::DiagGaussian(std::vector<double> mean, std::vector<double> variance)
    : mean_(std::move(mean)), variance_(std::move(variance)) {
    if (mean_.empty() || mean_.size() != variance_.size())
        throw std::invalid_argument("DiagGaussian: mean/variance length mismatch or empty");
    for (double m : mean_)
        if (!std::isfinite(m))
            throw std::invalid_argument("DiagGaussian: non-finite mean entry");
    for (double v : variance_)
        if (!std::isfinite(v) || v < kMinVariance)
            throw std::invalid_argument("DiagGaussian: variance entry below floor or non-finite");
}

DiagGaussian PriorSpec::distribution() const {
    return DiagGaussian(std::vector<double>(dimension, 0.0),
                        std::vector<double>(dimension, 1.0));
}

double kl_divergence(const DiagGaussian& p, const DiagGaussian& q) {
    check_same_dim(p, q);
    CompensatedSum acc;
    for (std::size_t i = 0; i < p.dim(); ++i) {
        const double vp = p.variance()[i];
        const double vq = q.variance()[i];
        const double dm = p.mean()[i] - q.mean()[i];
        acc.add(0.5 * (vp / vq + dm * dm / vq - 1.0 + std::log(vq / vp)));
    }
    return acc.value();
}

double w2_squared(const DiagGaussian& p, const DiagGaussian& q) {
    check_same_dim(p, q);
    CompensatedSum acc;
    for (std::size_t i = 0; i < p.dim(); ++i) {
        const double dm = p.mean()[i] - q.mean()[i];
        const double ds = std::sqrt(p.variance()[i]) - std::sqrt(q.variance()[i]);
        acc.add(dm * dm + ds * ds);
    }
    return acc.value();
}

std::vector<double> sample(const DiagGaussian& p, std::span<const double> noise) {
    if (noise.size() != p.dim())
        throw std::invalid_argument("sample: noise dimension mismatch");
    std::vector<double> out(p.dim());
    for (std::size_t i = 0; i < p.dim(); ++i)
        out[i] = p.mean()[i] + std::sqrt(p.variance()[i]) * noise[i];
    return out;
}

double log_density(const DiagGaussian& p, std::span<const double> x) {
    if (x.size() != p.dim())
        throw std::invalid_argument("log_density: dimension mismatch");
    constexpr double log_2pi = 1.8378770664093454836;
    CompensatedSum acc;
    for (std::size_t i = 0; i < p.dim(); ++i) {
        const double v = p.variance()[i];
        const double d = x[i] - p.mean()[i];
        acc.add(-0.5 * (log_2pi + std::log(v) + d * d / v));
    }
    return acc.value();
}

}  // namespace fedbary
