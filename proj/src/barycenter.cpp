#include "fedbary/barycenter.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fedbary/common.hpp"

namespace fedbary {

namespace {

constexpr double kMaxPrecision = 1e12;  // Dirac-limit runs push variances toward 0

void check_inputs(std::span<const DiagGaussian> posteriors, const WeightVector& weights) {
    if (posteriors.empty())
        throw std::invalid_argument("aggregation: empty posterior list");
    if (weights.size() != posteriors.size())
        throw std::invalid_argument("aggregation: weight count mismatch");
    for (const auto& p : posteriors)
        if (p.dim() != posteriors.front().dim())
            throw std::invalid_argument("aggregation: posterior dimension mismatch");
}

double clamp_variance(double v) {
    return std::max(v, DiagGaussian::kMinVariance);
}

}  // namespace

WeightVector::WeightVector(std::vector<double> weights) : weights_(std::move(weights)) {
    if (weights_.empty())
        throw std::invalid_argument("WeightVector: empty");
    CompensatedSum total;
    for (double w : weights_) {
        if (!std::isfinite(w) || w < 0.0)
            throw std::invalid_argument("WeightVector: negative or non-finite entry");
        total.add(w);
    }
    if (std::abs(total.value() - 1.0) > 1e-9)
        throw std::invalid_argument("WeightVector: entries must sum to 1");
}

std::string to_string(AggregationMethod m) {
    switch (m) {
        case AggregationMethod::RKLB: return "rklb";
        case AggregationMethod::WB: return "wb";
        case AggregationMethod::EAA: return "eaa";
        case AggregationMethod::GAA: return "gaa";
        case AggregationMethod::AALV: return "aalv";
        case AggregationMethod::FedAvg: return "fedavg";
    }
    throw std::logic_error("unknown aggregation method");
}

AggregationMethod parse_aggregation_method(const std::string& name) {
    if (name == "rklb") return AggregationMethod::RKLB;
    if (name == "wb") return AggregationMethod::WB;
    if (name == "eaa") return AggregationMethod::EAA;
    if (name == "gaa") return AggregationMethod::GAA;
    if (name == "aalv") return AggregationMethod::AALV;
    if (name == "fedavg") return AggregationMethod::FedAvg;
    throw std::invalid_argument("unknown aggregation method: " + name);
}

DiagGaussian rkl_barycenter(std::span<const DiagGaussian> posteriors,
                            const WeightVector& weights) {
    check_inputs(posteriors, weights);
    const std::size_t d = posteriors.front().dim();
    std::vector<double> mean(d), var(d);
    for (std::size_t i = 0; i < d; ++i) {
        CompensatedSum precision, weighted_mean;
        for (std::size_t k = 0; k < posteriors.size(); ++k) {
            const double v = posteriors[k].variance()[i];
            precision.add(weights[k] / v);
            weighted_mean.add(weights[k] * posteriors[k].mean()[i] / v);
        }
        const double prec = std::min(precision.value(), kMaxPrecision);
        var[i] = 1.0 / prec;
        mean[i] = weighted_mean.value() / precision.value();
    }
    return DiagGaussian(std::move(mean), std::move(var));
}

DiagGaussian w2_barycenter(std::span<const DiagGaussian> posteriors,
                           const WeightVector& weights) {
    check_inputs(posteriors, weights);
    const std::size_t d = posteriors.front().dim();
    std::vector<double> mean(d), var(d);
    for (std::size_t i = 0; i < d; ++i) {
        CompensatedSum m, s;
        for (std::size_t k = 0; k < posteriors.size(); ++k) {
            m.add(weights[k] * posteriors[k].mean()[i]);
            s.add(weights[k] * std::sqrt(posteriors[k].variance()[i]));
        }
        mean[i] = m.value();
        var[i] = clamp_variance(s.value() * s.value());
    }
    return DiagGaussian(std::move(mean), std::move(var));
}

DiagGaussian eaa(std::span<const DiagGaussian> posteriors, const WeightVector& weights) {
    check_inputs(posteriors, weights);
    const std::size_t d = posteriors.front().dim();
    std::vector<double> mean(d), var(d);
    for (std::size_t i = 0; i < d; ++i) {
        CompensatedSum m, v;
        for (std::size_t k = 0; k < posteriors.size(); ++k) {
            m.add(weights[k] * posteriors[k].mean()[i]);
            v.add(weights[k] * posteriors[k].variance()[i]);
        }
        mean[i] = m.value();
        var[i] = clamp_variance(v.value());
    }
    return DiagGaussian(std::move(mean), std::move(var));
}

DiagGaussian gaa(std::span<const DiagGaussian> posteriors, const WeightVector& weights) {
    check_inputs(posteriors, weights);
    const std::size_t d = posteriors.front().dim();
    std::vector<double> mean(d), var(d);
    for (std::size_t i = 0; i < d; ++i) {
        CompensatedSum m, v;
        for (std::size_t k = 0; k < posteriors.size(); ++k) {
            m.add(weights[k] * posteriors[k].mean()[i]);
            v.add(weights[k] * weights[k] * posteriors[k].variance()[i]);
        }
        mean[i] = m.value();
        var[i] = clamp_variance(v.value());
    }
    return DiagGaussian(std::move(mean), std::move(var));
}

DiagGaussian aalv(std::span<const DiagGaussian> posteriors, const WeightVector& weights) {
    check_inputs(posteriors, weights);
    const std::size_t d = posteriors.front().dim();
    std::vector<double> mean(d), var(d);
    for (std::size_t i = 0; i < d; ++i) {
        CompensatedSum m, logv;
        for (std::size_t k = 0; k < posteriors.size(); ++k) {
            m.add(weights[k] * posteriors[k].mean()[i]);
            logv.add(weights[k] * std::log(posteriors[k].variance()[i]));
        }
        mean[i] = m.value();
        var[i] = clamp_variance(std::exp(logv.value()));
    }
    return DiagGaussian(std::move(mean), std::move(var));
}

std::vector<double> fedavg_point(const std::vector<std::vector<double>>& means,
                                 const WeightVector& weights) {
    if (means.empty())
        throw std::invalid_argument("fedavg_point: empty input");
    if (weights.size() != means.size())
        throw std::invalid_argument("fedavg_point: weight count mismatch");
    const std::size_t d = means.front().size();
    for (const auto& m : means)
        if (m.size() != d)
            throw std::invalid_argument("fedavg_point: dimension mismatch");
    std::vector<double> out(d);
    for (std::size_t i = 0; i < d; ++i) {
        CompensatedSum acc;
        for (std::size_t k = 0; k < means.size(); ++k)
            acc.add(weights[k] * means[k][i]);
        out[i] = acc.value();
    }
    return out;
}

DiagGaussian dirac_limit_check(const std::vector<std::vector<double>>& means,
                               const WeightVector& weights, double epsilon,
                               AggregationMethod method) {
    if (!(epsilon > 0.0))
        throw std::invalid_argument("dirac_limit_check: epsilon must be positive");
    std::vector<DiagGaussian> posteriors;
    posteriors.reserve(means.size());
    for (const auto& m : means)
        posteriors.emplace_back(m, std::vector<double>(m.size(), epsilon));
    switch (method) {
        case AggregationMethod::RKLB: return rkl_barycenter(posteriors, weights);
        case AggregationMethod::WB: return w2_barycenter(posteriors, weights);
        default:
            throw std::invalid_argument("dirac_limit_check: method must be RKLB or WB");
    }
}

DiscretePMF::DiscretePMF(std::vector<double> probabilities) : probs_(std::move(probabilities)) {
    if (probs_.empty())
        throw std::invalid_argument("DiscretePMF: empty support");
    CompensatedSum total;
    for (double p : probs_) {
        if (!std::isfinite(p) || p < 0.0)
            throw std::invalid_argument("DiscretePMF: negative or non-finite entry");
        total.add(p);
    }
    if (std::abs(total.value() - 1.0) > 1e-9)
        throw std::invalid_argument("DiscretePMF: entries must sum to 1");
}

AlphaParam::AlphaParam(double a) : alpha(a) {
    if (!std::isfinite(a) || a == 0.0)
        throw std::invalid_argument("AlphaParam: alpha must be finite and nonzero");
}

namespace {

void check_discrete_inputs(std::span<const DiscretePMF> pmfs, const WeightVector& weights) {
    if (pmfs.empty())
        throw std::invalid_argument("discrete barycenter: empty input");
    if (weights.size() != pmfs.size())
        throw std::invalid_argument("discrete barycenter: weight count mismatch");
    for (const auto& p : pmfs)
        if (p.support_size() != pmfs.front().support_size())
            throw std::invalid_argument("discrete barycenter: support size mismatch");
}

DiscretePMF normalize(std::vector<double> v) {
    CompensatedSum total;
    for (double x : v) total.add(x);
    const double z = total.value();
    if (!(z > 0.0) || !std::isfinite(z))
        throw std::domain_error("discrete barycenter: degenerate normalizer");
    for (double& x : v) x /= z;
    return DiscretePMF(std::move(v));
}

}  // namespace

DiscretePMF alpha_barycenter_discrete(std::span<const DiscretePMF> pmfs,
                                      const WeightVector& weights, AlphaParam alpha) {
    check_discrete_inputs(pmfs, weights);
    const double a = alpha.alpha;
    if (a < 0.0)
        for (const auto& p : pmfs)
            for (double x : p.probabilities())
                if (x == 0.0)
                    throw std::domain_error("alpha barycenter: zero probability with alpha < 0");
    const std::size_t m = pmfs.front().support_size();
    std::vector<double> out(m);
    for (std::size_t i = 0; i < m; ++i) {
        CompensatedSum acc;
        for (std::size_t k = 0; k < pmfs.size(); ++k)
            acc.add(weights[k] * std::pow(pmfs[k].probabilities()[i], a));
        out[i] = std::pow(acc.value(), 1.0 / a);
    }
    return normalize(std::move(out));
}

DiscretePMF rkl_barycenter_discrete(std::span<const DiscretePMF> pmfs,
                                    const WeightVector& weights) {
    check_discrete_inputs(pmfs, weights);
    const std::size_t m = pmfs.front().support_size();
    std::vector<double> out(m);
    for (std::size_t i = 0; i < m; ++i) {
        CompensatedSum acc;
        for (std::size_t k = 0; k < pmfs.size(); ++k) {
            const double p = pmfs[k].probabilities()[i];
            if (p == 0.0)
                throw std::domain_error("rkl barycenter: zero probability entry");
            acc.add(weights[k] * std::log(p));
        }
        out[i] = std::exp(acc.value());
    }
    return normalize(std::move(out));
}

std::pair<double, double> reparam_forward(double mean, double variance, ReparamMap map) {
    if (!(variance > 0.0))
        throw std::invalid_argument("reparam_forward: nonpositive variance");
    switch (map) {
        case ReparamMap::RKL: return {mean / variance, 1.0 / variance};
        case ReparamMap::W2: return {mean, std::sqrt(variance)};
    }
    throw std::logic_error("unknown reparam map");
}

std::pair<double, double> reparam_inverse(double a, double b, ReparamMap map) {
    switch (map) {
        case ReparamMap::RKL:
            if (!(b > 0.0))
                throw std::invalid_argument("reparam_inverse: nonpositive precision");
            return {a / b, 1.0 / b};  // F_RKL is its own inverse
        case ReparamMap::W2:
            if (!(b > 0.0))
                throw std::invalid_argument("reparam_inverse: nonpositive scale");
            return {a, b * b};
    }
    throw std::logic_error("unknown reparam map");
}

namespace {

using GaussianRule = DiagGaussian (*)(std::span<const DiagGaussian>, const WeightVector&);

GaussianRule rule_for(AggregationMethod method) {
    switch (method) {
        case AggregationMethod::RKLB: return &rkl_barycenter;
        case AggregationMethod::WB: return &w2_barycenter;
        case AggregationMethod::EAA: return &eaa;
        case AggregationMethod::GAA: return &gaa;
        case AggregationMethod::AALV: return &aalv;
        case AggregationMethod::FedAvg:
            throw std::invalid_argument(
                "aggregate: FedAvg is defined only for all-deterministic models");
    }
    throw std::logic_error("unknown aggregation method");
}

void check_client_structures(std::span<const PosteriorParams> client_params,
                             const WeightVector& weights) {
    if (client_params.empty())
        throw std::invalid_argument("aggregate: no client parameters");
    if (weights.size() != client_params.size())
        throw std::invalid_argument("aggregate: weight count mismatch");
    for (const auto& p : client_params)
        if (!p.same_structure(client_params.front()))
            throw std::invalid_argument("aggregate: heterogeneous client architectures");
}

/// Flattens a Gaussian layer into one DiagGaussian (weights then biases);
/// rho-space sigmas become variances, floored at the construction minimum.
DiagGaussian flatten_gaussian_layer(const GaussianLayer& g) {
    std::vector<double> mean, var;
    mean.reserve(g.weight_means.size() + g.bias_means.size());
    var.reserve(mean.capacity());
    auto push = [&](const std::vector<double>& mus, const std::vector<double>& rhos) {
        for (std::size_t i = 0; i < mus.size(); ++i) {
            const double s = softplus(rhos[i]);
            mean.push_back(mus[i]);
            var.push_back(clamp_variance(s * s));
        }
    };
    push(g.weight_means, g.weight_rhos);
    push(g.bias_means, g.bias_rhos);
    return DiagGaussian(std::move(mean), std::move(var));
}

GaussianLayer unflatten_gaussian_layer(const GaussianLayer& shape, const DiagGaussian& dist) {
    GaussianLayer out;
    out.inputs = shape.inputs;
    out.outputs = shape.outputs;
    const std::size_t nw = shape.weight_means.size();
    out.weight_means.assign(dist.mean().begin(), dist.mean().begin() + nw);
    out.bias_means.assign(dist.mean().begin() + nw, dist.mean().end());
    out.weight_rhos.resize(nw);
    out.bias_rhos.resize(shape.bias_means.size());
    for (std::size_t i = 0; i < nw; ++i)
        out.weight_rhos[i] = softplus_inv(std::sqrt(dist.variance()[i]));
    for (std::size_t i = 0; i < out.bias_rhos.size(); ++i)
        out.bias_rhos[i] = softplus_inv(std::sqrt(dist.variance()[nw + i]));
    return out;
}

PointMassLayer aggregate_point_mass(std::span<const PosteriorParams> client_params,
                                    std::size_t layer, const WeightVector& weights) {
    const auto& shape = std::get<PointMassLayer>(client_params.front().layers[layer]);
    PointMassLayer out;
    out.inputs = shape.inputs;
    out.outputs = shape.outputs;
    std::vector<std::vector<double>> ws, bs;
    ws.reserve(client_params.size());
    bs.reserve(client_params.size());
    for (const auto& cp : client_params) {
        const auto& l = std::get<PointMassLayer>(cp.layers[layer]);
        ws.push_back(l.weights);
        bs.push_back(l.biases);
    }
    out.weights = fedavg_point(ws, weights);
    out.biases = fedavg_point(bs, weights);
    return out;
}

DiagGaussian reparam_mean(std::span<const DiagGaussian> posteriors,
                          const WeightVector& weights, ReparamMap map) {
    check_inputs(posteriors, weights);
    const std::size_t d = posteriors.front().dim();
    std::vector<double> mean(d), var(d);
    for (std::size_t i = 0; i < d; ++i) {
        CompensatedSum a, b;
        for (std::size_t k = 0; k < posteriors.size(); ++k) {
            const auto [fa, fb] =
                reparam_forward(posteriors[k].mean()[i], posteriors[k].variance()[i], map);
            a.add(weights[k] * fa);
            b.add(weights[k] * fb);
        }
        double bv = b.value();
        if (map == ReparamMap::RKL) bv = std::min(bv, kMaxPrecision);  // same cap as closed form
        const auto [m, v] = reparam_inverse(a.value(), bv, map);
        mean[i] = m;
        var[i] = clamp_variance(v);
    }
    return DiagGaussian(std::move(mean), std::move(var));
}

PosteriorParams aggregate_impl(AggregationMethod method,
                               std::span<const PosteriorParams> client_params,
                               const WeightVector& weights, bool via_reparam) {
    check_client_structures(client_params, weights);
    GaussianRule rule = nullptr;
    ReparamMap map = ReparamMap::RKL;
    if (via_reparam) {
        if (method == AggregationMethod::RKLB)
            map = ReparamMap::RKL;
        else if (method == AggregationMethod::WB)
            map = ReparamMap::W2;
        else
            throw std::invalid_argument("aggregate_reparam: method must be RKLB or WB");
    } else if (method != AggregationMethod::FedAvg) {
        rule = rule_for(method);
    }

    PosteriorParams out;
    out.layers.reserve(client_params.front().layers.size());
    for (std::size_t layer = 0; layer < client_params.front().layers.size(); ++layer) {
        if (std::holds_alternative<PointMassLayer>(client_params.front().layers[layer])) {
            out.layers.emplace_back(aggregate_point_mass(client_params, layer, weights));
            continue;
        }
        if (method == AggregationMethod::FedAvg)
            throw std::invalid_argument(
                "aggregate: FedAvg requested on a Gaussian layer (configuration error)");
        const auto& shape = std::get<GaussianLayer>(client_params.front().layers[layer]);
        std::vector<DiagGaussian> dists;
        dists.reserve(client_params.size());
        for (const auto& cp : client_params)
            dists.push_back(flatten_gaussian_layer(std::get<GaussianLayer>(cp.layers[layer])));
        const DiagGaussian agg =
            via_reparam ? reparam_mean(dists, weights, map) : rule(dists, weights);
        out.layers.emplace_back(unflatten_gaussian_layer(shape, agg));
    }
    return out;
}

}  // namespace

PosteriorParams aggregate(AggregationMethod method,
                          std::span<const PosteriorParams> client_params,
                          const WeightVector& weights) {
    return aggregate_impl(method, client_params, weights, false);
}

PosteriorParams aggregate_reparam(AggregationMethod method,
                                  std::span<const PosteriorParams> client_params,
                                  const WeightVector& weights) {
    return aggregate_impl(method, client_params, weights, true);
}

}  // namespace fedbary
