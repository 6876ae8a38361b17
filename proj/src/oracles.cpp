#include "fedbary/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "fedbary/common.hpp"
#include "fedbary/gaussian.hpp"
#include "fedbary/net.hpp"

namespace fedbary::oracles {

namespace {

struct GaussianInstance {
    std::vector<DiagGaussian> posteriors;
    std::vector<double> weights;
};

GaussianInstance random_instance(std::mt19937_64& eng, std::size_t max_n = 5,
                                 std::size_t max_d = 4) {
    std::uniform_int_distribution<std::size_t> n_dist(1, max_n), d_dist(1, max_d);
    std::uniform_real_distribution<double> mu_dist(-3.0, 3.0), var_dist(0.1, 5.0),
        w_dist(0.05, 1.0);
    const std::size_t n = n_dist(eng), d = d_dist(eng);
    GaussianInstance inst;
    double total = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        std::vector<double> mean(d), var(d);
        for (std::size_t i = 0; i < d; ++i) {
            mean[i] = mu_dist(eng);
            var[i] = var_dist(eng);
        }
        inst.posteriors.emplace_back(std::move(mean), std::move(var));
        inst.weights.push_back(w_dist(eng));
        total += inst.weights.back();
    }
    for (double& w : inst.weights) w /= total;
    return inst;
}

// Per-coordinate barycenter objectives in (mu, ln sigma^2) space.
double rkl_objective_1d(const GaussianInstance& inst, std::size_t coord, double mu,
                        double log_var) {
    const double vq = std::exp(log_var);
    double acc = 0.0;
    for (std::size_t k = 0; k < inst.posteriors.size(); ++k) {
        const double vk = inst.posteriors[k].variance()[coord];
        const double dm = mu - inst.posteriors[k].mean()[coord];
        acc += inst.weights[k] * 0.5 * (vq / vk + dm * dm / vk - 1.0 + std::log(vk / vq));
    }
    return acc;
}

double w2_objective_1d(const GaussianInstance& inst, std::size_t coord, double mu,
                       double log_var) {
    const double sq = std::exp(0.5 * log_var);
    double acc = 0.0;
    for (std::size_t k = 0; k < inst.posteriors.size(); ++k) {
        const double dm = mu - inst.posteriors[k].mean()[coord];
        const double ds = sq - std::sqrt(inst.posteriors[k].variance()[coord]);
        acc += inst.weights[k] * (dm * dm + ds * ds);
    }
    return acc;
}

double full_objective(const GaussianInstance& inst, const DiagGaussian& q, bool rkl) {
    double acc = 0.0;
    for (std::size_t k = 0; k < inst.posteriors.size(); ++k)
        acc += inst.weights[k] * (rkl ? kl_divergence(q, inst.posteriors[k])
                                      : w2_squared(inst.posteriors[k], q));
    return acc;
}

}  // namespace

std::vector<double> nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                                std::vector<double> start, double step, int max_iter) {
    const std::size_t n = start.size();
    std::vector<std::pair<double, std::vector<double>>> simplex;
    simplex.reserve(n + 1);
    simplex.emplace_back(f(start), start);
    for (std::size_t i = 0; i < n; ++i) {
        auto v = start;
        v[i] += step;
        simplex.emplace_back(f(v), v);
    }
    auto by_value = [](const auto& a, const auto& b) { return a.first < b.first; };
    for (int iter = 0; iter < max_iter; ++iter) {
        std::sort(simplex.begin(), simplex.end(), by_value);
        if (simplex.back().first - simplex.front().first < 1e-14) break;

        std::vector<double> centroid(n, 0.0);
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t i = 0; i < n; ++i) centroid[i] += simplex[j].second[i] / n;

        auto combine = [&](double t) {
            std::vector<double> v(n);
            for (std::size_t i = 0; i < n; ++i)
                v[i] = centroid[i] + t * (centroid[i] - simplex.back().second[i]);
            return v;
        };
        const auto reflected = combine(1.0);
        const double fr = f(reflected);
        if (fr < simplex.front().first) {
            const auto expanded = combine(2.0);
            const double fe = f(expanded);
            simplex.back() = fe < fr ? std::make_pair(fe, expanded)
                                     : std::make_pair(fr, reflected);
        } else if (fr < simplex[n - 1].first) {
            simplex.back() = {fr, reflected};
        } else {
            const auto contracted = combine(fr < simplex.back().first ? 0.5 : -0.5);
            const double fc = f(contracted);
            if (fc < std::min(fr, simplex.back().first)) {
                simplex.back() = {fc, contracted};
            } else {
                for (std::size_t j = 1; j <= n; ++j) {
                    for (std::size_t i = 0; i < n; ++i)
                        simplex[j].second[i] =
                            0.5 * (simplex[j].second[i] + simplex.front().second[i]);
                    simplex[j].first = f(simplex[j].second);
                }
            }
        }
    }
    std::sort(simplex.begin(), simplex.end(), by_value);
    return simplex.front().second;
}

SuiteResult barycenter_suite(int n_instances, std::uint64_t seed, double tolerance) {
    SuiteResult result;
    std::mt19937_64 eng(derive_seed(seed, "oracle-barycenter"));
    std::uniform_real_distribution<double> mu_start(-3.0, 3.0), lv_start(-2.3, 1.7);
    for (int inst_i = 0; inst_i < n_instances; ++inst_i) {
        const auto inst = random_instance(eng);
        const WeightVector weights{std::vector<double>(inst.weights)};
        for (const bool rkl : {true, false}) {
            const DiagGaussian closed = rkl ? rkl_barycenter(inst.posteriors, weights)
                                            : w2_barycenter(inst.posteriors, weights);
            const double closed_obj = full_objective(inst, closed, rkl);

            // Multi-start per-coordinate minimization; the objective separates
            // across coordinates, so the per-coordinate minima sum.
            double numeric_obj = 0.0;
            for (std::size_t coord = 0; coord < closed.dim(); ++coord) {
                auto f = [&](const std::vector<double>& x) {
                    return rkl ? rkl_objective_1d(inst, coord, x[0], x[1])
                               : w2_objective_1d(inst, coord, x[0], x[1]);
                };
                double best = std::numeric_limits<double>::infinity();
                for (int s = 0; s < 10; ++s) {
                    const auto x = nelder_mead(f, {mu_start(eng), lv_start(eng)}, 0.5, 600);
                    best = std::min(best, f(x));
                }
                numeric_obj += best;
            }
            const double residual = closed_obj - numeric_obj;
            result.max_residual = std::max(result.max_residual, residual);
            if (residual > tolerance)
                result.failures.push_back((rkl ? "rklb" : "wb") + std::string(" instance ") +
                                          std::to_string(inst_i));
        }
    }
    result.pass = result.failures.empty();
    return result;
}

namespace {

double alpha_divergence_discrete(const std::vector<double>& p, const std::vector<double>& q,
                                 double alpha) {
    double acc = 0.0;
    if (alpha == 1.0) {  // KL(p || q) limit of the family
        for (std::size_t i = 0; i < p.size(); ++i)
            if (p[i] > 0.0) acc += p[i] * std::log(p[i] / q[i]);
        return acc;
    }
    for (std::size_t i = 0; i < p.size(); ++i)
        acc += std::pow(p[i], alpha) * std::pow(q[i], 1.0 - alpha);
    return (1.0 - acc) / (alpha * (1.0 - alpha));
}

std::vector<double> softmax_of(const std::vector<double>& logits) {
    const double m = *std::max_element(logits.begin(), logits.end());
    std::vector<double> q(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) total += q[i] = std::exp(logits[i] - m);
    for (double& x : q) x /= total;
    return q;
}

}  // namespace

SuiteResult discrete_barycenter_suite(int n_instances, std::uint64_t seed, double tolerance) {
    SuiteResult result;
    std::mt19937_64 eng(derive_seed(seed, "oracle-discrete"));
    std::uniform_int_distribution<std::size_t> m_dist(2, 5), n_dist(2, 4);
    std::uniform_real_distribution<double> u(0.05, 1.0);
    for (int inst_i = 0; inst_i < n_instances; ++inst_i) {
        const std::size_t m = m_dist(eng), n = n_dist(eng);
        std::vector<DiscretePMF> pmfs;
        std::vector<double> w(n);
        double wt = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            std::vector<double> p(m);
            double total = 0.0;
            for (double& x : p) total += x = u(eng);
            for (double& x : p) x /= total;
            pmfs.emplace_back(std::move(p));
            wt += w[k] = u(eng);
        }
        for (double& x : w) x /= wt;
        const WeightVector weights{std::vector<double>(w)};

        for (const double alpha : {-0.5, 0.5, 1.0, 2.0}) {
            const auto closed = alpha_barycenter_discrete(pmfs, weights, AlphaParam(alpha));
            auto objective = [&](const std::vector<double>& logits) {
                const auto q = softmax_of(logits);
                double acc = 0.0;
                for (std::size_t k = 0; k < n; ++k)
                    acc += w[k] * alpha_divergence_discrete(pmfs[k].probabilities(), q, alpha);
                return acc;
            };
            std::vector<double> best_logits;
            double best = std::numeric_limits<double>::infinity();
            std::uniform_real_distribution<double> l0(-1.0, 1.0);
            for (int s = 0; s < 10; ++s) {
                std::vector<double> start(m);
                for (double& x : start) x = l0(eng);
                auto x = nelder_mead(objective, std::move(start), 0.4, 1500);
                const double fx = objective(x);
                if (fx < best) {
                    best = fx;
                    best_logits = std::move(x);
                }
            }
            const auto q_num = softmax_of(best_logits);
            for (std::size_t i = 0; i < m; ++i) {
                const double dev = std::abs(closed.probabilities()[i] - q_num[i]);
                result.max_residual = std::max(result.max_residual, dev);
                if (dev > tolerance) {
                    result.failures.push_back("alpha=" + std::to_string(alpha) + " instance " +
                                              std::to_string(inst_i));
                    break;
                }
            }
        }

        // alpha -> 0 limit must land on the geometric-mean form.
        const auto near_zero = alpha_barycenter_discrete(pmfs, weights, AlphaParam(1e-6));
        const auto geo = rkl_barycenter_discrete(pmfs, weights);
        for (std::size_t i = 0; i < m; ++i)
            if (std::abs(near_zero.probabilities()[i] - geo.probabilities()[i]) > 1e-5)
                result.failures.push_back("alpha->0 limit, instance " + std::to_string(inst_i));
    }
    result.pass = result.failures.empty();
    return result;
}

SuiteResult gradient_suite(int n_nets, std::uint64_t seed, double tolerance) {
    SuiteResult result;
    std::mt19937_64 eng(derive_seed(seed, "oracle-gradient"));
    std::uniform_int_distribution<int> dim_dist(2, 3), width_dist(2, 3), layer_dist(1, 2),
        label_dist(0, 1);
    std::uniform_real_distribution<double> feat(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double h = 1e-5;

    for (int net_i = 0; net_i < n_nets; ++net_i) {
        const int in_dim = dim_dist(eng);
        const int n_layers = layer_dist(eng);
        std::vector<std::size_t> hidden;
        for (int l = 1; l < n_layers; ++l) hidden.push_back(width_dist(eng));
        std::uniform_int_distribution<std::size_t> bayes_dist(0, hidden.size() + 1);
        const auto specs = make_mlp_specs(in_dim, hidden, 2, bayes_dist(eng));
        HybridNet net = HybridNet::initialize(specs, derive_seed(seed, "grad-net", net_i));

        LabeledDataset batch;
        batch.num_classes = 2;
        for (int i = 0; i < 4; ++i) {
            std::vector<double> x(in_dim);
            for (double& v : x) v = feat(eng);
            batch.features.push_back(std::move(x));
            batch.labels.push_back(label_dist(eng));
        }
        std::vector<std::size_t> idx(batch.size());
        std::iota(idx.begin(), idx.end(), 0);

        std::vector<double> noise(net.bayesian_parameter_count());
        for (double& x : noise) x = normal(eng);
        const double kl_scale = 0.5;
        const PosteriorParams analytic = gradients(net, batch, idx, kl_scale, noise);

        // Flatten both parameter and gradient structures in a fixed order and
        // compare every entry with a central difference of the loss.
        auto entries = [](PosteriorParams& p) {
            std::vector<double*> out;
            for (auto& l : p.layers) {
                if (auto* g = std::get_if<GaussianLayer>(&l)) {
                    for (auto* v : {&g->weight_means, &g->weight_rhos, &g->bias_means,
                                    &g->bias_rhos})
                        for (double& x : *v) out.push_back(&x);
                } else {
                    auto& pm = std::get<PointMassLayer>(l);
                    for (auto* v : {&pm.weights, &pm.biases})
                        for (double& x : *v) out.push_back(&x);
                }
            }
            return out;
        };
        PosteriorParams base = net.params();
        PosteriorParams analytic_copy = analytic;
        const auto param_ptrs = entries(base);
        const auto grad_ptrs = entries(analytic_copy);

        for (std::size_t j = 0; j < param_ptrs.size(); ++j) {
            const double saved = *param_ptrs[j];
            *param_ptrs[j] = saved + h;
            const double up = elbo_loss(HybridNet(specs, base), batch, idx, kl_scale, noise);
            *param_ptrs[j] = saved - h;
            const double down = elbo_loss(HybridNet(specs, base), batch, idx, kl_scale, noise);
            *param_ptrs[j] = saved;
            const double fd = (up - down) / (2.0 * h);
            const double denom = std::max(std::abs(fd), 1e-7);  // absolute floor near zero
            const double rel = std::abs(*grad_ptrs[j] - fd) / denom;
            result.max_residual = std::max(result.max_residual, rel);
            if (rel > tolerance)
                result.failures.push_back("net " + std::to_string(net_i) + " entry " +
                                          std::to_string(j));
        }
    }
    result.pass = result.failures.empty();
    return result;
}

SuiteResult dirac_suite(int n_instances, std::uint64_t seed) {
    SuiteResult result;
    std::mt19937_64 eng(derive_seed(seed, "oracle-dirac"));
    std::uniform_int_distribution<std::size_t> n_dist(2, 5), d_dist(1, 4);
    std::uniform_real_distribution<double> mu_dist(-3.0, 3.0), w_dist(0.05, 1.0);
    for (int inst_i = 0; inst_i < n_instances; ++inst_i) {
        const std::size_t n = n_dist(eng), d = d_dist(eng);
        std::vector<std::vector<double>> means(n, std::vector<double>(d));
        std::vector<double> w(n);
        double wt = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            for (double& x : means[k]) x = mu_dist(eng);
            wt += w[k] = w_dist(eng);
        }
        for (double& x : w) x /= wt;
        const WeightVector weights{std::vector<double>(w)};
        const auto reference = fedavg_point(means, weights);

        for (const double eps : {1e-6, 1e-8, 1e-10}) {
            for (const auto method : {AggregationMethod::RKLB, AggregationMethod::WB}) {
                const auto limit = dirac_limit_check(means, weights, eps, method);
                for (std::size_t i = 0; i < d; ++i) {
                    const double dev = std::abs(limit.mean()[i] - reference[i]);
                    result.max_residual = std::max(result.max_residual, dev / eps);
                    if (dev > 10.0 * eps)
                        result.failures.push_back("instance " + std::to_string(inst_i) +
                                                  " eps=" + std::to_string(eps));
                }
            }
        }
    }
    result.pass = result.failures.empty();
    return result;
}

SuiteResult reparam_suite(int n_instances, std::uint64_t seed, double tolerance) {
    SuiteResult result;
    std::mt19937_64 eng(derive_seed(seed, "oracle-reparam"));
    for (int inst_i = 0; inst_i < n_instances; ++inst_i) {
        const auto inst = random_instance(eng);
        const WeightVector weights{std::vector<double>(inst.weights)};
        for (const auto map : {ReparamMap::RKL, ReparamMap::W2}) {
            const bool rkl = map == ReparamMap::RKL;
            const DiagGaussian closed = rkl ? rkl_barycenter(inst.posteriors, weights)
                                            : w2_barycenter(inst.posteriors, weights);
            for (std::size_t i = 0; i < closed.dim(); ++i) {
                CompensatedSum a, b;
                for (std::size_t k = 0; k < inst.posteriors.size(); ++k) {
                    const auto [fa, fb] = reparam_forward(inst.posteriors[k].mean()[i],
                                                          inst.posteriors[k].variance()[i], map);
                    a.add(inst.weights[k] * fa);
                    b.add(inst.weights[k] * fb);
                }
                const auto [m, v] = reparam_inverse(a.value(), b.value(), map);
                const double rel_m =
                    std::abs(m - closed.mean()[i]) / std::max(1e-300, std::abs(closed.mean()[i]));
                const double rel_v = std::abs(v - closed.variance()[i]) / closed.variance()[i];
                result.max_residual = std::max({result.max_residual, rel_m, rel_v});
                if (rel_m > tolerance || rel_v > tolerance)
                    result.failures.push_back("instance " + std::to_string(inst_i));
            }
        }
    }
    result.pass = result.failures.empty();
    return result;
}

SuiteResult divergence_mc_suite(int n_pairs, std::size_t n_samples, std::uint64_t seed) {
    SuiteResult result;
    std::mt19937_64 eng(derive_seed(seed, "oracle-divergence"));
    std::uniform_int_distribution<std::size_t> d_dist(1, 3);
    std::uniform_real_distribution<double> mu_dist(-2.0, 2.0), var_dist(0.2, 3.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int pair_i = 0; pair_i < n_pairs; ++pair_i) {
        const std::size_t d = d_dist(eng);
        std::vector<double> mp(d), vp(d), mq(d), vq(d);
        for (std::size_t i = 0; i < d; ++i) {
            mp[i] = mu_dist(eng);
            vp[i] = var_dist(eng);
            mq[i] = mu_dist(eng);
            vq[i] = var_dist(eng);
        }
        const DiagGaussian p(mp, vp), q(mq, vq);
        const double kl_closed = kl_divergence(p, q);
        const double w2_closed = w2_squared(p, q);

        // Common standard-normal draws drive both estimators; the W2 one is
        // the comonotone (optimal 1-D) coupling.
        double kl_sum = 0.0, kl_sq = 0.0, w2_sum = 0.0, w2_sq = 0.0;
        std::vector<double> z(d), x(d);
        for (std::size_t s = 0; s < n_samples; ++s) {
            for (double& v : z) v = normal(eng);
            const auto xs = sample(p, z);
            const double val = log_density(p, xs) - log_density(q, xs);
            kl_sum += val;
            kl_sq += val * val;
            double cost = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
                const double diff =
                    (mp[i] - mq[i]) + (std::sqrt(vp[i]) - std::sqrt(vq[i])) * z[i];
                cost += diff * diff;
            }
            w2_sum += cost;
            w2_sq += cost * cost;
        }
        const double n = static_cast<double>(n_samples);
        auto check = [&](double closed, double sum, double sq, const char* tag) {
            const double mean = sum / n;
            const double se = std::sqrt(std::max(0.0, sq / n - mean * mean) / n);
            const double sigmas = std::abs(closed - mean) / std::max(se, 1e-15);
            result.max_residual = std::max(result.max_residual, sigmas);
            if (sigmas > 3.0)
                result.failures.push_back(std::string(tag) + " pair " + std::to_string(pair_i));
        };
        check(kl_closed, kl_sum, kl_sq, "kl");
        check(w2_closed, w2_sum, w2_sq, "w2");
    }
    result.pass = result.failures.empty();
    return result;
}

}  // namespace fedbary::oracles
