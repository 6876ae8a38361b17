#include "fedbary/net.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "fedbary/common.hpp"

namespace fedbary {

void TrainConfig::validate() const {
    if (learning_rate <= 0.0 || batch_size == 0 || kl_scale < 0.0 || mc_samples_train == 0)
        throw std::invalid_argument("TrainConfig: fields must be positive");
}

HybridNet::HybridNet(std::vector<LayerSpec> specs, PosteriorParams params)
    : specs_(std::move(specs)), params_(std::move(params)) {
    validate_layer_specs(specs_);
    validate_params_against_specs(params_, specs_);
}

HybridNet HybridNet::initialize(const std::vector<LayerSpec>& specs, std::uint64_t seed) {
    validate_layer_specs(specs);
    std::mt19937_64 eng(derive_seed(seed, "init"));
    const double init_rho = softplus_inv(0.05);
    PosteriorParams params;
    for (const LayerSpec& s : specs) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(s.inputs));
        std::uniform_real_distribution<double> unif(-bound, bound);
        const std::size_t nw = s.inputs * s.outputs;
        if (s.kind == LayerKind::Bayesian) {
            GaussianLayer g;
            g.inputs = s.inputs;
            g.outputs = s.outputs;
            g.weight_means.resize(nw);
            for (double& x : g.weight_means) x = unif(eng);
            g.bias_means.resize(s.outputs);
            for (double& x : g.bias_means) x = unif(eng);
            g.weight_rhos.assign(nw, init_rho);
            g.bias_rhos.assign(s.outputs, init_rho);
            params.layers.emplace_back(std::move(g));
        } else {
            PointMassLayer p;
            p.inputs = s.inputs;
            p.outputs = s.outputs;
            p.weights.resize(nw);
            for (double& x : p.weights) x = unif(eng);
            p.biases.resize(s.outputs);
            for (double& x : p.biases) x = unif(eng);
            params.layers.emplace_back(std::move(p));
        }
    }
    return HybridNet(specs, std::move(params));
}

void HybridNet::set_params(PosteriorParams params) {
    validate_params_against_specs(params, specs_);
    params_ = std::move(params);
}

namespace {

struct RealizedLayer {
    const std::vector<double>* weights;
    const std::vector<double>* biases;
    std::vector<double> storage_w, storage_b;  // backing store for Bayesian layers
};

/// Realizes W = mu + softplus(rho) * eps for Bayesian layers; deterministic
/// layers are referenced in place.
std::vector<RealizedLayer> realize(const HybridNet& net, std::span<const double> noise) {
    if (noise.size() != net.bayesian_parameter_count())
        throw std::invalid_argument("forward: noise size must equal Bayesian parameter count");
    std::vector<RealizedLayer> out(net.params().layers.size());
    std::size_t pos = 0;
    for (std::size_t l = 0; l < out.size(); ++l) {
        const auto& lp = net.params().layers[l];
        if (const auto* g = std::get_if<GaussianLayer>(&lp)) {
            auto& r = out[l];
            r.storage_w.resize(g->weight_means.size());
            for (std::size_t i = 0; i < r.storage_w.size(); ++i)
                r.storage_w[i] = g->weight_means[i] + softplus(g->weight_rhos[i]) * noise[pos++];
            r.storage_b.resize(g->bias_means.size());
            for (std::size_t i = 0; i < r.storage_b.size(); ++i)
                r.storage_b[i] = g->bias_means[i] + softplus(g->bias_rhos[i]) * noise[pos++];
            r.weights = &r.storage_w;
            r.biases = &r.storage_b;
        } else {
            const auto& p = std::get<PointMassLayer>(lp);
            out[l].weights = &p.weights;
            out[l].biases = &p.biases;
        }
    }
    return out;
}

void softmax_inplace(std::vector<double>& z) {
    const double m = *std::max_element(z.begin(), z.end());
    double total = 0.0;
    for (double& x : z) {
        x = std::exp(x - m);
        total += x;
    }
    for (double& x : z) x /= total;
}

/// Full forward pass keeping post-activation values of every layer
/// (activations[0] is the input) for reverse mode.
std::vector<std::vector<double>> forward_one(const HybridNet& net,
                                             const std::vector<RealizedLayer>& layers,
                                             const std::vector<double>& input) {
    std::vector<std::vector<double>> activations;
    activations.reserve(layers.size() + 1);
    activations.push_back(input);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const LayerSpec& s = net.specs()[l];
        const auto& w = *layers[l].weights;
        const auto& b = *layers[l].biases;
        const auto& h = activations.back();
        std::vector<double> z(s.outputs);
        for (std::size_t o = 0; o < s.outputs; ++o) {
            double acc = b[o];
            const double* row = w.data() + o * s.inputs;
            for (std::size_t i = 0; i < s.inputs; ++i) acc += row[i] * h[i];
            z[o] = acc;
        }
        if (s.activation == Activation::Relu)
            for (double& x : z) x = std::max(0.0, x);
        else if (s.activation == Activation::SoftmaxOutput)
            softmax_inplace(z);
        activations.push_back(std::move(z));
    }
    return activations;
}

void check_batch(const HybridNet& net, const LabeledDataset& data,
                 std::span<const std::size_t> indices) {
    if (indices.empty())
        throw std::invalid_argument("elbo: empty batch");
    for (std::size_t i : indices) {
        if (i >= data.size())
            throw std::out_of_range("elbo: batch index out of range");
        if (data.labels[i] < 0 ||
            static_cast<std::size_t>(data.labels[i]) >= net.output_dim())
            throw std::invalid_argument("elbo: label out of range");
    }
}

std::vector<double> draw_noise(std::size_t n, std::mt19937_64& eng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> out(n);
    for (double& x : out) x = normal(eng);
    return out;
}

}  // namespace

std::vector<std::vector<double>> forward(const HybridNet& net,
                                         const std::vector<std::vector<double>>& inputs,
                                         std::span<const double> noise) {
    const auto layers = realize(net, noise);
    std::vector<std::vector<double>> out;
    out.reserve(inputs.size());
    for (const auto& x : inputs) {
        if (x.size() != net.input_dim())
            throw std::invalid_argument("forward: input width mismatch");
        for (double v : x)
            if (!std::isfinite(v))
                throw std::invalid_argument("forward: non-finite input");
        out.push_back(forward_one(net, layers, x).back());
    }
    return out;
}

double kl_to_prior(const HybridNet& net) {
    // KL(N(mu, sigma^2) || N(0,1)) summed per parameter: 0.5(sigma^2 + mu^2 - 1 - ln sigma^2)
    CompensatedSum acc;
    auto add_terms = [&](const std::vector<double>& mus, const std::vector<double>& rhos) {
        for (std::size_t i = 0; i < mus.size(); ++i) {
            const double s = softplus(rhos[i]);
            acc.add(0.5 * (s * s + mus[i] * mus[i] - 1.0) - std::log(s));
        }
    };
    for (const auto& lp : net.params().layers)
        if (const auto* g = std::get_if<GaussianLayer>(&lp)) {
            add_terms(g->weight_means, g->weight_rhos);
            add_terms(g->bias_means, g->bias_rhos);
        }
    return acc.value();
}

double elbo_loss(const HybridNet& net, const LabeledDataset& data,
                 std::span<const std::size_t> indices, double kl_scale,
                 std::span<const double> noise) {
    check_batch(net, data, indices);
    const auto layers = realize(net, noise);
    CompensatedSum ce;
    for (std::size_t i : indices) {
        const auto probs = forward_one(net, layers, data.features[i]).back();
        ce.add(-std::log(std::max(probs[data.labels[i]], 1e-300)));
    }
    return ce.value() / static_cast<double>(indices.size()) + kl_scale * kl_to_prior(net);
}

PosteriorParams gradients(const HybridNet& net, const LabeledDataset& data,
                          std::span<const std::size_t> indices, double kl_scale,
                          std::span<const double> noise) {
    check_batch(net, data, indices);
    const auto layers = realize(net, noise);
    const std::size_t n_layers = layers.size();

    // Zero-initialized gradient holder with the parameter structure.
    PosteriorParams grads;
    for (const auto& lp : net.params().layers) {
        if (const auto* g = std::get_if<GaussianLayer>(&lp)) {
            GaussianLayer zg;
            zg.inputs = g->inputs;
            zg.outputs = g->outputs;
            zg.weight_means.assign(g->weight_means.size(), 0.0);
            zg.weight_rhos.assign(g->weight_rhos.size(), 0.0);
            zg.bias_means.assign(g->bias_means.size(), 0.0);
            zg.bias_rhos.assign(g->bias_rhos.size(), 0.0);
            grads.layers.emplace_back(std::move(zg));
        } else {
            const auto& p = std::get<PointMassLayer>(lp);
            PointMassLayer zp;
            zp.inputs = p.inputs;
            zp.outputs = p.outputs;
            zp.weights.assign(p.weights.size(), 0.0);
            zp.biases.assign(p.biases.size(), 0.0);
            grads.layers.emplace_back(std::move(zp));
        }
    }

    // Gradients of realized weights, accumulated over the batch.
    std::vector<std::vector<double>> dW(n_layers), dB(n_layers);
    for (std::size_t l = 0; l < n_layers; ++l) {
        dW[l].assign(layers[l].weights->size(), 0.0);
        dB[l].assign(layers[l].biases->size(), 0.0);
    }

    const double inv_batch = 1.0 / static_cast<double>(indices.size());
    for (std::size_t i : indices) {
        const auto activations = forward_one(net, layers, data.features[i]);
        // Softmax + cross-entropy: delta = (p - onehot) / B.
        std::vector<double> delta = activations.back();
        delta[data.labels[i]] -= 1.0;
        for (double& x : delta) x *= inv_batch;

        for (std::size_t l = n_layers; l-- > 0;) {
            const LayerSpec& s = net.specs()[l];
            const auto& h = activations[l];
            double* dw = dW[l].data();
            for (std::size_t o = 0; o < s.outputs; ++o) {
                const double d = delta[o];
                dB[l][o] += d;
                double* row = dw + o * s.inputs;
                for (std::size_t j = 0; j < s.inputs; ++j) row[j] += d * h[j];
            }
            if (l == 0) break;
            std::vector<double> prev(s.inputs, 0.0);
            const auto& w = *layers[l].weights;
            for (std::size_t o = 0; o < s.outputs; ++o) {
                const double d = delta[o];
                const double* row = w.data() + o * s.inputs;
                for (std::size_t j = 0; j < s.inputs; ++j) prev[j] += d * row[j];
            }
            // ReLU gate on the previous layer's post-activation.
            if (net.specs()[l - 1].activation == Activation::Relu)
                for (std::size_t j = 0; j < s.inputs; ++j)
                    if (activations[l][j] <= 0.0) prev[j] = 0.0;
            delta = std::move(prev);
        }
    }

    // Route realized-weight gradients into the parameter space and add the
    // closed-form KL gradients.
    std::size_t pos = 0;
    for (std::size_t l = 0; l < n_layers; ++l) {
        if (auto* gg = std::get_if<GaussianLayer>(&grads.layers[l])) {
            const auto& g = std::get<GaussianLayer>(net.params().layers[l]);
            // Likelihood gradient reaches sigma through the reparameterized
            // draw (factor noise); the KL sigma-gradient is sigma - 1/sigma.
            // Both chain through softplus via sigmoid(rho).
            for (std::size_t i = 0; i < g.weight_means.size(); ++i) {
                const double s = softplus(g.weight_rhos[i]);
                gg->weight_means[i] = dW[l][i] + kl_scale * g.weight_means[i];
                gg->weight_rhos[i] =
                    (dW[l][i] * noise[pos] + kl_scale * (s - 1.0 / s)) * sigmoid(g.weight_rhos[i]);
                pos++;
            }
            for (std::size_t i = 0; i < g.bias_means.size(); ++i) {
                const double s = softplus(g.bias_rhos[i]);
                gg->bias_means[i] = dB[l][i] + kl_scale * g.bias_means[i];
                gg->bias_rhos[i] =
                    (dB[l][i] * noise[pos] + kl_scale * (s - 1.0 / s)) * sigmoid(g.bias_rhos[i]);
                pos++;
            }
        } else {
            auto& gp = std::get<PointMassLayer>(grads.layers[l]);
            gp.weights = dW[l];
            gp.biases = dB[l];
        }
    }
    return grads;
}

std::optional<PosteriorParams> local_train(HybridNet& net, const LabeledDataset& shard,
                                           const TrainConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    if (shard.size() == 0)
        return std::nullopt;
    if (cfg.epochs == 0)
        return net.params();

    std::mt19937_64 eng(derive_seed(seed, "train"));
    const std::size_t n_noise = net.bayesian_parameter_count();
    std::vector<std::size_t> order(shard.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), eng);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::span<const std::size_t> batch(order.data() + start, end - start);

            PosteriorParams step;
            for (std::size_t s = 0; s < cfg.mc_samples_train; ++s) {
                // Frozen variances model the point-mass limit: the forward
                // pass runs at the means and the noise stream is not consumed,
                // so the trajectory matches a deterministic net's exactly.
                const auto noise = cfg.freeze_variances ? std::vector<double>(n_noise, 0.0)
                                                        : draw_noise(n_noise, eng);
                PosteriorParams g = gradients(net, shard, batch, cfg.kl_scale, noise);
                if (s == 0) {
                    step = std::move(g);
                } else {
                    for (std::size_t l = 0; l < step.layers.size(); ++l) {
                        if (auto* sg = std::get_if<GaussianLayer>(&step.layers[l])) {
                            const auto& ag = std::get<GaussianLayer>(g.layers[l]);
                            for (std::size_t i = 0; i < sg->weight_means.size(); ++i) {
                                sg->weight_means[i] += ag.weight_means[i];
                                sg->weight_rhos[i] += ag.weight_rhos[i];
                            }
                            for (std::size_t i = 0; i < sg->bias_means.size(); ++i) {
                                sg->bias_means[i] += ag.bias_means[i];
                                sg->bias_rhos[i] += ag.bias_rhos[i];
                            }
                        } else {
                            auto& sp = std::get<PointMassLayer>(step.layers[l]);
                            const auto& ap = std::get<PointMassLayer>(g.layers[l]);
                            for (std::size_t i = 0; i < sp.weights.size(); ++i)
                                sp.weights[i] += ap.weights[i];
                            for (std::size_t i = 0; i < sp.biases.size(); ++i)
                                sp.biases[i] += ap.biases[i];
                        }
                    }
                }
            }
            const double scale = cfg.learning_rate / static_cast<double>(cfg.mc_samples_train);

            PosteriorParams updated = net.params();
            for (std::size_t l = 0; l < updated.layers.size(); ++l) {
                if (auto* ug = std::get_if<GaussianLayer>(&updated.layers[l])) {
                    const auto& sg = std::get<GaussianLayer>(step.layers[l]);
                    for (std::size_t i = 0; i < ug->weight_means.size(); ++i)
                        ug->weight_means[i] -= scale * sg.weight_means[i];
                    for (std::size_t i = 0; i < ug->bias_means.size(); ++i)
                        ug->bias_means[i] -= scale * sg.bias_means[i];
                    if (!cfg.freeze_variances) {
                        for (std::size_t i = 0; i < ug->weight_rhos.size(); ++i)
                            ug->weight_rhos[i] -= scale * sg.weight_rhos[i];
                        for (std::size_t i = 0; i < ug->bias_rhos.size(); ++i)
                            ug->bias_rhos[i] -= scale * sg.bias_rhos[i];
                    }
                } else {
                    auto& up = std::get<PointMassLayer>(updated.layers[l]);
                    const auto& sp = std::get<PointMassLayer>(step.layers[l]);
                    for (std::size_t i = 0; i < up.weights.size(); ++i)
                        up.weights[i] -= scale * sp.weights[i];
                    for (std::size_t i = 0; i < up.biases.size(); ++i)
                        up.biases[i] -= scale * sp.biases[i];
                }
            }
            net.set_params(std::move(updated));
        }
    }
    return net.params();
}

std::vector<double> predictive(const HybridNet& net, std::span<const double> input,
                               std::size_t mc_samples, std::uint64_t seed) {
    if (mc_samples == 0)
        throw std::invalid_argument("predictive: need at least one sample");
    std::mt19937_64 eng(derive_seed(seed, "predictive"));
    const std::vector<std::vector<double>> batch{std::vector<double>(input.begin(), input.end())};
    std::vector<double> avg(net.output_dim(), 0.0);
    for (std::size_t s = 0; s < mc_samples; ++s) {
        const auto noise = draw_noise(net.bayesian_parameter_count(), eng);
        const auto probs = forward(net, batch, noise);
        for (std::size_t c = 0; c < avg.size(); ++c) avg[c] += probs[0][c];
    }
    for (double& x : avg) x /= static_cast<double>(mc_samples);
    return avg;
}

std::vector<LayerSpec> make_mlp_specs(std::size_t input_dim,
                                      const std::vector<std::size_t>& hidden_widths,
                                      std::size_t n_classes, std::size_t n_bayesian) {
    const std::size_t n_layers = hidden_widths.size() + 1;
    if (n_bayesian > n_layers)
        throw std::invalid_argument("make_mlp_specs: more Bayesian layers than layers");
    std::vector<LayerSpec> specs;
    std::size_t in = input_dim;
    for (std::size_t l = 0; l < n_layers; ++l) {
        LayerSpec s;
        s.inputs = in;
        s.outputs = l + 1 == n_layers ? n_classes : hidden_widths[l];
        s.activation = l + 1 == n_layers ? Activation::SoftmaxOutput : Activation::Relu;
        s.kind = (n_layers - l) <= n_bayesian ? LayerKind::Bayesian : LayerKind::Deterministic;
        specs.push_back(s);
        in = s.outputs;
    }
    validate_layer_specs(specs);
    return specs;
}

}  // namespace fedbary
