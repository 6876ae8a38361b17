#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fedbary/data.hpp"
#include "fedbary/gaussian.hpp"
#include "fedbary/layers.hpp"

namespace fedbary {

struct TrainConfig {
    std::size_t epochs = 1;
    double learning_rate = 0.1;
    std::size_t batch_size = 32;
    double kl_scale = 1.0;  // default convention: batch_size / |shard|
    std::size_t mc_samples_train = 1;
    // Point-mass limit: sigma locked (rho gradients zeroed) and training runs
    // at the means with zero reparameterization noise.
    bool freeze_variances = false;

    void validate() const;
};

/// Feed-forward classifier whose Bayesian layers form a suffix. Training
/// mutates the owned parameters; everything else is const.
class HybridNet {
public:
    HybridNet(std::vector<LayerSpec> specs, PosteriorParams params);

    /// Fan-in uniform initialization for deterministic weights and Bayesian
    /// means; rho chosen so that sigma ~= 0.05.
    static HybridNet initialize(const std::vector<LayerSpec>& specs, std::uint64_t seed);

    const std::vector<LayerSpec>& specs() const { return specs_; }
    const PosteriorParams& params() const { return params_; }
    std::size_t input_dim() const { return specs_.front().inputs; }
    std::size_t output_dim() const { return specs_.back().outputs; }
    std::size_t bayesian_parameter_count() const { return params_.bayesian_parameter_count(); }
    PriorSpec prior() const { return PriorSpec{bayesian_parameter_count()}; }

    /// Replaces the parameters; the structure must match.
    void set_params(PosteriorParams params);

private:
    std::vector<LayerSpec> specs_;
    PosteriorParams params_;
};

/// Single reparameterized forward pass: noise holds one standard-normal draw
/// per Bayesian parameter (layer order, weights before biases). Each output
/// row is a probability vector.
std::vector<std::vector<double>> forward(const HybridNet& net,
                                         const std::vector<std::vector<double>>& inputs,
                                         std::span<const double> noise);

/// Closed-form KL(q_psi || N(0, I)) summed over all Bayesian parameters.
double kl_to_prior(const HybridNet& net);

/// Mean cross-entropy over the batch plus kl_scale * KL(q_psi || prior),
/// evaluated at the given noise realization.
double elbo_loss(const HybridNet& net, const LabeledDataset& data,
                 std::span<const std::size_t> indices, double kl_scale,
                 std::span<const double> noise);

/// Exact reverse-mode gradient of elbo_loss at the given noise realization;
/// same structure as the parameters.
PosteriorParams gradients(const HybridNet& net, const LabeledDataset& data,
                          std::span<const std::size_t> indices, double kl_scale,
                          std::span<const double> noise);

/// T epochs of seeded mini-batch gradient descent on the ELBO loss, starting
/// from the net's current parameters. Returns the updated parameters, or
/// nullopt for an empty shard (the client skips the round).
std::optional<PosteriorParams> local_train(HybridNet& net, const LabeledDataset& shard,
                                           const TrainConfig& cfg, std::uint64_t seed);

/// Bayesian model averaging: mean of S reparameterized forward passes.
std::vector<double> predictive(const HybridNet& net, std::span<const double> input,
                               std::size_t mc_samples, std::uint64_t seed);

/// Builds the layer spec chain for a fully connected classifier with the
/// given hidden widths and the last n_bayesian layers Bayesian.
std::vector<LayerSpec> make_mlp_specs(std::size_t input_dim,
                                      const std::vector<std::size_t>& hidden_widths,
                                      std::size_t n_classes, std::size_t n_bayesian);

}  // namespace fedbary
