#pragma once

#include <cstddef>
#include <filesystem>
#include <variant>
#include <vector>

namespace fedbary {

enum class LayerKind { Deterministic, Bayesian };
enum class Activation { Relu, Identity, SoftmaxOutput };

/// One dense layer of the feed-forward architecture. Weights are stored
/// row-major, shape (outputs x inputs).
struct LayerSpec {
    std::size_t inputs = 0;
    std::size_t outputs = 0;
    LayerKind kind = LayerKind::Deterministic;
    Activation activation = Activation::Relu;
};

/// Validates the width chain, the softmax-on-last-layer-only rule and the
/// Bayesian-suffix rule; throws std::invalid_argument on violation.
void validate_layer_specs(const std::vector<LayerSpec>& specs);

struct PointMassLayer {
    std::size_t inputs = 0, outputs = 0;
    std::vector<double> weights;  // outputs * inputs, row-major
    std::vector<double> biases;   // outputs
};

/// Mean-field Gaussian layer; sigma = softplus(rho) is strictly positive
/// by construction. Converted to variances only at the aggregation boundary.
struct GaussianLayer {
    std::size_t inputs = 0, outputs = 0;
    std::vector<double> weight_means, weight_rhos;  // outputs * inputs each
    std::vector<double> bias_means, bias_rhos;      // outputs each
};

using LayerParams = std::variant<PointMassLayer, GaussianLayer>;

/// Per-layer model posterior: an ordered list of point-mass or Gaussian
/// layers. Doubles as the gradient container (same shape as the parameters).
struct PosteriorParams {
    std::vector<LayerParams> layers;

    std::size_t bayesian_parameter_count() const;
    std::size_t total_parameter_count() const;

    /// Same layer kinds and shapes (values ignored).
    bool same_structure(const PosteriorParams& other) const;
};

/// Checks that params match the spec chain (kinds and shapes); throws on mismatch.
void validate_params_against_specs(const PosteriorParams& params,
                                   const std::vector<LayerSpec>& specs);

// Versioned binary checkpoint: magic + header, then per layer kind, shape
// and flat little-endian float64 arrays. Round-trip is lossless.
void save_checkpoint(const PosteriorParams& params, const std::filesystem::path& path);
PosteriorParams load_checkpoint(const std::filesystem::path& path);

}  // namespace fedbary
