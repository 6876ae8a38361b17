#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "fedbary/data.hpp"
#include "fedbary/net.hpp"

namespace fedbary {

struct EvalReport {
    double accuracy = 0.0;  // in [0,1]
    double nll = 0.0;       // nats per example, on the MC-averaged predictive
    double ece = 0.0;       // in [0,1]
    std::size_t n_bins = 0;
    std::size_t mc_samples = 0;
};

struct BinStat {
    std::size_t count = 0;
    double confidence_sum = 0.0;
    double accuracy_sum = 0.0;
};

/// Scores a set of predictive probability vectors against labels. Argmax ties
/// break toward the lowest class index; NLL probabilities are floored at
/// 1e-12; ECE uses equal-width confidence bins on the max probability, empty
/// bins contributing 0.
EvalReport evaluate_predictions(const std::vector<std::vector<double>>& probs,
                                const std::vector<int>& labels, std::size_t n_bins,
                                std::vector<BinStat>* bins = nullptr);

/// Full model evaluation via Bayesian model averaging with mc_samples draws
/// per example. Deterministic given the seed.
EvalReport evaluate(const HybridNet& net, const LabeledDataset& test, std::size_t mc_samples,
                    std::size_t n_bins, std::uint64_t seed,
                    std::vector<BinStat>* bins = nullptr);

/// Writes per-bin calibration statistics as CSV (bin, count, mean confidence,
/// accuracy).
void write_bin_stats_csv(const std::vector<BinStat>& bins, const std::filesystem::path& path);

}  // namespace fedbary
