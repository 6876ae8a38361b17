#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace fedbary {

/// Flattened feature vectors scaled into [0,1] plus integer labels in [0, C).
struct LabeledDataset {
    std::vector<std::vector<double>> features;
    std::vector<int> labels;
    int num_classes = 0;

    std::size_t size() const { return labels.size(); }
    std::size_t feature_dim() const { return features.empty() ? 0 : features.front().size(); }

    /// Throws std::invalid_argument if the invariants do not hold.
    void validate() const;
};

LabeledDataset subset(const LabeledDataset& ds, const std::vector<std::size_t>& indices);

/// Disjoint cover of the training indices across clients.
struct PartitionPlan {
    std::vector<std::vector<std::size_t>> assignments;  // per client, sorted ascending
    double alpha = 0.0;
    std::uint64_t seed = 0;
};

/// Label-skew partition: for each class, client shares are drawn from
/// Dirichlet(alpha * 1_N) and the class indices split by largest-remainder
/// rounding. If a client ends up empty the draw is repeated (up to 100
/// times), then one sample is moved from the largest client.
PartitionPlan dirichlet_partition(const std::vector<int>& labels, std::size_t n_clients,
                                  double alpha, std::uint64_t seed);

/// Reads an IDX image/label file pair (big-endian headers, magic 0x00000803 /
/// 0x00000801); pixels are scaled by 1/255. Throws std::runtime_error with
/// the offending byte offset on malformed input.
LabeledDataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path);

/// Isotropic Gaussian class clusters with seeded centers at pairwise distance
/// >= 4 * spread; features are min-max scaled into [0,1].
LabeledDataset synth_blobs(int n_classes, int n_per_class, int dim, double spread,
                           std::uint64_t seed);

void save_plan(const PartitionPlan& plan, const std::filesystem::path& path);
PartitionPlan load_plan(const std::filesystem::path& path);

}  // namespace fedbary
