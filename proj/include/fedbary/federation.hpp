#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fedbary/barycenter.hpp"
#include "fedbary/data.hpp"
#include "fedbary/metrics.hpp"
#include "fedbary/net.hpp"

namespace fedbary {

struct ClientState {
    int id = 0;
    LabeledDataset shard;
    PosteriorParams params;

    std::size_t sample_count() const { return shard.size(); }
};

struct ServerState {
    PosteriorParams global_params;
    int round_index = 0;
    AggregationMethod method = AggregationMethod::RKLB;
};

struct RoundRecord {
    int round_index = 0;
    std::vector<int> participants;  // client ids, ascending
    double wall_seconds = 0.0;
    EvalReport eval;
};

struct FederationConfig {
    int rounds = 1;
    double participation_fraction = 1.0;  // in (0, 1]
    AggregationMethod method = AggregationMethod::RKLB;
    TrainConfig train;
    double kl_scale = 0.0;  // <= 0 selects batch_size / |shard| per client
    std::size_t eval_samples = 16;
    std::size_t ece_bins = 15;
    std::uint64_t seed = 0;
    bool reparam_route = false;  // aggregate via forward-map / mean / inverse-map
    int threads = 1;
    int checkpoint_every = 0;  // 0 disables checkpointing
    std::filesystem::path checkpoint_dir;
};

/// Data-volume weights w_k = |D_k| / |D|.
WeightVector compute_weights(std::span<const ClientState> clients);

/// One communication round: seeded client sampling without replacement,
/// parallel local training from the broadcast global parameters, aggregation
/// over the sampled clients with renormalized weights, then evaluation on the
/// held-out set. Mutates server and the sampled clients' states.
RoundRecord run_round(ServerState& server, std::vector<ClientState>& clients,
                      const std::vector<LayerSpec>& specs, const LabeledDataset& test,
                      const FederationConfig& cfg);

/// Runs cfg.rounds rounds and returns the per-round records in order.
std::vector<RoundRecord> run(ServerState& server, std::vector<ClientState>& clients,
                             const std::vector<LayerSpec>& specs, const LabeledDataset& test,
                             const FederationConfig& cfg);

}  // namespace fedbary
