#include "fedbary/federation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <thread>

#include "fedbary/common.hpp"

namespace fedbary {

WeightVector compute_weights(std::span<const ClientState> clients) {
    if (clients.empty())
        throw std::invalid_argument("compute_weights: no clients");
    std::size_t total = 0;
    for (const auto& c : clients) total += c.sample_count();
    if (total == 0)
        throw std::invalid_argument("compute_weights: all clients are empty");
    std::vector<double> w(clients.size());
    for (std::size_t k = 0; k < clients.size(); ++k)
        w[k] = static_cast<double>(clients[k].sample_count()) / static_cast<double>(total);
    return WeightVector(std::move(w));
}

namespace {

std::vector<std::size_t> sample_clients(std::size_t n_clients, double fraction,
                                        std::uint64_t seed, int round) {
    if (!(fraction > 0.0) || fraction > 1.0)
        throw std::invalid_argument("run_round: participation fraction must be in (0, 1]");
    const std::size_t n_sel = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n_clients))));
    std::vector<std::size_t> all(n_clients);
    std::iota(all.begin(), all.end(), 0);
    std::mt19937_64 eng(derive_seed(seed, "sample", static_cast<std::uint64_t>(round)));
    std::vector<std::size_t> chosen;
    std::sample(all.begin(), all.end(), std::back_inserter(chosen), n_sel, eng);
    return chosen;  // std::sample keeps ascending order
}

}  // namespace

RoundRecord run_round(ServerState& server, std::vector<ClientState>& clients,
                      const std::vector<LayerSpec>& specs, const LabeledDataset& test,
                      const FederationConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    const int round = server.round_index + 1;
    for (const auto& c : clients)
        if (!c.params.same_structure(server.global_params))
            throw std::invalid_argument("run_round: client/global structure mismatch");

    const auto selected = sample_clients(clients.size(), cfg.participation_fraction,
                                         cfg.seed, round);

    // Broadcast and train. Each sampled client owns its net; training order
    // does not matter because every client seed is fixed up front.
    std::vector<PosteriorParams> trained(selected.size());
    auto train_one = [&](std::size_t j) {
        ClientState& client = clients[selected[j]];
        HybridNet net(specs, server.global_params);
        TrainConfig tc = cfg.train;
        if (cfg.kl_scale > 0.0)
            tc.kl_scale = cfg.kl_scale;
        else
            tc.kl_scale = static_cast<double>(tc.batch_size) /
                          static_cast<double>(std::max<std::size_t>(1, client.shard.size()));
        const std::uint64_t client_seed =
            derive_seed(cfg.seed, "client-train",
                        (static_cast<std::uint64_t>(round) << 32) |
                            static_cast<std::uint64_t>(client.id));
        auto result = local_train(net, client.shard, tc, client_seed);
        if (!result)
            throw std::invalid_argument("run_round: sampled client has an empty shard");
        trained[j] = std::move(*result);
        client.params = trained[j];
    };
    const int threads = std::max(1, cfg.threads);
    if (threads == 1 || selected.size() <= 1) {
        for (std::size_t j = 0; j < selected.size(); ++j) train_one(j);
    } else {
        std::vector<std::thread> pool;
        std::size_t per = (selected.size() + threads - 1) / threads;
        for (int t = 0; t < threads; ++t) {
            const std::size_t lo = t * per;
            const std::size_t hi = std::min(selected.size(), lo + per);
            if (lo >= hi) break;
            pool.emplace_back([&, lo, hi] {
                for (std::size_t j = lo; j < hi; ++j) train_one(j);
            });
        }
        for (auto& th : pool) th.join();
    }

    // Full-population weights renormalized over the sampled subset.
    std::size_t total = 0;
    for (std::size_t j : selected) total += clients[j].sample_count();
    std::vector<double> w(selected.size());
    for (std::size_t j = 0; j < selected.size(); ++j)
        w[j] = static_cast<double>(clients[selected[j]].sample_count()) /
               static_cast<double>(total);
    const WeightVector weights(std::move(w));

    server.global_params = cfg.reparam_route
                               ? aggregate_reparam(cfg.method, trained, weights)
                               : aggregate(cfg.method, trained, weights);
    server.round_index = round;

    RoundRecord record;
    record.round_index = round;
    for (std::size_t j : selected) record.participants.push_back(clients[j].id);

    HybridNet global_net(specs, server.global_params);
    record.eval = evaluate(global_net, test, cfg.eval_samples, cfg.ece_bins,
                           derive_seed(cfg.seed, "round-eval", static_cast<std::uint64_t>(round)));
    record.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return record;
}

std::vector<RoundRecord> run(ServerState& server, std::vector<ClientState>& clients,
                             const std::vector<LayerSpec>& specs, const LabeledDataset& test,
                             const FederationConfig& cfg) {
    if (cfg.rounds < 0)
        throw std::invalid_argument("run: negative round count");
    validate_layer_specs(specs);
    std::vector<RoundRecord> records;
    records.reserve(cfg.rounds);
    for (int r = 0; r < cfg.rounds; ++r) {
        records.push_back(run_round(server, clients, specs, test, cfg));
        if (cfg.checkpoint_every > 0 && (r + 1) % cfg.checkpoint_every == 0)
            save_checkpoint(server.global_params,
                            cfg.checkpoint_dir /
                                ("round_" + std::to_string(r + 1) + ".ckpt"));
    }
    return records;
}

}  // namespace fedbary
