// Experiment driver: partition / run / evaluate / oracle subcommands around
// the fedbary library. All randomness flows from one master seed through
// named sub-streams; outputs embed the resolved-config hash.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "fedbary/common.hpp"
#include "fedbary/federation.hpp"
#include "fedbary/oracles.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fedbary;

namespace {

std::string fmt9(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", x);
    return buf;
}

std::string fnv1a_hex(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

struct ExperimentConfig {
    json dataset;
    std::size_t n_clients = 10;
    double alpha = 0.5;
    std::vector<std::size_t> hidden_widths{16};
    std::size_t n_bayesian = 1;
    AggregationMethod method = AggregationMethod::RKLB;
    int rounds = 20;
    double fraction = 1.0;
    TrainConfig train;
    double kl_scale = 0.0;  // <= 0: batch_size / |shard|
    std::size_t eval_samples = 16;
    std::size_t ece_bins = 15;
    std::uint64_t seed = 42;
    fs::path output_dir = "out";
    int threads = 1;
    bool reparam_route = false;
    int checkpoint_every = 0;

    json resolved() const {
        json j;
        j["dataset"] = dataset;
        j["n_clients"] = n_clients;
        j["alpha"] = alpha;
        j["model"] = {{"hidden_widths", hidden_widths}, {"n_bayesian_layers", n_bayesian}};
        j["method"] = to_string(method);
        j["rounds"] = rounds;
        j["fraction"] = fraction;
        j["train"] = {{"epochs", train.epochs},
                      {"learning_rate", train.learning_rate},
                      {"batch_size", train.batch_size},
                      {"kl_scale", kl_scale},
                      {"mc_samples", train.mc_samples_train},
                      {"freeze_variances", train.freeze_variances}};
        j["eval"] = {{"mc_samples", eval_samples}, {"ece_bins", ece_bins}};
        j["seed"] = seed;
        j["output_dir"] = output_dir.string();
        j["threads"] = threads;
        j["reparam_route"] = reparam_route;
        j["checkpoint_every"] = checkpoint_every;
        return j;
    }
    // Hash of the result-determining config: output location and worker count
    // cannot change the numbers, so they are excluded.
    std::string hash() const {
        json j = resolved();
        j.erase("output_dir");
        j.erase("threads");
        return fnv1a_hex(j.dump());
    }
};

ExperimentConfig load_config(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw std::invalid_argument("config: cannot open " + path.string());
    json j = json::parse(is);
    ExperimentConfig cfg;
    cfg.dataset = j.at("dataset");
    cfg.n_clients = j.value("n_clients", cfg.n_clients);
    cfg.alpha = j.value("alpha", cfg.alpha);
    if (j.contains("model")) {
        cfg.hidden_widths =
            j["model"].value("hidden_widths", cfg.hidden_widths);
        cfg.n_bayesian = j["model"].value("n_bayesian_layers", cfg.n_bayesian);
    }
    cfg.method = parse_aggregation_method(j.value("method", "rklb"));
    cfg.rounds = j.value("rounds", cfg.rounds);
    cfg.fraction = j.value("fraction", cfg.fraction);
    if (j.contains("train")) {
        const json& t = j["train"];
        cfg.train.epochs = t.value("epochs", cfg.train.epochs);
        cfg.train.learning_rate = t.value("learning_rate", cfg.train.learning_rate);
        cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
        cfg.kl_scale = t.value("kl_scale", cfg.kl_scale);
        cfg.train.mc_samples_train = t.value("mc_samples", cfg.train.mc_samples_train);
        cfg.train.freeze_variances = t.value("freeze_variances", cfg.train.freeze_variances);
    }
    if (j.contains("eval")) {
        cfg.eval_samples = j["eval"].value("mc_samples", cfg.eval_samples);
        cfg.ece_bins = j["eval"].value("ece_bins", cfg.ece_bins);
    }
    cfg.seed = j.value("seed", cfg.seed);
    cfg.output_dir = fs::path(j.value("output_dir", cfg.output_dir.string()));
    cfg.threads = j.value("threads", cfg.threads);
    cfg.reparam_route = j.value("reparam_route", cfg.reparam_route);
    cfg.checkpoint_every = j.value("checkpoint_every", cfg.checkpoint_every);
    return cfg;
}

void validate_config(const ExperimentConfig& cfg) {
    const std::size_t n_layers = cfg.hidden_widths.size() + 1;
    if (cfg.n_bayesian > n_layers)
        throw std::invalid_argument("config: n_bayesian_layers exceeds layer count");
    if (cfg.method == AggregationMethod::FedAvg && cfg.n_bayesian != 0)
        throw std::invalid_argument("config: fedavg requires n_bayesian_layers = 0");
    if (cfg.dataset.value("type", "") == "idx") {
        for (const char* key :
             {"train_images", "train_labels", "test_images", "test_labels"})
            if (!fs::exists(cfg.dataset.at(key).get<std::string>()))
                throw std::invalid_argument("config: missing dataset file " +
                                            cfg.dataset.at(key).get<std::string>());
    }
}

struct SplitData {
    LabeledDataset train, test;
};

SplitData load_data(const ExperimentConfig& cfg) {
    const std::string type = cfg.dataset.value("type", "synthetic");
    if (type == "idx") {
        SplitData d;
        d.train = load_idx(cfg.dataset.at("train_images").get<std::string>(),
                           cfg.dataset.at("train_labels").get<std::string>());
        d.test = load_idx(cfg.dataset.at("test_images").get<std::string>(),
                          cfg.dataset.at("test_labels").get<std::string>());
        return d;
    }
    if (type != "synthetic")
        throw std::invalid_argument("config: unknown dataset type " + type);
    const int classes = cfg.dataset.value("classes", 3);
    const int train_pc = cfg.dataset.value("train_per_class", 200);
    const int test_pc = cfg.dataset.value("test_per_class", 100);
    const int dim = cfg.dataset.value("dim", 2);
    const double spread = cfg.dataset.value("spread", 0.25);
    const LabeledDataset all =
        synth_blobs(classes, train_pc + test_pc, dim, spread, derive_seed(cfg.seed, "data"));
    // Stratified split: the first train_per_class samples of each class go to
    // the training set (the generator already shuffles sample order).
    std::vector<int> taken(classes, 0);
    std::vector<std::size_t> train_idx, test_idx;
    for (std::size_t i = 0; i < all.size(); ++i) {
        if (taken[all.labels[i]]++ < train_pc)
            train_idx.push_back(i);
        else
            test_idx.push_back(i);
    }
    return SplitData{subset(all, train_idx), subset(all, test_idx)};
}

std::vector<ClientState> make_clients(const LabeledDataset& train, const PartitionPlan& plan,
                                      const PosteriorParams& init) {
    std::vector<ClientState> clients;
    for (std::size_t k = 0; k < plan.assignments.size(); ++k)
        clients.push_back({static_cast<int>(k), subset(train, plan.assignments[k]), init});
    return clients;
}

int cmd_partition(const ExperimentConfig& cfg) {
    const SplitData data = load_data(cfg);
    const PartitionPlan plan =
        dirichlet_partition(data.train.labels, cfg.n_clients, cfg.alpha, cfg.seed);
    fs::create_directories(cfg.output_dir);
    const fs::path plan_path = cfg.output_dir / "plan.txt";
    save_plan(plan, plan_path);
    {
        std::ofstream os(plan_path, std::ios::app);
        os << "# config " << cfg.hash() << "\n";
    }

    std::ofstream os(cfg.output_dir / "plan_summary.csv");
    os << "# config " << cfg.hash() << "\n";
    os << "client";
    for (int c = 0; c < data.train.num_classes; ++c) os << ",class" << c;
    os << ",total\n";
    for (std::size_t k = 0; k < plan.assignments.size(); ++k) {
        std::vector<std::size_t> counts(data.train.num_classes, 0);
        for (std::size_t i : plan.assignments[k]) ++counts[data.train.labels[i]];
        os << k;
        for (std::size_t c : counts) os << ',' << c;
        os << ',' << plan.assignments[k].size() << "\n";
    }
    std::cout << "wrote " << plan_path.string() << " ("
              << plan.assignments.size() << " clients)\n";
    return 0;
}

int cmd_run(const ExperimentConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    const SplitData data = load_data(cfg);
    const PartitionPlan plan =
        dirichlet_partition(data.train.labels, cfg.n_clients, cfg.alpha, cfg.seed);

    const auto specs = make_mlp_specs(data.train.feature_dim(), cfg.hidden_widths,
                                      data.train.num_classes, cfg.n_bayesian);
    const HybridNet init = HybridNet::initialize(specs, derive_seed(cfg.seed, "global-init"));

    std::vector<ClientState> clients = make_clients(data.train, plan, init.params());
    ServerState server{init.params(), 0, cfg.method};

    FederationConfig fed;
    fed.rounds = cfg.rounds;
    fed.participation_fraction = cfg.fraction;
    fed.method = cfg.method;
    fed.train = cfg.train;
    fed.kl_scale = cfg.kl_scale;
    fed.eval_samples = cfg.eval_samples;
    fed.ece_bins = cfg.ece_bins;
    fed.seed = cfg.seed;
    fed.reparam_route = cfg.reparam_route;
    fed.threads = cfg.threads;
    fed.checkpoint_every = cfg.checkpoint_every;
    fed.checkpoint_dir = cfg.output_dir;
    fs::create_directories(cfg.output_dir);

    const auto records = run(server, clients, specs, data.test, fed);

    const std::string tag = to_string(cfg.method);
    const fs::path csv_path = cfg.output_dir / ("results_" + tag + ".csv");
    std::ofstream csv(csv_path);
    csv << "# config " << cfg.hash() << "\n";
    csv << "round,method,n_bayes_layers,accuracy,nll,ece,seed\n";
    for (const auto& r : records)
        csv << r.round_index << ',' << tag << ',' << cfg.n_bayesian << ','
            << fmt9(r.eval.accuracy) << ',' << fmt9(r.eval.nll) << ',' << fmt9(r.eval.ece)
            << ',' << cfg.seed << "\n";

    save_checkpoint(server.global_params, cfg.output_dir / ("final_" + tag + ".ckpt"));

    json manifest;
    manifest["config"] = cfg.resolved();
    manifest["config_hash"] = cfg.hash();
    manifest["results_csv"] = csv_path.string();
    json rounds = json::array();
    for (const auto& r : records)
        rounds.push_back({{"round", r.round_index},
                          {"participants", r.participants},
                          {"wall_seconds", r.wall_seconds}});
    manifest["rounds"] = rounds;
    manifest["total_wall_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ofstream mos(cfg.output_dir / ("manifest_" + tag + ".json"));
    mos << manifest.dump(2) << "\n";

    if (!records.empty())
        std::cout << "final accuracy " << fmt9(records.back().eval.accuracy) << ", nll "
                  << fmt9(records.back().eval.nll) << ", ece " << fmt9(records.back().eval.ece)
                  << "\n";
    std::cout << "wrote " << csv_path.string() << "\n";
    return 0;
}

int cmd_evaluate(const ExperimentConfig& cfg, const fs::path& checkpoint) {
    const SplitData data = load_data(cfg);
    const auto specs = make_mlp_specs(data.test.feature_dim(), cfg.hidden_widths,
                                      data.test.num_classes, cfg.n_bayesian);
    HybridNet net(specs, load_checkpoint(checkpoint));
    std::vector<BinStat> bins;
    const EvalReport report = evaluate(net, data.test, cfg.eval_samples, cfg.ece_bins,
                                       derive_seed(cfg.seed, "evaluate"), &bins);
    fs::create_directories(cfg.output_dir);
    write_bin_stats_csv(bins, cfg.output_dir / "calibration_bins.csv");
    std::cout << "accuracy " << fmt9(report.accuracy) << "\nnll " << fmt9(report.nll)
              << "\nece " << fmt9(report.ece) << "\n";
    return 0;
}

int cmd_oracle(const std::string& suite, std::uint64_t seed) {
    oracles::SuiteResult result;
    if (suite == "barycenter")
        result = oracles::barycenter_suite(200, seed);
    else if (suite == "discrete")
        result = oracles::discrete_barycenter_suite(50, seed);
    else if (suite == "gradient")
        result = oracles::gradient_suite(20, seed);
    else if (suite == "dirac")
        result = oracles::dirac_suite(50, seed);
    else if (suite == "reparam")
        result = oracles::reparam_suite(100, seed);
    else if (suite == "divergence")
        result = oracles::divergence_mc_suite(20, 1000000, seed);
    else
        throw std::invalid_argument("oracle: unknown suite " + suite);

    std::cout << suite << " suite: max residual " << fmt9(result.max_residual) << "\n";
    for (const auto& f : result.failures)
        std::cout << "  FAIL " << f << " (seed " << seed << ")\n";
    std::cout << (result.pass ? "PASS" : "FAIL") << "\n";
    return result.pass ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated learning simulator with barycentric Bayesian aggregation"};
    app.require_subcommand(1);

    std::string config_path, checkpoint, suite = "barycenter", method_override, output_override;
    std::int64_t seed_override = -1, rounds_override = -1, threads_override = -1,
                 bayes_override = -1;
    std::uint64_t oracle_seed = 42;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "experiment config (JSON)")->required();
        sub->add_option("--method", method_override, "override aggregation method");
        sub->add_option("--seed", seed_override, "override master seed");
        sub->add_option("--rounds", rounds_override, "override round count");
        sub->add_option("--threads", threads_override, "override worker thread cap");
        sub->add_option("--n-bayesian", bayes_override, "override Bayesian layer count");
        sub->add_option("--output-dir", output_override, "override output directory");
    };

    auto* partition = app.add_subcommand("partition", "write a client partition plan");
    add_common(partition);
    auto* runcmd = app.add_subcommand("run", "run a federated experiment");
    add_common(runcmd);
    auto* evalcmd = app.add_subcommand("evaluate", "re-score a checkpoint on the test split");
    add_common(evalcmd);
    evalcmd->add_option("--checkpoint", checkpoint, "posterior checkpoint file")->required();
    auto* oraclecmd = app.add_subcommand("oracle", "run a verification suite");
    oraclecmd
        ->add_option("suite", suite, "one of: barycenter, discrete, gradient, dirac, reparam, divergence")
        ->required();
    oraclecmd->add_option("--seed", oracle_seed, "suite seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (oraclecmd->parsed()) return cmd_oracle(suite, oracle_seed);

        ExperimentConfig cfg = load_config(config_path);
        if (!method_override.empty()) cfg.method = parse_aggregation_method(method_override);
        if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
        if (rounds_override >= 0) cfg.rounds = static_cast<int>(rounds_override);
        if (threads_override >= 0) cfg.threads = static_cast<int>(threads_override);
        if (bayes_override >= 0) cfg.n_bayesian = static_cast<std::size_t>(bayes_override);
        if (!output_override.empty()) cfg.output_dir = output_override;
        if (const char* env = std::getenv("FEDBARY_OUTPUT_DIR")) cfg.output_dir = env;
        validate_config(cfg);

        if (partition->parsed()) return cmd_partition(cfg);
        if (runcmd->parsed()) return cmd_run(cfg);
        if (evalcmd->parsed()) return cmd_evaluate(cfg, checkpoint);
    } catch (const std::invalid_argument& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
