#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "fedbary/common.hpp"
#include "fedbary/net.hpp"
#include "fedbary/oracles.hpp"

using namespace fedbary;
namespace fs = std::filesystem;

namespace {

LabeledDataset tiny_blobs(std::uint64_t seed) { return synth_blobs(2, 20, 2, 0.05, seed); }

bool params_equal(const PosteriorParams& a, const PosteriorParams& b) {
    if (a.layers.size() != b.layers.size()) return false;
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
        if (a.layers[i].index() != b.layers[i].index()) return false;
        if (const auto* pa = std::get_if<PointMassLayer>(&a.layers[i])) {
            const auto& pb = std::get<PointMassLayer>(b.layers[i]);
            if (pa->weights != pb.weights || pa->biases != pb.biases) return false;
        } else {
            const auto& ga = std::get<GaussianLayer>(a.layers[i]);
            const auto& gb = std::get<GaussianLayer>(b.layers[i]);
            if (ga.weight_means != gb.weight_means || ga.weight_rhos != gb.weight_rhos ||
                ga.bias_means != gb.bias_means || ga.bias_rhos != gb.bias_rhos)
                return false;
        }
    }
    return true;
}

std::vector<double> zero_noise(const HybridNet& net) {
    return std::vector<double>(net.bayesian_parameter_count(), 0.0);
}

}  // namespace

TEST_CASE("train config validation") {
    TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.learning_rate = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.learning_rate = 0.1;
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.batch_size = 8;
    cfg.mc_samples_train = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("mlp spec construction") {
    const auto specs = make_mlp_specs(4, {16, 8}, 3, 1);
    REQUIRE(specs.size() == 3);
    CHECK(specs[0].inputs == 4);
    CHECK(specs[0].outputs == 16);
    CHECK(specs[0].kind == LayerKind::Deterministic);
    CHECK(specs[0].activation == Activation::Relu);
    CHECK(specs[2].inputs == 8);
    CHECK(specs[2].outputs == 3);
    CHECK(specs[2].kind == LayerKind::Bayesian);
    CHECK(specs[2].activation == Activation::SoftmaxOutput);

    // all-Bayesian and all-deterministic are both allowed
    CHECK_NOTHROW(validate_layer_specs(make_mlp_specs(4, {16, 8}, 3, 3)));
    CHECK_NOTHROW(validate_layer_specs(make_mlp_specs(4, {16, 8}, 3, 0)));
    CHECK_THROWS_AS(make_mlp_specs(4, {16, 8}, 3, 4), std::invalid_argument);

    // Bayesian layers must be a suffix
    std::vector<LayerSpec> broken = make_mlp_specs(4, {16, 8}, 3, 0);
    broken[0].kind = LayerKind::Bayesian;
    CHECK_THROWS_AS(validate_layer_specs(broken), std::invalid_argument);

    // width chain must connect
    std::vector<LayerSpec> chain = make_mlp_specs(4, {16, 8}, 3, 1);
    chain[1].inputs = 5;
    CHECK_THROWS_AS(validate_layer_specs(chain), std::invalid_argument);
}

TEST_CASE("initialization") {
    const auto specs = make_mlp_specs(3, {8}, 2, 1);
    const auto net = HybridNet::initialize(specs, 5);
    CHECK(net.bayesian_parameter_count() == 8 * 2 + 2);

    const auto& det = std::get<PointMassLayer>(net.params().layers[0]);
    const double bound = 1.0 / std::sqrt(3.0);
    for (double w : det.weights) {
        CHECK(w >= -bound);
        CHECK(w <= bound);
    }
    const auto& bayes = std::get<GaussianLayer>(net.params().layers[1]);
    for (double rho : bayes.weight_rhos)
        CHECK(softplus(rho) == doctest::Approx(0.05).epsilon(1e-12));
    for (double rho : bayes.bias_rhos)
        CHECK(softplus(rho) == doctest::Approx(0.05).epsilon(1e-12));

    // deterministic per seed; different seed differs
    CHECK(params_equal(net.params(), HybridNet::initialize(specs, 5).params()));
    CHECK(!params_equal(net.params(), HybridNet::initialize(specs, 6).params()));
}

TEST_CASE("forward pass produces probability rows") {
    const auto specs = make_mlp_specs(2, {8}, 3, 1);
    auto net = HybridNet::initialize(specs, 13);
    std::mt19937_64 eng(2);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> noise(net.bayesian_parameter_count());
    for (double& z : noise) z = normal(eng);

    const std::vector<std::vector<double>> inputs{{0.1, 0.9}, {0.5, 0.5}, {1.0, 0.0}};
    const auto probs = forward(net, inputs, noise);
    REQUIRE(probs.size() == 3);
    for (const auto& row : probs) {
        REQUIRE(row.size() == 3);
        double sum = 0.0;
        for (double p : row) {
            CHECK(p > 0.0);
            sum += p;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK_THROWS_AS(forward(net, inputs, std::vector<double>{0.0}), std::invalid_argument);

    // zero noise evaluates the network at the Bayesian means
    const auto at_means = forward(net, inputs, zero_noise(net));
    auto shifted = net.params();
    auto& g = std::get<GaussianLayer>(shifted.layers[1]);
    for (double& m : g.weight_means) m += 0.3;
    net.set_params(shifted);
    const auto moved = forward(net, inputs, zero_noise(net));
    CHECK(at_means != moved);
}

TEST_CASE("kl to prior closed form") {
    // single Bayesian parameter at (mu, sigma): 0.5 (sigma^2 + mu^2 - 1) - ln sigma
    std::vector<LayerSpec> specs{{1, 1, LayerKind::Bayesian, Activation::SoftmaxOutput}};
    GaussianLayer layer{1, 1, {0.7}, {softplus_inv(0.4)}, {0.0}, {softplus_inv(1.0)}};
    HybridNet net(specs, PosteriorParams{{layer}});
    const double expect = 0.5 * (0.16 + 0.49 - 1.0) - std::log(0.4);  // bias term is 0
    CHECK(kl_to_prior(net) == doctest::Approx(expect).epsilon(1e-12));

    // standard-normal posterior has zero divergence from the prior
    GaussianLayer at_prior{1, 1, {0.0}, {softplus_inv(1.0)}, {0.0}, {softplus_inv(1.0)}};
    HybridNet net0(specs, PosteriorParams{{at_prior}});
    CHECK(kl_to_prior(net0) == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("elbo loss decomposes into cross-entropy and scaled kl") {
    const auto data = tiny_blobs(3);
    const auto specs = make_mlp_specs(2, {6}, 2, 1);
    auto net = HybridNet::initialize(specs, 17);
    std::vector<std::size_t> idx{0, 1, 2, 3};
    const auto noise = zero_noise(net);

    const double ce_only = elbo_loss(net, data, idx, 0.0, noise);
    const double with_kl = elbo_loss(net, data, idx, 0.25, noise);
    CHECK(with_kl == doctest::Approx(ce_only + 0.25 * kl_to_prior(net)).epsilon(1e-12));

    // manual cross entropy on the same realization
    std::vector<std::vector<double>> inputs;
    for (std::size_t i : idx) inputs.push_back(data.features[i]);
    const auto probs = forward(net, inputs, noise);
    CompensatedSum ce;
    for (std::size_t j = 0; j < idx.size(); ++j)
        ce.add(-std::log(probs[j][data.labels[idx[j]]]));
    CHECK(ce_only == doctest::Approx(ce.value() / idx.size()).epsilon(1e-12));
}

TEST_CASE("analytic gradients match finite differences") {
    const auto result = oracles::gradient_suite(5, 41);
    INFO("max relative error ", result.max_residual);
    CHECK(result.pass);
}

TEST_CASE("local training") {
    const auto data = tiny_blobs(7);
    const auto specs = make_mlp_specs(2, {8}, 2, 1);
    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.learning_rate = 0.2;
    cfg.batch_size = 8;
    cfg.kl_scale = cfg.batch_size / static_cast<double>(data.size());

    SUBCASE("empty shard yields no update") {
        auto net = HybridNet::initialize(specs, 1);
        LabeledDataset empty;
        empty.num_classes = 2;
        CHECK(!local_train(net, empty, cfg, 0).has_value());
    }

    SUBCASE("zero epochs leaves parameters unchanged") {
        auto net = HybridNet::initialize(specs, 1);
        auto zero = cfg;
        zero.epochs = 0;
        const auto out = local_train(net, data, zero, 0);
        REQUIRE(out.has_value());
        CHECK(params_equal(*out, HybridNet::initialize(specs, 1).params()));
    }

    SUBCASE("training lowers the fixed-noise loss") {
        auto net = HybridNet::initialize(specs, 1);
        std::vector<std::size_t> all(data.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        const auto noise = zero_noise(net);
        const double before = elbo_loss(net, data, all, cfg.kl_scale, noise);
        const auto out = local_train(net, data, cfg, 0);
        REQUIRE(out.has_value());
        net.set_params(*out);
        const double after = elbo_loss(net, data, all, cfg.kl_scale, noise);
        CHECK(after < before);
    }

    SUBCASE("deterministic given the seed") {
        auto a = HybridNet::initialize(specs, 1);
        auto b = HybridNet::initialize(specs, 1);
        const auto pa = local_train(a, data, cfg, 123);
        const auto pb = local_train(b, data, cfg, 123);
        REQUIRE((pa.has_value() && pb.has_value()));
        CHECK(params_equal(*pa, *pb));
        auto c = HybridNet::initialize(specs, 1);
        const auto pc = local_train(c, data, cfg, 124);
        CHECK(!params_equal(*pa, *pc));
    }

    SUBCASE("frozen variances keep rho fixed while means move") {
        auto net = HybridNet::initialize(specs, 1);
        auto frozen = cfg;
        frozen.freeze_variances = true;
        const auto out = local_train(net, data, frozen, 9);
        REQUIRE(out.has_value());
        const auto fresh = HybridNet::initialize(specs, 1);
        const auto& before = std::get<GaussianLayer>(fresh.params().layers[1]);
        const auto& after = std::get<GaussianLayer>(out->layers[1]);
        CHECK(after.weight_rhos == before.weight_rhos);
        CHECK(after.bias_rhos == before.bias_rhos);
        CHECK(after.weight_means != before.weight_means);
    }
}

TEST_CASE("predictive averaging") {
    const auto specs = make_mlp_specs(2, {6}, 3, 1);
    const auto net = HybridNet::initialize(specs, 23);
    const std::vector<double> x{0.4, 0.6};

    const auto p = predictive(net, x, 32, 77);
    double sum = 0.0;
    for (double v : p) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p == predictive(net, x, 32, 77));
    CHECK(p != predictive(net, x, 32, 78));

    // a deterministic-only network ignores the seed entirely
    const auto det = HybridNet::initialize(make_mlp_specs(2, {6}, 3, 0), 23);
    CHECK(predictive(det, x, 4, 1) == predictive(det, x, 4, 2));
    const auto single = forward(det, {x}, {});
    CHECK(predictive(det, x, 1, 0) == single[0]);
}

TEST_CASE("checkpoint round trip") {
    const auto specs = make_mlp_specs(3, {5, 4}, 2, 2);
    const auto net = HybridNet::initialize(specs, 31);
    const fs::path path = fs::temp_directory_path() / "fedbary_ckpt_test.bin";
    save_checkpoint(net.params(), path);
    const auto loaded = load_checkpoint(path);
    CHECK(params_equal(loaded, net.params()));
    CHECK_NOTHROW(validate_params_against_specs(loaded, specs));
    fs::remove(path);

    CHECK_THROWS_AS(load_checkpoint(fs::temp_directory_path() / "fedbary_no_such.bin"),
                    std::runtime_error);
}
