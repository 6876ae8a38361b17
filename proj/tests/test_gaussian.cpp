#include <doctest.h>

#include <cmath>
#include <random>

#include "fedbary/common.hpp"
#include "fedbary/gaussian.hpp"
#include "fedbary/oracles.hpp"

using namespace fedbary;

namespace {

DiagGaussian g1(double mu, double var) { return DiagGaussian({mu}, {var}); }

DiagGaussian random_gaussian(std::mt19937_64& eng, std::size_t d) {
    std::uniform_real_distribution<double> mu(-3.0, 3.0), var(0.1, 5.0);
    std::vector<double> m(d), v(d);
    for (std::size_t i = 0; i < d; ++i) {
        m[i] = mu(eng);
        v[i] = var(eng);
    }
    return DiagGaussian(std::move(m), std::move(v));
}

}  // namespace

TEST_CASE("construction validates invariants") {
    CHECK_THROWS_AS(DiagGaussian({0.0}, {1.0, 1.0}), std::invalid_argument);
    CHECK_THROWS_AS(DiagGaussian({}, {}), std::invalid_argument);
    CHECK_THROWS_AS(DiagGaussian({0.0}, {0.0}), std::invalid_argument);
    CHECK_THROWS_AS(DiagGaussian({0.0}, {-1.0}), std::invalid_argument);
    CHECK_THROWS_AS(DiagGaussian({0.0}, {1e-13}), std::invalid_argument);  // floor is a reject
    CHECK_THROWS_AS(DiagGaussian({NAN}, {1.0}), std::invalid_argument);
    CHECK_NOTHROW(DiagGaussian({0.0}, {1e-12}));
}

TEST_CASE("prior is the standard normal") {
    const auto p = PriorSpec{3}.distribution();
    CHECK(p.dim() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(p.mean()[i] == 0.0);
        CHECK(p.variance()[i] == 1.0);
    }
}

TEST_CASE("kl closed form") {
    CHECK(kl_divergence(g1(0.3, 2.0), g1(0.3, 2.0)) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(kl_divergence(g1(0.0, 1.0), g1(1.0, 1.0)) == doctest::Approx(0.5));
    // 0.5 * (3 - ln 4)
    CHECK(kl_divergence(g1(0.0, 4.0), g1(0.0, 1.0)) ==
          doctest::Approx(0.5 * (3.0 - std::log(4.0))));
    CHECK_THROWS_AS(kl_divergence(g1(0, 1), DiagGaussian({0, 0}, {1, 1})),
                    std::invalid_argument);
}

TEST_CASE("kl is nonnegative and asymmetric") {
    std::mt19937_64 eng(7);
    for (int i = 0; i < 50; ++i) {
        const auto p = random_gaussian(eng, 3), q = random_gaussian(eng, 3);
        CHECK(kl_divergence(p, q) >= 0.0);
    }
    const double fwd = kl_divergence(g1(0, 4), g1(0, 1));
    const double rev = kl_divergence(g1(0, 1), g1(0, 4));
    CHECK(std::abs(fwd - rev) > 0.0);
    // zero within 1e-12 iff fields are equal
    const auto p = g1(1.25, 0.7);
    CHECK(kl_divergence(p, p) < 1e-12);
    CHECK(kl_divergence(p, g1(1.25 + 1e-3, 0.7)) > 1e-12);
}

TEST_CASE("w2 closed form, symmetry and triangle inequality") {
    CHECK(w2_squared(g1(0.5, 2.0), g1(0.5, 2.0)) == 0.0);
    CHECK(w2_squared(g1(0, 1), g1(3, 1)) == doctest::Approx(9.0));
    CHECK(w2_squared(g1(0, 1), g1(0, 4)) == doctest::Approx(1.0));
    std::mt19937_64 eng(11);
    for (int i = 0; i < 100; ++i) {
        const auto a = random_gaussian(eng, 2), b = random_gaussian(eng, 2),
                   c = random_gaussian(eng, 2);
        CHECK(w2_squared(a, b) == w2_squared(b, a));
        CHECK(std::sqrt(w2_squared(a, c)) <=
              std::sqrt(w2_squared(a, b)) + std::sqrt(w2_squared(b, c)) + 1e-9);
    }
}

TEST_CASE("reparameterized sampling") {
    const DiagGaussian p({1.0, -2.0}, {4.0, 0.25});
    const std::vector<double> zero{0.0, 0.0};
    CHECK(sample(p, zero) == p.mean());
    const DiagGaussian std2({0.0, 0.0}, {1.0, 1.0});
    const std::vector<double> eps{1.0, -1.0};
    const auto s = sample(std2, eps);
    CHECK(s[0] == 1.0);
    CHECK(s[1] == -1.0);
    CHECK_THROWS_AS(sample(p, std::vector<double>{0.0}), std::invalid_argument);

    // Law of large numbers on N(2, 0.25).
    std::mt19937_64 eng(3);
    std::normal_distribution<double> normal(0.0, 1.0);
    const DiagGaussian q({2.0}, {0.25});
    CompensatedSum acc;
    const int n = 1000000;
    for (int i = 0; i < n; ++i) {
        const double z = normal(eng);
        acc.add(sample(q, std::vector<double>{z})[0]);
    }
    CHECK(std::abs(acc.value() / n - 2.0) < 3.0 * 0.5 / 1000.0);
}

TEST_CASE("log density") {
    const auto std1 = g1(0.0, 1.0);
    CHECK(log_density(std1, std::vector<double>{0.0}) ==
          doctest::Approx(-0.5 * std::log(2.0 * M_PI)));
    // maximized at the mean
    const auto p = g1(1.3, 0.6);
    const double at_mean = log_density(p, std::vector<double>{1.3});
    for (double dx : {-0.5, -0.1, 0.1, 0.5})
        CHECK(log_density(p, std::vector<double>{1.3 + dx}) < at_mean);

    // density integrates to 1 on a fine grid
    const auto q = g1(0.7, 1.7);
    const double h = 1e-3;
    CompensatedSum integral;
    for (double x = 0.7 - 12.0; x <= 0.7 + 12.0; x += h)
        integral.add(std::exp(log_density(q, std::vector<double>{x})) * h);
    CHECK(integral.value() == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("monte-carlo estimates agree with closed forms") {
    const auto result = oracles::divergence_mc_suite(5, 200000, 99);
    CHECK(result.pass);
}
