#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>

#include "lsne/errors.hpp"
#include "lsne/gmm.hpp"
#include "test_util.hpp"

using namespace lsne;
using testutil::TempDir;

namespace {

DiagGmm random_model(std::uint64_t seed, std::size_t dims, std::size_t mixtures) {
    Rng rng(seed);
    DiagGmm model;
    model.dims = dims;
    double total = 0.0;
    for (std::size_t i = 0; i < mixtures; ++i) {
        model.weights.push_back(rng.uniform(0.2, 1.0));
        total += model.weights.back();
        FeatureVector mean(dims), var(dims);
        for (std::size_t j = 0; j < dims; ++j) {
            mean[j] = rng.uniform(-2.0, 2.0);
            var[j] = rng.uniform(0.5, 2.0);
        }
        model.means.push_back(mean);
        model.variances.push_back(var);
    }
    for (double& w : model.weights) w /= total;
    // exact renormalization so validate() holds at 1e-9
    double sum = 0.0;
    for (double w : model.weights) sum += w;
    model.weights.back() += 1.0 - sum;
    return model;
}

std::string file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("fit_em single component recovers the closed-form Gaussian") {
    EmConfig cfg;
    cfg.mixtures = 1;
    EmFit fit = fit_em({{0.0, 0.0}, {2.0, 2.0}}, cfg);
    REQUIRE(fit.model.mixtures() == 1);
    CHECK(fit.model.weights[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(fit.model.means[0][0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(fit.model.means[0][1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(fit.model.variances[0][0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(fit.model.variances[0][1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_FALSE(fit.mixtures_reduced);
}

TEST_CASE("fit_em recovers two point clusters exactly") {
    // Oracle: assign by sign of x, per-cluster ML Gaussians are point masses
    // at (-5,0) and (5,0) with weight 0.5 and floored variance.
    std::vector<FeatureVector> data;
    for (int i = 0; i < 50; ++i) data.push_back({-5.0, 0.0});
    for (int i = 0; i < 50; ++i) data.push_back({5.0, 0.0});
    EmConfig cfg;
    cfg.mixtures = 2;
    cfg.variance_floor = 1e-4;
    EmFit fit = fit_em(data, cfg);
    REQUIRE(fit.model.mixtures() == 2);

    const bool first_neg = fit.model.means[0][0] < 0.0;
    const auto& neg = fit.model.means[first_neg ? 0 : 1];
    const auto& pos = fit.model.means[first_neg ? 1 : 0];
    CHECK(std::fabs(neg[0] + 5.0) < 1e-6);
    CHECK(std::fabs(neg[1]) < 1e-6);
    CHECK(std::fabs(pos[0] - 5.0) < 1e-6);
    CHECK(std::fabs(pos[1]) < 1e-6);
    CHECK(std::fabs(fit.model.weights[0] - 0.5) < 1e-6);
    CHECK(std::fabs(fit.model.weights[1] - 0.5) < 1e-6);
    for (const auto& var : fit.model.variances)
        for (double v : var) CHECK(v == doctest::Approx(1e-4).epsilon(1e-9));
}

TEST_CASE("fit_em floors the variance of a single point") {
    EmConfig cfg;
    cfg.mixtures = 1;
    EmFit fit = fit_em({{3.0}}, cfg);
    CHECK(fit.model.means[0][0] == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(fit.model.variances[0][0] == doctest::Approx(cfg.variance_floor).epsilon(1e-12));
}

TEST_CASE("fit_em shrinks the mixture count when data is scarce") {
    EmConfig cfg;
    cfg.mixtures = 8;
    EmFit fit = fit_em({{0.0}, {1.0}, {2.0}}, cfg);
    CHECK(fit.mixtures_reduced);
    CHECK(fit.model.mixtures() == 3);
    CHECK_THROWS_AS(fit_em({}, cfg), std::invalid_argument);
}

TEST_CASE("EM log-likelihood trace is non-decreasing and invariants hold") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        DiagGmm source = random_model(seed, 3, 3);
        Rng rng(seed * 977);
        auto data = sample(source, 120, rng);

        EmConfig cfg;
        cfg.mixtures = 3;
        cfg.seed = seed;
        EmFit fit = fit_em(data, cfg);
        REQUIRE(!fit.log_likelihood.empty());
        for (std::size_t i = 1; i < fit.log_likelihood.size(); ++i)
            CHECK(fit.log_likelihood[i] >= fit.log_likelihood[i - 1] - 1e-9);

        double sum = 0.0;
        for (double w : fit.model.weights) sum += w;
        CHECK(std::fabs(sum - 1.0) <= 1e-9);
        for (const auto& var : fit.model.variances)
            for (double v : var) CHECK(v >= cfg.variance_floor);
    }
}

TEST_CASE("log_pdf closed form at the mode of a standard Gaussian") {
    DiagGmm model;
    model.dims = 2;
    model.weights = {1.0};
    model.means = {{0.0, 0.0}};
    model.variances = {{1.0, 1.0}};
    const double expected = -std::log(2.0 * 3.14159265358979323846);
    CHECK(log_pdf(model, {0.0, 0.0}) == doctest::Approx(expected).epsilon(1e-12));

    DiagGmm twin = model;
    twin.weights = {0.5, 0.5};
    twin.means = {{0.0, 0.0}, {0.0, 0.0}};
    twin.variances = {{1.0, 1.0}, {1.0, 1.0}};
    CHECK(log_pdf(twin, {0.0, 0.0}) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("log_pdf matches extended-precision direct summation") {
    for (std::uint64_t seed = 3; seed <= 12; ++seed) {
        DiagGmm model = random_model(seed, 3, 3);
        Rng rng(seed + 100);
        FeatureVector v(3);
        for (double& x : v) x = rng.uniform(-2.5, 2.5);

        long double direct = 0.0L;
        for (std::size_t i = 0; i < model.mixtures(); ++i) {
            long double comp = model.weights[i];
            for (std::size_t j = 0; j < model.dims; ++j) {
                const long double d = v[j] - model.means[i][j];
                const long double var = model.variances[i][j];
                comp *= std::exp(-d * d / (2.0L * var)) /
                        std::sqrt(2.0L * 3.14159265358979323846L * var);
            }
            direct += comp;
        }
        const double expected = static_cast<double>(std::log(direct));
        const double got = log_pdf(model, v);
        CHECK(std::fabs(got - expected) <= 1e-10 * std::max(1.0, std::fabs(expected)));
    }
}

TEST_CASE("log_pdf survives large negative component logs and checks dims") {
    DiagGmm model;
    model.dims = 1;
    model.weights = {0.5, 0.5};
    model.means = {{0.0}, {37.0}};
    model.variances = {{1.0}, {1.0}};
    // component logs near -685 and -0.9; the far component must not underflow
    const double got = log_pdf(model, {0.0});
    CHECK(std::isfinite(got));
    CHECK(got == doctest::Approx(std::log(0.5) - 0.5 * std::log(2.0 * 3.141592653589793))
                     .epsilon(1e-9));
    CHECK_THROWS_AS(log_pdf(model, {0.0, 1.0}), std::invalid_argument);
}

TEST_CASE("sample near-degenerate model concentrates at the mean") {
    DiagGmm model;
    model.dims = 2;
    model.weights = {1.0};
    model.means = {{5.0, 5.0}};
    model.variances = {{1e-4, 1e-4}};
    Rng rng(42);
    auto draws = sample(model, 10, rng);
    REQUIRE(draws.size() == 10);
    for (const auto& v : draws) {
        CHECK(std::fabs(v[0] - 5.0) <= 5.0 * 1e-2);
        CHECK(std::fabs(v[1] - 5.0) <= 5.0 * 1e-2);
    }
}

TEST_CASE("sample n=0 returns an empty list") {
    DiagGmm model = random_model(5, 2, 2);
    Rng rng(1);
    CHECK(sample(model, 0, rng).empty());
}

TEST_CASE("sampling moments match analytic mixture moments") {
    const DiagGmm model = random_model(21, 2, 2);
    const std::size_t n = 100000;
    Rng rng(99);
    auto draws = sample(model, n, rng);

    for (std::size_t j = 0; j < model.dims; ++j) {
        double mix_mean = 0.0, mix_m2 = 0.0, mix_m4 = 0.0;
        for (std::size_t i = 0; i < model.mixtures(); ++i)
            mix_mean += model.weights[i] * model.means[i][j];
        for (std::size_t i = 0; i < model.mixtures(); ++i) {
            const double a = model.means[i][j] - mix_mean;
            const double s2 = model.variances[i][j];
            mix_m2 += model.weights[i] * (a * a + s2);
            mix_m4 += model.weights[i] * (a * a * a * a + 6.0 * a * a * s2 + 3.0 * s2 * s2);
        }

        double emp_mean = 0.0;
        for (const auto& v : draws) emp_mean += v[j];
        emp_mean /= static_cast<double>(n);
        double emp_var = 0.0;
        for (const auto& v : draws) {
            const double d = v[j] - emp_mean;
            emp_var += d * d;
        }
        emp_var /= static_cast<double>(n);

        const double mean_se = std::sqrt(mix_m2 / static_cast<double>(n));
        CHECK(std::fabs(emp_mean - mix_mean) <= 4.0 * mean_se);
        const double var_se = std::sqrt((mix_m4 - mix_m2 * mix_m2) / static_cast<double>(n));
        CHECK(std::fabs(emp_var - mix_m2) <= 4.0 * var_se);
    }
}

TEST_CASE("fit_bank fits one model per class with label-derived seeds") {
    LabeledVectors sets;
    for (int c = 0; c < 5; ++c) {
        Rng rng(300 + c);
        std::vector<FeatureVector> data;
        for (int i = 0; i < 100; ++i)
            data.push_back({rng.gaussian(2.0 * c, 1.0), rng.gaussian(-c, 0.5)});
        sets.push_back({"class_" + std::to_string(c), data});
    }
    EmConfig cfg;
    cfg.mixtures = 2;
    cfg.seed = 17;
    GmmBank bank = fit_bank(sets, cfg);
    REQUIRE(bank.entries.size() == 5);
    CHECK(bank.dims == 2);

    // per-class oracle: independent fit_em with the derived seed
    for (std::size_t c = 0; c < sets.size(); ++c) {
        EmConfig class_cfg = cfg;
        class_cfg.seed = cfg.seed ^ fnv1a64(sets[c].first);
        EmFit solo = fit_em(sets[c].second, class_cfg);
        CHECK(bank.entries[c].second.means == solo.model.means);
        CHECK(bank.entries[c].second.weights == solo.model.weights);
    }

    TempDir dir;
    save_bank(bank, dir.file("a.json"));
    save_bank(fit_bank(sets, cfg), dir.file("b.json"));
    CHECK(file_bytes(dir.file("a.json")) == file_bytes(dir.file("b.json")));
}

TEST_CASE("mixture_mean closed forms and summation oracle") {
    DiagGmm one;
    one.dims = 2;
    one.weights = {1.0};
    one.means = {{3.0, -1.0}};
    one.variances = {{1.0, 1.0}};
    CHECK(mixture_mean(one) == FeatureVector{3.0, -1.0});

    DiagGmm two;
    two.dims = 2;
    two.weights = {0.5, 0.5};
    two.means = {{0.0, 0.0}, {2.0, 2.0}};
    two.variances = {{1.0, 1.0}, {1.0, 1.0}};
    CHECK(mixture_mean(two) == FeatureVector{1.0, 1.0});

    DiagGmm model = random_model(8, 4, 5);
    FeatureVector mean = mixture_mean(model);
    for (std::size_t j = 0; j < model.dims; ++j) {
        long double direct = 0.0L;
        for (std::size_t i = 0; i < model.mixtures(); ++i)
            direct += static_cast<long double>(model.weights[i]) * model.means[i][j];
        CHECK(std::fabs(mean[j] - static_cast<double>(direct)) <=
              1e-12 * std::max(1.0, std::fabs(static_cast<double>(direct))));
    }
}

TEST_CASE("bank serialization round-trips every field exactly") {
    GmmBank bank;
    bank.dims = 3;
    bank.entries.push_back({"alpha", random_model(31, 3, 2)});
    bank.entries.push_back({"beta", random_model(32, 3, 4)});
    bank.entries[0].second.means[0][0] = 0.1 + 0.2;  // a value needing full precision

    TempDir dir;
    save_bank(bank, dir.file("bank.json"));
    GmmBank loaded = load_bank(dir.file("bank.json"));
    REQUIRE(loaded.entries.size() == 2);
    CHECK(loaded.dims == 3);
    for (std::size_t c = 0; c < 2; ++c) {
        CHECK(loaded.entries[c].first == bank.entries[c].first);
        CHECK(loaded.entries[c].second.weights == bank.entries[c].second.weights);
        CHECK(loaded.entries[c].second.means == bank.entries[c].second.means);
        CHECK(loaded.entries[c].second.variances == bank.entries[c].second.variances);
    }
}

TEST_CASE("load_bank rejects corrupted banks") {
    TempDir dir;
    std::ofstream(dir.file("bad.json")) << "{\"format\":\"lsne-gmm-bank\",\"version\":1,"
                                           "\"dims\":2,\"classes\":[{\"label\":\"a\","
                                           "\"weights\":[0.7,0.2],\"means\":[[0,0],[1,1]],"
                                           "\"variances\":[[1,1],[1,1]]}]}";
    CHECK_THROWS_AS(load_bank(dir.file("bad.json")), io_error);
}

TEST_CASE("mean_variance averages every variance entry") {
    GmmBank bank;
    bank.dims = 1;
    DiagGmm a;
    a.dims = 1;
    a.weights = {1.0};
    a.means = {{0.0}};
    a.variances = {{2.0}};
    DiagGmm b = a;
    b.variances = {{4.0}};
    bank.entries = {{"a", a}, {"b", b}};
    CHECK(mean_variance(bank) == doctest::Approx(3.0).epsilon(1e-12));
}
