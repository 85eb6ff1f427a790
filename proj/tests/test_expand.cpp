#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "lsne/errors.hpp"
#include "lsne/expand.hpp"
#include "test_util.hpp"

using namespace lsne;

#include "blob_fixture.hpp"

using testutil::BlobWorld;
using testutil::make_blob_world;

TEST_CASE("expand_head keeps base rows bit-equal and freezes them") {
    SoftmaxHead head = make_head(3, {"a", "b"}, false, 7);
    SoftmaxHead wide = expand_head(head, {"c"}, 8);
    CHECK(wide.out_dims() == 3);
    CHECK(wide.in_dims == 3);
    CHECK(wide.frozen_rows == 2);
    for (std::size_t i = 0; i < head.weights.size(); ++i)
        CHECK(wide.weights[i] == head.weights[i]);
    CHECK(wide.labels == std::vector<std::string>{"a", "b", "c"});

    SUBCASE("empty novel list returns the same head with everything frozen") {
        SoftmaxHead same = expand_head(head, {}, 9);
        CHECK(same.out_dims() == 2);
        CHECK(same.frozen_rows == 2);
        CHECK(same.weights == head.weights);
    }
    SUBCASE("duplicate labels are rejected") {
        CHECK_THROWS_AS(expand_head(head, {"a"}, 1), std::invalid_argument);
        CHECK_THROWS_AS(expand_head(head, {"c", "c"}, 1), std::invalid_argument);
    }
}

TEST_CASE("expanded head base-row logits are bitwise equal to the base head") {
    Rng rng(15);
    SoftmaxHead head = make_head(6, {"a", "b", "c", "d", "e"}, false, 21);
    SoftmaxHead wide = expand_head(head, {"n1", "n2"}, 22);
    for (int trial = 0; trial < 200; ++trial) {
        FeatureVector v(6);
        for (double& x : v) x = rng.uniform(-10.0, 10.0);
        auto base_logits = head_logits(head, v);
        auto wide_logits = head_logits(wide, v);
        for (std::size_t k = 0; k < head.out_dims(); ++k) CHECK(wide_logits[k] == base_logits[k]);
    }
}

TEST_CASE("expand_deep shapes, zero block and bit-exact base logits") {
    TwoLayerNet net = make_two_layer(4, 8, {"a", "b", "c", "d", "e"}, false, 31);
    TwoLayerNet deep = expand_deep(net, {"n1", "n2"}, 5, 32);

    CHECK(deep.fc1.out_dims == 13);
    CHECK(deep.fc1.frozen_rows == 8);
    CHECK(deep.fc2.out_dims() == 7);
    CHECK(deep.fc2.in_dims == 13);
    CHECK(deep.fc2.frozen_rows == 5);
    CHECK(deep.fc2.frozen_cols == 8);
    // the 5x5 block connecting new features to base outputs is exactly zero
    for (std::size_t k = 0; k < 5; ++k)
        for (std::size_t j = 8; j < 13; ++j) CHECK(deep.fc2.row(k)[j] == 0.0);

    Rng rng(33);
    for (int trial = 0; trial < 200; ++trial) {
        FeatureVector v(4);
        for (double& x : v) x = rng.uniform(-10.0, 10.0);
        auto base_logits = two_layer_forward(net, v).logits;
        auto deep_logits = two_layer_forward(deep, v).logits;
        for (std::size_t k = 0; k < 5; ++k) CHECK(deep_logits[k] == base_logits[k]);
    }

    SUBCASE("d=0 reduces to a head expansion of fc2") {
        TwoLayerNet flat = expand_deep(net, {"n1"}, 0, 40);
        CHECK(flat.fc1.out_dims == 8);
        CHECK(flat.fc1.frozen_rows == 8);
        CHECK(flat.fc2.out_dims() == 6);
        CHECK(flat.fc2.frozen_cols == 8);
        for (std::size_t i = 0; i < net.fc2.weights.size(); ++i)
            CHECK(flat.fc2.weights[i] == net.fc2.weights[i]);
    }
}

TEST_CASE("trainable_count matches the expansion arithmetic") {
    SoftmaxHead head = make_head(10, {"a", "b", "c"}, false, 1);
    ExpandedHead eh = make_expanded(head, {"n1", "n2"}, 2);
    CHECK(trainable_count(eh) == 2 * 10);

    TwoLayerNet net = make_two_layer(6, 8, {"a", "b", "c"}, false, 2);
    ExpandedNet en = make_expanded(net, {"n1", "n2"}, 5, 3);
    CHECK(trainable_count(en) == 5 * 6 + 2 * (8 + 5));
}

TEST_CASE("augment identity and exact-copy cases") {
    std::vector<FeatureVector> samples = {{1.0, 2.0}, {3.0, 4.0}};
    Rng rng(5);
    SUBCASE("A=0 returns the originals") {
        auto out = augment(samples, 0, 0.1, 1.0, rng);
        CHECK(out == samples);
    }
    SUBCASE("scale 0 duplicates each sample") {
        auto out = augment(samples, 3, 0.0, 1.0, rng);
        REQUIRE(out.size() == 8);
        for (std::size_t i = 0; i < 4; ++i) CHECK(out[i] == samples[0]);
        for (std::size_t i = 4; i < 8; ++i) CHECK(out[i] == samples[1]);
    }
    SUBCASE("empty input is rejected") {
        CHECK_THROWS_AS(augment({}, 3, 0.1, 1.0, rng), std::invalid_argument);
    }
}

TEST_CASE("augment jitter mean concentrates on the original") {
    const double scale = 0.1, s = 2.0;
    std::vector<FeatureVector> samples = {{10.0, -3.0}};
    Rng rng(77);
    auto out = augment(samples, 100, scale, s, rng);
    REQUIRE(out.size() == 101);
    for (std::size_t j = 0; j < 2; ++j) {
        double mean = 0.0;
        for (const auto& v : out) mean += v[j];
        mean /= 101.0;
        CHECK(std::fabs(mean - samples[0][j]) <= 4.0 * (scale * s / std::sqrt(100.0)));
    }
}

TEST_CASE("make_batch is balanced, shuffled and deterministic") {
    BlobWorld world = make_blob_world(50, 5, 2, 4);

    SUBCASE("counts are exactly per_class for every class") {
        Rng rng(1);
        Batch batch = make_batch(world.bank, world.novel_pool, 8, rng);
        CHECK(batch.inputs.size() == 56);
        std::map<std::size_t, std::size_t> hist;
        for (std::size_t t : batch.targets) ++hist[t];
        REQUIRE(hist.size() == 7);
        for (const auto& [target, count] : hist) CHECK(count == 8);
    }
    SUBCASE("b=1 with one base and one novel") {
        GmmBank small;
        small.dims = world.bank.dims;
        small.entries.push_back(world.bank.entries.front());
        LabeledVectors pool = {world.novel_pool.front()};
        Rng rng(2);
        Batch batch = make_batch(small, pool, 1, rng);
        REQUIRE(batch.inputs.size() == 2);
        std::map<std::size_t, std::size_t> hist;
        for (std::size_t t : batch.targets) ++hist[t];
        CHECK(hist[0] == 1);
        CHECK(hist[1] == 1);
    }
    SUBCASE("same rng state gives identical batches") {
        Rng a(9), b(9);
        Batch ba = make_batch(world.bank, world.novel_pool, 4, a);
        Batch bb = make_batch(world.bank, world.novel_pool, 4, b);
        CHECK(ba.targets == bb.targets);
        CHECK(ba.inputs == bb.inputs);
    }
    SUBCASE("empty novel pool is an error") {
        LabeledVectors pool = {{"novel_x", {}}};
        Rng rng(3);
        CHECK_THROWS_AS(make_batch(world.bank, pool, 2, rng), std::invalid_argument);
    }
    SUBCASE("shuffling spreads classes over the first position") {
        // multinomial check: over 600 batches the first slot should hit each
        // of the 7 classes roughly uniformly
        Rng rng(4);
        std::map<std::size_t, double> first;
        const int reps = 600;
        for (int i = 0; i < reps; ++i)
            ++first[make_batch(world.bank, world.novel_pool, 2, rng).targets[0]];
        const double expected = reps / 7.0;
        const double se = std::sqrt(reps * (1.0 / 7.0) * (6.0 / 7.0));
        for (const auto& [target, count] : first)
            CHECK(std::fabs(count - expected) <= 4.0 * se);
    }
}

TEST_CASE("sgd_step follows the printed update equations") {
    TrainConfig cfg;
    cfg.lr = 0.1;
    cfg.momentum = 0.9;
    cfg.momentum_rule = MomentumRule::paper;
    cfg.grad_dropout_p = 0.5;

    // find a seed whose first two keep-draws are (true, false)
    std::uint64_t seed = 0;
    for (;; ++seed) {
        Rng probe(seed);
        const bool first = probe.bernoulli(0.5);
        const bool second = probe.bernoulli(0.5);
        if (first && !second) break;
    }

    std::vector<double> params = {0.0, 0.0};
    std::vector<double> grad = {1.0, 2.0};
    OptimizerState state;
    Rng mask_rng(seed);
    sgd_step(params, state, grad, cfg, mask_rng);

    CHECK(state.g[0] == 0.9 * 1.0);
    CHECK(state.g[1] == 0.9 * 2.0);
    CHECK(params[0] == -(0.1 * (0.9 * 1.0)));
    CHECK(params[1] == 0.0);  // masked out: accumulator moved, parameter did not
    CHECK(state.step == 1);
}

TEST_CASE("sgd_step p=1 equals the unmasked update and p~0 freezes parameters") {
    TrainConfig cfg;
    cfg.lr = 0.05;
    cfg.momentum = 0.8;

    SUBCASE("p=1") {
        cfg.grad_dropout_p = 1.0;
        std::vector<double> params = {1.0, -2.0, 3.0};
        std::vector<double> grad = {0.5, 0.25, -0.125};
        OptimizerState state;
        state.g = {0.1, 0.2, 0.3};
        std::vector<double> expected = params;
        std::vector<double> g = state.g;
        for (std::size_t i = 0; i < 3; ++i) {
            g[i] += cfg.momentum * grad[i];
            expected[i] -= cfg.lr * g[i];
        }
        Rng rng(123);
        sgd_step(params, state, grad, cfg, rng);
        CHECK(params == expected);
        CHECK(state.g == g);
    }
    SUBCASE("vanishing p keeps parameters while the accumulator moves") {
        cfg.grad_dropout_p = 1e-12;
        std::vector<double> params = {1.0, 2.0};
        std::vector<double> grad = {3.0, 4.0};
        OptimizerState state;
        {
            Rng probe(7);
            REQUIRE(probe.uniform() > 1e-12);
            REQUIRE(probe.uniform() > 1e-12);
        }
        Rng rng(7);
        sgd_step(params, state, grad, cfg, rng);
        CHECK(params == std::vector<double>{1.0, 2.0});
        CHECK(state.g == std::vector<double>{0.8 * 3.0, 0.8 * 4.0});
    }
    SUBCASE("conventional rule decays the accumulator") {
        cfg.grad_dropout_p = 1.0;
        cfg.momentum_rule = MomentumRule::conventional;
        std::vector<double> params = {0.0};
        std::vector<double> grad = {1.0};
        OptimizerState state;
        state.g = {2.0};
        Rng rng(1);
        sgd_step(params, state, grad, cfg, rng);
        CHECK(state.g[0] == 0.8 * 2.0 + 1.0);
    }
}

TEST_CASE("train_expansion T=0 is the identity") {
    BlobWorld world = make_blob_world(60);
    ExpandedHead model = make_expanded(world.base_head, world.novel_labels, 61);
    SoftmaxHead before = model.expanded;
    TrainConfig cfg;
    cfg.iters = 0;
    cfg.seed = 62;
    train_expansion(model, world.bank, world.novel_pool, cfg);
    CHECK(model.expanded.weights == before.weights);
}

TEST_CASE("train_expansion learns well-separated novel classes") {
    BlobWorld world = make_blob_world(70, 5, 2, 5, 200);
    ExpandedNet model = make_expanded(world.base_net, world.novel_labels, 0, 71);
    TrainConfig cfg;
    cfg.seed = 72;
    cfg.iters = 800;
    train_expansion(model, world.bank, world.novel_pool, cfg);

    Classifier classify = make_classifier(model.expanded);
    std::size_t novel_total = 0, novel_wrong = 0;
    for (const auto& rec : world.test.records) {
        if (rec.label.rfind("novel_", 0) != 0) continue;
        ++novel_total;
        novel_wrong += classify(rec.vector) != rec.label;
    }
    REQUIRE(novel_total == 100);
    CHECK(static_cast<double>(novel_wrong) / static_cast<double>(novel_total) <= 0.05);
}

TEST_CASE("training preserves base parameters and base predictions exactly") {
    BlobWorld world = make_blob_world(80);
    ExpandedNet model = make_expanded(world.base_net, world.novel_labels, 3, 81);
    TrainConfig cfg;
    cfg.seed = 82;
    cfg.iters = 150;
    train_expansion(model, world.bank, world.novel_pool, cfg);

    // frozen slabs bit-equal
    for (std::size_t r = 0; r < world.base_net.fc1.out_dims; ++r)
        for (std::size_t j = 0; j < world.base_net.fc1.in_dims; ++j)
            CHECK(model.expanded.fc1.row(r)[j] == world.base_net.fc1.row(r)[j]);
    for (std::size_t k = 0; k < world.base_net.fc2.out_dims(); ++k)
        for (std::size_t j = 0; j < world.base_net.fc2.in_dims; ++j)
            CHECK(model.expanded.fc2.row(k)[j] == world.base_net.fc2.row(k)[j]);

    // base-restricted predictions identical on random vectors
    Rng rng(83);
    for (int i = 0; i < 500; ++i) {
        FeatureVector v(world.test.dims);
        for (double& x : v) x = rng.uniform(-10.0, 10.0);
        auto base_logits = two_layer_forward(world.base_net, v).logits;
        auto full_logits = two_layer_forward(model.expanded, v).logits;
        for (std::size_t k = 0; k < base_logits.size(); ++k)
            CHECK(full_logits[k] == base_logits[k]);
        std::vector<double> restricted(full_logits.begin(),
                                       full_logits.begin() + base_logits.size());
        CHECK(argmax(restricted) == argmax(base_logits));
    }
}

TEST_CASE("train_expansion is deterministic and validates bank labels") {
    BlobWorld world = make_blob_world(90);
    TrainConfig cfg;
    cfg.seed = 91;
    cfg.iters = 60;

    ExpandedHead a = make_expanded(world.base_head, world.novel_labels, 92);
    ExpandedHead b = make_expanded(world.base_head, world.novel_labels, 92);
    train_expansion(a, world.bank, world.novel_pool, cfg);
    train_expansion(b, world.bank, world.novel_pool, cfg);
    CHECK(a.expanded.weights == b.expanded.weights);

    GmmBank wrong = world.bank;
    std::swap(wrong.entries[0], wrong.entries[1]);
    ExpandedHead c = make_expanded(world.base_head, world.novel_labels, 92);
    CHECK_THROWS_AS(train_expansion(c, wrong, world.novel_pool, cfg), io_error);
}

TEST_CASE("p=1 training is bit-identical to an independently coded unmasked loop") {
    BlobWorld world = make_blob_world(100);
    TrainConfig cfg;
    cfg.seed = 101;
    cfg.iters = 50;
    cfg.grad_dropout_p = 1.0;

    ExpandedHead model = make_expanded(world.base_head, world.novel_labels, 102);
    ExpandedHead reference = model;
    train_expansion(model, world.bank, world.novel_pool, cfg);

    // plain momentum SGD over the same derived batch stream, no masking
    const std::size_t c = reference.base.out_dims();
    const std::size_t n = reference.expanded.in_dims;
    const std::size_t r = reference.novel_labels.size();
    const double s = std::sqrt(mean_variance(world.bank));
    Rng aug_rng(derive_seed(cfg.seed, "aug"));
    LabeledVectors pool;
    for (const auto& [label, vectors] : world.novel_pool)
        pool.push_back({label, augment(vectors, cfg.aug_per_sample, cfg.aug_scale, s, aug_rng)});
    Rng batch_rng(derive_seed(cfg.seed, "batch"));
    std::vector<double> g(r * n, 0.0);
    for (std::size_t iter = 0; iter < cfg.iters; ++iter) {
        Batch batch = make_batch(world.bank, pool, cfg.batch_per_class, batch_rng);
        HeadGrad grad = ce_grad_head(reference.expanded, batch);
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += cfg.momentum * grad.weights[c * n + i];
            reference.expanded.weights[c * n + i] -= cfg.lr * g[i];
        }
    }
    CHECK(model.expanded.weights == reference.expanded.weights);
}
