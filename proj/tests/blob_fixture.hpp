#pragma once

#include <string>
#include <vector>

#include "lsne/expand.hpp"
#include "lsne/gmm.hpp"
#include "lsne/net.hpp"
#include "lsne/rng.hpp"

namespace testutil {

// Well-separated unit-variance blobs: class c sits at `separation` along
// axis c. Bayes error is negligible at separation 8.
struct BlobWorld {
    lsne::GmmBank bank;                // fitted on the base classes
    lsne::LabeledVectors novel_pool;   // low-shot novel samples
    lsne::FeatureSet test;
    std::vector<std::string> base_labels, novel_labels;
    lsne::TwoLayerNet base_net;
    lsne::SoftmaxHead base_head;
};

inline BlobWorld make_blob_world(std::uint64_t seed, std::size_t base_count = 3,
                                 std::size_t novel_count = 2, std::size_t novel_samples = 5,
                                 std::size_t per_class = 200, double separation = 8.0) {
    const std::size_t dims = base_count + novel_count;
    lsne::Rng rng(seed);
    BlobWorld world;

    auto draw_class = [&](std::size_t axis, std::size_t count) {
        std::vector<lsne::FeatureVector> out;
        for (std::size_t i = 0; i < count; ++i) {
            lsne::FeatureVector v(dims);
            for (double& x : v) x = rng.gaussian();
            v[axis] += separation;
            out.push_back(std::move(v));
        }
        return out;
    };

    lsne::LabeledVectors base_sets;
    lsne::FeatureSet train;
    train.dims = dims;
    for (std::size_t c = 0; c < base_count; ++c) {
        world.base_labels.push_back("base_" + std::to_string(c));
        base_sets.push_back({world.base_labels.back(), draw_class(c, per_class)});
        for (const auto& v : base_sets.back().second)
            train.records.push_back({world.base_labels.back(), v});
    }
    for (std::size_t c = 0; c < novel_count; ++c) {
        world.novel_labels.push_back("novel_" + std::to_string(c));
        world.novel_pool.push_back(
            {world.novel_labels.back(), draw_class(base_count + c, novel_samples)});
    }

    world.test.dims = dims;
    for (std::size_t c = 0; c < base_count; ++c)
        for (auto& v : draw_class(c, 50)) world.test.records.push_back({world.base_labels[c], v});
    for (std::size_t c = 0; c < novel_count; ++c)
        for (auto& v : draw_class(base_count + c, 50))
            world.test.records.push_back({world.novel_labels[c], v});

    lsne::EmConfig em;
    em.mixtures = 2;
    em.seed = lsne::derive_seed(seed, "gmm");
    world.bank = lsne::fit_bank(base_sets, em);

    lsne::TrainConfig base_cfg;
    base_cfg.seed = lsne::derive_seed(seed, "base");
    base_cfg.iters = 600;
    world.base_net = lsne::train_base(train, 8, world.base_labels, base_cfg);

    world.base_head =
        lsne::make_head(dims, world.base_labels, false, lsne::derive_seed(seed, "head"));
    return world;
}

}  // namespace testutil
