#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lsne/baselines.hpp"
#include "lsne/expand.hpp"
#include "lsne/feature_store.hpp"
#include "lsne/gmm.hpp"
#include "lsne/net.hpp"

namespace lsne {

// Synthetic feature-space scenario. Every class is a random diagonal-Gaussian
// mixture; scenario 1 separates all class means, scenario 2 clusters the
// novel means together (pairwise within novel_novel_gap), scenario 3 pins
// each novel mean at distance novel_base_gap from a distinct base mean.
// Per-coordinate within-class standard deviation is ~0.67 by construction
// (component offsets N(0, 0.4^2), component stddevs U[0.35, 0.7]), upper
// bound 0.81.
struct ScenarioSpec {
    int scenario = 1;
    std::size_t dims = 64;
    std::size_t base_count = 5;
    std::size_t novel_count = 2;
    std::size_t train_per_class = 1000;
    std::size_t test_per_class = 250;
    std::size_t class_mixtures = 3;
    double separation = 8.0;       // minimum distance between base/unrelated means
    double novel_novel_gap = 2.0;  // scenario 2
    double novel_base_gap = 2.0;   // scenario 3
    std::uint64_t seed = 0;
};

struct Scenario {
    FeatureSet train;
    FeatureSet test;
    std::vector<std::string> base_labels;
    std::vector<std::string> novel_labels;
};

Scenario gen_scenario(const ScenarioSpec& spec);

// Error counts of one (method, sample-count) evaluation. Percentages derive
// from the integer counts, so the overall/base/novel decomposition identity
// is exact.
struct TrialResult {
    std::string method;
    std::size_t samples_per_novel = 0;
    std::size_t base_total = 0, base_wrong = 0;
    std::size_t novel_total = 0, novel_wrong = 0;

    double base_err() const;     // percent
    double novel_err() const;    // percent
    double overall_err() const;  // percent
};

// Top-1 error of `classify` on the test set, split by base/novel label
// membership. Throws io_error when a test label is in neither list.
TrialResult evaluate(const Classifier& classify, const FeatureSet& test,
                     const std::vector<std::string>& base_labels,
                     const std::vector<std::string>& novel_labels);

extern const std::vector<std::string> kBenchMethods;

struct BenchConfig {
    std::vector<std::string> methods;               // subset of kBenchMethods
    std::vector<std::size_t> sample_counts{1, 3, 5, 9, 15};
    std::size_t trials = 5;
    TrainConfig train;        // expansion / soft-distillation knobs
    double soft_lambda = 1.0;
    double soft_temperature = 2.0;
    EmConfig em;              // bank fitting
    std::size_t base_hidden = 32;
    std::size_t threads = 0;  // 0 = hardware concurrency
};

struct BenchRow {
    std::string method;
    std::size_t samples = 0;
    double overall_err = 0.0;
    double base_err = 0.0;
    double novel_err = 0.0;
    std::size_t trials = 0;
};

// Per trial t: regenerate the scenario with seed master+t, train the base
// net, fit the bank, then per sample count draw the novel samples and run
// every method. Stage seeds derive from the trial seed with the tags below,
// so any stage can be reproduced in isolation:
//   scenario: trial seed itself        base training: derive(ts, "base")
//   bank:     derive(ts, "gmm")        novel draw:    derive(ts, "draw", n)
//   training: derive(ts, "train", n)   (shared by all methods at that n)
// Trials are independent and may run on a thread pool; aggregation is keyed
// by (method, n, trial) so results do not depend on scheduling.
std::vector<BenchRow> run_bench(const ScenarioSpec& spec, const BenchConfig& cfg);

// Helpers mirroring run_bench's internals so single trials can be composed
// manually (and so the CLI stages can be driven with matching seeds).
std::uint64_t trial_seed(std::uint64_t master_seed, std::size_t trial);
LabeledVectors draw_novel_pool(const FeatureSet& train,
                               const std::vector<std::string>& novel_labels, std::size_t n,
                               std::uint64_t seed);

// header: method,samples,overall_err,base_err,novel_err,trials
// percentages with two decimals, LF newlines.
std::string bench_csv(const std::vector<BenchRow>& rows);

struct FidelityRow {
    std::string setting;  // "full" or "m=<M>"
    double accuracy_pct = 0.0;
};

// Trains a softmax head (a) on the full training features and (b) per M on
// balanced batches generated from a per-class GMM bank with M mixtures,
// reporting top-1 test accuracy for each setting.
std::vector<FidelityRow> gmm_fidelity(const FeatureSet& train, const FeatureSet& test,
                                      const std::vector<std::size_t>& mixtures,
                                      const TrainConfig& train_cfg, const EmConfig& em_cfg);

std::string fidelity_csv(const std::vector<FidelityRow>& rows);

}  // namespace lsne
