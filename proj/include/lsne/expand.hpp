#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lsne/gmm.hpp"
#include "lsne/net.hpp"

namespace lsne {

// Momentum accumulator for one contiguous block of trainable parameters
// (the g buffer of the update rule).
struct OptimizerState {
    std::vector<double> g;
    std::uint64_t step = 0;
};

// A network expanded with novel classes. `base` is the pre-expansion
// network, bit-untouched; `expanded` carries the frozen base parameters plus
// the trainable novel ones. Restricting the expanded logits to the base rows
// reproduces the base logits exactly.
struct ExpandedHead {
    SoftmaxHead base;
    SoftmaxHead expanded;
    std::vector<std::string> novel_labels;
};

struct ExpandedNet {
    TwoLayerNet base;
    TwoLayerNet expanded;
    std::vector<std::string> novel_labels;
    std::size_t new_features = 0;
};

// C+R row head: first C rows bit-equal to the input and frozen; novel rows
// Glorot-initialized from `seed`.
SoftmaxHead expand_head(const SoftmaxHead& head, const std::vector<std::string>& novel_labels,
                        std::uint64_t seed);

// Deep expansion: fc1 gains `new_features` trainable rows; fc2 becomes
// (C+R) x (H+d) where the original C x H block is frozen bit-equal, the
// C x d block is fixed at zero, and the R novel rows train over the full
// width. Base logits are computed without the new-feature columns, so they
// stay bit-exact.
TwoLayerNet expand_deep(const TwoLayerNet& net, const std::vector<std::string>& novel_labels,
                        std::size_t new_features, std::uint64_t seed);

ExpandedHead make_expanded(const SoftmaxHead& base, const std::vector<std::string>& novel_labels,
                           std::uint64_t seed);
ExpandedNet make_expanded(const TwoLayerNet& base, const std::vector<std::string>& novel_labels,
                          std::size_t new_features, std::uint64_t seed);

// Feature-space stand-in for image augmentation: each original plus `count`
// jittered copies v + eps, eps ~ N(0, (scale*feature_std)^2 I). feature_std
// is the bank-wide scale sqrt(mean_variance(bank)), supplied by the caller.
std::vector<FeatureVector> augment(const std::vector<FeatureVector>& samples, std::size_t count,
                                   double scale, double feature_std, Rng& rng);

// Balanced batch: per_class generations from every bank class plus
// per_class uniform-with-replacement draws from every novel pool, shuffled.
// Targets index base classes in bank order, then novel pools in order.
Batch make_batch(const GmmBank& bank, const LabeledVectors& novel_pool, std::size_t per_class,
                 Rng& rng);

// Gradient-dropout momentum step over one parameter block:
//   paper rule:        g <- g + momentum * grad
//   conventional rule: g <- momentum * g + grad
// then a fresh per-entry Bernoulli(grad_dropout_p) mask gates the update
//   params <- params - lr * (mask .* g).
// Draws exactly params.size() mask variates from mask_rng per call.
void sgd_step(std::span<double> params, OptimizerState& state, std::span<const double> grad,
              const TrainConfig& cfg, Rng& mask_rng);

// cfg.iters rounds of make_batch -> cross-entropy gradient -> sgd_step on
// the novel parameters. Sub-streams are derived from cfg.seed with tags
// "aug", "batch" and "mask", so the batch stream is independent of the mask
// draws. Base parameters are bit-unchanged afterwards.
void train_expansion(ExpandedHead& model, const GmmBank& bank, const LabeledVectors& novel_pool,
                     const TrainConfig& cfg, bool verbose = false);
void train_expansion(ExpandedNet& model, const GmmBank& bank, const LabeledVectors& novel_pool,
                     const TrainConfig& cfg, bool verbose = false);

// Number of scalars the expansion trains: R*N for a head, and
// d*N_in + R*(H+d) for a deep expansion (plus novel bias entries when
// biases are enabled).
std::size_t trainable_count(const ExpandedHead& model);
std::size_t trainable_count(const ExpandedNet& model);

}  // namespace lsne
