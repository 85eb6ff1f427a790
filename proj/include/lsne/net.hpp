#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "lsne/feature_store.hpp"
#include "lsne/rng.hpp"

namespace lsne {

enum class MomentumRule {
    paper,         // g <- g + momentum * grad
    conventional,  // g <- momentum * g + grad
};

// Shared knobs for every trainer. Gradient dropout and augmentation fields
// only apply to the expansion trainers.
struct TrainConfig {
    double lr = 0.01;
    double momentum = 0.9;
    double grad_dropout_p = 0.5;      // Bernoulli keep-probability of the update mask
    std::size_t batch_per_class = 16;
    std::size_t iters = 2000;
    std::size_t aug_per_sample = 100; // jittered variants added per novel sample
    double aug_scale = 0.1;           // jitter stddev as a fraction of the feature scale
    std::uint64_t seed = 0;
    MomentumRule momentum_rule = MomentumRule::paper;
};

// Linear classification layer, rows are per-class weight vectors. The first
// frozen_rows rows never change under training, and they read only the
// first frozen_cols inputs: after a deep expansion the remaining entries of
// those rows are structurally zero and skipping them keeps the base logits
// bit-exact rather than merely "+0".
struct SoftmaxHead {
    std::size_t in_dims = 0;
    std::vector<std::string> labels;
    std::vector<double> weights;  // labels.size() x in_dims, row-major
    std::vector<double> bias;     // labels.size() entries, or empty for none
    std::size_t frozen_rows = 0;
    std::size_t frozen_cols = 0;  // == in_dims unless the input space was expanded

    std::size_t out_dims() const { return labels.size(); }
    bool has_bias() const { return !bias.empty(); }
    double* row(std::size_t k) { return weights.data() + k * in_dims; }
    const double* row(std::size_t k) const { return weights.data() + k * in_dims; }
};

// Hidden linear layer of the two-layer net; a rectifier is applied after it.
struct HiddenLayer {
    std::size_t in_dims = 0;
    std::size_t out_dims = 0;
    std::vector<double> weights;  // out_dims x in_dims
    std::vector<double> bias;
    std::size_t frozen_rows = 0;

    bool has_bias() const { return !bias.empty(); }
    double* row(std::size_t k) { return weights.data() + k * in_dims; }
    const double* row(std::size_t k) const { return weights.data() + k * in_dims; }
};

// input -> fc1 -> relu -> fc2 -> logits
struct TwoLayerNet {
    HiddenLayer fc1;
    SoftmaxHead fc2;

    const std::vector<std::string>& labels() const { return fc2.labels; }
    std::size_t in_dims() const { return fc1.in_dims; }
    std::size_t hidden_dims() const { return fc1.out_dims; }
};

struct Batch {
    std::vector<FeatureVector> inputs;
    std::vector<std::size_t> targets;  // indices into the model's label list
};

void validate(const SoftmaxHead& head);
void validate(const TwoLayerNet& net);

// Fresh head/net with Glorot-uniform weights and zero bias (when enabled).
SoftmaxHead make_head(std::size_t in_dims, const std::vector<std::string>& labels,
                      bool with_bias, std::uint64_t seed);
TwoLayerNet make_two_layer(std::size_t in_dims, std::size_t hidden_dims,
                           const std::vector<std::string>& labels, bool with_bias,
                           std::uint64_t seed);

// Glorot-uniform fill of weight rows [row_begin, row_end); the bound uses the
// full layer fan (in_dims + out_dims).
void init_rows(std::vector<double>& weights, std::size_t in_dims, std::size_t out_dims,
               std::size_t row_begin, std::size_t row_end, Rng& rng);

std::vector<double> head_logits(const SoftmaxHead& head, const FeatureVector& v);

// Max-subtracted softmax; sums to 1 for all finite logits.
std::vector<double> softmax(const std::vector<double>& logits);

std::size_t argmax(const std::vector<double>& values);  // ties -> lowest index

struct HeadGrad {
    std::vector<double> weights;  // same shape as the head, frozen rows zero
    std::vector<double> bias;
    double loss = 0.0;            // mean cross-entropy over the batch
};

struct TwoLayerGrad {
    std::vector<double> fc1_weights;
    std::vector<double> fc1_bias;
    std::vector<double> fc2_weights;
    std::vector<double> fc2_bias;
    double loss = 0.0;
};

double ce_loss_head(const SoftmaxHead& head, const Batch& batch);
double ce_loss_two_layer(const TwoLayerNet& net, const Batch& batch);

// Mean cross-entropy gradients; entries in frozen rows are exactly zero.
HeadGrad ce_grad_head(const SoftmaxHead& head, const Batch& batch);
TwoLayerGrad ce_grad_two_layer(const TwoLayerNet& net, const Batch& batch);

struct ForwardTrace {
    std::vector<double> hidden;  // post-rectifier
    std::vector<double> logits;
};
ForwardTrace two_layer_forward(const TwoLayerNet& net, const FeatureVector& v);

// Backprop of mean_k <dlogits[k], z_k> through the net; the hook the
// distillation loss uses to inject its own logit sensitivities.
TwoLayerGrad two_layer_backprop(const TwoLayerNet& net,
                                const std::vector<FeatureVector>& inputs,
                                const std::vector<std::vector<double>>& dlogits);

// Momentum-SGD training of a fresh two-layer net on shuffled mini-batches
// (conventional momentum, no gradient dropout). Deterministic per cfg.seed.
TwoLayerNet train_base(const FeatureSet& features, std::size_t hidden_dims,
                       const std::vector<std::string>& labels, const TrainConfig& cfg,
                       bool with_bias = false, bool verbose = false);

using Classifier = std::function<std::string(const FeatureVector&)>;

Classifier make_classifier(const SoftmaxHead& head);
Classifier make_classifier(const TwoLayerNet& net);

// JSON schema:
// { "format": "lsne-model", "version": 1, "kind": "head"|"two-layer",
//   "labels": [..], "dims": {..}, "weights": {..}, "frozen": {..} }
void save_model(const SoftmaxHead& head, const std::string& path);
void save_model(const TwoLayerNet& net, const std::string& path);
std::variant<SoftmaxHead, TwoLayerNet> load_model(const std::string& path);

}  // namespace lsne
