#include "lsne/expand.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <unordered_set>

#include "lsne/errors.hpp"

namespace lsne {

namespace {

void check_novel_labels(const std::vector<std::string>& existing,
                        const std::vector<std::string>& novel) {
    std::unordered_set<std::string> seen(existing.begin(), existing.end());
    for (const auto& l : novel)
        if (!seen.insert(l).second)
            throw std::invalid_argument("expansion: duplicate label " + l);
}

}  // namespace

SoftmaxHead expand_head(const SoftmaxHead& head, const std::vector<std::string>& novel_labels,
                        std::uint64_t seed) {
    validate(head);
    check_novel_labels(head.labels, novel_labels);

    const std::size_t c = head.out_dims();
    const std::size_t r = novel_labels.size();

    SoftmaxHead out;
    out.in_dims = head.in_dims;
    out.labels = head.labels;
    out.labels.insert(out.labels.end(), novel_labels.begin(), novel_labels.end());
    out.weights.assign((c + r) * head.in_dims, 0.0);
    std::copy(head.weights.begin(), head.weights.end(), out.weights.begin());
    if (head.has_bias()) {
        out.bias.assign(c + r, 0.0);
        std::copy(head.bias.begin(), head.bias.end(), out.bias.begin());
    }
    out.frozen_rows = c;
    out.frozen_cols = head.in_dims;

    Rng rng(seed);
    init_rows(out.weights, out.in_dims, c + r, c, c + r, rng);
    validate(out);
    return out;
}

TwoLayerNet expand_deep(const TwoLayerNet& net, const std::vector<std::string>& novel_labels,
                        std::size_t new_features, std::uint64_t seed) {
    validate(net);
    check_novel_labels(net.fc2.labels, novel_labels);

    const std::size_t h = net.fc1.out_dims;
    const std::size_t d = new_features;
    const std::size_t c = net.fc2.out_dims();
    const std::size_t r = novel_labels.size();

    TwoLayerNet out;
    out.fc1.in_dims = net.fc1.in_dims;
    out.fc1.out_dims = h + d;
    out.fc1.weights.assign((h + d) * net.fc1.in_dims, 0.0);
    std::copy(net.fc1.weights.begin(), net.fc1.weights.end(), out.fc1.weights.begin());
    if (net.fc1.has_bias()) {
        out.fc1.bias.assign(h + d, 0.0);
        std::copy(net.fc1.bias.begin(), net.fc1.bias.end(), out.fc1.bias.begin());
    }
    out.fc1.frozen_rows = h;

    out.fc2.in_dims = h + d;
    out.fc2.labels = net.fc2.labels;
    out.fc2.labels.insert(out.fc2.labels.end(), novel_labels.begin(), novel_labels.end());
    // Base rows: original H columns copied, the d new columns stay exactly
    // zero and are never read (frozen_cols below) nor trained.
    out.fc2.weights.assign((c + r) * (h + d), 0.0);
    for (std::size_t k = 0; k < c; ++k)
        std::copy(net.fc2.row(k), net.fc2.row(k) + h, out.fc2.weights.begin() + k * (h + d));
    if (net.fc2.has_bias()) {
        out.fc2.bias.assign(c + r, 0.0);
        std::copy(net.fc2.bias.begin(), net.fc2.bias.end(), out.fc2.bias.begin());
    }
    out.fc2.frozen_rows = c;
    out.fc2.frozen_cols = h;

    Rng rng(seed);
    init_rows(out.fc1.weights, out.fc1.in_dims, h + d, h, h + d, rng);
    init_rows(out.fc2.weights, h + d, c + r, c, c + r, rng);
    validate(out);
    return out;
}

ExpandedHead make_expanded(const SoftmaxHead& base, const std::vector<std::string>& novel_labels,
                           std::uint64_t seed) {
    return ExpandedHead{base, expand_head(base, novel_labels, seed), novel_labels};
}

ExpandedNet make_expanded(const TwoLayerNet& base, const std::vector<std::string>& novel_labels,
                          std::size_t new_features, std::uint64_t seed) {
    return ExpandedNet{base, expand_deep(base, novel_labels, new_features, seed), novel_labels,
                       new_features};
}

std::vector<FeatureVector> augment(const std::vector<FeatureVector>& samples, std::size_t count,
                                   double scale, double feature_std, Rng& rng) {
    if (samples.empty()) throw std::invalid_argument("augment: no samples");
    if (scale < 0.0 || feature_std < 0.0)
        throw std::invalid_argument("augment: negative scale");

    const double sigma = scale * feature_std;
    std::vector<FeatureVector> out;
    out.reserve(samples.size() * (count + 1));
    for (const auto& v : samples) {
        out.push_back(v);
        for (std::size_t a = 0; a < count; ++a) {
            FeatureVector jittered(v.size());
            for (std::size_t j = 0; j < v.size(); ++j) jittered[j] = v[j] + sigma * rng.gaussian();
            out.push_back(std::move(jittered));
        }
    }
    return out;
}

Batch make_batch(const GmmBank& bank, const LabeledVectors& novel_pool, std::size_t per_class,
                 Rng& rng) {
    if (per_class == 0) throw std::invalid_argument("make_batch: per_class must be >= 1");
    if (bank.entries.empty() && novel_pool.empty())
        throw std::invalid_argument("make_batch: no classes");
    for (const auto& [label, pool] : novel_pool)
        if (pool.empty()) throw std::invalid_argument("make_batch: empty novel pool for " + label);

    Batch batch;
    const std::size_t total = per_class * (bank.entries.size() + novel_pool.size());
    batch.inputs.reserve(total);
    batch.targets.reserve(total);

    for (std::size_t i = 0; i < bank.entries.size(); ++i) {
        auto draws = sample(bank.entries[i].second, per_class, rng);
        for (auto& v : draws) {
            batch.inputs.push_back(std::move(v));
            batch.targets.push_back(i);
        }
    }
    for (std::size_t j = 0; j < novel_pool.size(); ++j) {
        const auto& pool = novel_pool[j].second;
        for (std::size_t k = 0; k < per_class; ++k) {
            batch.inputs.push_back(pool[rng.below(pool.size())]);
            batch.targets.push_back(bank.entries.size() + j);
        }
    }

    std::vector<std::size_t> perm(total);
    for (std::size_t i = 0; i < total; ++i) perm[i] = i;
    rng.shuffle(perm);
    Batch shuffled;
    shuffled.inputs.reserve(total);
    shuffled.targets.reserve(total);
    for (std::size_t i : perm) {
        shuffled.inputs.push_back(std::move(batch.inputs[i]));
        shuffled.targets.push_back(batch.targets[i]);
    }
    return shuffled;
}

void sgd_step(std::span<double> params, OptimizerState& state, std::span<const double> grad,
              const TrainConfig& cfg, Rng& mask_rng) {
    if (params.size() != grad.size()) throw std::invalid_argument("sgd_step: shape mismatch");
    if (state.g.empty()) state.g.assign(params.size(), 0.0);
    if (state.g.size() != params.size())
        throw std::invalid_argument("sgd_step: state shape mismatch");

    if (cfg.momentum_rule == MomentumRule::paper) {
        for (std::size_t i = 0; i < params.size(); ++i) state.g[i] += cfg.momentum * grad[i];
    } else {
        for (std::size_t i = 0; i < params.size(); ++i)
            state.g[i] = cfg.momentum * state.g[i] + grad[i];
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const bool keep = mask_rng.bernoulli(cfg.grad_dropout_p);
        if (keep) params[i] -= cfg.lr * state.g[i];
    }
    ++state.step;
}

namespace {

// Shared trainer plumbing: derived rng streams, augmentation of the novel
// pool, the per-iteration loop. Architecture specifics come in through the
// two lambdas.
template <class GradFn, class StepFn>
void run_expansion_loop(const GmmBank& bank, const LabeledVectors& novel_pool,
                        const std::vector<std::string>& base_labels,
                        const std::vector<std::string>& novel_labels, const TrainConfig& cfg,
                        bool verbose, GradFn compute_grad, StepFn apply_step) {
    if (bank_labels(bank) != base_labels)
        throw io_error("train_expansion: bank labels do not match base labels");
    std::vector<std::string> pool_labels;
    for (const auto& [label, vectors] : novel_pool) pool_labels.push_back(label);
    if (pool_labels != novel_labels)
        throw io_error("train_expansion: novel pool labels do not match expansion labels");

    const double feature_std = std::sqrt(mean_variance(bank));
    Rng aug_rng(derive_seed(cfg.seed, "aug"));
    LabeledVectors pool;
    pool.reserve(novel_pool.size());
    for (const auto& [label, vectors] : novel_pool)
        pool.push_back({label, augment(vectors, cfg.aug_per_sample, cfg.aug_scale, feature_std,
                                       aug_rng)});

    Rng batch_rng(derive_seed(cfg.seed, "batch"));
    Rng mask_rng(derive_seed(cfg.seed, "mask"));

    for (std::size_t iter = 0; iter < cfg.iters; ++iter) {
        Batch batch = make_batch(bank, pool, cfg.batch_per_class, batch_rng);
        const double loss = compute_grad(batch);
        if (!std::isfinite(loss)) throw numeric_error("train_expansion: non-finite loss");
        apply_step(mask_rng);
        if (verbose && iter % 100 == 0) std::printf("iter %zu loss %.6f\n", iter, loss);
    }
}

}  // namespace

void train_expansion(ExpandedHead& model, const GmmBank& bank, const LabeledVectors& novel_pool,
                     const TrainConfig& cfg, bool verbose) {
    validate(model.expanded);
    const std::size_t c = model.base.out_dims();
    const std::size_t r = model.novel_labels.size();
    if (model.expanded.frozen_rows != c || model.expanded.out_dims() != c + r)
        throw std::invalid_argument("train_expansion: model is not a head expansion");

    HeadGrad grad;
    OptimizerState state_w, state_b;
    const std::size_t wlen = r * model.expanded.in_dims;

    run_expansion_loop(
        bank, novel_pool, model.base.labels, model.novel_labels, cfg, verbose,
        [&](const Batch& batch) {
            grad = ce_grad_head(model.expanded, batch);
            return grad.loss;
        },
        [&](Rng& mask_rng) {
            sgd_step({model.expanded.row(c), wlen}, state_w,
                     {grad.weights.data() + c * model.expanded.in_dims, wlen}, cfg, mask_rng);
            if (model.expanded.has_bias())
                sgd_step({model.expanded.bias.data() + c, r}, state_b,
                         {grad.bias.data() + c, r}, cfg, mask_rng);
        });
}

void train_expansion(ExpandedNet& model, const GmmBank& bank, const LabeledVectors& novel_pool,
                     const TrainConfig& cfg, bool verbose) {
    validate(model.expanded);
    const std::size_t c = model.base.fc2.out_dims();
    const std::size_t r = model.novel_labels.size();
    const std::size_t h = model.base.fc1.out_dims;
    const std::size_t d = model.new_features;
    TwoLayerNet& net = model.expanded;
    if (net.fc2.frozen_rows != c || net.fc2.out_dims() != c + r || net.fc1.frozen_rows != h ||
        net.fc1.out_dims != h + d)
        throw std::invalid_argument("train_expansion: model is not a deep expansion");

    TwoLayerGrad grad;
    OptimizerState state_fc1_w, state_fc1_b, state_fc2_w, state_fc2_b;
    const std::size_t fc1_len = d * net.fc1.in_dims;
    const std::size_t fc2_len = r * net.fc2.in_dims;

    run_expansion_loop(
        bank, novel_pool, model.base.fc2.labels, model.novel_labels, cfg, verbose,
        [&](const Batch& batch) {
            grad = ce_grad_two_layer(net, batch);
            return grad.loss;
        },
        [&](Rng& mask_rng) {
            if (fc1_len > 0)
                sgd_step({net.fc1.row(h), fc1_len}, state_fc1_w,
                         {grad.fc1_weights.data() + h * net.fc1.in_dims, fc1_len}, cfg, mask_rng);
            if (net.fc1.has_bias() && d > 0)
                sgd_step({net.fc1.bias.data() + h, d}, state_fc1_b,
                         {grad.fc1_bias.data() + h, d}, cfg, mask_rng);
            sgd_step({net.fc2.row(c), fc2_len}, state_fc2_w,
                     {grad.fc2_weights.data() + c * net.fc2.in_dims, fc2_len}, cfg, mask_rng);
            if (net.fc2.has_bias())
                sgd_step({net.fc2.bias.data() + c, r}, state_fc2_b,
                         {grad.fc2_bias.data() + c, r}, cfg, mask_rng);
        });
}

std::size_t trainable_count(const ExpandedHead& model) {
    const std::size_t r = model.novel_labels.size();
    return r * model.expanded.in_dims + (model.expanded.has_bias() ? r : 0);
}

std::size_t trainable_count(const ExpandedNet& model) {
    const std::size_t r = model.novel_labels.size();
    const std::size_t d = model.new_features;
    std::size_t count = d * model.expanded.fc1.in_dims + r * model.expanded.fc2.in_dims;
    if (model.expanded.fc1.has_bias()) count += d;
    if (model.expanded.fc2.has_bias()) count += r;
    return count;
}

}  // namespace lsne
