#include "lsne/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>

#include "lsne/errors.hpp"

namespace lsne {

namespace {

double squared_distance(const FeatureVector& a, const FeatureVector& b) {
    double acc = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        const double d = a[j] - b[j];
        acc += d * d;
    }
    return acc;
}

void check_protos(const PrototypeSet& protos, const FeatureVector& v) {
    if (protos.entries.empty()) throw std::invalid_argument("prototype set is empty");
    for (const auto& [label, p] : protos.entries)
        if (p.size() != v.size())
            throw std::invalid_argument("prototype classification: dimension mismatch");
}

}  // namespace

PrototypeSet ncm_build(const GmmBank& bank, const LabeledVectors& novel_pool) {
    PrototypeSet protos;
    protos.k = 1;
    for (const auto& [label, model] : bank.entries)
        protos.entries.push_back({label, mixture_mean(model)});
    for (const auto& [label, pool] : novel_pool) {
        if (pool.empty()) throw std::invalid_argument("ncm_build: empty class " + label);
        FeatureVector mean(pool.front().size(), 0.0);
        for (const auto& v : pool)
            for (std::size_t j = 0; j < v.size(); ++j) mean[j] += v[j];
        for (double& x : mean) x /= static_cast<double>(pool.size());
        protos.entries.push_back({label, std::move(mean)});
    }
    if (protos.entries.empty()) throw std::invalid_argument("ncm_build: no classes");
    return protos;
}

std::string ncm_classify(const PrototypeSet& protos, const FeatureVector& v) {
    check_protos(protos, v);
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < protos.entries.size(); ++i) {
        const double d = squared_distance(protos.entries[i].second, v);
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return protos.entries[best].first;
}

PrototypeSet pknn_build(const GmmBank& bank, const LabeledVectors& novel_pool) {
    PrototypeSet protos;
    std::size_t min_count = std::numeric_limits<std::size_t>::max();
    for (const auto& [label, model] : bank.entries) {
        for (const auto& mean : model.means) protos.entries.push_back({label, mean});
        min_count = std::min(min_count, model.mixtures());
    }
    for (const auto& [label, pool] : novel_pool) {
        if (pool.empty()) throw std::invalid_argument("pknn_build: empty class " + label);
        for (const auto& v : pool) protos.entries.push_back({label, v});
        min_count = std::min(min_count, pool.size());
    }
    if (protos.entries.empty()) throw std::invalid_argument("pknn_build: no classes");
    protos.k = min_count;
    return protos;
}

std::string pknn_classify(const PrototypeSet& protos, const FeatureVector& v) {
    check_protos(protos, v);
    const std::size_t k = std::min<std::size_t>(std::max<std::size_t>(protos.k, 1),
                                                protos.entries.size());

    // Sort by (distance, entry order); entry order is the tie-break.
    std::vector<std::size_t> order(protos.entries.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double da = squared_distance(protos.entries[a].second, v);
        const double db = squared_distance(protos.entries[b].second, v);
        if (da != db) return da < db;
        return a < b;
    });

    std::map<std::string, std::size_t> votes;
    for (std::size_t i = 0; i < k; ++i) ++votes[protos.entries[order[i]].first];
    std::size_t top = 0;
    for (const auto& [label, count] : votes) top = std::max(top, count);
    std::vector<std::string> leaders;
    for (const auto& [label, count] : votes)
        if (count == top) leaders.push_back(label);

    if (leaders.size() == 1) return leaders.front();
    // Indecisive vote: repeat with k = 1.
    return protos.entries[order.front()].first;
}

std::vector<double> softened_probs(const std::vector<double>& logits, double temperature) {
    if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be > 0");
    std::vector<double> scaled(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) scaled[i] = logits[i] / temperature;
    return softmax(scaled);
}

double kl_div(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size()) throw std::invalid_argument("kl_div: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) continue;
        acc += p[i] * (std::log(p[i]) - std::log(q[i]));
    }
    return acc;
}

TwoLayerNet soft_dis_train(const TwoLayerNet& base_net, const GmmBank& bank,
                           const LabeledVectors& novel_pool, const SoftDisConfig& cfg,
                           bool verbose) {
    validate(base_net);
    if (cfg.lambda < 0.0) throw std::invalid_argument("soft_dis_train: negative lambda");
    if (!(cfg.temperature > 0.0)) throw std::invalid_argument("soft_dis_train: temperature must be > 0");
    if (bank_labels(bank) != base_net.fc2.labels)
        throw io_error("soft_dis_train: bank labels do not match base labels");
    std::vector<std::string> pool_labels;
    for (const auto& [label, vectors] : novel_pool) pool_labels.push_back(label);

    // Student: fc2 expanded with novel rows, then every parameter unfrozen.
    TwoLayerNet student = expand_deep(base_net, pool_labels, 0, derive_seed(cfg.seed, "init"));
    student.fc1.frozen_rows = 0;
    student.fc2.frozen_rows = 0;
    student.fc2.frozen_cols = student.fc2.in_dims;

    const std::size_t c = base_net.fc2.out_dims();
    const double feature_std = std::sqrt(mean_variance(bank));
    Rng aug_rng(derive_seed(cfg.seed, "aug"));
    LabeledVectors pool;
    for (const auto& [label, vectors] : novel_pool)
        pool.push_back({label, augment(vectors, cfg.aug_per_sample, cfg.aug_scale, feature_std,
                                       aug_rng)});

    Rng batch_rng(derive_seed(cfg.seed, "batch"));
    Rng mask_rng(derive_seed(cfg.seed, "mask"));

    OptimizerState state_fc1_w, state_fc1_b, state_fc2_w, state_fc2_b;
    std::vector<ForwardTrace> traces;
    std::vector<std::vector<double>> dlogits;

    for (std::size_t iter = 0; iter < cfg.iters; ++iter) {
        Batch batch = make_batch(bank, pool, cfg.batch_per_class, batch_rng);
        const std::size_t b = batch.inputs.size();
        traces.clear();
        traces.reserve(b);
        dlogits.assign(b, {});

        double ce_loss = 0.0, kl_loss = 0.0;
        for (std::size_t s = 0; s < b; ++s) {
            traces.push_back(two_layer_forward(student, batch.inputs[s]));
            const auto& logits = traces[s].logits;
            auto p = softmax(logits);
            ce_loss -= std::log(std::max(p[batch.targets[s]], 1e-300));
            p[batch.targets[s]] -= 1.0;
            dlogits[s] = std::move(p);

            if (cfg.lambda > 0.0) {
                const auto teacher_logits = two_layer_forward(base_net, batch.inputs[s]).logits;
                const auto p_teacher = softened_probs(teacher_logits, cfg.temperature);
                std::vector<double> base_logits(logits.begin(), logits.begin() + c);
                const auto p_student = softened_probs(base_logits, cfg.temperature);
                kl_loss += kl_div(p_teacher, p_student);
                // d/dz of T^2 * KL(p_t || softmax(z/T)) = T * (p_s - p_t)
                for (std::size_t j = 0; j < c; ++j)
                    dlogits[s][j] += cfg.lambda * cfg.temperature * (p_student[j] - p_teacher[j]);
            }
        }
        const double inv_b = 1.0 / static_cast<double>(b);
        const double loss =
            ce_loss * inv_b + cfg.lambda * cfg.temperature * cfg.temperature * kl_loss * inv_b;
        if (!std::isfinite(loss)) throw numeric_error("soft_dis_train: non-finite loss");

        TwoLayerGrad grad = two_layer_backprop(student, batch.inputs, dlogits);
        sgd_step(student.fc1.weights, state_fc1_w, grad.fc1_weights, cfg, mask_rng);
        if (student.fc1.has_bias())
            sgd_step(student.fc1.bias, state_fc1_b, grad.fc1_bias, cfg, mask_rng);
        sgd_step(student.fc2.weights, state_fc2_w, grad.fc2_weights, cfg, mask_rng);
        if (student.fc2.has_bias())
            sgd_step(student.fc2.bias, state_fc2_b, grad.fc2_bias, cfg, mask_rng);

        if (verbose && iter % 100 == 0) std::printf("iter %zu loss %.6f\n", iter, loss);
    }
    return student;
}

void save_prototypes(const PrototypeSet& protos, const std::string& path) {
    if (protos.entries.empty()) throw io_error("empty set");
    FeatureSet set;
    set.dims = protos.entries.front().second.size();
    for (const auto& [label, p] : protos.entries) set.records.push_back({label, p});
    validate(set);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write prototype file: " + path);
    out << "lsne-features 1 dims=" << set.dims << '\n';
    out << "# prototypes k=" << protos.k << '\n';
    for (const auto& rec : set.records) {
        out << rec.label;
        for (double v : rec.vector) out << ',' << format_double(v);
        out << '\n';
    }
    if (!out) throw io_error("write failed: " + path);
}

PrototypeSet load_prototypes(const std::string& path) {
    FeatureSet set = load_features(path);
    PrototypeSet protos;
    for (auto& rec : set.records)
        protos.entries.push_back({std::move(rec.label), std::move(rec.vector)});

    protos.k = 1;
    std::ifstream in(path, std::ios::binary);
    std::string line;
    const std::string tag = "# prototypes k=";
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.rfind(tag, 0) == 0) {
            double k = 0;
            if (!parse_double(std::string_view(line).substr(tag.size()), k) || k < 1 ||
                k != std::floor(k))
                throw io_error("prototype file: malformed k comment");
            protos.k = static_cast<std::size_t>(k);
            break;
        }
    }
    return protos;
}

}  // namespace lsne
