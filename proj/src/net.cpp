#include "lsne/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <unordered_map>

#include <json.hpp>

#include "lsne/errors.hpp"

namespace lsne {

void validate(const SoftmaxHead& head) {
    const std::size_t c = head.labels.size();
    if (c == 0 || head.in_dims == 0) throw io_error("head: empty shape");
    if (head.weights.size() != c * head.in_dims) throw io_error("head: weight shape mismatch");
    if (!head.bias.empty() && head.bias.size() != c) throw io_error("head: bias shape mismatch");
    if (head.frozen_rows > c) throw io_error("head: frozen_rows out of range");
    if (head.frozen_cols > head.in_dims) throw io_error("head: frozen_cols out of range");
    for (double w : head.weights)
        if (!std::isfinite(w)) throw io_error("head: non-finite weight");
    for (double b : head.bias)
        if (!std::isfinite(b)) throw io_error("head: non-finite bias");
    for (std::size_t i = 0; i < c; ++i)
        for (std::size_t j = i + 1; j < c; ++j)
            if (head.labels[i] == head.labels[j])
                throw io_error("head: duplicate label " + head.labels[i]);
}

void validate(const TwoLayerNet& net) {
    if (net.fc1.in_dims == 0 || net.fc1.out_dims == 0) throw io_error("net: empty fc1 shape");
    if (net.fc1.weights.size() != net.fc1.out_dims * net.fc1.in_dims)
        throw io_error("net: fc1 weight shape mismatch");
    if (!net.fc1.bias.empty() && net.fc1.bias.size() != net.fc1.out_dims)
        throw io_error("net: fc1 bias shape mismatch");
    if (net.fc1.frozen_rows > net.fc1.out_dims) throw io_error("net: fc1 frozen_rows out of range");
    if (net.fc2.in_dims != net.fc1.out_dims) throw io_error("net: layer shapes do not chain");
    for (double w : net.fc1.weights)
        if (!std::isfinite(w)) throw io_error("net: non-finite fc1 weight");
    validate(net.fc2);
}

void init_rows(std::vector<double>& weights, std::size_t in_dims, std::size_t out_dims,
               std::size_t row_begin, std::size_t row_end, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in_dims + out_dims));
    for (std::size_t k = row_begin; k < row_end; ++k)
        for (std::size_t j = 0; j < in_dims; ++j)
            weights[k * in_dims + j] = rng.uniform(-bound, bound);
}

SoftmaxHead make_head(std::size_t in_dims, const std::vector<std::string>& labels,
                      bool with_bias, std::uint64_t seed) {
    SoftmaxHead head;
    head.in_dims = in_dims;
    head.labels = labels;
    head.weights.assign(labels.size() * in_dims, 0.0);
    if (with_bias) head.bias.assign(labels.size(), 0.0);
    head.frozen_cols = in_dims;
    Rng rng(seed);
    init_rows(head.weights, in_dims, labels.size(), 0, labels.size(), rng);
    validate(head);
    return head;
}

TwoLayerNet make_two_layer(std::size_t in_dims, std::size_t hidden_dims,
                           const std::vector<std::string>& labels, bool with_bias,
                           std::uint64_t seed) {
    TwoLayerNet net;
    net.fc1.in_dims = in_dims;
    net.fc1.out_dims = hidden_dims;
    net.fc1.weights.assign(hidden_dims * in_dims, 0.0);
    if (with_bias) net.fc1.bias.assign(hidden_dims, 0.0);
    net.fc2.in_dims = hidden_dims;
    net.fc2.labels = labels;
    net.fc2.weights.assign(labels.size() * hidden_dims, 0.0);
    if (with_bias) net.fc2.bias.assign(labels.size(), 0.0);
    net.fc2.frozen_cols = hidden_dims;
    Rng rng(seed);
    init_rows(net.fc1.weights, in_dims, hidden_dims, 0, hidden_dims, rng);
    init_rows(net.fc2.weights, hidden_dims, labels.size(), 0, labels.size(), rng);
    validate(net);
    return net;
}

std::vector<double> head_logits(const SoftmaxHead& head, const FeatureVector& v) {
    if (v.size() != head.in_dims) throw std::invalid_argument("head_logits: dimension mismatch");
    std::vector<double> logits(head.out_dims(), 0.0);
    for (std::size_t k = 0; k < head.out_dims(); ++k) {
        const double* w = head.row(k);
        // Frozen rows read only their original inputs so expansion cannot
        // perturb their outputs, not even by adding zeros.
        const std::size_t cols = k < head.frozen_rows ? head.frozen_cols : head.in_dims;
        double acc = 0.0;
        for (std::size_t j = 0; j < cols; ++j) acc += w[j] * v[j];
        if (head.has_bias()) acc += head.bias[k];
        logits[k] = acc;
    }
    return logits;
}

std::vector<double> softmax(const std::vector<double>& logits) {
    double hi = -std::numeric_limits<double>::infinity();
    for (double z : logits) hi = std::max(hi, z);
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (std::size_t k = 0; k < logits.size(); ++k) {
        p[k] = std::exp(logits[k] - hi);
        sum += p[k];
    }
    for (double& x : p) x /= sum;
    return p;
}

std::size_t argmax(const std::vector<double>& values) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[best]) best = i;
    return best;
}

namespace {

// -ln softmax(logits)[target], computed from the shifted log-sum.
double ce_from_logits(const std::vector<double>& logits, std::size_t target) {
    double hi = -std::numeric_limits<double>::infinity();
    for (double z : logits) hi = std::max(hi, z);
    double sum = 0.0;
    for (double z : logits) sum += std::exp(z - hi);
    return -(logits[target] - hi - std::log(sum));
}

void check_batch(const Batch& batch, std::size_t out_dims) {
    if (batch.inputs.size() != batch.targets.size())
        throw std::invalid_argument("batch: inputs/targets length mismatch");
    if (batch.inputs.empty()) throw std::invalid_argument("batch: empty");
    for (std::size_t t : batch.targets)
        if (t >= out_dims) throw std::invalid_argument("batch: target out of range");
}

}  // namespace

double ce_loss_head(const SoftmaxHead& head, const Batch& batch) {
    check_batch(batch, head.out_dims());
    double loss = 0.0;
    for (std::size_t k = 0; k < batch.inputs.size(); ++k)
        loss += ce_from_logits(head_logits(head, batch.inputs[k]), batch.targets[k]);
    return loss / static_cast<double>(batch.inputs.size());
}

HeadGrad ce_grad_head(const SoftmaxHead& head, const Batch& batch) {
    check_batch(batch, head.out_dims());
    HeadGrad grad;
    grad.weights.assign(head.weights.size(), 0.0);
    if (head.has_bias()) grad.bias.assign(head.bias.size(), 0.0);

    const double inv_b = 1.0 / static_cast<double>(batch.inputs.size());
    for (std::size_t s = 0; s < batch.inputs.size(); ++s) {
        const FeatureVector& v = batch.inputs[s];
        const auto logits = head_logits(head, v);
        const auto p = softmax(logits);
        grad.loss += ce_from_logits(logits, batch.targets[s]);
        for (std::size_t k = head.frozen_rows; k < head.out_dims(); ++k) {
            const double dz = (p[k] - (k == batch.targets[s] ? 1.0 : 0.0)) * inv_b;
            double* g = grad.weights.data() + k * head.in_dims;
            for (std::size_t j = 0; j < head.in_dims; ++j) g[j] += dz * v[j];
            if (head.has_bias()) grad.bias[k] += dz;
        }
    }
    grad.loss *= inv_b;
    return grad;
}

ForwardTrace two_layer_forward(const TwoLayerNet& net, const FeatureVector& v) {
    if (v.size() != net.fc1.in_dims)
        throw std::invalid_argument("two_layer_forward: dimension mismatch");
    ForwardTrace trace;
    trace.hidden.assign(net.fc1.out_dims, 0.0);
    for (std::size_t r = 0; r < net.fc1.out_dims; ++r) {
        const double* w = net.fc1.row(r);
        double acc = 0.0;
        for (std::size_t j = 0; j < net.fc1.in_dims; ++j) acc += w[j] * v[j];
        if (net.fc1.has_bias()) acc += net.fc1.bias[r];
        trace.hidden[r] = acc > 0.0 ? acc : 0.0;
    }
    trace.logits = head_logits(net.fc2, trace.hidden);
    return trace;
}

namespace {

TwoLayerGrad backprop_core(const TwoLayerNet& net, const std::vector<FeatureVector>& inputs,
                           const std::vector<std::vector<double>>& dlogits,
                           const std::vector<ForwardTrace>& traces) {
    TwoLayerGrad grad;
    grad.fc1_weights.assign(net.fc1.weights.size(), 0.0);
    if (net.fc1.has_bias()) grad.fc1_bias.assign(net.fc1.bias.size(), 0.0);
    grad.fc2_weights.assign(net.fc2.weights.size(), 0.0);
    if (net.fc2.has_bias()) grad.fc2_bias.assign(net.fc2.bias.size(), 0.0);

    const std::size_t hidden = net.fc1.out_dims;
    const double inv_b = 1.0 / static_cast<double>(inputs.size());
    std::vector<double> dhidden(hidden);

    for (std::size_t s = 0; s < inputs.size(); ++s) {
        const auto& h = traces[s].hidden;
        const auto& dz = dlogits[s];
        std::fill(dhidden.begin(), dhidden.end(), 0.0);
        for (std::size_t k = 0; k < net.fc2.out_dims(); ++k) {
            const double d = dz[k] * inv_b;
            const double* w = net.fc2.row(k);
            for (std::size_t j = 0; j < hidden; ++j) dhidden[j] += w[j] * dz[k];
            if (k < net.fc2.frozen_rows) continue;
            double* g = grad.fc2_weights.data() + k * hidden;
            for (std::size_t j = 0; j < hidden; ++j) g[j] += d * h[j];
            if (net.fc2.has_bias()) grad.fc2_bias[k] += d;
        }
        const FeatureVector& v = inputs[s];
        for (std::size_t r = net.fc1.frozen_rows; r < hidden; ++r) {
            if (h[r] <= 0.0) continue;  // rectifier gate
            const double d = dhidden[r] * inv_b;
            double* g = grad.fc1_weights.data() + r * net.fc1.in_dims;
            for (std::size_t j = 0; j < net.fc1.in_dims; ++j) g[j] += d * v[j];
            if (net.fc1.has_bias()) grad.fc1_bias[r] += d;
        }
    }
    return grad;
}

}  // namespace

TwoLayerGrad two_layer_backprop(const TwoLayerNet& net,
                                const std::vector<FeatureVector>& inputs,
                                const std::vector<std::vector<double>>& dlogits) {
    if (inputs.size() != dlogits.size())
        throw std::invalid_argument("two_layer_backprop: length mismatch");
    std::vector<ForwardTrace> traces;
    traces.reserve(inputs.size());
    for (const auto& v : inputs) traces.push_back(two_layer_forward(net, v));
    return backprop_core(net, inputs, dlogits, traces);
}

double ce_loss_two_layer(const TwoLayerNet& net, const Batch& batch) {
    check_batch(batch, net.fc2.out_dims());
    double loss = 0.0;
    for (std::size_t k = 0; k < batch.inputs.size(); ++k)
        loss += ce_from_logits(two_layer_forward(net, batch.inputs[k]).logits, batch.targets[k]);
    return loss / static_cast<double>(batch.inputs.size());
}

TwoLayerGrad ce_grad_two_layer(const TwoLayerNet& net, const Batch& batch) {
    check_batch(batch, net.fc2.out_dims());
    std::vector<ForwardTrace> traces;
    traces.reserve(batch.inputs.size());
    std::vector<std::vector<double>> dlogits(batch.inputs.size());
    double loss = 0.0;
    for (std::size_t s = 0; s < batch.inputs.size(); ++s) {
        traces.push_back(two_layer_forward(net, batch.inputs[s]));
        loss += ce_from_logits(traces[s].logits, batch.targets[s]);
        dlogits[s] = softmax(traces[s].logits);
        dlogits[s][batch.targets[s]] -= 1.0;
    }
    TwoLayerGrad grad = backprop_core(net, batch.inputs, dlogits, traces);
    grad.loss = loss / static_cast<double>(batch.inputs.size());
    return grad;
}

namespace {

void momentum_update(std::vector<double>& params, std::vector<double>& velocity,
                     const std::vector<double>& grad, double lr, double momentum) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        velocity[i] = momentum * velocity[i] + grad[i];
        params[i] -= lr * velocity[i];
    }
}

}  // namespace

TwoLayerNet train_base(const FeatureSet& features, std::size_t hidden_dims,
                       const std::vector<std::string>& labels, const TrainConfig& cfg,
                       bool with_bias, bool verbose) {
    if (labels.size() < 2) throw std::invalid_argument("train_base: need at least 2 labels");
    validate(features);

    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < labels.size(); ++i) index[labels[i]] = i;
    std::vector<std::size_t> counts(labels.size(), 0);
    std::vector<std::size_t> targets(features.records.size());
    for (std::size_t k = 0; k < features.records.size(); ++k) {
        auto it = index.find(features.records[k].label);
        if (it == index.end())
            throw std::invalid_argument("train_base: feature label not in label set: " +
                                        features.records[k].label);
        targets[k] = it->second;
        ++counts[it->second];
    }
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (counts[i] == 0)
            throw std::invalid_argument("train_base: no samples for label " + labels[i]);

    TwoLayerNet net = make_two_layer(features.dims, hidden_dims, labels, with_bias,
                                     derive_seed(cfg.seed, "init"));
    Rng shuffle_rng(derive_seed(cfg.seed, "batch"));

    const std::size_t n = features.records.size();
    const std::size_t batch_size = std::min(cfg.batch_per_class * labels.size(), n);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    shuffle_rng.shuffle(order);
    std::size_t cursor = 0;

    std::vector<double> v_fc1(net.fc1.weights.size(), 0.0);
    std::vector<double> v_fc1_b(net.fc1.bias.size(), 0.0);
    std::vector<double> v_fc2(net.fc2.weights.size(), 0.0);
    std::vector<double> v_fc2_b(net.fc2.bias.size(), 0.0);

    Batch batch;
    for (std::size_t iter = 0; iter < cfg.iters; ++iter) {
        batch.inputs.clear();
        batch.targets.clear();
        for (std::size_t i = 0; i < batch_size; ++i) {
            if (cursor == n) {
                shuffle_rng.shuffle(order);
                cursor = 0;
            }
            batch.inputs.push_back(features.records[order[cursor]].vector);
            batch.targets.push_back(targets[order[cursor]]);
            ++cursor;
        }
        TwoLayerGrad grad = ce_grad_two_layer(net, batch);
        if (!std::isfinite(grad.loss)) throw numeric_error("train_base: non-finite loss");
        momentum_update(net.fc1.weights, v_fc1, grad.fc1_weights, cfg.lr, cfg.momentum);
        if (net.fc1.has_bias())
            momentum_update(net.fc1.bias, v_fc1_b, grad.fc1_bias, cfg.lr, cfg.momentum);
        momentum_update(net.fc2.weights, v_fc2, grad.fc2_weights, cfg.lr, cfg.momentum);
        if (net.fc2.has_bias())
            momentum_update(net.fc2.bias, v_fc2_b, grad.fc2_bias, cfg.lr, cfg.momentum);
        if (verbose && iter % 100 == 0)
            std::printf("iter %zu loss %.6f\n", iter, grad.loss);
    }
    return net;
}

Classifier make_classifier(const SoftmaxHead& head) {
    return [head](const FeatureVector& v) { return head.labels[argmax(head_logits(head, v))]; };
}

Classifier make_classifier(const TwoLayerNet& net) {
    return [net](const FeatureVector& v) {
        return net.labels()[argmax(two_layer_forward(net, v).logits)];
    };
}

namespace {

nlohmann::ordered_json matrix_json(const std::vector<double>& w, std::size_t rows,
                                   std::size_t cols) {
    nlohmann::ordered_json out = nlohmann::ordered_json::array();
    for (std::size_t r = 0; r < rows; ++r) {
        nlohmann::ordered_json row = nlohmann::ordered_json::array();
        for (std::size_t c = 0; c < cols; ++c) row.push_back(w[r * cols + c]);
        out.push_back(std::move(row));
    }
    return out;
}

std::vector<double> matrix_from_json(const nlohmann::json& j, std::size_t rows,
                                     std::size_t cols, const char* what) {
    if (j.size() != rows) throw io_error(std::string("model: bad row count in ") + what);
    std::vector<double> w;
    w.reserve(rows * cols);
    for (const auto& row : j) {
        if (row.size() != cols) throw io_error(std::string("model: bad column count in ") + what);
        for (const auto& x : row) w.push_back(x.get<double>());
    }
    return w;
}

nlohmann::ordered_json bias_json(const std::vector<double>& b) {
    if (b.empty()) return nullptr;
    return nlohmann::ordered_json(b);
}

std::vector<double> bias_from_json(const nlohmann::json& j) {
    if (j.is_null()) return {};
    return j.get<std::vector<double>>();
}

void write_json(const nlohmann::ordered_json& doc, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write model: " + path);
    out << doc.dump() << '\n';
    if (!out) throw io_error("write failed: " + path);
}

nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open model: " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw io_error("model parse error: " + std::string(e.what()));
    }
    return doc;
}

}  // namespace

void save_model(const SoftmaxHead& head, const std::string& path) {
    validate(head);
    nlohmann::ordered_json doc;
    doc["format"] = "lsne-model";
    doc["version"] = 1;
    doc["kind"] = "head";
    doc["labels"] = head.labels;
    doc["dims"] = {{"in", head.in_dims}, {"out", head.out_dims()}};
    doc["weights"] = {{"w", matrix_json(head.weights, head.out_dims(), head.in_dims)},
                      {"b", bias_json(head.bias)}};
    doc["frozen"] = {{"rows", head.frozen_rows}, {"cols", head.frozen_cols}};
    write_json(doc, path);
}

void save_model(const TwoLayerNet& net, const std::string& path) {
    validate(net);
    nlohmann::ordered_json doc;
    doc["format"] = "lsne-model";
    doc["version"] = 1;
    doc["kind"] = "two-layer";
    doc["labels"] = net.fc2.labels;
    doc["dims"] = {{"in", net.fc1.in_dims}, {"hidden", net.fc1.out_dims},
                   {"out", net.fc2.out_dims()}};
    doc["weights"] = {{"fc1", matrix_json(net.fc1.weights, net.fc1.out_dims, net.fc1.in_dims)},
                      {"fc1_b", bias_json(net.fc1.bias)},
                      {"fc2", matrix_json(net.fc2.weights, net.fc2.out_dims(), net.fc2.in_dims)},
                      {"fc2_b", bias_json(net.fc2.bias)}};
    doc["frozen"] = {{"fc1_rows", net.fc1.frozen_rows},
                     {"fc2_rows", net.fc2.frozen_rows},
                     {"fc2_cols", net.fc2.frozen_cols}};
    write_json(doc, path);
}

std::variant<SoftmaxHead, TwoLayerNet> load_model(const std::string& path) {
    nlohmann::json doc = read_json(path);
    try {
        if (doc.at("format") != "lsne-model" || doc.at("version") != 1)
            throw io_error("model: unknown format/version in " + path);
        const std::string kind = doc.at("kind").get<std::string>();
        if (kind == "head") {
            SoftmaxHead head;
            head.labels = doc.at("labels").get<std::vector<std::string>>();
            head.in_dims = doc.at("dims").at("in").get<std::size_t>();
            head.weights = matrix_from_json(doc.at("weights").at("w"), head.labels.size(),
                                            head.in_dims, "w");
            head.bias = bias_from_json(doc.at("weights").at("b"));
            head.frozen_rows = doc.at("frozen").at("rows").get<std::size_t>();
            head.frozen_cols = doc.at("frozen").at("cols").get<std::size_t>();
            validate(head);
            return head;
        }
        if (kind == "two-layer") {
            TwoLayerNet net;
            net.fc2.labels = doc.at("labels").get<std::vector<std::string>>();
            net.fc1.in_dims = doc.at("dims").at("in").get<std::size_t>();
            net.fc1.out_dims = doc.at("dims").at("hidden").get<std::size_t>();
            net.fc2.in_dims = net.fc1.out_dims;
            net.fc1.weights = matrix_from_json(doc.at("weights").at("fc1"), net.fc1.out_dims,
                                               net.fc1.in_dims, "fc1");
            net.fc1.bias = bias_from_json(doc.at("weights").at("fc1_b"));
            net.fc2.weights = matrix_from_json(doc.at("weights").at("fc2"),
                                               net.fc2.labels.size(), net.fc2.in_dims, "fc2");
            net.fc2.bias = bias_from_json(doc.at("weights").at("fc2_b"));
            net.fc1.frozen_rows = doc.at("frozen").at("fc1_rows").get<std::size_t>();
            net.fc2.frozen_rows = doc.at("frozen").at("fc2_rows").get<std::size_t>();
            net.fc2.frozen_cols = doc.at("frozen").at("fc2_cols").get<std::size_t>();
            validate(net);
            return net;
        }
        throw io_error("model: unknown kind '" + kind + "' in " + path);
    } catch (const nlohmann::json::exception& e) {
        throw io_error("model schema error: " + std::string(e.what()));
    }
}

}  // namespace lsne
