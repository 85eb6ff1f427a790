#include "lsne/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include <json.hpp>

#include "lsne/errors.hpp"

namespace lsne {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // ln(2*pi)

double log_normal_diag(const double* x, const double* mean, const double* var,
                       std::size_t dims) {
    double acc = 0.0;
    for (std::size_t j = 0; j < dims; ++j) {
        const double d = x[j] - mean[j];
        acc += std::log(var[j]) + d * d / var[j];
    }
    return -0.5 * (static_cast<double>(dims) * kLog2Pi + acc);
}

double log_sum_exp(const std::vector<double>& v) {
    double hi = -std::numeric_limits<double>::infinity();
    for (double x : v) hi = std::max(hi, x);
    if (!std::isfinite(hi)) return hi;
    double s = 0.0;
    for (double x : v) s += std::exp(x - hi);
    return hi + std::log(s);
}

}  // namespace

void validate(const DiagGmm& model, double weight_tol) {
    const std::size_t m = model.weights.size();
    if (m == 0 || model.dims == 0) throw io_error("gmm: empty model");
    if (model.means.size() != m || model.variances.size() != m)
        throw io_error("gmm: component count mismatch");
    double sum = 0.0;
    for (double w : model.weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw io_error("gmm: invalid weight");
        sum += w;
    }
    if (std::fabs(sum - 1.0) > weight_tol) throw io_error("gmm: weights do not sum to 1");
    for (std::size_t i = 0; i < m; ++i) {
        if (model.means[i].size() != model.dims || model.variances[i].size() != model.dims)
            throw io_error("gmm: component dimension mismatch");
        for (double mu : model.means[i])
            if (!std::isfinite(mu)) throw io_error("gmm: non-finite mean");
        for (double v : model.variances[i])
            if (!(v > 0.0) || !std::isfinite(v)) throw io_error("gmm: non-positive variance");
    }
}

void validate(const GmmBank& bank) {
    std::vector<std::string> seen;
    for (const auto& [label, model] : bank.entries) {
        if (model.dims != bank.dims) throw io_error("gmm bank: dims mismatch for " + label);
        if (std::find(seen.begin(), seen.end(), label) != seen.end())
            throw io_error("gmm bank: duplicate label " + label);
        seen.push_back(label);
        validate(model);
    }
}

EmFit fit_em(const std::vector<FeatureVector>& data, const EmConfig& cfg) {
    if (data.empty()) throw std::invalid_argument("fit_em: empty data");
    if (cfg.mixtures == 0) throw std::invalid_argument("fit_em: mixtures must be >= 1");
    if (!(cfg.variance_floor > 0.0)) throw std::invalid_argument("fit_em: variance floor must be > 0");

    const std::size_t n = data.size();
    const std::size_t dims = data[0].size();
    for (const auto& v : data)
        if (v.size() != dims) throw std::invalid_argument("fit_em: inconsistent dimensions");

    EmFit fit;
    fit.mixtures_reduced = cfg.mixtures > n;
    const std::size_t m = std::min(cfg.mixtures, n);

    Rng rng(cfg.seed);

    // k-means++-style seeding: first center uniform, then squared-distance
    // weighted picks; one assignment pass initializes the parameters.
    std::vector<std::size_t> centers;
    centers.reserve(m);
    centers.push_back(static_cast<std::size_t>(rng.below(n)));
    std::vector<double> d2(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        double acc = 0.0;
        for (std::size_t j = 0; j < dims; ++j) {
            const double d = data[k][j] - data[centers[0]][j];
            acc += d * d;
        }
        d2[k] = acc;
    }
    while (centers.size() < m) {
        double total = 0.0;
        for (double d : d2) total += d;
        std::size_t pick;
        if (total <= 0.0) {
            pick = static_cast<std::size_t>(rng.below(n));
        } else {
            double r = rng.uniform() * total;
            pick = n - 1;
            for (std::size_t k = 0; k < n; ++k) {
                r -= d2[k];
                if (r <= 0.0) { pick = k; break; }
            }
        }
        centers.push_back(pick);
        for (std::size_t k = 0; k < n; ++k) {
            double acc = 0.0;
            for (std::size_t j = 0; j < dims; ++j) {
                const double d = data[k][j] - data[pick][j];
                acc += d * d;
            }
            d2[k] = std::min(d2[k], acc);
        }
    }

    std::vector<std::size_t> assign(n, 0);
    for (std::size_t k = 0; k < n; ++k) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < m; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < dims; ++j) {
                const double d = data[k][j] - data[centers[i]][j];
                acc += d * d;
            }
            if (acc < best) { best = acc; assign[k] = i; }
        }
    }

    // Global variance backs empty clusters.
    std::vector<double> global_mean(dims, 0.0), global_var(dims, 0.0);
    for (const auto& x : data)
        for (std::size_t j = 0; j < dims; ++j) global_mean[j] += x[j];
    for (std::size_t j = 0; j < dims; ++j) global_mean[j] /= static_cast<double>(n);
    for (const auto& x : data)
        for (std::size_t j = 0; j < dims; ++j) {
            const double d = x[j] - global_mean[j];
            global_var[j] += d * d;
        }
    for (std::size_t j = 0; j < dims; ++j)
        global_var[j] = std::max(global_var[j] / static_cast<double>(n), cfg.variance_floor);

    DiagGmm model;
    model.dims = dims;
    model.weights.assign(m, 0.0);
    model.means.assign(m, std::vector<double>(dims, 0.0));
    model.variances.assign(m, std::vector<double>(dims, 0.0));

    std::vector<std::size_t> counts(m, 0);
    for (std::size_t k = 0; k < n; ++k) {
        ++counts[assign[k]];
        for (std::size_t j = 0; j < dims; ++j) model.means[assign[k]][j] += data[k][j];
    }
    for (std::size_t i = 0; i < m; ++i) {
        if (counts[i] > 0) {
            for (std::size_t j = 0; j < dims; ++j)
                model.means[i][j] /= static_cast<double>(counts[i]);
        } else {
            model.means[i] = data[centers[i]];
        }
    }
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t j = 0; j < dims; ++j) {
            const double d = data[k][j] - model.means[assign[k]][j];
            model.variances[assign[k]][j] += d * d;
        }
    double weight_total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        if (counts[i] > 0) {
            for (std::size_t j = 0; j < dims; ++j)
                model.variances[i][j] = std::max(
                    model.variances[i][j] / static_cast<double>(counts[i]), cfg.variance_floor);
        } else {
            model.variances[i] = global_var;
        }
        model.weights[i] = static_cast<double>(std::max<std::size_t>(counts[i], 1));
        weight_total += model.weights[i];
    }
    for (double& w : model.weights) w /= weight_total;

    // EM. Each iteration records the mean log-likelihood under the current
    // parameters before updating them, so the recorded trace is the standard
    // non-decreasing EM sequence.
    std::vector<std::vector<double>> resp(n, std::vector<double>(m, 0.0));
    std::vector<double> comp_lp(m);
    std::vector<double> log_w(m);

    for (std::size_t iter = 0; iter < cfg.max_iters; ++iter) {
        for (std::size_t i = 0; i < m; ++i)
            log_w[i] = model.weights[i] > 0.0 ? std::log(model.weights[i])
                                              : -std::numeric_limits<double>::infinity();
        double ll = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            for (std::size_t i = 0; i < m; ++i)
                comp_lp[i] = log_w[i] + log_normal_diag(data[k].data(), model.means[i].data(),
                                                        model.variances[i].data(), dims);
            const double lse = log_sum_exp(comp_lp);
            ll += lse;
            for (std::size_t i = 0; i < m; ++i)
                resp[k][i] = std::isfinite(lse) ? std::exp(comp_lp[i] - lse)
                                                : 1.0 / static_cast<double>(m);
        }
        ll /= static_cast<double>(n);
        if (!std::isfinite(ll)) throw numeric_error("fit_em: non-finite log-likelihood");

        const bool converged =
            !fit.log_likelihood.empty() &&
            (ll - fit.log_likelihood.back()) <
                cfg.rel_tol * std::max(1.0, std::fabs(fit.log_likelihood.back()));
        fit.log_likelihood.push_back(ll);
        if (converged) break;

        for (std::size_t i = 0; i < m; ++i) {
            double nk = 0.0;
            for (std::size_t k = 0; k < n; ++k) nk += resp[k][i];
            if (nk <= 0.0) {
                model.weights[i] = 0.0;
                continue;  // dead component keeps its parameters
            }
            model.weights[i] = nk / static_cast<double>(n);
            std::vector<double>& mean = model.means[i];
            std::fill(mean.begin(), mean.end(), 0.0);
            for (std::size_t k = 0; k < n; ++k)
                for (std::size_t j = 0; j < dims; ++j) mean[j] += resp[k][i] * data[k][j];
            for (std::size_t j = 0; j < dims; ++j) mean[j] /= nk;
            std::vector<double>& var = model.variances[i];
            std::fill(var.begin(), var.end(), 0.0);
            for (std::size_t k = 0; k < n; ++k)
                for (std::size_t j = 0; j < dims; ++j) {
                    const double d = data[k][j] - mean[j];
                    var[j] += resp[k][i] * d * d;
                }
            for (std::size_t j = 0; j < dims; ++j)
                var[j] = std::max(var[j] / nk, cfg.variance_floor);
        }
        double wsum = 0.0;
        for (double w : model.weights) wsum += w;
        for (double& w : model.weights) w /= wsum;
    }

    fit.model = std::move(model);
    validate(fit.model);
    return fit;
}

double log_pdf(const DiagGmm& model, const FeatureVector& v) {
    if (v.size() != model.dims) throw std::invalid_argument("log_pdf: dimension mismatch");
    std::vector<double> comp_lp(model.mixtures());
    for (std::size_t i = 0; i < model.mixtures(); ++i)
        comp_lp[i] = (model.weights[i] > 0.0 ? std::log(model.weights[i])
                                             : -std::numeric_limits<double>::infinity()) +
                     log_normal_diag(v.data(), model.means[i].data(),
                                     model.variances[i].data(), model.dims);
    return log_sum_exp(comp_lp);
}

std::vector<FeatureVector> sample(const DiagGmm& model, std::size_t n, Rng& rng) {
    validate(model);
    std::vector<FeatureVector> out;
    out.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double r = rng.uniform();
        std::size_t comp = model.mixtures() - 1;
        double acc = 0.0;
        for (std::size_t i = 0; i < model.mixtures(); ++i) {
            acc += model.weights[i];
            if (r < acc) { comp = i; break; }
        }
        FeatureVector v(model.dims);
        for (std::size_t j = 0; j < model.dims; ++j)
            v[j] = model.means[comp][j] + std::sqrt(model.variances[comp][j]) * rng.gaussian();
        out.push_back(std::move(v));
    }
    return out;
}

GmmBank fit_bank(const LabeledVectors& sets, const EmConfig& cfg) {
    if (sets.empty()) throw std::invalid_argument("fit_bank: no classes");
    GmmBank bank;
    bank.dims = sets.front().second.empty() ? 0 : sets.front().second.front().size();
    for (const auto& [label, vectors] : sets) {
        if (vectors.empty()) throw std::invalid_argument("fit_bank: empty class " + label);
        EmConfig class_cfg = cfg;
        class_cfg.seed = cfg.seed ^ fnv1a64(label);
        bank.entries.emplace_back(label, fit_em(vectors, class_cfg).model);
    }
    validate(bank);
    return bank;
}

FeatureVector mixture_mean(const DiagGmm& model) {
    FeatureVector mean(model.dims, 0.0);
    for (std::size_t i = 0; i < model.mixtures(); ++i)
        for (std::size_t j = 0; j < model.dims; ++j)
            mean[j] += model.weights[i] * model.means[i][j];
    return mean;
}

double mean_variance(const GmmBank& bank) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& [label, model] : bank.entries)
        for (const auto& var : model.variances) {
            for (double v : var) sum += v;
            count += var.size();
        }
    if (count == 0) throw std::invalid_argument("mean_variance: empty bank");
    return sum / static_cast<double>(count);
}

std::vector<std::string> bank_labels(const GmmBank& bank) {
    std::vector<std::string> out;
    out.reserve(bank.entries.size());
    for (const auto& [label, model] : bank.entries) out.push_back(label);
    return out;
}

const DiagGmm* find_class(const GmmBank& bank, std::string_view label) {
    for (const auto& [l, model] : bank.entries)
        if (l == label) return &model;
    return nullptr;
}

void save_bank(const GmmBank& bank, const std::string& path) {
    validate(bank);
    nlohmann::ordered_json doc;
    doc["format"] = "lsne-gmm-bank";
    doc["version"] = 1;
    doc["dims"] = bank.dims;
    doc["classes"] = nlohmann::ordered_json::array();
    for (const auto& [label, model] : bank.entries) {
        nlohmann::ordered_json entry;
        entry["label"] = label;
        entry["weights"] = model.weights;
        entry["means"] = model.means;
        entry["variances"] = model.variances;
        doc["classes"].push_back(std::move(entry));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write gmm bank: " + path);
    out << doc.dump() << '\n';
    if (!out) throw io_error("write failed: " + path);
}

GmmBank load_bank(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open gmm bank: " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw io_error("gmm bank parse error: " + std::string(e.what()));
    }
    try {
        if (doc.at("format") != "lsne-gmm-bank" || doc.at("version") != 1)
            throw io_error("gmm bank: unknown format/version in " + path);
        GmmBank bank;
        bank.dims = doc.at("dims").get<std::size_t>();
        for (const auto& entry : doc.at("classes")) {
            DiagGmm model;
            model.dims = bank.dims;
            model.weights = entry.at("weights").get<std::vector<double>>();
            model.means = entry.at("means").get<std::vector<std::vector<double>>>();
            model.variances = entry.at("variances").get<std::vector<std::vector<double>>>();
            bank.entries.emplace_back(entry.at("label").get<std::string>(), std::move(model));
        }
        validate(bank);
        return bank;
    } catch (const nlohmann::json::exception& e) {
        throw io_error("gmm bank schema error: " + std::string(e.what()));
    }
}

}  // namespace lsne
