#include "lsne/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <thread>
#include <unordered_set>

#include "lsne/errors.hpp"

namespace lsne {

namespace {

constexpr std::size_t kPlacementTries = 10000;

FeatureVector uniform_box(std::size_t dims, double half_width, Rng& rng) {
    FeatureVector v(dims);
    for (double& x : v) x = rng.uniform(-half_width, half_width);
    return v;
}

FeatureVector unit_direction(std::size_t dims, Rng& rng) {
    FeatureVector v(dims);
    double norm = 0.0;
    do {
        norm = 0.0;
        for (double& x : v) {
            x = rng.gaussian();
            norm += x * x;
        }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return v;
}

double distance(const FeatureVector& a, const FeatureVector& b) {
    double acc = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        const double d = a[j] - b[j];
        acc += d * d;
    }
    return std::sqrt(acc);
}

double min_distance(const FeatureVector& v, const std::vector<FeatureVector>& others) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& o : others) best = std::min(best, distance(v, o));
    return best;
}

FeatureVector place_mean(std::size_t dims, double half_width, double clearance,
                         const std::vector<FeatureVector>& placed, Rng& rng,
                         const char* constraint) {
    for (std::size_t attempt = 0; attempt < kPlacementTries; ++attempt) {
        FeatureVector candidate = uniform_box(dims, half_width, rng);
        if (placed.empty() || min_distance(candidate, placed) >= clearance) return candidate;
    }
    throw io_error(std::string("scenario placement infeasible: ") + constraint);
}

// Random diagonal-Gaussian mixture centered on a class mean. Component
// offsets and stddev ranges pin the within-class per-coordinate stddev to
// ~0.67 (at most 0.81), which the acceptance thresholds rely on.
struct ClassMixture {
    std::vector<double> weights;
    std::vector<FeatureVector> comp_means;
    std::vector<std::vector<double>> comp_stddevs;
};

ClassMixture make_class_mixture(const FeatureVector& center, std::size_t mixtures, Rng& rng) {
    ClassMixture mix;
    mix.weights.resize(mixtures);
    double total = 0.0;
    for (double& w : mix.weights) {
        w = rng.uniform(0.5, 1.5);
        total += w;
    }
    for (double& w : mix.weights) w /= total;
    for (std::size_t i = 0; i < mixtures; ++i) {
        FeatureVector mean(center.size());
        std::vector<double> stddev(center.size());
        for (std::size_t j = 0; j < center.size(); ++j) {
            mean[j] = center[j] + 0.4 * rng.gaussian();
            stddev[j] = rng.uniform(0.35, 0.7);
        }
        mix.comp_means.push_back(std::move(mean));
        mix.comp_stddevs.push_back(std::move(stddev));
    }
    return mix;
}

FeatureVector draw_from_mixture(const ClassMixture& mix, Rng& rng) {
    const double r = rng.uniform();
    std::size_t comp = mix.weights.size() - 1;
    double acc = 0.0;
    for (std::size_t i = 0; i < mix.weights.size(); ++i) {
        acc += mix.weights[i];
        if (r < acc) {
            comp = i;
            break;
        }
    }
    FeatureVector v(mix.comp_means[comp].size());
    for (std::size_t j = 0; j < v.size(); ++j)
        v[j] = mix.comp_means[comp][j] + mix.comp_stddevs[comp][j] * rng.gaussian();
    return v;
}

}  // namespace

Scenario gen_scenario(const ScenarioSpec& spec) {
    if (spec.scenario < 1 || spec.scenario > 3)
        throw std::invalid_argument("gen_scenario: scenario must be 1, 2 or 3");
    if (spec.dims == 0 || spec.base_count == 0 || spec.class_mixtures == 0 ||
        spec.train_per_class == 0 || spec.test_per_class == 0)
        throw std::invalid_argument("gen_scenario: counts must be positive");
    if (spec.separation < 0.0 || spec.novel_novel_gap < 0.0 || spec.novel_base_gap < 0.0)
        throw std::invalid_argument("gen_scenario: gaps must be >= 0");
    if (spec.scenario == 3 && spec.novel_count > spec.base_count)
        throw std::invalid_argument(
            "gen_scenario: scenario 3 needs novel_count <= base_count (one distinct base "
            "anchor per novel class)");

    Rng rng(spec.seed);
    // Box sizing keeps the expected pairwise distance of uniform points well
    // above `separation` at any dimensionality, so rejection stays cheap.
    const double half_width =
        std::max(2.0, 2.0 * spec.separation / std::sqrt(static_cast<double>(spec.dims)));

    Scenario out;
    for (std::size_t i = 0; i < spec.base_count; ++i)
        out.base_labels.push_back("base_" + std::to_string(i));
    for (std::size_t i = 0; i < spec.novel_count; ++i)
        out.novel_labels.push_back("novel_" + std::to_string(i));

    std::vector<FeatureVector> base_means;
    for (std::size_t i = 0; i < spec.base_count; ++i)
        base_means.push_back(place_mean(spec.dims, half_width, spec.separation, base_means, rng,
                                        "base mean separation"));

    std::vector<FeatureVector> novel_means;
    if (spec.scenario == 1) {
        std::vector<FeatureVector> placed = base_means;
        for (std::size_t i = 0; i < spec.novel_count; ++i) {
            placed.push_back(place_mean(spec.dims, half_width, spec.separation, placed, rng,
                                        "novel mean separation"));
            novel_means.push_back(placed.back());
        }
    } else if (spec.scenario == 2) {
        // All novel means sit on a sphere of radius gap/2 around a shared
        // anchor, so pairwise novel distances stay within the gap while the
        // anchor's clearance keeps them `separation` away from base means.
        FeatureVector anchor =
            place_mean(spec.dims, half_width, spec.separation + spec.novel_novel_gap / 2.0,
                       base_means, rng, "novel anchor clearance");
        for (std::size_t i = 0; i < spec.novel_count; ++i) {
            FeatureVector dir = unit_direction(spec.dims, rng);
            FeatureVector mean(spec.dims);
            for (std::size_t j = 0; j < spec.dims; ++j)
                mean[j] = anchor[j] + (spec.novel_novel_gap / 2.0) * dir[j];
            novel_means.push_back(std::move(mean));
        }
    } else {
        std::vector<std::size_t> anchors(spec.base_count);
        for (std::size_t i = 0; i < spec.base_count; ++i) anchors[i] = i;
        rng.shuffle(anchors);
        for (std::size_t i = 0; i < spec.novel_count; ++i) {
            FeatureVector dir = unit_direction(spec.dims, rng);
            FeatureVector mean(spec.dims);
            for (std::size_t j = 0; j < spec.dims; ++j)
                mean[j] = base_means[anchors[i]][j] + spec.novel_base_gap * dir[j];
            novel_means.push_back(std::move(mean));
        }
    }

    out.train.dims = spec.dims;
    out.test.dims = spec.dims;
    std::vector<FeatureVector> all_means = base_means;
    all_means.insert(all_means.end(), novel_means.begin(), novel_means.end());
    std::vector<std::string> all_labels = out.base_labels;
    all_labels.insert(all_labels.end(), out.novel_labels.begin(), out.novel_labels.end());

    for (std::size_t c = 0; c < all_means.size(); ++c) {
        ClassMixture mix = make_class_mixture(all_means[c], spec.class_mixtures, rng);
        for (std::size_t k = 0; k < spec.train_per_class; ++k)
            out.train.records.push_back({all_labels[c], draw_from_mixture(mix, rng)});
        for (std::size_t k = 0; k < spec.test_per_class; ++k)
            out.test.records.push_back({all_labels[c], draw_from_mixture(mix, rng)});
    }
    return out;
}

double TrialResult::base_err() const {
    return base_total == 0 ? 0.0
                           : 100.0 * static_cast<double>(base_wrong) /
                                 static_cast<double>(base_total);
}

double TrialResult::novel_err() const {
    return novel_total == 0 ? 0.0
                            : 100.0 * static_cast<double>(novel_wrong) /
                                  static_cast<double>(novel_total);
}

double TrialResult::overall_err() const {
    const std::size_t total = base_total + novel_total;
    return total == 0 ? 0.0
                      : 100.0 * static_cast<double>(base_wrong + novel_wrong) /
                            static_cast<double>(total);
}

TrialResult evaluate(const Classifier& classify, const FeatureSet& test,
                     const std::vector<std::string>& base_labels,
                     const std::vector<std::string>& novel_labels) {
    std::unordered_set<std::string> base(base_labels.begin(), base_labels.end());
    std::unordered_set<std::string> novel(novel_labels.begin(), novel_labels.end());

    TrialResult result;
    for (const auto& rec : test.records) {
        const bool is_base = base.count(rec.label) > 0;
        if (!is_base && novel.count(rec.label) == 0)
            throw io_error("evaluate: test label not covered: " + rec.label);
        const bool wrong = classify(rec.vector) != rec.label;
        if (is_base) {
            ++result.base_total;
            result.base_wrong += wrong;
        } else {
            ++result.novel_total;
            result.novel_wrong += wrong;
        }
    }
    return result;
}

const std::vector<std::string> kBenchMethods = {
    "gen-lsne", "gen-lsne-graddrop", "soft-dis", "soft-dis-graddrop", "ncm", "pknn"};

std::uint64_t trial_seed(std::uint64_t master_seed, std::size_t trial) {
    return master_seed + static_cast<std::uint64_t>(trial);
}

LabeledVectors draw_novel_pool(const FeatureSet& train,
                               const std::vector<std::string>& novel_labels, std::size_t n,
                               std::uint64_t seed) {
    if (n == 0) throw std::invalid_argument("draw_novel_pool: n must be >= 1");
    LabeledVectors groups = group_by_label(train);
    Rng rng(seed);
    LabeledVectors pool;
    for (const auto& label : novel_labels) {
        const std::vector<FeatureVector>* source = nullptr;
        for (const auto& [l, vectors] : groups)
            if (l == label) source = &vectors;
        if (source == nullptr) throw io_error("draw_novel_pool: label not in train set: " + label);
        if (source->size() < n)
            throw io_error("draw_novel_pool: not enough samples for " + label);
        std::vector<std::size_t> idx(source->size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        rng.shuffle(idx);
        std::vector<FeatureVector> chosen;
        chosen.reserve(n);
        for (std::size_t i = 0; i < n; ++i) chosen.push_back((*source)[idx[i]]);
        pool.push_back({label, std::move(chosen)});
    }
    return pool;
}

namespace {

Classifier run_method(const std::string& method, const TwoLayerNet& base_net,
                      const GmmBank& bank, const LabeledVectors& pool,
                      const std::vector<std::string>& novel_labels, const BenchConfig& cfg,
                      std::uint64_t train_seed) {
    if (method == "ncm") {
        PrototypeSet protos = ncm_build(bank, pool);
        return [protos](const FeatureVector& v) { return ncm_classify(protos, v); };
    }
    if (method == "pknn") {
        PrototypeSet protos = pknn_build(bank, pool);
        return [protos](const FeatureVector& v) { return pknn_classify(protos, v); };
    }
    if (method == "gen-lsne" || method == "gen-lsne-graddrop") {
        TrainConfig tc = cfg.train;
        tc.seed = train_seed;
        if (method == "gen-lsne") tc.grad_dropout_p = 1.0;
        ExpandedNet model =
            make_expanded(base_net, novel_labels, 0, derive_seed(train_seed, "init"));
        train_expansion(model, bank, pool, tc);
        return make_classifier(model.expanded);
    }
    if (method == "soft-dis" || method == "soft-dis-graddrop") {
        SoftDisConfig sc;
        static_cast<TrainConfig&>(sc) = cfg.train;
        sc.lambda = cfg.soft_lambda;
        sc.temperature = cfg.soft_temperature;
        sc.seed = train_seed;
        if (method == "soft-dis") sc.grad_dropout_p = 1.0;
        return make_classifier(soft_dis_train(base_net, bank, pool, sc));
    }
    throw std::invalid_argument("unknown method: " + method);
}

}  // namespace

std::vector<BenchRow> run_bench(const ScenarioSpec& spec, const BenchConfig& cfg) {
    if (cfg.methods.empty()) throw std::invalid_argument("run_bench: no methods");
    for (const auto& m : cfg.methods)
        if (std::find(kBenchMethods.begin(), kBenchMethods.end(), m) == kBenchMethods.end())
            throw std::invalid_argument("run_bench: unknown method " + m);
    if (cfg.sample_counts.empty()) throw std::invalid_argument("run_bench: no sample counts");
    if (cfg.trials == 0) throw std::invalid_argument("run_bench: trials must be >= 1");

    const std::size_t n_methods = cfg.methods.size();
    const std::size_t n_counts = cfg.sample_counts.size();
    std::vector<TrialResult> slots(n_methods * n_counts * cfg.trials);

    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr first_error;

    auto run_trial = [&](std::size_t t) {
        const std::uint64_t ts = trial_seed(spec.seed, t);
        ScenarioSpec trial_spec = spec;
        trial_spec.seed = ts;
        Scenario scenario = gen_scenario(trial_spec);

        FeatureSet base_train = split_by_label(scenario.train, scenario.base_labels).first;
        TrainConfig base_cfg = cfg.train;
        base_cfg.seed = derive_seed(ts, "base");
        TwoLayerNet base_net =
            train_base(base_train, cfg.base_hidden, scenario.base_labels, base_cfg);

        EmConfig em = cfg.em;
        em.seed = derive_seed(ts, "gmm");
        GmmBank bank = fit_bank(group_by_label(base_train), em);

        for (std::size_t ni = 0; ni < n_counts; ++ni) {
            const std::size_t n = cfg.sample_counts[ni];
            LabeledVectors pool = draw_novel_pool(scenario.train, scenario.novel_labels, n,
                                                  derive_seed(ts, "draw", n));
            const std::uint64_t train_seed_n = derive_seed(ts, "train", n);
            for (std::size_t mi = 0; mi < n_methods; ++mi) {
                Classifier classify = run_method(cfg.methods[mi], base_net, bank, pool,
                                                 scenario.novel_labels, cfg, train_seed_n);
                slots[(mi * n_counts + ni) * cfg.trials + t] =
                    evaluate(classify, scenario.test, scenario.base_labels,
                             scenario.novel_labels);
            }
        }
    };

    std::size_t workers = cfg.threads != 0 ? cfg.threads : std::thread::hardware_concurrency();
    workers = std::max<std::size_t>(1, std::min(workers, cfg.trials));

    auto worker = [&] {
        for (;;) {
            const std::size_t t = next.fetch_add(1);
            if (t >= cfg.trials) return;
            try {
                run_trial(t);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };

    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(worker);
        for (auto& th : threads) th.join();
    }
    if (first_error) std::rethrow_exception(first_error);

    std::vector<BenchRow> rows;
    for (std::size_t mi = 0; mi < n_methods; ++mi)
        for (std::size_t ni = 0; ni < n_counts; ++ni) {
            BenchRow row;
            row.method = cfg.methods[mi];
            row.samples = cfg.sample_counts[ni];
            row.trials = cfg.trials;
            for (std::size_t t = 0; t < cfg.trials; ++t) {
                const TrialResult& r = slots[(mi * n_counts + ni) * cfg.trials + t];
                row.overall_err += r.overall_err();
                row.base_err += r.base_err();
                row.novel_err += r.novel_err();
            }
            row.overall_err /= static_cast<double>(cfg.trials);
            row.base_err /= static_cast<double>(cfg.trials);
            row.novel_err /= static_cast<double>(cfg.trials);
            rows.push_back(std::move(row));
        }
    return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
    std::string out = "method,samples,overall_err,base_err,novel_err,trials\n";
    char buf[160];
    for (const auto& row : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%zu,%.2f,%.2f,%.2f,%zu\n", row.method.c_str(),
                      row.samples, row.overall_err, row.base_err, row.novel_err, row.trials);
        out += buf;
    }
    return out;
}

namespace {

// Balanced-batch head training; the sampler provides per-class inputs so the
// same loop trains on either real features or GMM generations.
template <class Sampler>
SoftmaxHead train_head_balanced(std::size_t dims, const std::vector<std::string>& labels,
                                const TrainConfig& cfg, Sampler sampler) {
    SoftmaxHead head = make_head(dims, labels, false, derive_seed(cfg.seed, "init"));
    Rng batch_rng(derive_seed(cfg.seed, "batch"));
    std::vector<double> velocity(head.weights.size(), 0.0);

    Batch batch;
    for (std::size_t iter = 0; iter < cfg.iters; ++iter) {
        batch.inputs.clear();
        batch.targets.clear();
        for (std::size_t cls = 0; cls < labels.size(); ++cls) {
            auto draws = sampler(cls, cfg.batch_per_class, batch_rng);
            for (auto& v : draws) {
                batch.inputs.push_back(std::move(v));
                batch.targets.push_back(cls);
            }
        }
        HeadGrad grad = ce_grad_head(head, batch);
        if (!std::isfinite(grad.loss)) throw numeric_error("gmm_fidelity: non-finite loss");
        for (std::size_t i = 0; i < head.weights.size(); ++i) {
            velocity[i] = cfg.momentum * velocity[i] + grad.weights[i];
            head.weights[i] -= cfg.lr * velocity[i];
        }
    }
    return head;
}

double accuracy_pct(const SoftmaxHead& head, const FeatureSet& test) {
    std::size_t correct = 0;
    for (const auto& rec : test.records)
        correct += head.labels[argmax(head_logits(head, rec.vector))] == rec.label;
    return 100.0 * static_cast<double>(correct) / static_cast<double>(test.records.size());
}

}  // namespace

std::vector<FidelityRow> gmm_fidelity(const FeatureSet& train, const FeatureSet& test,
                                      const std::vector<std::size_t>& mixtures,
                                      const TrainConfig& train_cfg, const EmConfig& em_cfg) {
    validate(train);
    validate(test);
    if (mixtures.empty()) throw std::invalid_argument("gmm_fidelity: no mixture counts");

    const LabeledVectors groups = group_by_label(train);
    std::vector<std::string> labels;
    for (const auto& [label, vectors] : groups) labels.push_back(label);

    std::vector<FidelityRow> rows;

    TrainConfig full_cfg = train_cfg;
    full_cfg.seed = derive_seed(train_cfg.seed, "full");
    SoftmaxHead full_head = train_head_balanced(
        train.dims, labels, full_cfg, [&](std::size_t cls, std::size_t count, Rng& rng) {
            std::vector<FeatureVector> draws;
            draws.reserve(count);
            const auto& pool = groups[cls].second;
            for (std::size_t i = 0; i < count; ++i) draws.push_back(pool[rng.below(pool.size())]);
            return draws;
        });
    rows.push_back({"full", accuracy_pct(full_head, test)});

    for (std::size_t m : mixtures) {
        EmConfig em = em_cfg;
        em.mixtures = m;
        em.seed = derive_seed(em_cfg.seed, "gmm", m);
        GmmBank bank = fit_bank(groups, em);

        TrainConfig gen_cfg = train_cfg;
        gen_cfg.seed = derive_seed(train_cfg.seed, "gen", m);
        SoftmaxHead head = train_head_balanced(
            train.dims, labels, gen_cfg, [&](std::size_t cls, std::size_t count, Rng& rng) {
                return sample(bank.entries[cls].second, count, rng);
            });
        rows.push_back({"m=" + std::to_string(m), accuracy_pct(head, test)});
    }
    return rows;
}

std::string fidelity_csv(const std::vector<FidelityRow>& rows) {
    std::string out = "setting,top1_accuracy\n";
    char buf[96];
    for (const auto& row : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%.2f\n", row.setting.c_str(), row.accuracy_pct);
        out += buf;
    }
    return out;
}

}  // namespace lsne
