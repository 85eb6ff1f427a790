#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <variant>
#include <vector>

#include <CLI11.hpp>

#include "lsne/baselines.hpp"
#include "lsne/bench.hpp"
#include "lsne/errors.hpp"
#include "lsne/expand.hpp"
#include "lsne/feature_store.hpp"
#include "lsne/gmm.hpp"
#include "lsne/net.hpp"

namespace {

struct LabelLists {
    std::vector<std::string> base;
    std::vector<std::string> novel;
};

LabelLists read_labels(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw lsne::io_error("cannot open labels file: " + path);
    LabelLists lists;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        if (line.rfind("base:", 0) == 0)
            lists.base.push_back(line.substr(5));
        else if (line.rfind("novel:", 0) == 0)
            lists.novel.push_back(line.substr(6));
        else
            throw lsne::io_error("labels file: malformed line " + std::to_string(line_no));
    }
    if (lists.base.empty())
        throw lsne::io_error("labels file lists no base labels: " + path);
    return lists;
}

void write_labels(const LabelLists& lists, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw lsne::io_error("cannot write labels file: " + path);
    for (const auto& l : lists.base) out << "base:" << l << '\n';
    for (const auto& l : lists.novel) out << "novel:" << l << '\n';
    if (!out) throw lsne::io_error("write failed: " + path);
}

void write_text(const std::string& text, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw lsne::io_error("cannot write: " + path);
    out << text;
    if (!out) throw lsne::io_error("write failed: " + path);
}

lsne::MomentumRule parse_rule(const std::string& name) {
    return name == "conventional" ? lsne::MomentumRule::conventional
                                  : lsne::MomentumRule::paper;
}

// First non-space byte decides: '{' means a model file, otherwise the
// feature/prototype text format.
bool looks_like_json(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw lsne::io_error("cannot open: " + path);
    char c;
    while (in.get(c))
        if (!std::isspace(static_cast<unsigned char>(c))) return c == '{';
    return false;
}

lsne::Classifier load_classifier(const std::string& path) {
    if (looks_like_json(path)) {
        auto model = lsne::load_model(path);
        if (std::holds_alternative<lsne::SoftmaxHead>(model))
            return lsne::make_classifier(std::get<lsne::SoftmaxHead>(model));
        return lsne::make_classifier(std::get<lsne::TwoLayerNet>(model));
    }
    lsne::PrototypeSet protos = lsne::load_prototypes(path);
    return [protos](const lsne::FeatureVector& v) { return lsne::pknn_classify(protos, v); };
}

struct TrainFlags {
    lsne::TrainConfig cfg;
    std::string momentum_rule = "paper";
};

void add_train_flags(CLI::App* sub, TrainFlags& flags, bool with_expansion_knobs) {
    sub->add_option("--lr", flags.cfg.lr, "learning rate")->capture_default_str();
    sub->add_option("--momentum", flags.cfg.momentum, "momentum factor")->capture_default_str();
    sub->add_option("--batch-per-class", flags.cfg.batch_per_class, "samples per class per batch")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    sub->add_option("--iters", flags.cfg.iters, "training iterations")->capture_default_str();
    if (with_expansion_knobs) {
        sub->add_option("--grad-dropout", flags.cfg.grad_dropout_p,
                        "gradient dropout keep-probability p")
            ->check(CLI::Range(0.0, 1.0))
            ->capture_default_str();
        sub->add_option("--aug-per-sample", flags.cfg.aug_per_sample,
                        "jittered variants per novel sample")
            ->capture_default_str();
        sub->add_option("--aug-scale", flags.cfg.aug_scale, "jitter scale factor")
            ->capture_default_str();
        sub->add_option("--momentum-rule", flags.momentum_rule, "momentum accumulation rule")
            ->check(CLI::IsMember({"paper", "conventional"}))
            ->capture_default_str();
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"lsne: low-shot expansion of softmax classifiers in feature space"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic scenario");
    lsne::ScenarioSpec spec;
    std::string gen_out;
    gen->add_option("--scenario", spec.scenario, "scenario id")->check(CLI::Range(1, 3))
        ->capture_default_str();
    gen->add_option("--dims", spec.dims, "feature dimensionality")->check(CLI::PositiveNumber)
        ->capture_default_str();
    gen->add_option("--base", spec.base_count, "base class count")->check(CLI::PositiveNumber)
        ->capture_default_str();
    gen->add_option("--novel", spec.novel_count, "novel class count")->capture_default_str();
    gen->add_option("--train-per-class", spec.train_per_class, "train samples per class")
        ->check(CLI::PositiveNumber)->capture_default_str();
    gen->add_option("--test-per-class", spec.test_per_class, "test samples per class")
        ->check(CLI::PositiveNumber)->capture_default_str();
    gen->add_option("--class-mixtures", spec.class_mixtures, "mixtures per generated class")
        ->check(CLI::PositiveNumber)->capture_default_str();
    gen->add_option("--separation", spec.separation, "base inter-class mean distance")
        ->capture_default_str();
    gen->add_option("--novel-novel-gap", spec.novel_novel_gap, "scenario 2 novel-novel gap")
        ->capture_default_str();
    gen->add_option("--novel-base-gap", spec.novel_base_gap, "scenario 3 novel-base gap")
        ->capture_default_str();
    gen->add_option("--seed", spec.seed, "rng seed")->capture_default_str();
    gen->add_option("--out", gen_out, "output directory")->required();

    // train-base
    auto* tb = app.add_subcommand("train-base", "train the base two-layer net");
    std::string tb_train, tb_labels, tb_out;
    std::size_t tb_hidden = 32;
    bool tb_bias = false, tb_verbose = false;
    TrainFlags tb_flags;
    tb->add_option("--train", tb_train, "training feature file")->required();
    tb->add_option("--labels", tb_labels, "labels file (base classes are used)")->required();
    tb->add_option("--hidden", tb_hidden, "hidden layer width")->check(CLI::PositiveNumber)
        ->capture_default_str();
    tb->add_flag("--bias", tb_bias, "enable bias terms");
    tb->add_flag("--verbose", tb_verbose, "log loss every 100 iterations");
    add_train_flags(tb, tb_flags, false);
    tb->add_option("--seed", tb_flags.cfg.seed, "rng seed")->capture_default_str();
    tb->add_option("--out", tb_out, "output model file")->required();

    // fit-gmm
    auto* fg = app.add_subcommand("fit-gmm", "fit per-class gmm bank");
    std::string fg_train, fg_labels, fg_out;
    lsne::EmConfig fg_em;
    fg->add_option("--train", fg_train, "training feature file")->required();
    fg->add_option("--labels", fg_labels, "labels file; restrict fit to its base classes");
    fg->add_option("--mixtures", fg_em.mixtures, "mixtures per class")
        ->check(CLI::PositiveNumber)->capture_default_str();
    fg->add_option("--max-iters", fg_em.max_iters, "EM iteration cap")->capture_default_str();
    fg->add_option("--rel-tol", fg_em.rel_tol, "EM relative improvement stop")
        ->capture_default_str();
    fg->add_option("--variance-floor", fg_em.variance_floor, "variance floor")
        ->capture_default_str();
    fg->add_option("--seed", fg_em.seed, "rng seed")->capture_default_str();
    fg->add_option("--out", fg_out, "output bank file")->required();

    // expand
    auto* ex = app.add_subcommand("expand", "hard-distillation expansion to novel classes");
    std::string ex_model, ex_bank, ex_novel, ex_out, ex_mode = "head";
    std::size_t ex_new_features = 5, ex_samples = 0;
    bool ex_verbose = false;
    TrainFlags ex_flags;
    ex->add_option("--model", ex_model, "base model file")->required();
    ex->add_option("--bank", ex_bank, "gmm bank file")->required();
    ex->add_option("--novel-features", ex_novel, "novel class feature file")->required();
    ex->add_option("--samples", ex_samples, "low-shot samples per novel class (0 = all)")
        ->capture_default_str();
    ex->add_option("--mode", ex_mode, "expansion mode")->check(CLI::IsMember({"head", "deep"}))
        ->capture_default_str();
    ex->add_option("--new-features", ex_new_features, "new hidden features (deep mode)")
        ->capture_default_str();
    ex->add_flag("--verbose", ex_verbose, "log loss every 100 iterations");
    add_train_flags(ex, ex_flags, true);
    ex->add_option("--seed", ex_flags.cfg.seed, "rng seed")->capture_default_str();
    ex->add_option("--out", ex_out, "output model file")->required();

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a model or prototype set");
    std::string ev_model, ev_test, ev_labels;
    ev->add_option("--model", ev_model, "model or prototype file")->required();
    ev->add_option("--test", ev_test, "test feature file")->required();
    ev->add_option("--labels", ev_labels, "labels file")->required();

    // bench
    auto* be = app.add_subcommand("bench", "run the method x sample-count benchmark");
    lsne::ScenarioSpec be_spec;
    lsne::BenchConfig be_cfg;
    be_cfg.methods = lsne::kBenchMethods;
    TrainFlags be_flags;
    std::string be_out;
    be->add_option("--scenario", be_spec.scenario, "scenario id")->check(CLI::Range(1, 3))
        ->capture_default_str();
    be->add_option("--dims", be_spec.dims, "feature dimensionality")
        ->check(CLI::PositiveNumber)->capture_default_str();
    be->add_option("--base", be_spec.base_count, "base class count")
        ->check(CLI::PositiveNumber)->capture_default_str();
    be->add_option("--novel", be_spec.novel_count, "novel class count")
        ->check(CLI::PositiveNumber)->capture_default_str();
    be->add_option("--train-per-class", be_spec.train_per_class, "train samples per class")
        ->check(CLI::PositiveNumber)->capture_default_str();
    be->add_option("--test-per-class", be_spec.test_per_class, "test samples per class")
        ->check(CLI::PositiveNumber)->capture_default_str();
    be->add_option("--class-mixtures", be_spec.class_mixtures, "mixtures per generated class")
        ->check(CLI::PositiveNumber)->capture_default_str();
    be->add_option("--separation", be_spec.separation, "base inter-class mean distance")
        ->capture_default_str();
    be->add_option("--novel-novel-gap", be_spec.novel_novel_gap, "scenario 2 gap")
        ->capture_default_str();
    be->add_option("--novel-base-gap", be_spec.novel_base_gap, "scenario 3 gap")
        ->capture_default_str();
    be->add_option("--methods", be_cfg.methods, "methods to run")->delimiter(',')
        ->capture_default_str();
    be->add_option("--samples", be_cfg.sample_counts, "novel sample counts")->delimiter(',')
        ->capture_default_str();
    be->add_option("--trials", be_cfg.trials, "trials to average")->check(CLI::PositiveNumber)
        ->capture_default_str();
    be->add_option("--mixtures", be_cfg.em.mixtures, "bank mixtures per class")
        ->check(CLI::PositiveNumber)->capture_default_str();
    be->add_option("--hidden", be_cfg.base_hidden, "base net hidden width")
        ->check(CLI::PositiveNumber)->capture_default_str();
    be->add_option("--lambda", be_cfg.soft_lambda, "soft-distillation loss weight")
        ->capture_default_str();
    be->add_option("--temperature", be_cfg.soft_temperature, "soft-distillation temperature")
        ->capture_default_str();
    be->add_option("--threads", be_cfg.threads, "worker threads (0 = hardware)")
        ->capture_default_str();
    add_train_flags(be, be_flags, true);
    be->add_option("--seed", be_spec.seed, "master seed")->capture_default_str();
    be->add_option("--out", be_out, "output CSV file");

    // gmm-fidelity
    auto* gf = app.add_subcommand("gmm-fidelity",
                                  "compare full-data vs gmm-generated head training");
    std::string gf_train, gf_test, gf_out;
    std::vector<std::size_t> gf_mixtures{1, 10, 20, 40, 60};
    lsne::EmConfig gf_em;
    TrainFlags gf_flags;
    gf->add_option("--train", gf_train, "training feature file")->required();
    gf->add_option("--test", gf_test, "test feature file")->required();
    gf->add_option("--mixtures", gf_mixtures, "mixture counts to evaluate")->delimiter(',')
        ->capture_default_str();
    gf->add_option("--max-iters", gf_em.max_iters, "EM iteration cap")->capture_default_str();
    add_train_flags(gf, gf_flags, false);
    gf->add_option("--seed", gf_flags.cfg.seed, "rng seed")->capture_default_str();
    gf->add_option("--out", gf_out, "output CSV file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*gen) {
            lsne::Scenario scenario = lsne::gen_scenario(spec);
            std::filesystem::create_directories(gen_out);
            lsne::save_features(scenario.train, gen_out + "/train.features");
            lsne::save_features(scenario.test, gen_out + "/test.features");
            write_labels({scenario.base_labels, scenario.novel_labels},
                         gen_out + "/labels.txt");
            std::printf("wrote %s/{train.features,test.features,labels.txt}\n",
                        gen_out.c_str());
        } else if (*tb) {
            LabelLists lists = read_labels(tb_labels);
            lsne::FeatureSet all = lsne::load_features(tb_train);
            lsne::FeatureSet base = lsne::split_by_label(all, lists.base).first;
            lsne::TwoLayerNet net = lsne::train_base(base, tb_hidden, lists.base, tb_flags.cfg,
                                                     tb_bias, tb_verbose);
            lsne::save_model(net, tb_out);
            std::printf("wrote %s\n", tb_out.c_str());
        } else if (*fg) {
            lsne::FeatureSet all = lsne::load_features(fg_train);
            if (!fg_labels.empty()) {
                LabelLists lists = read_labels(fg_labels);
                all = lsne::split_by_label(all, lists.base).first;
            }
            lsne::GmmBank bank = lsne::fit_bank(lsne::group_by_label(all), fg_em);
            lsne::save_bank(bank, fg_out);
            std::printf("wrote %s\n", fg_out.c_str());
        } else if (*ex) {
            ex_flags.cfg.momentum_rule = parse_rule(ex_flags.momentum_rule);
            auto base_model = lsne::load_model(ex_model);
            lsne::GmmBank bank = lsne::load_bank(ex_bank);
            lsne::FeatureSet novel_set = lsne::load_features(ex_novel);
            std::vector<std::string> novel_labels = lsne::labels_of(novel_set);
            lsne::LabeledVectors pool =
                ex_samples == 0
                    ? lsne::group_by_label(novel_set)
                    : lsne::draw_novel_pool(novel_set, novel_labels, ex_samples,
                                            lsne::derive_seed(ex_flags.cfg.seed, "draw"));
            const std::uint64_t init_seed = lsne::derive_seed(ex_flags.cfg.seed, "init");

            if (std::holds_alternative<lsne::SoftmaxHead>(base_model)) {
                if (ex_mode == "deep")
                    throw lsne::io_error("deep mode requires a two-layer model");
                lsne::ExpandedHead model = lsne::make_expanded(
                    std::get<lsne::SoftmaxHead>(base_model), novel_labels, init_seed);
                lsne::train_expansion(model, bank, pool, ex_flags.cfg, ex_verbose);
                lsne::save_model(model.expanded, ex_out);
            } else {
                const std::size_t d = ex_mode == "deep" ? ex_new_features : 0;
                lsne::ExpandedNet model = lsne::make_expanded(
                    std::get<lsne::TwoLayerNet>(base_model), novel_labels, d, init_seed);
                lsne::train_expansion(model, bank, pool, ex_flags.cfg, ex_verbose);
                lsne::save_model(model.expanded, ex_out);
            }
            std::printf("wrote %s\n", ex_out.c_str());
        } else if (*ev) {
            LabelLists lists = read_labels(ev_labels);
            lsne::Classifier classify = load_classifier(ev_model);
            lsne::FeatureSet test = lsne::load_features(ev_test);
            lsne::TrialResult r = lsne::evaluate(classify, test, lists.base, lists.novel);
            std::printf("overall_err: %.2f\nbase_err: %.2f\nnovel_err: %.2f\n",
                        r.overall_err(), r.base_err(), r.novel_err());
        } else if (*be) {
            be_flags.cfg.momentum_rule = parse_rule(be_flags.momentum_rule);
            be_cfg.train = be_flags.cfg;
            std::string csv = lsne::bench_csv(lsne::run_bench(be_spec, be_cfg));
            std::fputs(csv.c_str(), stdout);
            if (!be_out.empty()) write_text(csv, be_out);
        } else if (*gf) {
            gf_em.seed = gf_flags.cfg.seed;
            lsne::FeatureSet train = lsne::load_features(gf_train);
            lsne::FeatureSet test = lsne::load_features(gf_test);
            std::string csv = lsne::fidelity_csv(
                lsne::gmm_fidelity(train, test, gf_mixtures, gf_flags.cfg, gf_em));
            std::fputs(csv.c_str(), stdout);
            if (!gf_out.empty()) write_text(csv, gf_out);
        }
    } catch (const lsne::numeric_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const lsne::io_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
