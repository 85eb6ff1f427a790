#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lsne/feature_store.hpp"
#include "lsne/rng.hpp"

namespace lsne {

// Diagonal-covariance Gaussian mixture over feature vectors:
//   p(v) = sum_i weights[i] * N(v | means[i], diag(variances[i]))
struct DiagGmm {
    std::size_t dims = 0;
    std::vector<double> weights;                 // M entries, sums to 1
    std::vector<std::vector<double>> means;      // M x dims
    std::vector<std::vector<double>> variances;  // M x dims, all > 0

    std::size_t mixtures() const { return weights.size(); }
};

// One mixture model per class label. Serialized footprint is O(M*K*N)
// scalars plus headers.
struct GmmBank {
    std::size_t dims = 0;
    std::vector<std::pair<std::string, DiagGmm>> entries;
};

struct EmConfig {
    std::size_t mixtures = 20;
    std::size_t max_iters = 200;
    double rel_tol = 1e-6;       // stop when relative log-likelihood gain drops below
    double variance_floor = 1e-4;
    std::uint64_t seed = 0;
};

struct EmFit {
    DiagGmm model;
    bool mixtures_reduced = false;        // requested M exceeded the sample count
    std::vector<double> log_likelihood;   // mean data log-likelihood per iteration
};

// Throws io_error when weights do not sum to 1 (tolerance weight_tol), any
// variance is non-positive, or shapes disagree.
void validate(const DiagGmm& model, double weight_tol = 1e-9);
void validate(const GmmBank& bank);

// Maximum-likelihood fit via EM with k-means++-style seeding. Variances are
// clamped to cfg.variance_floor after every update. Mean log-likelihood is
// non-decreasing across the recorded iterations.
EmFit fit_em(const std::vector<FeatureVector>& data, const EmConfig& cfg);

// ln p(v), computed through log-sum-exp so component log-densities with
// magnitude up to ~700 do not underflow.
double log_pdf(const DiagGmm& model, const FeatureVector& v);

// n i.i.d. draws: component ~ Categorical(weights), then independent
// per-coordinate Gaussians. Fixed engine consumption per draw.
std::vector<FeatureVector> sample(const DiagGmm& model, std::size_t n, Rng& rng);

// One model per class; class seed = cfg.seed ^ fnv1a64(label), so results
// are independent of fit order.
GmmBank fit_bank(const LabeledVectors& sets, const EmConfig& cfg);

// sum_i weights[i] * means[i]
FeatureVector mixture_mean(const DiagGmm& model);

// Mean over every variance entry in the bank; the feature-scale proxy used
// to size augmentation jitter.
double mean_variance(const GmmBank& bank);

std::vector<std::string> bank_labels(const GmmBank& bank);
const DiagGmm* find_class(const GmmBank& bank, std::string_view label);

// JSON schema:
// { "format": "lsne-gmm-bank", "version": 1, "dims": N,
//   "classes": [ { "label": .., "weights": [..], "means": [[..]..],
//                  "variances": [[..]..] } ] }
void save_bank(const GmmBank& bank, const std::string& path);
GmmBank load_bank(const std::string& path);

}  // namespace lsne
