#pragma once

#include <string>
#include <vector>

#include "lsne/expand.hpp"
#include "lsne/gmm.hpp"
#include "lsne/net.hpp"

namespace lsne {

// Prototypes for nearest-mean / k-nearest-prototype classification.
// k is the voting neighborhood; it never exceeds any class's prototype count.
struct PrototypeSet {
    std::vector<std::pair<std::string, FeatureVector>> entries;
    std::size_t k = 1;
};

struct SoftDisConfig : TrainConfig {
    double lambda = 1.0;       // distillation loss weight
    double temperature = 2.0;  // softening temperature
};

// One prototype per class: base classes use the GMM mixture mean, novel
// classes the arithmetic mean of their samples. k = 1.
PrototypeSet ncm_build(const GmmBank& bank, const LabeledVectors& novel_pool);

// Label of the Euclidean-nearest prototype; ties break by entry order.
std::string ncm_classify(const PrototypeSet& protos, const FeatureVector& v);

// All mixture means of every base class plus the raw novel samples;
// k = smallest per-class prototype count.
PrototypeSet pknn_build(const GmmBank& bank, const LabeledVectors& novel_pool);

// Majority vote among the k nearest prototypes; a tied vote falls back to
// k = 1 (the single nearest prototype).
std::string pknn_classify(const PrototypeSet& protos, const FeatureVector& v);

// softmax(logits / temperature)
std::vector<double> softened_probs(const std::vector<double>& logits, double temperature);

// KL(p || q) in nats; >= 0, and 0 iff the distributions match.
double kl_div(const std::vector<double>& p, const std::vector<double>& q);

// Soft-distillation expansion: fc2 gains novel rows, every fc1/fc2 entry
// unfreezes, and training minimizes
//   CE + lambda * T^2 * KL(teacher_softened || student_softened_over_base)
// over the same balanced batch stream the hard expansion uses. The teacher
// is a frozen copy of base_net. Gradient dropout applies per cfg.
TwoLayerNet soft_dis_train(const TwoLayerNet& base_net, const GmmBank& bank,
                           const LabeledVectors& novel_pool, const SoftDisConfig& cfg,
                           bool verbose = false);

// Feature-file serialization with a "# prototypes k=<k>" comment line.
void save_prototypes(const PrototypeSet& protos, const std::string& path);
PrototypeSet load_prototypes(const std::string& path);

}  // namespace lsne
