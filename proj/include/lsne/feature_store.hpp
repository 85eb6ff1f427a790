#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace lsne {

using FeatureVector = std::vector<double>;

struct FeatureRecord {
    std::string label;
    FeatureVector vector;
};

// Labeled collection of fixed-dimensional feature vectors. Treated as
// immutable once built; safe to share read-only across threads.
//
// On-disk form (UTF-8, LF, '.' decimal separator):
//   lsne-features 1 dims=<N>
//   <label>,<f1>,...,<fN>
// Lines starting with '#' are ignored.
struct FeatureSet {
    std::size_t dims = 0;
    std::vector<FeatureRecord> records;
};

// label -> all vectors carrying it, kept in a deterministic order.
using LabeledVectors = std::vector<std::pair<std::string, std::vector<FeatureVector>>>;

// Shortest decimal form that parses back to the identical double.
std::string format_double(double value);

// Locale-independent parse of a full token; false on trailing garbage.
bool parse_double(std::string_view text, double& out);

// Throws io_error on dimension, label, or finiteness violations.
void validate(const FeatureSet& set);

// Distinct labels in first-appearance order.
std::vector<std::string> labels_of(const FeatureSet& set);

FeatureSet load_features(const std::string& path);

// Deterministic byte output; rejects empty sets.
void save_features(const FeatureSet& set, const std::string& path);

// (records with label in `labels`, the rest); order preserved in both.
// Throws io_error when a requested label is absent from the set.
std::pair<FeatureSet, FeatureSet> split_by_label(const FeatureSet& set,
                                                 const std::vector<std::string>& labels);

// Group records per label, labels in first-appearance order.
LabeledVectors group_by_label(const FeatureSet& set);

}  // namespace lsne
