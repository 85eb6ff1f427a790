#include "lsne/feature_store.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "lsne/errors.hpp"

namespace lsne {

std::string format_double(double value) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, res.ptr);
}

bool parse_double(std::string_view text, double& out) {
    const char* first = text.data();
    const char* last = first + text.size();
    auto res = std::from_chars(first, last, out);
    return res.ec == std::errc{} && res.ptr == last;
}

static bool valid_label(std::string_view label) {
    if (label.empty()) return false;
    return label.find(',') == std::string_view::npos &&
           label.find('\n') == std::string_view::npos &&
           label.find('\r') == std::string_view::npos;
}

void validate(const FeatureSet& set) {
    if (set.dims == 0) throw io_error("feature set has zero dimensionality");
    for (std::size_t i = 0; i < set.records.size(); ++i) {
        const auto& rec = set.records[i];
        if (!valid_label(rec.label))
            throw io_error("invalid label in record " + std::to_string(i + 1));
        if (rec.vector.size() != set.dims)
            throw io_error("dimension mismatch in record " + std::to_string(i + 1));
        for (double v : rec.vector)
            if (!std::isfinite(v))
                throw io_error("non-finite value in record " + std::to_string(i + 1));
    }
}

std::vector<std::string> labels_of(const FeatureSet& set) {
    std::vector<std::string> out;
    std::unordered_set<std::string> seen;
    for (const auto& rec : set.records)
        if (seen.insert(rec.label).second) out.push_back(rec.label);
    return out;
}

static std::string line_msg(const std::string& what, std::size_t line) {
    return what + ", line " + std::to_string(line);
}

FeatureSet load_features(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open feature file: " + path);

    FeatureSet set;
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;

    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;

        if (!header_seen) {
            std::istringstream hs(line);
            std::string magic, version, dims_field;
            hs >> magic >> version >> dims_field;
            if (magic != "lsne-features" || version != "1" ||
                dims_field.rfind("dims=", 0) != 0)
                throw io_error(line_msg("malformed header", line_no));
            double dims_val = 0;
            if (!parse_double(std::string_view(dims_field).substr(5), dims_val) ||
                dims_val < 1 || dims_val != std::floor(dims_val))
                throw io_error(line_msg("malformed header", line_no));
            set.dims = static_cast<std::size_t>(dims_val);
            header_seen = true;
            continue;
        }

        FeatureRecord rec;
        std::size_t pos = line.find(',');
        if (pos == std::string::npos)
            throw io_error(line_msg("malformed row", line_no));
        rec.label = line.substr(0, pos);
        if (!valid_label(rec.label))
            throw io_error(line_msg("invalid label", line_no));

        rec.vector.reserve(set.dims);
        std::size_t start = pos + 1;
        while (start <= line.size()) {
            std::size_t next = line.find(',', start);
            std::string_view tok(line.data() + start,
                                 (next == std::string::npos ? line.size() : next) - start);
            double v;
            if (!parse_double(tok, v))
                throw io_error(line_msg("malformed value", line_no));
            if (!std::isfinite(v))
                throw io_error(line_msg("non-finite value", line_no));
            rec.vector.push_back(v);
            if (next == std::string::npos) break;
            start = next + 1;
        }
        if (rec.vector.size() != set.dims)
            throw io_error(line_msg("dimension mismatch", line_no));
        set.records.push_back(std::move(rec));
    }

    if (!header_seen) throw io_error("empty file: " + path);
    if (set.records.empty()) throw io_error("no feature records: " + path);
    return set;
}

void save_features(const FeatureSet& set, const std::string& path) {
    if (set.records.empty()) throw io_error("empty set");
    validate(set);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write feature file: " + path);

    out << "lsne-features 1 dims=" << set.dims << '\n';
    for (const auto& rec : set.records) {
        out << rec.label;
        for (double v : rec.vector) out << ',' << format_double(v);
        out << '\n';
    }
    if (!out) throw io_error("write failed: " + path);
}

std::pair<FeatureSet, FeatureSet> split_by_label(const FeatureSet& set,
                                                 const std::vector<std::string>& labels) {
    std::unordered_set<std::string> present;
    for (const auto& rec : set.records) present.insert(rec.label);
    std::unordered_set<std::string> wanted;
    for (const auto& l : labels) {
        if (!present.count(l)) throw io_error("unknown label requested: " + l);
        wanted.insert(l);
    }

    FeatureSet in{set.dims, {}}, out{set.dims, {}};
    for (const auto& rec : set.records)
        (wanted.count(rec.label) ? in : out).records.push_back(rec);
    return {std::move(in), std::move(out)};
}

LabeledVectors group_by_label(const FeatureSet& set) {
    LabeledVectors groups;
    std::unordered_map<std::string, std::size_t> index;
    for (const auto& rec : set.records) {
        auto it = index.find(rec.label);
        if (it == index.end()) {
            index.emplace(rec.label, groups.size());
            groups.push_back({rec.label, {rec.vector}});
        } else {
            groups[it->second].second.push_back(rec.vector);
        }
    }
    return groups;
}

}  // namespace lsne
