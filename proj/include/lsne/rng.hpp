#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace lsne {

// 64-bit FNV-1a. Stable across platforms; used to derive per-label seeds.
std::uint64_t fnv1a64(std::string_view s);

// One splitmix64 step; also used as a seed mixer.
std::uint64_t splitmix64(std::uint64_t x);

// Named sub-stream seeds so pipeline stages can be rerun in isolation.
// derive_seed(s, tag) != derive_seed(s, other_tag) for distinct tags.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t index);

// mt19937_64 engine with explicit distribution code. The standard pins the
// engine's output sequence but not the library distributions, and every
// artifact output must be reproducible from the seed alone, so the
// transformations live here.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();

    // Uniform in [0, 1), 53-bit resolution.
    double uniform();
    double uniform(double lo, double hi);

    // Unbiased uniform integer in [0, n). Requires n >= 1.
    std::uint64_t below(std::uint64_t n);

    // Standard normal via Box-Muller (two engine draws per variate, no
    // cached spare, so consumption per call is fixed).
    double gaussian();
    double gaussian(double mean, double stddev);

    bool bernoulli(double p);

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace lsne
