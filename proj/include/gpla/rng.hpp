#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

#include "gpla/common.hpp"

namespace gpla {

// Deterministic generator (splitmix64). We avoid std:: distributions so that
// streams are bit-stable regardless of the standard library in use. All
// randomness in the project flows from one root seed through named
// sub-streams, so components can be reseeded independently.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed * 0x9e3779b97f4a7c15ull + 0x2545f4914f6cdd1dull) {}

    // Derive a child stream, e.g. Rng(seed).stream("data").
    Rng stream(std::string_view name) const {
        return Rng(fnv1a64(name, state_ ^ 0x6a09e667f3bcc909ull));
    }
    Rng stream(std::string_view name, std::uint64_t index) const {
        Rng r = stream(name);
        r.state_ ^= (index + 1) * 0xbf58476d1ce4e5b9ull;
        r.next();
        return r;
    }

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return n ? next() % n : 0; }

    int range_int(int lo, int hi_inclusive) {
        return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi_inclusive - lo + 1)));
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Standard normal via Box-Muller, one cached draw.
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586 * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

}  // namespace gpla
