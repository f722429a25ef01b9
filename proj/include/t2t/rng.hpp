#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string_view>
#include <vector>

namespace t2t {

// Deterministic PRNG with named sub-streams. SplitMix64 core; the normal
// draw uses Box-Muller rather than std::normal_distribution because the
// latter's output sequence is implementation-defined. Every random decision
// in the project derives from one root seed via stream()/at(), so runs are
// reproducible and training can resume bit-exactly from a round index.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(mix(seed ^ 0x9e3779b97f4a7c15ull)) {}

    Rng(std::uint64_t seed, std::string_view name) : Rng(seed) {
        state_ = mix(state_ ^ fnv1a(name));
    }

    // Derived generator for a named purpose; does not disturb this one.
    Rng stream(std::string_view name) const {
        Rng r(*this);
        r.state_ = mix(r.state_ ^ fnv1a(name));
        return r;
    }

    // Derived generator for an index (round, epoch, example id).
    Rng at(std::uint64_t index) const {
        Rng r(*this);
        r.state_ = mix(r.state_ ^ (index * 0xbf58476d1ce4e5b9ull + 0x94d049bb133111ebull));
        return r;
    }

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        return mix(state_);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller.
    double normal() {
        double u1 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        const double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Uniform integer in [0, n), unbiased (rejection sampling).
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n <= 1) return 0;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = next_u64();
        while (x >= limit) x = next_u64();
        return x % n;
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Draw from a probability vector (assumed to sum to ~1).
    std::size_t categorical(std::span<const double> probs) {
        const double u = next_double();
        double acc = 0.0;
        for (std::size_t i = 0; i + 1 < probs.size(); ++i) {
            acc += probs[i];
            if (u < acc) return i;
        }
        return probs.empty() ? 0 : probs.size() - 1;
    }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    static std::uint64_t fnv1a(std::string_view s) {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (char c : s) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ull;
        }
        return h;
    }

    std::uint64_t state_;
};

}  // namespace t2t
