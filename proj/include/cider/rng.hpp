#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace cider {

// Thin deterministic RNG wrapper. All randomness in the project flows through
// this so that datasets, masks and parameter inits are reproducible bit-for-bit
// for a given seed, independent of the standard library's distribution quirks.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t raw() { return gen_(); }

    // uniform double in [0, 1)
    double uniform() { return (gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal via Box-Muller (two raws per call, no cached spare)
    double normal(double mu = 0.0, double sd = 1.0) {
        double u1 = 0.0;
        do { u1 = uniform(); } while (u1 <= 0.0);
        double u2 = uniform();
        double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
        return mu + sd * z;
    }

    // integer in [0, n), n >= 1; rejection-free modulo is fine at our scales
    int randint(int n) { return static_cast<int>(gen_() % static_cast<std::uint64_t>(n)); }

    bool bernoulli(double p) { return uniform() < p; }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i)
            std::swap(v[i], v[randint(i + 1)]);
    }

    // k distinct indices from [0, n), order of draw (partial Fisher-Yates)
    std::vector<int> choose(int n, int k) {
        std::vector<int> idx(n);
        for (int i = 0; i < n; ++i) idx[i] = i;
        for (int i = 0; i < k; ++i) std::swap(idx[i], idx[i + randint(n - i)]);
        idx.resize(k);
        return idx;
    }

private:
    std::mt19937_64 gen_;
};

// splitmix64 — used to derive independent stream seeds from (seed, tags)
inline std::uint64_t hash_mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
    return hash_mix(a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
}

// round-half-up for the missing-count rules: round(2.5) = 3, round(-0.5) = 0
inline int round_half_up(double x) { return static_cast<int>(std::floor(x + 0.5)); }

} // namespace cider
