#pragma once
#include <cstdint>
#include <cmath>
#include <vector>

namespace stegoshield {

// SplitMix64 with the published reference constants. Used everywhere
// randomness is needed so fixtures reproduce across languages.
class SplitMix64 {
public:
    explicit SplitMix64(uint64_t seed) : state_(seed) {}

    uint64_t next() {
        uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, bound). Plain modulo; the bias is irrelevant at the
    // bounds used here and keeps the mapping trivial to reimplement.
    uint64_t next_below(uint64_t bound) { return next() % bound; }

    // Uniform in [0, 1) with 53 bits of precision.
    double next_unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // Box-Muller, two draws per call, no caching (keeps the stream
    // position a pure function of the call count).
    double next_gaussian() {
        double u1 = static_cast<double>((next() >> 11) + 1) * 0x1.0p-53; // (0,1]
        double u2 = next_unit();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

private:
    uint64_t state_;
};

// Seeded Fisher-Yates. Downward loop, j = next() % (i+1).
template <class T>
void fisher_yates(std::vector<T>& v, SplitMix64& rng) {
    for (size_t i = v.size(); i > 1; --i) {
        size_t j = static_cast<size_t>(rng.next_below(i));
        std::swap(v[i - 1], v[j]);
    }
}

inline std::vector<uint32_t> random_permutation(uint32_t n, SplitMix64& rng) {
    std::vector<uint32_t> p(n);
    for (uint32_t i = 0; i < n; ++i) p[i] = i;
    fisher_yates(p, rng);
    return p;
}

inline std::vector<uint32_t> invert_permutation(const std::vector<uint32_t>& p) {
    std::vector<uint32_t> inv(p.size());
    for (uint32_t i = 0; i < p.size(); ++i) inv[p[i]] = i;
    return inv;
}

// Derives an independent stream id from (base seed, stream index).
inline uint64_t derive_stream(uint64_t seed, uint64_t stream) {
    SplitMix64 r(seed ^ (0x9E3779B97F4A7C15ull * (stream + 1)));
    return r.next();
}

} // namespace stegoshield
