#pragma once

#include <cstdint>
#include <cmath>
#include <utility>
#include <vector>

// Deterministic RNG used everywhere in place of <random> distributions:
// std::uniform_real_distribution et al. are not bit-portable across
// standard library implementations, and simulation/topology outputs must
// be byte-identical across machines.

namespace flowloc::rng {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Derives an independent stream seed from a master seed and a stream id.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    std::uint64_t s = master ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
    std::uint64_t a = splitmix64(s);
    std::uint64_t b = splitmix64(s);
    return a ^ (b << 1);
}

// xoshiro256++ (Blackman/Vigna), seeded via splitmix64.
class Stream {
public:
    explicit Stream(std::uint64_t seed = 0) {
        std::uint64_t sm = seed;
        for (auto& w : s_) w = splitmix64(sm);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform on [0,1) with 53 random bits.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    // Uniform integer on {0, ..., n} inclusive.
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n == ~0ULL) return next_u64();
        const std::uint64_t span = n + 1;
        const std::uint64_t limit = ~0ULL - ~0ULL % span;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % span;
    }

    // Standard normal via Marsaglia polar method (no trig; spare value cached).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double m = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * m;
        have_spare_ = true;
        return u * m;
    }

    // Index sampled from unnormalized non-negative weights.
    std::size_t categorical(const double* weights, std::size_t n) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) total += weights[i];
        double x = uniform() * total;
        for (std::size_t i = 0; i + 1 < n; ++i) {
            x -= weights[i];
            if (x < 0.0) return i;
        }
        return n - 1;
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t s_[4] = {};
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// Fisher-Yates shuffle driven by a Stream.
template <class T>
void shuffle(std::vector<T>& v, Stream& rs) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rs.uniform_int(i - 1));
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace flowloc::rng
