#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace memrehearse {

// splitmix64, used for seeding and seed mixing.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Derive an independent stream seed from a base seed and an index.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t index) {
    std::uint64_t s = base;
    std::uint64_t a = splitmix64(s);
    s ^= index * 0x9e3779b97f4a7c15ULL;
    std::uint64_t b = splitmix64(s);
    return a ^ (b + 0x632be59bd9b4e019ULL);
}

// xoshiro256** seeded via splitmix64. Fixed algorithm so seeds reproduce
// across platforms and languages.
class Xoshiro256 {
public:
    explicit Xoshiro256(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& word : state_) word = splitmix64(sm);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform double in [0, 1), 53 bits of entropy.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, bound). Rejection keeps it unbiased.
    std::uint64_t uniform_int(std::uint64_t bound) {
        if (bound == 0) return 0;
        const std::uint64_t threshold = (0ULL - bound) % bound;
        for (;;) {
            const std::uint64_t r = next_u64();
            if (r >= threshold) return r % bound;
        }
    }

    // Standard normal via Box-Muller. Consumes two uniforms per pair,
    // second value cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * 3.141592653589793238462643 * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t state_[4]{};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace memrehearse
