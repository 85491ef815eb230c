#ifndef ABD_RNG_HPP
#define ABD_RNG_HPP

#include <cstdint>
#include <cmath>

namespace abd {

// splitmix64, used for seeding and for deriving independent substream seeds.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// xoshiro256++ with hand-rolled float/normal conversions so that every draw is
// bit-reproducible for a given seed, independent of the standard library.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) {
        uint64_t x = seed;
        for (auto& word : s_) {
            x = mix64(x);
            word = x;
        }
        has_spare_ = false;
        spare_ = 0.0;
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // uniform in [0, 1) with 53-bit resolution
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    uint64_t below(uint64_t n) { return next_u64() % n; }

    bool bernoulli(double p) { return uniform() < p; }

    // standard normal via the polar method (no libm trig involved)
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, q;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            q = u * u + v * v;
        } while (q >= 1.0 || q == 0.0);
        const double f = std::sqrt(-2.0 * std::log(q) / q);
        spare_ = v * f;
        has_spare_ = true;
        return u * f;
    }

    // independent substream for (seed, stream-id) pairs
    static Rng derive(uint64_t seed, uint64_t stream) { return Rng(mix64(seed) ^ mix64(stream * 0x9e3779b97f4a7c15ull + 1)); }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t s_[4];
    bool has_spare_;
    double spare_;
};

} // namespace abd

#endif
