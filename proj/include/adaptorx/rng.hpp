#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace adaptorx {

namespace detail {

inline uint64_t mix64(uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ULL;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return z;
}

inline uint64_t fnv1a(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace detail

// Counter-based generator: output i is a pure function of (key, i), so a
// stream can be replayed from any point and never aliases another stream.
class RngStream {
public:
    RngStream() = default;
    explicit RngStream(uint64_t key) : key_(key) {}

    uint64_t next_u64() {
        return detail::mix64(key_ + (++counter_) * 0x9e3779b97f4a7c15ULL);
    }

    // Uniform in [0, 1).
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Uniform in [0, n). Rejection-sampled so every value is equally likely.
    uint64_t next_below(uint64_t n) {
        if (n <= 1) return 0;
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return v % n;
    }

    // Box-Muller; the spare value is cached so draws come in deterministic order.
    double normal(double mean, double stddev) {
        if (have_spare_) {
            have_spare_ = false;
            return mean + stddev * spare_;
        }
        const double u1 = 1.0 - next_double();  // (0, 1]
        const double u2 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return mean + stddev * r * std::cos(theta);
    }

    uint64_t key() const { return key_; }

private:
    uint64_t key_ = 0;
    uint64_t counter_ = 0;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Root generator. Every stochastic site derives its own named stream, so the
// draw order of one site never perturbs another and runs are bit-reproducible.
class Rng {
public:
    Rng() = default;
    explicit Rng(uint64_t seed) : seed_(seed) {}

    RngStream stream(std::string_view name) const {
        return RngStream(detail::mix64(detail::mix64(seed_) ^ detail::fnv1a(name)));
    }

    uint64_t seed() const { return seed_; }

private:
    uint64_t seed_ = 0;
};

// In-place Fisher-Yates using the given stream.
template <typename T>
void shuffle(std::vector<T>& v, RngStream& rs) {
    for (size_t i = v.size(); i > 1; --i) {
        const size_t j = static_cast<size_t>(rs.next_below(i));
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace adaptorx
