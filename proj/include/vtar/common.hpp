#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace vtar {

// Error taxonomy. The CLI maps these to exit codes:
// usage=2, config/data=3, numeric=4, acceptance gate=5.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UsageError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

// Non-finite values and other numerical failures.
class NumericsError : public Error {
public:
    using Error::Error;
};

// Operand shape violations; message names the offending shapes.
class ShapeError : public Error {
public:
    using Error::Error;
};

class AcceptanceError : public Error {
public:
    using Error::Error;
};

template <typename... Args>
std::string strf(Args&&... args) {
    std::ostringstream os;
    (os << ... << args);
    return os.str();
}

// FNV-1a, used for config digests and weight checksums.
inline uint64_t fnv1a64(const void* data, std::size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Deterministic RNG. All draws are derived from raw 64-bit output of a
// splitmix64 stream, so results are identical across platforms and
// standard-library versions.
class Rng {
public:
    explicit Rng(uint64_t seed)
        : base_(splitmix64(seed ^ 0x6a09e667f3bcc908ull)), state_(base_) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        uint64_t x = state_;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive bounds.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        if (hi < lo) throw Error(strf("uniform_int: empty range [", lo, ", ", hi, "]"));
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int64_t>(next_u64() % span);
    }

    std::size_t uniform_index(std::size_t n) {
        if (n == 0) throw Error("uniform_index: n must be positive");
        return static_cast<std::size_t>(next_u64() % n);
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mu, double sigma) { return mu + sigma * normal(); }

    void fill_normal(std::vector<double>& v, double mu, double sigma) {
        for (auto& x : v) x = normal(mu, sigma);
    }

    // Independent substream; deterministic in (parent seed, id) regardless of
    // how many draws the parent has made.
    Rng fork(uint64_t id) const { return Rng(splitmix64(base_ ^ splitmix64(id + 0x51ull))); }

private:
    uint64_t base_;
    uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace vtar
