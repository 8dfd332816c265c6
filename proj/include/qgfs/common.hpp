#pragma once

#include <cstdint>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <chrono>

namespace qgfs {

#ifdef QGFS_PRECISION_FLOAT
using real = float;
#else
using real = double;
#endif

inline constexpr real kPi = real(3.14159265358979323846);

// Error taxonomy. The CLI maps all of these to the QGFS-ERR: prefix and exit 1.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};
struct ContractError : Error {
    explicit ContractError(const std::string& msg) : Error("contract: " + msg) {}
};
struct DomainError : Error {
    explicit DomainError(const std::string& msg) : Error("domain: " + msg) {}
};
struct IoError : Error {
    explicit IoError(const std::string& msg) : Error("io: " + msg) {}
};
struct DivergedError : Error {
    explicit DivergedError(const std::string& msg) : Error("diverged: " + msg) {}
};
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config: " + msg) {}
};

// Deterministic RNG. mt19937_64 output is standard-specified; the derived
// samples below avoid std:: distributions, which are not portable across
// library implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t bits() { return gen_(); }

    // [0, 1)
    double uniform() { return double(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n)
    uint64_t uniform_int(uint64_t n) {
        return uint64_t((static_cast<unsigned __int128>(gen_()) * n) >> 64);
    }

    // [lo, hi] inclusive
    int64_t uniform_int(int64_t lo, int64_t hi) {
        return lo + int64_t(uniform_int(uint64_t(hi - lo + 1)));
    }

    double normal() {
        if (has_spare_) { has_spare_ = false; return spare_; }
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double t = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(t);
        has_spare_ = true;
        return r * std::cos(t);
    }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Stable 64-bit hash, used to derive sub-seeds and architecture hashes.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 1469598103934665603ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) { h ^= p[i]; h *= 1099511628211ull; }
    return h;
}
inline uint64_t fnv1a64(const std::string& s, uint64_t h = 1469598103934665603ull) {
    return fnv1a64(s.data(), s.size(), h);
}
inline uint64_t mix_seed(uint64_t base, uint64_t a, uint64_t b = 0x9e3779b97f4a7c15ull) {
    uint64_t v[3] = {base, a, b};
    return fnv1a64(v, sizeof v);
}

// Worker-count resolution. QGFS_THREADS caps the requested count; 0 means
// "use hardware concurrency" on either side. Default requests are 1 worker so
// runs are deterministic unless the caller opts in.
int resolve_threads(int requested);

class Timer {
public:
    Timer() : t0_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    }
private:
    std::chrono::steady_clock::time_point t0_;
};

}  // namespace qgfs
