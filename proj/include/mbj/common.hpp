#pragma once

// Shared error types, deterministic RNG and small numeric helpers.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace mbj {

// Error categories map 1:1 onto CLI exit codes (config/data/numeric).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

constexpr double kPi = 3.14159265358979323846;

// splitmix64; used to derive independent named streams from one run seed
// so that optional machinery (memory sampling, noise) never perturbs the
// data-order stream.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Deterministic RNG with self-contained uniform/normal so results do not
// depend on the standard library's distribution internals.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x853c49e6748fea9bULL) {}

    std::uint64_t next_u64() {
        // xorshift* variant seeded via splitmix-style state advance
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    std::size_t index(std::size_t n) {
        return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * kPi * u2);
        have_spare_ = true;
        return r * std::cos(2.0 * kPi * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

inline bool all_finite(const Eigen::Ref<const Eigen::MatrixXd>& m) {
    return m.allFinite();
}

// Unit-normalize with a zero-norm guard.
inline Eigen::VectorXd unit(const Eigen::VectorXd& v) {
    double n = v.norm();
    if (n <= 0.0 || !std::isfinite(n)) throw NumericError("cannot normalize zero or non-finite vector");
    return v / n;
}

inline double clamp(double x, double lo, double hi) { return x < lo ? lo : (x > hi ? hi : x); }

inline double deg_from_rad(double r) { return r * 180.0 / kPi; }

}  // namespace mbj
