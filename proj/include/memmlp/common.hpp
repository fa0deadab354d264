#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace memmlp {

// Error hierarchy. Everything the library throws derives from Error so
// callers (and the CLI) can map failure classes to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed values: non-finite inputs, degenerate rotations.
class DomainError : public Error {
public:
    using Error::Error;
};

// Tensor / window dimension disagreements.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Out-of-range frame or window indices.
class RangeError : public Error {
public:
    using Error::Error;
};

// File parse/serialize failures.
class IoError : public Error {
public:
    using Error::Error;
};

// API misuse: non-scalar backward seed, stepping frozen parameters.
class ContractError : public Error {
public:
    using Error::Error;
};

// Deterministic PRNG (splitmix64 core). std::mt19937 distributions are
// implementation-defined, so seeded runs would not be portable; this is.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::uint64_t uniform_int(std::uint64_t n) { return next_u64() % n; }

    // Box-Muller, one value per call.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // Derive an independent stream (for per-sample noise etc.).
    Rng fork() { return Rng(next_u64()); }

private:
    std::uint64_t state_;
};

inline constexpr double kPi = 3.14159265358979323846;

}  // namespace memmlp
