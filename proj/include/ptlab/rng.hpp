#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "ptlab/matrix.hpp"

namespace ptlab {

struct RngSeed {
    std::uint64_t value = 0;
};

/// Derives an independent stream seed from a base seed and an index. Used for
/// per-pair, per-run and per-chunk streams so results do not depend on the
/// order in which work items are executed.
constexpr std::uint64_t mix_seed(std::uint64_t base, std::uint64_t index) noexcept {
    return base * 0x9E3779B97F4A7C15ULL + index;
}

/// Seeded generator. Distributions are computed from raw engine bits rather
/// than <random> distributions, whose output is implementation-defined, so
/// streams are bit-identical across standard libraries.
class Rng {
public:
    explicit Rng(RngSeed seed) : engine_(seed.value) {}
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer on [lo, hi].
    std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi) {
        const std::uint64_t span = hi - lo + 1;
        if (span == 0) return engine_();
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        std::uint64_t v;
        do v = engine_(); while (v >= limit);
        return lo + v % span;
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1;
        do u1 = uniform(); while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * std::numbers::pi * u2);
    }

    Vector uniform_vector(std::size_t n, double lo = 0.0, double hi = 1.0) {
        Vector v(n);
        for (auto& x : v) x = uniform(lo, hi);
        return v;
    }

    Vector normal_vector(std::size_t n) {
        Vector v(n);
        for (auto& x : v) x = normal();
        return v;
    }

    Matrix uniform_matrix(std::size_t rows, std::size_t cols, double lo, double hi) {
        Matrix m(rows, cols);
        for (auto& x : m.data()) x = uniform(lo, hi);
        return m;
    }

    Matrix normal_matrix(std::size_t rows, std::size_t cols) {
        Matrix m(rows, cols);
        for (auto& x : m.data()) x = normal();
        return m;
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace ptlab
