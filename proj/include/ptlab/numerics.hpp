#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "ptlab/matrix.hpp"
#include "ptlab/rng.hpp"

namespace ptlab {

inline constexpr double kDefaultRankTol = 1e-8;
inline constexpr double kConeIntersectTol = 1e-7;

struct PowerIterationOptions {
    int max_iter = 5000;
    double rel_tol = 1e-12;
    RngSeed restart_seed{0x5eed};
};

/// Largest singular value, by power iteration on the smaller Gram matrix.
/// Starts from the normalized all-ones vector; restarts once from a seeded
/// random vector if the iterate collapses or the iteration does not settle.
double spectral_norm(const Matrix& m, const PowerIterationOptions& opts = {});

/// All singular values in descending order (one-sided Jacobi).
std::vector<double> singular_values(const Matrix& m);

/// Number of singular values strictly above tol * sigma_max.
std::size_t rank(const Matrix& m, double tol = kDefaultRankTol);

/// Orthonormal basis of the orthogonal complement of span(vectors) in R^dim.
/// Throws NoComplement when the inputs span the whole space.
std::vector<Vector> orthogonal_complement_basis(std::span<const Vector> vectors, std::size_t dim);

/// Angle in [0, pi] between two nonzero vectors.
double angle(std::span<const double> u, std::span<const double> v);

struct ConeMargin {
    double margin = 0.0;
    /// Minimizing simplex weights (alpha, beta, gamma, epsilon).
    std::array<double, 4> weights{};
};

/// Distance from the origin of the set { a u1 + b v1 - c u2 - e v2 } over the
/// probability simplex. The open cones Cone(u1, v1) and Cone(u2, v2) share a
/// nonzero point exactly when this is zero.
ConeMargin cone_intersection_margin_detail(std::span<const double> u1, std::span<const double> v1,
                                           std::span<const double> u2, std::span<const double> v2);

inline double cone_intersection_margin(std::span<const double> u1, std::span<const double> v1,
                                       std::span<const double> u2, std::span<const double> v2) {
    return cone_intersection_margin_detail(u1, v1, u2, v2).margin;
}

inline bool cones_intersect(double margin) { return margin <= kConeIntersectTol; }

/// Solves A x = b for square A by Gaussian elimination with partial pivoting.
/// Throws InvalidMatrix for a numerically singular A.
Vector solve(const Matrix& a, std::span<const double> b);

/// Euclidean projection onto the probability simplex (sort-based).
Vector project_to_simplex(std::span<const double> v);

}  // namespace ptlab
