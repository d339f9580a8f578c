#pragma once

// Test-only reference implementations. Nothing here is used by the library.

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "ptlab/matrix.hpp"

namespace oracle {

inline Eigen::MatrixXd to_eigen(const ptlab::Matrix& m) {
    Eigen::MatrixXd e(m.rows(), m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c) e(r, c) = m(r, c);
    return e;
}

inline ptlab::Matrix from_eigen(const Eigen::MatrixXd& e) {
    ptlab::Matrix m(e.rows(), e.cols());
    for (Eigen::Index r = 0; r < e.rows(); ++r)
        for (Eigen::Index c = 0; c < e.cols(); ++c) m(r, c) = e(r, c);
    return m;
}

inline std::vector<double> singular_values(const ptlab::Matrix& m) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(to_eigen(m));
    const auto s = svd.singularValues();
    return {s.data(), s.data() + s.size()};
}

inline double spectral_norm(const ptlab::Matrix& m) {
    const auto s = singular_values(m);
    return s.empty() ? 0.0 : s.front();
}

inline double gram_determinant(const ptlab::Matrix& m) {
    const Eigen::MatrixXd e = to_eigen(m);
    return (e.transpose() * e).determinant();
}

/// Brute-force minimum over a simplex grid with the given step count per unit.
inline double cone_margin_grid(const std::vector<double>& u1, const std::vector<double>& v1,
                               const std::vector<double>& u2, const std::vector<double>& v2, int steps) {
    double best = INFINITY;
    const std::size_t d = u1.size();
    for (int a = 0; a <= steps; ++a)
        for (int b = 0; a + b <= steps; ++b)
            for (int g = 0; a + b + g <= steps; ++g) {
                const int e = steps - a - b - g;
                double s = 0.0;
                for (std::size_t i = 0; i < d; ++i) {
                    const double r = (a * u1[i] + b * v1[i] - g * u2[i] - e * v2[i]) / steps;
                    s += r * r;
                }
                best = std::min(best, std::sqrt(s));
            }
    return best;
}

}  // namespace oracle
