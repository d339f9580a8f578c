#include "ptlab/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ptlab/errors.hpp"

namespace ptlab {

namespace {

void require_finite(const Matrix& m, const char* op) {
    if (!m.all_finite()) throw Error(ErrorKind::InvalidMatrix, std::string(op) + ": non-finite entry");
}

// Gram matrix of the smaller side: AᵀA if rows >= cols, else AAᵀ.
Matrix small_gram(const Matrix& a) {
    const bool use_cols = a.rows() >= a.cols();
    const std::size_t n = use_cols ? a.cols() : a.rows();
    Matrix g(n, n);
    if (use_cols) {
        for (std::size_t r = 0; r < a.rows(); ++r) {
            auto row = a.row(r);
            for (std::size_t i = 0; i < n; ++i) {
                const double ri = row[i];
                if (ri == 0.0) continue;
                for (std::size_t j = i; j < n; ++j) g(i, j) += ri * row[j];
            }
        }
    } else {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i; j < n; ++j) g(i, j) = dot(a.row(i), a.row(j));
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < i; ++j) g(i, j) = g(j, i);
    return g;
}

struct PowerResult {
    double rayleigh = 0.0;
    bool converged = false;
    bool collapsed = false;
};

PowerResult power_iterate(const Matrix& g, Vector v, const PowerIterationOptions& opts) {
    PowerResult res;
    const double nv = norm2(v);
    for (auto& x : v) x /= nv;
    double prev = -1.0;
    for (int it = 0; it < opts.max_iter; ++it) {
        Vector w = g * v;
        const double rho = dot(v, w);
        const double nw = norm2(w);
        res.rayleigh = std::max(res.rayleigh, rho);
        if (nw == 0.0) {
            res.collapsed = true;
            return res;
        }
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = w[i] / nw;
        if (prev >= 0.0 && std::abs(rho - prev) <= opts.rel_tol * std::abs(rho)) {
            res.rayleigh = rho;
            res.converged = true;
            return res;
        }
        prev = rho;
    }
    return res;
}

}  // namespace

double spectral_norm(const Matrix& m, const PowerIterationOptions& opts) {
    require_finite(m, "spectral_norm");
    if (m.empty()) return 0.0;
    if (max_abs(m) == 0.0) return 0.0;
    const Matrix g = small_gram(m);
    const std::size_t n = g.rows();
    if (n == 1) return std::sqrt(g(0, 0));

    PowerResult r = power_iterate(g, Vector(n, 1.0), opts);
    if (r.collapsed || !r.converged) {
        Rng rng(opts.restart_seed);
        PowerResult retry = power_iterate(g, rng.normal_vector(n), opts);
        r.rayleigh = std::max(r.rayleigh, retry.rayleigh);
    }
    return std::sqrt(std::max(r.rayleigh, 0.0));
}

std::vector<double> singular_values(const Matrix& m) {
    require_finite(m, "singular_values");
    if (m.empty()) return {};
    // One-sided Jacobi works on columns; orient so there are no more columns than rows.
    Matrix a = m.rows() >= m.cols() ? m : m.transpose();
    const std::size_t rows = a.rows();
    const std::size_t n = a.cols();
    constexpr double eps = std::numeric_limits<double>::epsilon();

    for (int sweep = 0; sweep < 100; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (std::size_t i = 0; i < rows; ++i) {
                    alpha += a(i, p) * a(i, p);
                    beta += a(i, q) * a(i, q);
                    gamma += a(i, p) * a(i, q);
                }
                if (gamma == 0.0 || std::abs(gamma) <= eps * std::sqrt(alpha * beta)) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t i = 0; i < rows; ++i) {
                    const double ap = a(i, p);
                    const double aq = a(i, q);
                    a(i, p) = c * ap - s * aq;
                    a(i, q) = s * ap + c * aq;
                }
            }
        }
        if (!rotated) break;
    }

    std::vector<double> sv(n);
    for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < rows; ++i) s += a(i, j) * a(i, j);
        sv[j] = std::sqrt(s);
    }
    std::sort(sv.begin(), sv.end(), std::greater<>());
    return sv;
}

std::size_t rank(const Matrix& m, double tol) {
    require(tol > 0.0, ErrorKind::InvalidInput, "rank: tol must be positive");
    const auto sv = singular_values(m);
    if (sv.empty() || sv.front() == 0.0) return 0;
    const double cut = tol * sv.front();
    return static_cast<std::size_t>(std::count_if(sv.begin(), sv.end(), [cut](double s) { return s > cut; }));
}

std::vector<Vector> orthogonal_complement_basis(std::span<const Vector> vectors, std::size_t dim) {
    require(dim > 0, ErrorKind::InvalidInput, "orthogonal_complement_basis: dim must be positive");
    std::vector<Vector> basis;

    auto project_out = [&basis](Vector& w) {
        // Two passes of modified Gram-Schmidt keep the result orthogonal to
        // working precision even after heavy cancellation.
        for (int pass = 0; pass < 2; ++pass)
            for (const auto& b : basis) axpy(-dot(b, w), b, w);
    };

    for (const auto& v : vectors) {
        require(v.size() == dim, ErrorKind::InvalidInput, "orthogonal_complement_basis: dimension mismatch");
        Vector w = v;
        project_out(w);
        const double nw = norm2(w);
        if (nw <= 1e-10 * std::max(1.0, norm2(v))) continue;
        for (auto& x : w) x /= nw;
        basis.push_back(std::move(w));
    }
    if (basis.size() >= dim) throw Error(ErrorKind::NoComplement, "input vectors span the whole space");

    const std::size_t span_dim = basis.size();
    std::vector<bool> used(dim, false);
    std::vector<Vector> out;
    while (basis.size() < dim) {
        // Pivot on the standard basis vector with the largest residual.
        std::size_t best = dim;
        double best_norm = 0.0;
        Vector best_w;
        for (std::size_t i = 0; i < dim; ++i) {
            if (used[i]) continue;
            Vector w(dim, 0.0);
            w[i] = 1.0;
            project_out(w);
            const double nw = norm2(w);
            if (nw > best_norm) {
                best_norm = nw;
                best = i;
                best_w = std::move(w);
            }
        }
        if (best == dim || best_norm < 1e-10) break;
        used[best] = true;
        for (auto& x : best_w) x /= best_norm;
        project_out(best_w);  // re-orthogonalize against everything picked so far
        const double renorm = norm2(best_w);
        for (auto& x : best_w) x /= renorm;
        basis.push_back(best_w);
        out.push_back(std::move(best_w));
    }
    require(out.size() == dim - span_dim, ErrorKind::NoComplement, "complement construction lost rank");
    return out;
}

double angle(std::span<const double> u, std::span<const double> v) {
    require(u.size() == v.size(), ErrorKind::InvalidInput, "angle: dimension mismatch");
    const double nu = norm2(u);
    const double nv = norm2(v);
    if (nu == 0.0 || nv == 0.0) throw Error(ErrorKind::DegenerateInput, "angle: zero vector");
    const double c = std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
    return std::acos(c);
}

Vector project_to_simplex(std::span<const double> v) {
    Vector u(v.begin(), v.end());
    std::sort(u.begin(), u.end(), std::greater<>());
    double css = 0.0;
    double theta = 0.0;
    for (std::size_t j = 0; j < u.size(); ++j) {
        css += u[j];
        const double t = (css - 1.0) / static_cast<double>(j + 1);
        if (u[j] - t > 0.0) theta = t;
    }
    Vector w(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) w[i] = std::max(v[i] - theta, 0.0);
    return w;
}

ConeMargin cone_intersection_margin_detail(std::span<const double> u1, std::span<const double> v1,
                                           std::span<const double> u2, std::span<const double> v2) {
    const std::size_t d = u1.size();
    require(v1.size() == d && u2.size() == d && v2.size() == d, ErrorKind::InvalidInput,
            "cone_intersection_margin: dimension mismatch");
    for (auto s : {u1, v1, u2, v2})
        if (norm2(s) == 0.0) throw Error(ErrorKind::InvalidInput, "cone_intersection_margin: zero generator");

    // Columns of B: u1, v1, -u2, -v2.
    const std::array<std::span<const double>, 4> gens{u1, v1, u2, v2};
    const std::array<double, 4> sign{1.0, 1.0, -1.0, -1.0};
    auto residual = [&](const std::array<double, 4>& w) {
        Vector r(d, 0.0);
        for (int k = 0; k < 4; ++k) axpy(sign[k] * w[k], gens[k], r);
        return norm2(r);
    };
    std::array<std::array<double, 4>, 4> q{};
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) q[i][j] = sign[i] * sign[j] * dot(gens[i], gens[j]);
    auto objective = [&](const std::array<double, 4>& w) {
        double f = 0.0;
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) f += w[i] * q[i][j] * w[j];
        return f;
    };

    // Projected gradient descent on the simplex with step halving.
    std::array<double, 4> w{0.25, 0.25, 0.25, 0.25};
    double f = objective(w);
    double step = 0.1;
    for (int it = 0; it < 2000 && step > 1e-300; ++it) {
        Vector trial(4);
        for (int i = 0; i < 4; ++i) {
            double g = 0.0;
            for (int j = 0; j < 4; ++j) g += 2.0 * q[i][j] * w[j];
            trial[i] = w[i] - step * g;
        }
        const Vector p = project_to_simplex(trial);
        const std::array<double, 4> wn{p[0], p[1], p[2], p[3]};
        const double fn = objective(wn);
        if (fn < f) {
            w = wn;
            f = fn;
        } else {
            step *= 0.5;
        }
    }

    ConeMargin best{residual(w), w};

    // Polish: the minimizer lies on some face of the simplex; solve the
    // equality-constrained problem on every face and keep feasible optima.
    for (unsigned mask = 1; mask < 16; ++mask) {
        std::vector<int> idx;
        for (int k = 0; k < 4; ++k)
            if (mask & (1u << k)) idx.push_back(k);
        const std::size_t s = idx.size();
        Matrix kkt(s + 1, s + 1);
        Vector rhs(s + 1, 0.0);
        for (std::size_t i = 0; i < s; ++i) {
            for (std::size_t j = 0; j < s; ++j) kkt(i, j) = 2.0 * q[idx[i]][idx[j]];
            kkt(i, s) = 1.0;
            kkt(s, i) = 1.0;
        }
        rhs[s] = 1.0;
        Vector sol;
        try {
            sol = solve(kkt, rhs);
        } catch (const Error&) {
            continue;
        }
        std::array<double, 4> cand{};
        bool feasible = true;
        for (std::size_t i = 0; i < s; ++i) {
            if (sol[i] < -1e-12) feasible = false;
            cand[idx[i]] = std::max(sol[i], 0.0);
        }
        if (!feasible) continue;
        const double total = cand[0] + cand[1] + cand[2] + cand[3];
        if (total <= 0.0) continue;
        for (auto& x : cand) x /= total;
        const double r = residual(cand);
        if (r < best.margin) best = {r, cand};
    }
    return best;
}

Vector solve(const Matrix& a, std::span<const double> b) {
    require(a.rows() == a.cols() && a.rows() == b.size(), ErrorKind::InvalidInput, "solve: shape mismatch");
    const std::size_t n = a.rows();
    Matrix m = a;
    Vector x(b.begin(), b.end());
    const double scale = std::max(max_abs(a), std::numeric_limits<double>::min());
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t piv = k;
        for (std::size_t i = k + 1; i < n; ++i)
            if (std::abs(m(i, k)) > std::abs(m(piv, k))) piv = i;
        if (std::abs(m(piv, k)) <= 1e-14 * scale) throw Error(ErrorKind::InvalidMatrix, "solve: singular matrix");
        if (piv != k) {
            for (std::size_t j = 0; j < n; ++j) std::swap(m(k, j), m(piv, j));
            std::swap(x[k], x[piv]);
        }
        for (std::size_t i = k + 1; i < n; ++i) {
            const double f = m(i, k) / m(k, k);
            if (f == 0.0) continue;
            for (std::size_t j = k; j < n; ++j) m(i, j) -= f * m(k, j);
            x[i] -= f * x[k];
        }
    }
    for (std::size_t k = n; k-- > 0;) {
        double s = x[k];
        for (std::size_t j = k + 1; j < n; ++j) s -= m(k, j) * x[j];
        x[k] = s / m(k, k);
    }
    return x;
}

}  // namespace ptlab
