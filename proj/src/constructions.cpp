#include "ptlab/constructions.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>

#include "ptlab/errors.hpp"
#include "ptlab/inversion.hpp"
#include "ptlab/lipschitz.hpp"
#include "ptlab/numerics.hpp"

namespace ptlab {

namespace {

constexpr double kPerpendicularTol = 1e-10;
constexpr double kOrthogonalityTol = 1e-9;
constexpr double kUnitTol = 1e-10;
constexpr double kMinFeatureGap = 1e-6;

const FixedPointOptions kTightInversion{.max_iter = 5000, .tol = kCertificateInversionTol};

Matrix pair_of(std::span<const double> first, std::span<const double> last) {
    Matrix X(first.size(), 2);
    X.set_col(0, first);
    X.set_col(1, last);
    return X;
}

Vector normalized(Vector v) {
    const double n = norm2(v);
    require(n > 0.0, ErrorKind::DegenerateInput, "cannot normalize a zero vector");
    for (auto& x : v) x /= n;
    return v;
}

// Random unit vector in the span of an orthonormal family.
Vector random_combination(const std::vector<Vector>& basis, Rng& rng) {
    Vector out(basis.front().size(), 0.0);
    for (const auto& b : basis) axpy(rng.normal(), b, out);
    return normalized(out);
}

void check_alignment_layer(const TransformerLayerWeights& layer) {
    layer.validate();
    require(layer.heads.size() == 1, ErrorKind::InvalidInput, "alignment requires a single attention head");
    require(layer.heads[0].head_size() == layer.d(), ErrorKind::InvalidInput,
            "alignment requires head size equal to d");
}

void check_full_rank_head(const AttentionHeadWeights& h) {
    const std::size_t d = h.d();
    require(rank(h.W_q) == d && rank(h.W_k) == d && rank(h.W_v) == d, ErrorKind::InvalidMatrix,
            "W_q, W_k and W_v must be full rank");
    require(rank(h.W_o * h.W_v) == d, ErrorKind::InvalidMatrix, "W_o W_v must be invertible");
}

void check_contractive(const MlpWeights& mlp) {
    const double b = bound_mlp(mlp);
    if (b >= 1.0) throw Error(ErrorKind::NotContractive, "MLP bound " + std::to_string(b) + " is not below 1");
}

}  // namespace

AlignmentResult solve_parallel_alignment_detail(std::span<const double> x0, std::span<const double> c,
                                                const TransformerLayerWeights& layer, double angle_tol) {
    check_alignment_layer(layer);
    const auto& h = layer.heads[0];
    const std::size_t d = layer.d();
    require(x0.size() == d && c.size() == d, ErrorKind::InvalidInput, "alignment: dimension mismatch");
    require(angle_tol > 0.0, ErrorKind::InvalidInput, "angle_tol must be positive");
    if (norm2(c) == 0.0) throw Error(ErrorKind::DegenerateInput, "alignment target c is zero");

    const Matrix M = h.W_o * h.W_v;
    const Vector Mx0 = M * x0;
    const Vector Minv_c = solve(M, c);
    const Vector x0v(x0.begin(), x0.end());

    auto x1_of = [&](double alpha) {
        Vector x1 = scaled(Minv_c, alpha);
        axpy(-1.0, x0, x1);
        return x1;
    };
    auto att_of = [&](double alpha) { return attend_token(x0, pair_of(x0, x1_of(alpha)), layer); };

    if (norm2(Mx0) > 0.0 && angle(Mx0, c) < angle_tol) {
        AlignmentResult r;
        r.x1 = x0v;
        r.angle = angle(attend_token(x0, pair_of(x0, x0), layer), c);
        r.trivial = true;
        return r;
    }

    const Vector q = h.W_q * x0;
    const Vector k = h.W_k * Minv_c;
    const double qn = norm2(q), kn = norm2(k);
    if (qn == 0.0 || kn == 0.0 || std::abs(dot(q, k)) < kPerpendicularTol * qn * kn)
        throw Error(ErrorKind::PerpendicularObstruction, "W_q x0 is orthogonal to W_k M^{-1} c");

    // Cross component: the part of the output along M x0 orthogonal to c.
    const Vector c_hat = normalized(Vector(c.begin(), c.end()));
    Vector u = Mx0;
    axpy(-dot(Mx0, c_hat), c_hat, u);
    const double un = norm2(u);
    if (un == 0.0) {
        // M x0 = 0: the output is a positive multiple of alpha c for alpha > 0.
        AlignmentResult r;
        r.alpha = 1.0;
        r.x1 = x1_of(1.0);
        r.angle = angle(att_of(1.0), c);
        r.bracketed = true;
        if (r.angle >= angle_tol) throw Error(ErrorKind::NoAlignment, "degenerate alignment failed");
        return r;
    }
    for (auto& v : u) v /= un;
    auto cross = [&](double alpha) { return dot(att_of(alpha), u); };

    // Coarse scan for a sign change, then bisection.
    constexpr int kGrid = 2000;
    std::optional<std::pair<double, double>> bracket;
    double prev_a = -kAlphaRange;
    double prev_f = cross(prev_a);
    for (int i = 1; i <= kGrid && !bracket; ++i) {
        const double a = -kAlphaRange + 2.0 * kAlphaRange * i / kGrid;
        const double f = cross(a);
        if (prev_f == 0.0) bracket = {prev_a, prev_a};
        else if ((prev_f < 0.0) != (f < 0.0) || f == 0.0) bracket = {prev_a, a};
        prev_a = a;
        prev_f = f;
    }

    AlignmentResult r;
    if (bracket) {
        double lo = bracket->first, hi = bracket->second;
        double f_lo = cross(lo);
        for (int it = 0; it < 200 && lo < hi; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (mid <= lo || mid >= hi) break;
            const double f_mid = cross(mid);
            if (f_mid == 0.0) {
                lo = hi = mid;
                break;
            }
            if ((f_mid < 0.0) == (f_lo < 0.0)) {
                lo = mid;
                f_lo = f_mid;
            } else {
                hi = mid;
            }
        }
        // Pick whichever endpoint is closer to parallel.
        const double th_lo = angle(att_of(lo), c);
        const double th_hi = angle(att_of(hi), c);
        r.alpha = th_lo <= th_hi ? lo : hi;
        r.angle = std::min(th_lo, th_hi);
        r.bracketed = true;
    } else {
        // Descent on the angle itself with a central-difference slope.
        double alpha = 1.0;
        double th = angle(att_of(alpha), c);
        double lr = 1.0;
        for (int it = 0; it < 10000 && th >= angle_tol; ++it) {
            const double hstep = 1e-6 * std::max(1.0, std::abs(alpha));
            const double g = (angle(att_of(alpha + hstep), c) - angle(att_of(alpha - hstep), c)) / (2.0 * hstep);
            if (g == 0.0) break;
            const double cand = std::clamp(alpha - lr * g, -kAlphaRange, kAlphaRange);
            const double th_c = angle(att_of(cand), c);
            if (th_c < th) {
                alpha = cand;
                th = th_c;
                lr *= 1.2;
            } else {
                lr *= 0.5;
                if (lr < 1e-300) break;
            }
        }
        r.alpha = alpha;
        r.angle = th;
    }
    r.x1 = x1_of(r.alpha);
    if (r.angle >= angle_tol)
        throw Error(ErrorKind::NoAlignment, "no alpha in range aligns the output with c (angle " +
                                                std::to_string(r.angle) + ")");
    return r;
}

AlignmentResult align_up_to_sign(std::span<const double> x0, Vector& c, const TransformerLayerWeights& layer,
                                 double angle_tol) {
    try {
        return solve_parallel_alignment_detail(x0, c, layer, angle_tol);
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::NoAlignment) throw;
    }
    for (auto& v : c) v = -v;
    return solve_parallel_alignment_detail(x0, c, layer, angle_tol);
}

UnlearnablePair build_unlearnable_pair(RngSeed seed, std::size_t d, const TransformerLayerWeights& layer) {
    if (d < 4) throw Error(ErrorKind::DimensionTooSmall, "the unlearnable construction needs d >= 4");
    check_alignment_layer(layer);
    require(layer.d() == d, ErrorKind::InvalidInput, "layer dimension differs from d");
    check_full_rank_head(layer.heads[0]);
    check_contractive(layer.mlp);

    ErrorKind last_kind = ErrorKind::ConeNotDisjoint;
    std::string last_msg;
    for (int attempt = 0; attempt < kConstructionAttempts; ++attempt) {
        Rng rng(mix_seed(seed.value, static_cast<std::uint64_t>(attempt)));
        const Vector x0 = rng.uniform_vector(d);
        const Vector y10 = rng.uniform_vector(d);
        const Vector y20 = rng.uniform_vector(d);
        const Vector y11 = rng.uniform_vector(d);
        const Vector y21 = rng.uniform_vector(d);

        const Vector a = invert_mlp(y10, layer.mlp, kTightInversion);
        const Vector b = invert_mlp(y20, layer.mlp, kTightInversion);
        const Vector ua = sub(a, x0), ub = sub(b, x0);
        const std::vector<Vector> spanned{ua, ub};
        const auto basis = orthogonal_complement_basis(spanned, d);
        if (basis.size() < 2) throw Error(ErrorKind::NoComplement, "complement has fewer than two directions");

        Vector c1 = random_combination(basis, rng);
        Vector c2 = random_combination(basis, rng);
        axpy(-dot(c1, c2), c1, c2);
        c2 = normalized(c2);

        AlignmentResult r1, r2;
        try {
            r1 = align_up_to_sign(x0, c1, layer);
            r2 = align_up_to_sign(x0, c2, layer);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::NoAlignment && e.kind() != ErrorKind::PerpendicularObstruction) throw;
            last_kind = e.kind();
            last_msg = e.what();
            continue;
        }

        const Matrix X1 = pair_of(r1.x1, x0);
        const Matrix X2 = pair_of(r2.x1, x0);
        const Vector att1 = attend_token(x0, X1, layer);
        const Vector att2 = attend_token(x0, X2, layer);
        const double margin = cone_intersection_margin(scaled(att1, -1.0), ua, scaled(att2, -1.0), ub);
        if (cones_intersect(margin)) {
            last_kind = ErrorKind::ConeNotDisjoint;
            last_msg = "cone margin " + std::to_string(margin);
            continue;
        }

        UnlearnablePair out;
        out.dataset.examples = {{X1, pair_of(y11, y10)}, {X2, pair_of(y21, y20)}};
        out.dataset.loss_mask = {1};
        auto& cert = out.certificate;
        cert.c1 = c1;
        cert.c2 = c2;
        cert.angle_residuals = {angle(att1, c1), angle(att2, c2)};
        cert.cone_margin = margin;
        cert.a = a;
        cert.b = b;
        cert.attempts = static_cast<std::size_t>(attempt + 1);
        return out;
    }
    throw Error(last_kind, "unlearnable construction failed after " + std::to_string(kConstructionAttempts) +
                               " attempts for seed " + std::to_string(seed.value) + ": " + last_msg);
}

VerificationResult verify_unlearnable_certificate(const SeqDataset& dataset, const UnlearnableCertificate& cert,
                                                  const TransformerLayerWeights& layer) {
    VerificationResult v;
    auto fail = [&](std::string why) {
        v.ok = false;
        v.reasons.push_back(std::move(why));
    };
    try {
        dataset.validate();
    } catch (const Error& e) {
        fail(std::string("dataset invalid: ") + e.what());
        return v;
    }
    if (dataset.size() != 2 || dataset.m() != 2) {
        fail("expected two examples of two tokens");
        return v;
    }
    const std::size_t d = dataset.d();
    if (layer.d() != d || cert.c1.size() != d || cert.c2.size() != d) {
        fail("dimension mismatch between dataset, layer and certificate");
        return v;
    }
    if (dataset.loss_mask != std::vector<std::size_t>{1}) fail("loss mask must supervise only the last token");

    const Matrix& X1 = dataset.examples[0].X;
    const Matrix& X2 = dataset.examples[1].X;
    const Vector x0 = X1.col(1);
    if (X2.col(1) != x0) fail("examples do not share the last input token");

    Vector a, b;
    try {
        a = invert_mlp(dataset.examples[0].Y.col(1), layer.mlp, kTightInversion);
        b = invert_mlp(dataset.examples[1].Y.col(1), layer.mlp, kTightInversion);
    } catch (const Error& e) {
        fail(std::string("MLP inversion failed: ") + e.what());
        return v;
    }
    const Vector ua = sub(a, x0), ub = sub(b, x0);

    if (std::abs(norm2(cert.c1) - 1.0) > kUnitTol || std::abs(norm2(cert.c2) - 1.0) > kUnitTol)
        fail("c1 or c2 is not a unit vector");
    if (std::abs(dot(cert.c1, cert.c2)) > kUnitTol) fail("c1 is not orthogonal to c2");
    const std::pair<const char*, double> orth[] = {{"c1.(a-x0)", dot(cert.c1, ua)},
                                                   {"c1.(b-x0)", dot(cert.c1, ub)},
                                                   {"c2.(a-x0)", dot(cert.c2, ua)},
                                                   {"c2.(b-x0)", dot(cert.c2, ub)}};
    for (const auto& [name, value] : orth)
        if (std::abs(value) > kOrthogonalityTol) fail(std::string(name) + " = " + std::to_string(value));

    try {
        const Vector att1 = attend_token(x0, X1, layer);
        const Vector att2 = attend_token(x0, X2, layer);
        const double th1 = angle(att1, cert.c1);
        const double th2 = angle(att2, cert.c2);
        if (th1 >= kAngleTol) fail("first attention output is not parallel to c1 (angle " + std::to_string(th1) + ")");
        if (th2 >= kAngleTol) fail("second attention output is not parallel to c2 (angle " + std::to_string(th2) + ")");
        const double margin = cone_intersection_margin(scaled(att1, -1.0), ua, scaled(att2, -1.0), ub);
        if (cones_intersect(margin)) fail("cones intersect (margin " + std::to_string(margin) + ")");
    } catch (const Error& e) {
        fail(std::string("geometry check failed: ") + e.what());
    }

    if (cert.a.size() != d || cert.b.size() != d || norm2(sub(cert.a, a)) > 1e-8 || norm2(sub(cert.b, b)) > 1e-8)
        fail("recorded MLP preimages do not match recomputed ones");
    if (!(cert.angle_residuals[0] < kAngleTol && cert.angle_residuals[1] < kAngleTol))
        fail("recorded angle residuals exceed the tolerance");
    if (cones_intersect(cert.cone_margin)) fail("recorded cone margin is not positive");
    return v;
}

LowerBoundDataset build_lower_bound_dataset(RngSeed seed, std::size_t n, std::size_t d,
                                            const TransformerLayerWeights& layer) {
    require(n >= 1, ErrorKind::InvalidInput, "n must be at least 1");
    if (n >= d) throw Error(ErrorKind::DimensionTooSmall, "lower-bound construction needs n < d");
    check_alignment_layer(layer);
    require(layer.d() == d, ErrorKind::InvalidInput, "layer dimension differs from d");
    check_full_rank_head(layer.heads[0]);
    check_contractive(layer.mlp);

    std::string last_msg;
    ErrorKind last_kind = ErrorKind::DegenerateFeatures;
    for (int attempt = 0; attempt < kConstructionAttempts; ++attempt) {
        Rng rng(mix_seed(seed.value, static_cast<std::uint64_t>(attempt)));
        LowerBoundDataset out;
        out.dataset.loss_mask = {1};
        std::vector<Vector> y0(n), y1(n);
        for (std::size_t i = 0; i < n; ++i) {
            y0[i] = rng.uniform_vector(d);
            y1[i] = rng.uniform_vector(d);
            out.preimages.push_back(invert_mlp(y1[i], layer.mlp, kTightInversion));
        }

        std::vector<Vector> cs;
        for (std::size_t i = 0; i < n; ++i) cs.push_back(rng.normal_vector(d));
        if (rank(Matrix::from_columns(cs)) < n) {
            last_msg = "sampled directions are dependent";
            continue;
        }
        // Enlarge each c_i until a_i - c_i is clearly not orthogonal to c_i.
        for (std::size_t i = 0; i < n; ++i) {
            auto& c = cs[i];
            for (int k = 0; k < 60; ++k) {
                const double cn2 = dot(c, c);
                if (std::abs(dot(sub(out.preimages[i], c), c)) >= 1e-6 * cn2) break;
                for (auto& x : c) x *= 2.0;
            }
        }

        bool ok = true;
        std::vector<Vector> features;
        for (std::size_t i = 0; i < n && ok; ++i) {
            const Vector& xi = cs[i];
            // Target direction orthogonal to c_i with matching scale.
            const std::vector<Vector> one{xi};
            Vector target = scaled(random_combination(orthogonal_complement_basis(one, d), rng), norm2(xi));
            AlignmentResult r;
            try {
                r = align_up_to_sign(xi, target, layer);
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::NoAlignment && e.kind() != ErrorKind::PerpendicularObstruction) throw;
                last_kind = e.kind();
                last_msg = e.what();
                ok = false;
                break;
            }
            const Matrix X = pair_of(r.x1, xi);
            features.push_back(attend_token(xi, X, layer));
            out.dataset.examples.push_back({X, pair_of(y0[i], y1[i])});
        }
        if (!ok) continue;

        double gap = n > 1 ? INFINITY : 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) gap = std::min(gap, norm2(sub(features[i], features[j])));
        if (n > 1 && gap < kMinFeatureGap) {
            last_kind = ErrorKind::DegenerateFeatures;
            last_msg = "attention outputs are not distinct";
            continue;
        }
        out.directions = cs;
        out.min_feature_gap = gap;
        return out;
    }
    throw Error(last_kind, "lower-bound construction failed after " + std::to_string(kConstructionAttempts) +
                               " attempts for seed " + std::to_string(seed.value) + ": " + last_msg);
}

std::size_t prompt_rank_condition(const Prompt& P, const SeqDataset& dataset, const TransformerLayerWeights& layer) {
    if (P.length() == 0) return 0;
    layer.validate();
    dataset.validate();
    const auto& h = layer.heads.front();
    require(P.tokens.rows() == h.d() && dataset.d() == h.d(), ErrorKind::InvalidInput,
            "prompt_rank_condition: dimension mismatch");
    Matrix A(P.length(), dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const Matrix& X = dataset.examples[i].X;
        A.set_col(i, attention_weights(X.col(X.cols() - 1), P.tokens, h));
    }
    return rank(h.W_v * P.tokens * A, kDefaultRankTol);
}

}  // namespace ptlab
