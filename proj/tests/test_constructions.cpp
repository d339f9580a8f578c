#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "ptlab/constructions.hpp"
#include "ptlab/errors.hpp"
#include "ptlab/inversion.hpp"
#include "ptlab/numerics.hpp"

using namespace ptlab;

namespace {

TransformerLayerWeights construction_layer(std::size_t d, std::uint64_t seed) {
    Rng rng(seed);
    return init_layer({.d = d, .heads = 1, .contractive_mlp = true}, rng);
}

void expect_kind(auto&& fn, ErrorKind kind) {
    try {
        fn();
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == kind);
    }
}

Vector x1_col(const SeqDataset& s, std::size_t i) { return s.examples[i].X.col(0); }

}  // namespace

TEST_CASE("solve_parallel_alignment") {
    const auto layer = construction_layer(10, 3);
    Rng rng(17);
    int aligned = 0;
    for (int t = 0; t < 20; ++t) {
        const Vector x0 = rng.uniform_vector(10);
        Vector c = rng.normal_vector(10);
        const auto r = align_up_to_sign(x0, c, layer);
        Matrix X(10, 2);
        X.set_col(0, x0);
        X.set_col(1, r.x1);
        CHECK(angle(attend_token(x0, X, layer), c) < kAngleTol);
        CHECK(r.bracketed);
        ++aligned;

        // Independent grid scan over the bracketing interval sees the same sign change.
        const auto& h = layer.heads[0];
        const Matrix M = h.W_o * h.W_v;
        const Vector Mx0 = M * x0;
        const Vector ch = scaled(c, 1.0 / norm2(c));
        Vector u = Mx0;
        axpy(-dot(Mx0, ch), ch, u);
        auto cross = [&](double alpha) {
            Eigen::VectorXd cv = Eigen::Map<const Eigen::VectorXd>(c.data(), 10);
            Eigen::VectorXd sol = oracle::to_eigen(M).fullPivLu().solve(cv);
            Vector x1(10);
            for (int i = 0; i < 10; ++i) x1[i] = alpha * sol[i] - x0[i];
            Matrix Y(10, 2);
            Y.set_col(0, x0);
            Y.set_col(1, x1);
            return dot(attend_token(x0, Y, layer), u);
        };
        double prev = cross(-kAlphaRange);
        double found = NAN;
        for (int i = 1; i <= 10000; ++i) {
            const double a = -kAlphaRange + 2 * kAlphaRange * i / 10000.0;
            const double f = cross(a);
            if ((prev < 0) != (f < 0)) {
                found = a;
                break;
            }
            prev = f;
        }
        REQUIRE(std::isfinite(found));
        CHECK(std::abs(found - r.alpha) <= 2 * kAlphaRange / 10000.0 + 1e-9);
    }
    CHECK(aligned == 20);
}

TEST_CASE("solve_parallel_alignment special cases") {
    auto layer = construction_layer(6, 5);
    const auto& h = layer.heads[0];
    Rng rng(1);
    SUBCASE("already parallel") {
        const Vector x0 = rng.uniform_vector(6);
        const Vector c = (h.W_o * h.W_v) * x0;
        const auto r = solve_parallel_alignment_detail(x0, c, layer);
        CHECK(r.trivial);
        CHECK(r.x1 == x0);
    }
    SUBCASE("perpendicular obstruction") {
        const Vector x0 = rng.uniform_vector(6);
        const Vector q = h.W_q * x0;
        // Choose c so that W_k M^{-1} c is orthogonal to q.
        const Matrix M = h.W_o * h.W_v;
        const std::vector<Vector> qs{transpose_times(h.W_k, q)};
        const Vector w = orthogonal_complement_basis(qs, 6).front();  // W_k^T q . w = 0
        const Vector c = M * w;
        expect_kind([&] { solve_parallel_alignment(x0, c, layer); }, ErrorKind::PerpendicularObstruction);
    }
    SUBCASE("multi-head layers are rejected") {
        Rng r2(3);
        const auto two = init_layer({.d = 6, .heads = 2, .contractive_mlp = true}, r2);
        CHECK_THROWS_AS(solve_parallel_alignment(rng.uniform_vector(6), rng.normal_vector(6), two), Error);
    }
    SUBCASE("anti-parallel solution reports NoAlignment for one sign") {
        int flips = 0;
        for (int t = 0; t < 10; ++t) {
            const Vector x0 = rng.uniform_vector(6);
            Vector c = rng.normal_vector(6);
            const Vector original = c;
            align_up_to_sign(x0, c, layer);
            if (c != original) {
                ++flips;
                expect_kind([&] { solve_parallel_alignment(x0, original, layer); }, ErrorKind::NoAlignment);
            }
        }
        CHECK(flips > 0);
    }
}

TEST_CASE("build_unlearnable_pair produces verified certificates") {
    const auto layer = construction_layer(10, 11);
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto pair = build_unlearnable_pair(RngSeed{seed}, 10, layer);
        const auto& ds = pair.dataset;
        const auto& cert = pair.certificate;
        REQUIRE(ds.size() == 2);
        CHECK(ds.loss_mask == std::vector<std::size_t>{1});
        const auto v = verify_unlearnable_certificate(ds, cert, layer);
        CHECK_MESSAGE(v.ok, (v.reasons.empty() ? "" : v.reasons.front()));
        CHECK(cert.angle_residuals[0] < 1e-4);
        CHECK(cert.angle_residuals[1] < 1e-4);
        CHECK(cert.cone_margin > 1e-7);

        const Vector x0 = ds.examples[0].X.col(1);
        const Vector ua = sub(cert.a, x0), ub = sub(cert.b, x0);
        for (const auto* c : {&cert.c1, &cert.c2}) {
            CHECK(std::abs(dot(*c, ua)) <= 1e-9);
            CHECK(std::abs(dot(*c, ub)) <= 1e-9);
        }
        CHECK(std::abs(dot(cert.c1, cert.c2)) <= 1e-9);

        // Grid re-check of the cone margin at resolution 1e-2.
        const Vector att1 = attend_token(x0, ds.examples[0].X, layer);
        const Vector att2 = attend_token(x0, ds.examples[1].X, layer);
        CHECK(oracle::cone_margin_grid(scaled(att1, -1), ua, scaled(att2, -1), ub, 100) > 1e-7);

        // The prompt decomposition holds on the constructed inputs.
        Rng rng(seed);
        const Matrix P = rng.uniform_matrix(10, 3, -1, 1);
        const Matrix PX = hcat(P, ds.examples[0].X);
        const Vector lhs = attend_token(x0, PX, layer);
        const Vector rhs = add(scaled(att1, attention_mass(ds.examples[0].X, x0, PX, layer.heads[0])),
                               scaled(attend_token(x0, P, layer), attention_mass(P, x0, PX, layer.heads[0])));
        CHECK(norm2(sub(lhs, rhs)) <= 1e-10);

        const auto again = build_unlearnable_pair(RngSeed{seed}, 10, layer);
        CHECK(again.dataset.examples[0].X == ds.examples[0].X);
        CHECK(again.dataset.examples[1].Y == ds.examples[1].Y);
    }
}

TEST_CASE("verify_unlearnable_certificate rejects tampered datasets") {
    const auto layer = construction_layer(10, 11);
    const auto pair = build_unlearnable_pair(RngSeed{7}, 10, layer);

    auto dup = pair.dataset;
    dup.examples[1] = dup.examples[0];
    CHECK_FALSE(verify_unlearnable_certificate(dup, pair.certificate, layer).ok);

    Rng rng(99);
    int rejected = 0;
    for (int t = 0; t < 20; ++t) {
        auto bad = pair.dataset;
        Vector dir = rng.normal_vector(10);
        dir = scaled(dir, 0.5 / norm2(dir));
        bad.examples[0].X.set_col(0, add(x1_col(bad, 0), dir));
        if (!verify_unlearnable_certificate(bad, pair.certificate, layer).ok) ++rejected;
    }
    CHECK(rejected == 20);
}

TEST_CASE("build_unlearnable_pair preconditions") {
    SUBCASE("dimension") {
        const auto layer = construction_layer(3, 1);
        expect_kind([&] { build_unlearnable_pair(RngSeed{1}, 3, layer); }, ErrorKind::DimensionTooSmall);
    }
    SUBCASE("non-contractive MLP") {
        auto layer = construction_layer(6, 1);
        rescale_mlp(layer.mlp, 1.5);
        expect_kind([&] { build_unlearnable_pair(RngSeed{1}, 6, layer); }, ErrorKind::NotContractive);
    }
}

TEST_CASE("build_lower_bound_dataset") {
    const auto layer = construction_layer(10, 21);
    SUBCASE("n = 3") {
        const auto lb = build_lower_bound_dataset(RngSeed{5}, 3, 10, layer);
        REQUIRE(lb.dataset.size() == 3);
        CHECK(rank(Matrix::from_columns(lb.directions)) == 3);
        CHECK(lb.min_feature_gap >= 1e-6);
        for (std::size_t i = 0; i < 3; ++i) {
            const auto& X = lb.dataset.examples[i].X;
            const Vector xi = X.col(1);
            CHECK(xi == lb.directions[i]);
            const Vector att = attend_token(xi, X, layer);
            CHECK(std::abs(dot(att, xi)) <= 1e-4 * norm2(att) * norm2(xi));
            CHECK(std::abs(dot(sub(lb.preimages[i], xi), xi)) >= 1e-6 * dot(xi, xi));
        }
        // With fewer prompt tokens than examples the rank condition cannot hold.
        Rng rng(8);
        for (int t = 0; t < 20; ++t) {
            const Prompt P{rng.uniform_matrix(10, 2, -1, 1)};
            CHECK(prompt_rank_condition(P, lb.dataset, layer) <= 2);
        }
    }
    SUBCASE("n = 1") {
        const auto lb = build_lower_bound_dataset(RngSeed{6}, 1, 10, layer);
        CHECK(lb.dataset.size() == 1);
        Rng rng(2);
        CHECK(prompt_rank_condition(Prompt{rng.uniform_matrix(10, 1, -1, 1)}, lb.dataset, layer) == 1);
    }
    SUBCASE("n >= d") {
        expect_kind([&] { build_lower_bound_dataset(RngSeed{1}, 10, 10, layer); }, ErrorKind::DimensionTooSmall);
    }
}

TEST_CASE("prompt_rank_condition") {
    const auto layer = construction_layer(10, 21);
    const auto lb = build_lower_bound_dataset(RngSeed{9}, 4, 10, layer);
    CHECK(prompt_rank_condition(Prompt{Matrix(10, 0)}, lb.dataset, layer) == 0);
    Rng rng(4);
    int full = 0;
    for (int t = 0; t < 100; ++t) {
        const std::size_t mp = 1 + t % 6;
        const Prompt P{rng.uniform_matrix(10, mp, -1, 1)};
        const std::size_t r = prompt_rank_condition(P, lb.dataset, layer);
        CHECK(r <= std::min<std::size_t>(mp, 4));
        if (mp == 4 && r == 4) ++full;
    }
    CHECK(full > 0);
}
