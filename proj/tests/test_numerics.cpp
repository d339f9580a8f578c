#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "ptlab/errors.hpp"
#include "ptlab/numerics.hpp"

using namespace ptlab;

namespace {

Vector unit(std::size_t d, std::size_t i) {
    Vector v(d, 0.0);
    v[i] = 1.0;
    return v;
}

}  // namespace

TEST_CASE("spectral_norm of simple matrices") {
    CHECK(spectral_norm(Matrix::identity(5)) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(spectral_norm(Matrix{{3.0, 0.0}, {0.0, -4.0}}) == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(spectral_norm(Matrix(3, 2)) == 0.0);
}

TEST_CASE("spectral_norm matches an SVD oracle") {
    Rng rng(7);
    const Matrix a = rng.normal_matrix(6, 4);
    const double ref = oracle::spectral_norm(a);
    CHECK(std::abs(spectral_norm(a) - ref) <= 1e-9 * ref);

    for (int t = 0; t < 50; ++t) {
        const Matrix b = rng.uniform_matrix(1 + rng.uniform_int(0, 9), 1 + rng.uniform_int(0, 9), -1, 1);
        const double r = oracle::spectral_norm(b);
        CHECK(std::abs(spectral_norm(b) - r) <= 1e-10 * r);
    }
}

TEST_CASE("spectral_norm recovers when the start vector is in the null space") {
    // All-ones lies in the kernel of this matrix.
    const Matrix a{{1.0, -1.0}, {2.0, -2.0}};
    CHECK(spectral_norm(a) == doctest::Approx(std::sqrt(5.0) * std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("spectral_norm rejects non-finite input") {
    Matrix a = Matrix::identity(2);
    a(0, 1) = NAN;
    CHECK_THROWS_AS(spectral_norm(a), Error);
    try {
        spectral_norm(a);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::InvalidMatrix);
    }
}

TEST_CASE("spectral_norm is homogeneous and submultiplicative") {
    Rng rng(101);
    for (int t = 0; t < 30; ++t) {
        const Matrix a = rng.normal_matrix(5, 4);
        const Matrix b = rng.normal_matrix(4, 6);
        const double c = rng.uniform(-3.0, 3.0);
        const double na = spectral_norm(a);
        CHECK(std::abs(spectral_norm(c * a) - std::abs(c) * na) <= 1e-9 * std::abs(c) * na);
        CHECK(spectral_norm(a * b) <= na * spectral_norm(b) * (1 + 1e-12));
    }
}

TEST_CASE("singular_values agree with the oracle") {
    Rng rng(5);
    for (int t = 0; t < 20; ++t) {
        const Matrix a = rng.normal_matrix(3 + t % 4, 2 + t % 5);
        const auto got = singular_values(a);
        const auto ref = oracle::singular_values(a);
        REQUIRE(got.size() == ref.size());
        for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - ref[i]) <= 1e-10 * ref.front());
    }
}

TEST_CASE("rank") {
    CHECK(rank(Matrix::identity(4), 1e-8) == 4);
    CHECK(rank(outer(Vector{1, 2, 3}, Vector{4, -1}), 1e-8) == 1);
    CHECK(rank(Matrix(3, 3)) == 0);
    CHECK_THROWS_AS(rank(Matrix::identity(2), 0.0), Error);

    Rng rng(3);
    for (std::size_t k = 1; k < 6; ++k) {
        const Matrix m = rng.normal_matrix(6, k);
        REQUIRE(oracle::gram_determinant(m) > 1e-6);
        CHECK(rank(m, 1e-8) == k);
    }
}

TEST_CASE("rank is invariant under row permutation") {
    Rng rng(17);
    for (int t = 0; t < 10; ++t) {
        Matrix m = rng.normal_matrix(5, 3) * rng.normal_matrix(3, 6);
        const std::size_t r0 = rank(m);
        Matrix p(m.rows(), m.cols());
        for (std::size_t r = 0; r < m.rows(); ++r) {
            const std::size_t src = (r * 3 + 1) % m.rows();
            std::copy(m.row(src).begin(), m.row(src).end(), p.row(r).begin());
        }
        CHECK(r0 == 3);
        CHECK(rank(p) == r0);
    }
}

TEST_CASE("orthogonal_complement_basis") {
    SUBCASE("single axis in R^3") {
        const std::vector<Vector> in{unit(3, 0)};
        const auto out = orthogonal_complement_basis(in, 3);
        REQUIRE(out.size() == 2);
        CHECK(std::abs(dot(out[0], out[1])) <= 1e-12);
        for (const auto& v : out) {
            CHECK(norm2(v) == doctest::Approx(1.0).epsilon(1e-12));
            CHECK(std::abs(v[0]) <= 1e-12);
        }
    }
    SUBCASE("empty input") {
        const auto out = orthogonal_complement_basis({}, 2);
        REQUIRE(out.size() == 2);
        CHECK(std::abs(dot(out[0], out[1])) <= 1e-12);
    }
    SUBCASE("random inputs give a block-diagonal Gram matrix") {
        Rng rng(11);
        std::vector<Vector> in;
        for (int i = 0; i < 4; ++i) in.push_back(rng.normal_vector(10));
        const auto out = orthogonal_complement_basis(in, 10);
        REQUIRE(out.size() == 6);
        for (std::size_t i = 0; i < out.size(); ++i) {
            for (const auto& v : in) CHECK(std::abs(dot(out[i], v)) <= 1e-10);
            for (std::size_t j = 0; j < out.size(); ++j)
                CHECK(std::abs(dot(out[i], out[j]) - (i == j ? 1.0 : 0.0)) <= 1e-9);
        }
    }
    SUBCASE("dependent inputs are dropped") {
        const std::vector<Vector> in{Vector{1, 1, 0}, Vector{2, 2, 0}, Vector{0, 0, 0}};
        CHECK(orthogonal_complement_basis(in, 3).size() == 2);
    }
    SUBCASE("full span throws NoComplement") {
        const std::vector<Vector> in{unit(2, 0), Vector{1, 1}};
        try {
            orthogonal_complement_basis(in, 2);
            FAIL("expected NoComplement");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::NoComplement);
        }
    }
}

TEST_CASE("angle") {
    CHECK(angle(unit(3, 0), unit(3, 0)) == doctest::Approx(0.0));
    CHECK(angle(unit(3, 0), unit(3, 1)) == doctest::Approx(std::numbers::pi / 2));
    CHECK(angle(unit(3, 0), scaled(unit(3, 0), -1.0)) == doctest::Approx(std::numbers::pi));
    CHECK_THROWS_AS(angle(Vector{0, 0}, Vector{1, 0}), Error);
}

TEST_CASE("project_to_simplex") {
    const Vector p = project_to_simplex(Vector{0.3, 2.0, -1.0, 0.1});
    double s = 0.0;
    for (double x : p) {
        CHECK(x >= 0.0);
        s += x;
    }
    CHECK(s == doctest::Approx(1.0));
    CHECK(p[1] == doctest::Approx(1.0));
    const Vector q = project_to_simplex(Vector{0.25, 0.25, 0.25, 0.25});
    for (double x : q) CHECK(x == doctest::Approx(0.25));
}

TEST_CASE("cone_intersection_margin examples") {
    const std::size_t d = 4;
    const double m = cone_intersection_margin(unit(d, 0), unit(d, 1), unit(d, 2), unit(d, 3));
    CHECK(m == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(std::abs(m - oracle::cone_margin_grid(unit(d, 0), unit(d, 1), unit(d, 2), unit(d, 3), 1000)) <= 1e-3);
    CHECK_FALSE(cones_intersect(m));

    const double shared = cone_intersection_margin(unit(d, 0), unit(d, 1), unit(d, 0), unit(d, 2));
    CHECK(shared <= 1e-12);
    CHECK(cones_intersect(shared));

    const double s = 1.0 / std::sqrt(2.0);
    const double inside = cone_intersection_margin(unit(d, 0), unit(d, 1), Vector{s, s, 0, 0}, unit(d, 2));
    CHECK(inside <= 1e-12);

    CHECK_THROWS_AS(cone_intersection_margin(unit(3, 0), unit(3, 1), unit(4, 0), unit(4, 1)), Error);
    CHECK_THROWS_AS(cone_intersection_margin(Vector{0, 0}, unit(2, 1), unit(2, 0), unit(2, 1)), Error);
}

TEST_CASE("cone_intersection_margin matches a grid oracle on random inputs") {
    Rng rng(23);
    for (int t = 0; t < 25; ++t) {
        const std::size_t d = 2 + t % 4;
        const Vector u1 = rng.normal_vector(d), v1 = rng.normal_vector(d);
        const Vector u2 = rng.normal_vector(d), v2 = rng.normal_vector(d);
        const double got = cone_intersection_margin(u1, v1, u2, v2);
        const double grid = oracle::cone_margin_grid(u1, v1, u2, v2, 200);
        // The grid only overestimates; the gap is bounded by step * max generator norm.
        const double slack = 4.0 / 200 * std::max({norm2(u1), norm2(v1), norm2(u2), norm2(v2)});
        CHECK(got <= grid + 1e-12);
        CHECK(got >= grid - slack);
    }
}

TEST_CASE("cone_intersection_margin symmetry and scale invariance of the verdict") {
    Rng rng(29);
    for (int t = 0; t < 40; ++t) {
        const std::size_t d = 3 + t % 3;
        const Vector u1 = rng.normal_vector(d), v1 = rng.normal_vector(d);
        const Vector u2 = rng.normal_vector(d), v2 = rng.normal_vector(d);
        const auto a = cone_intersection_margin_detail(u1, v1, u2, v2);
        const auto b = cone_intersection_margin_detail(u2, v2, u1, v1);
        CHECK(std::abs(a.margin - b.margin) <= 1e-6);
        const bool meet = cones_intersect(a.margin);
        const double c = rng.uniform(0.1, 10.0);
        const double scaled_margin = cone_intersection_margin(scaled(u1, c), v1, u2, scaled(v2, 1.0 / c));
        CHECK(cones_intersect(scaled_margin) == meet);
        // A positive rescaling of any generator preserves the cones, so a
        // zero-margin witness stays a zero-margin witness.
        if (meet) CHECK(scaled_margin <= 1e-6);
    }
}

TEST_CASE("solve") {
    const Matrix a{{2, 1}, {1, 3}};
    const Vector x = solve(a, Vector{3, 5});
    CHECK(x[0] == doctest::Approx(0.8));
    CHECK(x[1] == doctest::Approx(1.4));
    CHECK_THROWS_AS(solve(Matrix{{1, 2}, {2, 4}}, Vector{1, 1}), Error);
}
