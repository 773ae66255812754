#include <doctest.h>

#include <cmath>
#include <random>

#include "isocal/calibration.hpp"
#include "isocal/errors.hpp"
#include "isocal/finite_diff.hpp"
#include "isocal/matrix.hpp"
#include "isocal/rng.hpp"
#include "isocal/svd.hpp"
#include "oracles.hpp"

using namespace isocal;

namespace {

double orthonormality_error(const Matrix& q) {
    const Matrix g = matmul_tn(q, q);
    return max_abs_diff(g, Matrix::identity(g.rows()));
}

}  // namespace

TEST_SUITE("numkit") {

TEST_CASE("matrix products agree with the naive triple loop") {
    std::mt19937_64 gen(11);
    const Matrix a = oracle::gaussian_matrix(4, 3, gen);
    const Matrix b = oracle::gaussian_matrix(3, 5, gen);
    const Matrix c = oracle::gaussian_matrix(4, 5, gen);
    CHECK(max_abs_diff(matmul(a, b), oracle::naive_matmul(a, b)) < 1e-14);
    CHECK(max_abs_diff(matmul_tn(a, c), oracle::naive_matmul(a.transpose(), c)) < 1e-14);
    CHECK(max_abs_diff(matmul_nt(c, b), oracle::naive_matmul(c, b.transpose())) < 1e-14);
    CHECK_THROWS_AS(matmul(a, a), ContractError);
}

TEST_CASE("svd of a diagonal matrix") {
    const Matrix w{{3, 0}, {0, 1}};
    const SvdFactors f = svd(w);
    REQUIRE(f.singular_values.size() == 2);
    CHECK(f.singular_values[0] == doctest::Approx(3).epsilon(1e-14));
    CHECK(f.singular_values[1] == doctest::Approx(1).epsilon(1e-14));
    CHECK(max_abs_diff(reconstruct(f), w) < 1e-14);
}

TEST_CASE("svd of the zero matrix") {
    const SvdFactors f = svd(Matrix(4, 3));
    REQUIRE(f.singular_values.size() == 3);
    for (double s : f.singular_values) CHECK(s == 0.0);
    CHECK(orthonormality_error(f.right) < 1e-14);
    CHECK(orthonormality_error(f.left) < 1e-14);
}

TEST_CASE("svd of a random 5x3 matrix matches the Gram eigenvalue oracle") {
    std::mt19937_64 gen(5);
    const Matrix w = oracle::gaussian_matrix(5, 3, gen);
    const SvdFactors f = svd(w);
    CHECK(max_abs_diff(reconstruct(f), w) <= 1e-8);
    const auto ref = oracle::singular_values_via_gram(w);
    for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(f.singular_values[k] - ref[k]) <= 1e-8);
}

TEST_CASE("svd properties over 120 random shapes") {
    std::mt19937_64 gen(2024);
    std::uniform_int_distribution<int> dim(1, 9);
    for (int trial = 0; trial < 120; ++trial) {
        const std::size_t n = static_cast<std::size_t>(dim(gen));
        const std::size_t d = static_cast<std::size_t>(dim(gen));
        const Matrix w = oracle::gaussian_matrix(n, d, gen, trial % 3 == 0 ? 100.0 : 1.0);
        const SvdFactors f = svd(w);
        const std::size_t r = std::min(n, d);
        INFO("trial " << trial << " shape " << n << "x" << d);
        REQUIRE(f.singular_values.size() == r);
        CHECK(f.left.rows() == n);
        CHECK(f.left.cols() == r);
        CHECK(f.right.rows() == d);
        CHECK(f.right.cols() == r);
        for (std::size_t k = 1; k < r; ++k) CHECK(f.singular_values[k - 1] >= f.singular_values[k]);
        for (double s : f.singular_values) CHECK(s >= 0.0);
        CHECK(orthonormality_error(f.left) < 1e-12);
        CHECK(orthonormality_error(f.right) < 1e-12);
        const double scale = std::max(1.0, w.max_abs());
        CHECK(max_abs_diff(reconstruct(f), w) <= 1e-12 * scale * 10);
        const auto ref = oracle::singular_values_via_gram(w);
        for (std::size_t k = 0; k < r; ++k) CHECK(std::abs(f.singular_values[k] - ref[k]) <= 1e-8 * scale);
    }
}

TEST_CASE("svd rejects non-finite input") {
    Matrix w(2, 2, 1.0);
    w(0, 1) = std::nan("");
    CHECK_THROWS_AS(svd(w), ContractError);
}

TEST_CASE("probe set of an axis-aligned matrix is the signed standard basis") {
    const ProbeSet p = gram_eigvectors(Matrix{{2, 0}, {0, 1}});
    REQUIRE(p.size() == 4);
    CHECK(max_abs_diff(p.probes, Matrix{{1, 0}, {-1, 0}, {0, 1}, {0, -1}}) < 1e-14);
    CHECK(p.eigenvalues[0] == doctest::Approx(4.0));
    CHECK(p.eigenvalues[1] == doctest::Approx(1.0));
}

TEST_CASE("probe set of a rotated matrix matches a closed-form 2x2 eigensolver") {
    const double th = 0.7;
    const Matrix q{{std::cos(th), -std::sin(th)}, {std::sin(th), std::cos(th)}};
    const Matrix w = matmul(q, Matrix{{2, 0}, {0, 1}});
    // W^T W written out by hand
    double a = 0, b = 0, c = 0;
    for (std::size_t i = 0; i < 2; ++i) {
        a += w(i, 0) * w(i, 0);
        b += w(i, 0) * w(i, 1);
        c += w(i, 1) * w(i, 1);
    }
    const oracle::Eigen2 e = oracle::eigen2(a, b, c);
    const ProbeSet p = gram_eigvectors(w);
    CHECK(p.eigenvalues[0] == doctest::Approx(e.l1).epsilon(1e-12));
    CHECK(p.eigenvalues[1] == doctest::Approx(e.l2).epsilon(1e-12));
    const double* ref[2] = {e.v1, e.v2};
    for (std::size_t k = 0; k < 2; ++k) {
        const double align = p.probes(2 * k, 0) * ref[k][0] + p.probes(2 * k, 1) * ref[k][1];
        CHECK(std::abs(std::abs(align) - 1.0) < 1e-12);
        CHECK(p.probes(2 * k + 1, 0) == -p.probes(2 * k, 0));
        CHECK(p.probes(2 * k + 1, 1) == -p.probes(2 * k, 1));
    }
}

TEST_CASE("probes have unit norm, including completed null directions") {
    std::mt19937_64 gen(9);
    for (auto [n, d] : {std::pair{2, 5}, std::pair{7, 3}, std::pair{1, 4}, std::pair{6, 6}}) {
        const Matrix w = oracle::gaussian_matrix(n, d, gen);
        const ProbeSet p = gram_eigvectors(w);
        REQUIRE(p.size() == 2 * static_cast<std::size_t>(d));
        Matrix basis(static_cast<std::size_t>(d), static_cast<std::size_t>(d));
        for (std::size_t k = 0; k < p.size(); ++k) {
            CHECK(std::abs(norm2(p.probes.row(k)) - 1.0) < 1e-12);
            if (k % 2 == 0)
                for (std::size_t j = 0; j < basis.cols(); ++j) basis(j, k / 2) = p.probes(k, j);
        }
        CHECK(orthonormality_error(basis) < 1e-12);
    }
}

TEST_CASE("finite differences of a quadratic") {
    auto f = [](std::span<const double> x) { return x[0] * x[0] + x[1] * x[1]; };
    const std::vector<double> x{1, 2};
    const auto g = finite_diff_grad(f, x, 1e-5);
    CHECK(std::abs(g[0] - 2) < 1e-8);
    CHECK(std::abs(g[1] - 4) < 1e-8);
}

TEST_CASE("finite differences of a constant are zero") {
    auto f = [](std::span<const double>) { return 3.5; };
    const std::vector<double> x{1, -2, 7};
    for (double v : finite_diff_grad(f, x, 1e-5)) CHECK(v == 0.0);
}

TEST_CASE("finite differences agree with the analytic cosine-penalty gradient") {
    std::mt19937_64 gen(3);
    const Matrix w = oracle::gaussian_matrix(4, 3, gen);
    const CosRegConfig cfg{1.0};
    const Matrix fd = finite_diff_grad([&](const Matrix& m) { return cosreg_loss(m, cfg); }, w, 1e-5);
    const Matrix an = cosreg_grad(w, cfg);
    CHECK(max_relative_error(an.data(), fd.data()) <= 1e-5);
}

TEST_CASE("finite differences report a non-finite objective") {
    auto f = [](std::span<const double> x) { return x[0] > 0.5 ? std::nan("") : 0.0; };
    const std::vector<double> x{0.5};
    CHECK_THROWS_AS(finite_diff_grad(f, x, 1e-3), NumericalError);
}

TEST_CASE("rng is deterministic per seed") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.gaussian() == b.gaussian());
}

TEST_CASE("rng gaussian moments") {
    Rng r(7);
    const auto xs = r.gaussian(100000);
    double m = 0.0;
    for (double x : xs) m += x;
    m /= static_cast<double>(xs.size());
    double v = 0.0;
    for (double x : xs) v += (x - m) * (x - m);
    v /= static_cast<double>(xs.size() - 1);
    CHECK(std::abs(m) < 0.02);
    CHECK(std::abs(v - 1.0) < 0.05);
}

TEST_CASE("different seeds give different streams") {
    Rng a(1), b(2);
    int same = 0;
    for (int i = 0; i < 10; ++i) same += a.gaussian() == b.gaussian();
    CHECK(same == 0);
}

TEST_CASE("rng uniform and bounded draws stay in range") {
    Rng r(3);
    std::vector<int> hits(7, 0);
    for (int i = 0; i < 70000; ++i) {
        const double u = r.uniform();
        CHECK_UNARY(u >= 0.0);
        CHECK_UNARY(u < 1.0);
        const auto k = r.below(7);
        REQUIRE(k < 7);
        ++hits[k];
    }
    for (int h : hits) CHECK(std::abs(h - 10000) < 500);
}

TEST_CASE("relative error metric") {
    const std::vector<double> a{1.0, 2.0}, b{1.0, 2.0 + 1e-6};
    CHECK(max_relative_error(a, b) == doctest::Approx(1e-6 / (2.0 + 1e-6)));
    const std::vector<double> z{0.0, 0.0};
    CHECK(max_relative_error(z, z) == 0.0);
}

}  // TEST_SUITE
