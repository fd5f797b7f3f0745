#include "doctest.h"

#include <random>

#include "latentscope/linalg.hpp"
#include "oracles.hpp"

using namespace latentscope;
using linalg::Matrix;

namespace {

Matrix random_matrix(size_t r, size_t c, uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    Matrix m(r, c);
    for (auto& v : m.data) v = rand_normal(rng) * scale;
    return m;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    REQUIRE(a.rows == b.rows);
    REQUIRE(a.cols == b.cols);
    double worst = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i)
        worst = std::max(worst, std::abs(a.data[i] - b.data[i]));
    return worst;
}

double reconstruction_error(const Matrix& x, const linalg::SvdResult& svd) {
    Matrix us = svd.u;
    for (size_t i = 0; i < us.rows; ++i)
        for (size_t j = 0; j < us.cols; ++j) us.at(i, j) *= svd.s[j];
    Matrix rec = linalg::matmul(us, svd.vt);
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < x.data.size(); ++i) {
        num += (x.data[i] - rec.data[i]) * (x.data[i] - rec.data[i]);
        den += x.data[i] * x.data[i];
    }
    return std::sqrt(num) / std::sqrt(den);
}

} // namespace

TEST_SUITE("linalg") {

TEST_CASE("matmul identity") {
    Matrix a = random_matrix(3, 4, 7);
    Matrix id = Matrix::identity(3);
    Matrix out = linalg::matmul(id, a);
    CHECK(max_abs_diff(out, a) == 0.0);
}

TEST_CASE("matmul hand example") {
    Matrix a(2, 2, {1, 2, 3, 4});
    Matrix b(2, 1, {0, 1});
    Matrix out = linalg::matmul(a, b);
    CHECK(out.at(0, 0) == 2.0);
    CHECK(out.at(1, 0) == 4.0);
}

TEST_CASE("matmul vs naive oracle") {
    Matrix a = random_matrix(17, 5, 11);
    Matrix b = random_matrix(5, 9, 13);
    Matrix fast = linalg::matmul(a, b);
    Matrix ref = oracle::naive_matmul(a, b);
    CHECK(max_abs_diff(fast, ref) < 1e-12);
}

TEST_CASE("matmul shape error") {
    Matrix a(2, 3);
    Matrix b(2, 2);
    CHECK_THROWS_AS(linalg::matmul(a, b), ShapeError);
}

TEST_CASE("matmul deterministic across thread counts") {
    Matrix a = random_matrix(64, 32, 21);
    Matrix b = random_matrix(32, 48, 22);
    Matrix t1 = linalg::matmul(a, b, 1);
    Matrix t4 = linalg::matmul(a, b, 4);
    CHECK(t1.data == t4.data);
}

TEST_CASE("thin_svd diagonal") {
    Matrix d(3, 3);
    d.at(0, 0) = 3;
    d.at(1, 1) = 2;
    d.at(2, 2) = 1;
    auto svd = linalg::thin_svd(d);
    REQUIRE(svd.s.size() == 3);
    CHECK(svd.s[0] == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(svd.s[1] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(svd.s[2] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("thin_svd rank-1 outer product") {
    Rng rng(3);
    std::vector<double> u(6), v(4);
    for (auto& x : u) x = rand_normal(rng);
    for (auto& x : v) x = rand_normal(rng);
    Matrix m(6, 4);
    for (size_t i = 0; i < 6; ++i)
        for (size_t j = 0; j < 4; ++j) m.at(i, j) = u[i] * v[j];
    auto svd = linalg::thin_svd(m);
    double nu = linalg::l2_norm(u.data(), 6), nv = linalg::l2_norm(v.data(), 4);
    CHECK(svd.s[0] == doctest::Approx(nu * nv).epsilon(1e-10));
    for (size_t j = 1; j < svd.s.size(); ++j) CHECK(svd.s[j] < 1e-10 * svd.s[0] + 1e-14);
    // factors stay orthonormal even when rank deficient
    for (size_t i = 0; i < svd.u.cols; ++i)
        for (size_t j = 0; j < svd.u.cols; ++j) {
            double d = 0.0;
            for (size_t r = 0; r < svd.u.rows; ++r) d += svd.u.at(r, i) * svd.u.at(r, j);
            CHECK(std::abs(d - (i == j ? 1.0 : 0.0)) < 1e-10);
        }
}

TEST_CASE("thin_svd singular values match independent Jacobi oracle on the Gram matrix") {
    Matrix x = random_matrix(50, 20, 17);
    auto svd = linalg::thin_svd(x);
    auto evals = oracle::jacobi_eigenvalues(oracle::gram(x));
    REQUIRE(svd.s.size() == 20);
    for (size_t i = 0; i < 20; ++i) {
        double expected = std::sqrt(std::max(evals[i], 0.0));
        CHECK(svd.s[i] == doctest::Approx(expected).epsilon(1e-8));
    }
}

TEST_CASE("thin_svd reconstruction and orthonormality") {
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
        Matrix x = random_matrix(30, 12, seed);
        auto svd = linalg::thin_svd(x);
        CHECK(reconstruction_error(x, svd) < 1e-8);
        // vt rows orthonormal within 1e-10 per entry
        Matrix vvt = linalg::matmul(svd.vt, svd.vt.transposed());
        for (size_t i = 0; i < vvt.rows; ++i)
            for (size_t j = 0; j < vvt.cols; ++j)
                CHECK(std::abs(vvt.at(i, j) - (i == j ? 1.0 : 0.0)) < 1e-10);
        // descending s
        for (size_t i = 1; i < svd.s.size(); ++i) CHECK(svd.s[i] <= svd.s[i - 1]);
    }
}

TEST_CASE("thin_svd wide matrix") {
    Matrix x = random_matrix(8, 25, 5);
    auto svd = linalg::thin_svd(x);
    CHECK(svd.u.rows == 8);
    CHECK(svd.vt.cols == 25);
    CHECK(reconstruction_error(x, svd) < 1e-8);
}

TEST_CASE("thin_svd very tall input takes the Gram route and still reconstructs") {
    Matrix x = random_matrix(600, 6, 23);
    auto svd = linalg::thin_svd(x);
    CHECK(reconstruction_error(x, svd) < 1e-8);
    auto evals = oracle::jacobi_eigenvalues(oracle::gram(x));
    for (size_t i = 0; i < 6; ++i)
        CHECK(svd.s[i] == doctest::Approx(std::sqrt(std::max(evals[i], 0.0))).epsilon(1e-8));
}

TEST_CASE("thin_svd singular values invariant under row permutation") {
    Matrix x = random_matrix(24, 9, 31);
    Matrix p(24, 9);
    std::vector<size_t> perm(24);
    std::iota(perm.begin(), perm.end(), size_t{0});
    std::mt19937_64 rng(77);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (size_t i = 0; i < 24; ++i)
        for (size_t j = 0; j < 9; ++j) p.at(i, j) = x.at(perm[i], j);
    auto s1 = linalg::thin_svd(x).s;
    auto s2 = linalg::thin_svd(p).s;
    for (size_t i = 0; i < s1.size(); ++i) CHECK(std::abs(s1[i] - s2[i]) < 1e-10 * (1 + s1[0]));
}

TEST_CASE("thin_svd rejects non-finite input") {
    Matrix x(2, 2, {1, 2, 3, std::nan("")});
    CHECK_THROWS_AS(linalg::thin_svd(x), NumericError);
}

TEST_CASE("eigen_sym matches oracle eigenvalues") {
    Matrix x = random_matrix(14, 14, 41);
    Matrix sym(14, 14);
    for (size_t i = 0; i < 14; ++i)
        for (size_t j = 0; j < 14; ++j) sym.at(i, j) = 0.5 * (x.at(i, j) + x.at(j, i));
    std::vector<double> vals;
    Matrix vecs;
    linalg::eigen_sym(sym, vals, vecs);
    auto ref = oracle::jacobi_eigenvalues(sym);
    for (size_t i = 0; i < 14; ++i) CHECK(vals[i] == doctest::Approx(ref[i]).epsilon(1e-10));
    // eigenvector columns orthonormal
    Matrix vtv = linalg::matmul(vecs.transposed(), vecs);
    for (size_t i = 0; i < 14; ++i)
        for (size_t j = 0; j < 14; ++j)
            CHECK(std::abs(vtv.at(i, j) - (i == j ? 1.0 : 0.0)) < 1e-10);
}

} // TEST_SUITE
