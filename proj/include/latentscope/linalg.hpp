#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "latentscope/error.hpp"
#include "latentscope/util.hpp"

namespace latentscope::linalg {

// Dense row-major matrix of doubles. Rows of data matrices are latent states.
struct Matrix {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(size_t r, size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
    Matrix(size_t r, size_t c, std::vector<double> d) : rows(r), cols(c), data(std::move(d)) {
        if (data.size() != rows * cols)
            throw ShapeError("Matrix: data length " + std::to_string(data.size()) +
                             " != rows*cols " + std::to_string(rows * cols));
    }

    double& at(size_t r, size_t c) { return data[r * cols + c]; }
    double at(size_t r, size_t c) const { return data[r * cols + c]; }
    const double* row(size_t r) const { return data.data() + r * cols; }
    double* row(size_t r) { return data.data() + r * cols; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    Matrix transposed() const {
        Matrix t(cols, rows);
        for (size_t r = 0; r < rows; ++r)
            for (size_t c = 0; c < cols; ++c) t.at(c, r) = at(r, c);
        return t;
    }

    static Matrix identity(size_t n) {
        Matrix m(n, n);
        for (size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
        return m;
    }
};

inline double frobenius_norm(const Matrix& m) {
    double s = 0.0;
    for (double v : m.data) s += v * v;
    return std::sqrt(s);
}

// a * b, optionally row-blocked across threads. Each output row is computed
// independently, so results are bitwise identical for any thread count.
inline Matrix matmul(const Matrix& a, const Matrix& b, int threads = 1) {
    if (a.cols != b.rows)
        throw ShapeError("matmul: inner dimensions differ (" + std::to_string(a.cols) + " vs " +
                         std::to_string(b.rows) + ")");
    Matrix out(a.rows, b.cols);
    parallel_for(a.rows, threads, [&](size_t r) {
        const double* arow = a.row(r);
        double* orow = out.row(r);
        for (size_t k = 0; k < a.cols; ++k) {
            double av = arow[k];
            if (av == 0.0) continue;
            const double* brow = b.row(k);
            for (size_t c = 0; c < b.cols; ++c) orow[c] += av * brow[c];
        }
    });
    return out;
}

namespace detail {

// Classical two-sided Jacobi eigendecomposition for symmetric matrices.
// Returns eigenvalues descending; eigenvectors are the columns of `vecs`.
inline void jacobi_eigen_sym(Matrix a, std::vector<double>& values, Matrix& vecs,
                             int max_sweeps = 100) {
    const size_t n = a.rows;
    if (a.cols != n) throw ShapeError("jacobi_eigen_sym: matrix not square");
    vecs = Matrix::identity(n);
    if (n == 1) {
        values = {a.at(0, 0)};
        return;
    }
    double scale = frobenius_norm(a);
    const double tol = 1e-14 * (scale > 0 ? scale : 1.0);
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (size_t p = 0; p < n; ++p)
            for (size_t q = p + 1; q < n; ++q) off += a.at(p, q) * a.at(p, q);
        if (std::sqrt(2.0 * off) <= tol) break;
        for (size_t p = 0; p + 1 < n; ++p) {
            for (size_t q = p + 1; q < n; ++q) {
                double apq = a.at(p, q);
                if (std::abs(apq) <= tol / (10.0 * static_cast<double>(n))) continue;
                double app = a.at(p, p), aqq = a.at(q, q);
                double theta = (aqq - app) / (2.0 * apq);
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (size_t k = 0; k < n; ++k) {
                    double akp = a.at(k, p), akq = a.at(k, q);
                    a.at(k, p) = c * akp - s * akq;
                    a.at(k, q) = s * akp + c * akq;
                }
                for (size_t k = 0; k < n; ++k) {
                    double apk = a.at(p, k), aqk = a.at(q, k);
                    a.at(p, k) = c * apk - s * aqk;
                    a.at(q, k) = s * apk + c * aqk;
                }
                for (size_t k = 0; k < n; ++k) {
                    double vkp = vecs.at(k, p), vkq = vecs.at(k, q);
                    vecs.at(k, p) = c * vkp - s * vkq;
                    vecs.at(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    values.resize(n);
    for (size_t i = 0; i < n; ++i) values[i] = a.at(i, i);
    // sort descending, carrying eigenvector columns along
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t i, size_t j) { return values[i] > values[j]; });
    std::vector<double> sorted_vals(n);
    Matrix sorted_vecs(n, n);
    for (size_t j = 0; j < n; ++j) {
        sorted_vals[j] = values[order[j]];
        for (size_t i = 0; i < n; ++i) sorted_vecs.at(i, j) = vecs.at(i, order[j]);
    }
    values = std::move(sorted_vals);
    vecs = std::move(sorted_vecs);
}

// Fill unset (zero) columns of u with unit vectors orthogonal to the rest, so
// thin SVDs of rank-deficient inputs still return orthonormal factors.
inline void complete_orthonormal_columns(Matrix& u, const std::vector<bool>& is_set) {
    const size_t n = u.rows, k = u.cols;
    size_t basis_try = 0;
    for (size_t j = 0; j < k; ++j) {
        if (is_set[j]) continue;
        std::vector<double> cand(n, 0.0);
        for (;; ++basis_try) {
            if (basis_try >= n)
                throw NumericError("thin_svd: failed to complete orthonormal basis");
            std::fill(cand.begin(), cand.end(), 0.0);
            cand[basis_try] = 1.0;
            for (size_t jj = 0; jj < k; ++jj) {
                if (jj == j) continue;
                if (!is_set[jj] && jj > j) continue;
                double dot = 0.0;
                for (size_t i = 0; i < n; ++i) dot += cand[i] * u.at(i, jj);
                for (size_t i = 0; i < n; ++i) cand[i] -= dot * u.at(i, jj);
            }
            double norm = 0.0;
            for (double v : cand) norm += v * v;
            norm = std::sqrt(norm);
            if (norm > 1e-6) {
                for (size_t i = 0; i < n; ++i) u.at(i, j) = cand[i] / norm;
                ++basis_try;
                break;
            }
        }
    }
}

} // namespace detail

struct SvdResult {
    Matrix u;              // [rows, k] orthonormal columns
    std::vector<double> s; // [k] descending, non-negative
    Matrix vt;             // [k, cols] orthonormal rows
};

namespace detail {

// One-sided Jacobi SVD of a tall (rows >= cols) matrix: rotates column pairs
// until mutually orthogonal. Sweep cap and tolerance per module contract.
inline SvdResult one_sided_jacobi(Matrix a, int max_sweeps, double rel_tol) {
    const size_t n = a.rows, m = a.cols;
    Matrix v = Matrix::identity(m);
    const double anorm = frobenius_norm(a);
    const double off_tol = rel_tol * (anorm > 0 ? anorm : 1.0);
    bool converged = (anorm == 0.0);
    for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
        double off_sq = 0.0; // off-diagonal norm of the implicit Gram matrix
        for (size_t p = 0; p + 1 < m; ++p) {
            for (size_t q = p + 1; q < m; ++q) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (size_t i = 0; i < n; ++i) {
                    double ap = a.at(i, p), aq = a.at(i, q);
                    alpha += ap * ap;
                    beta += aq * aq;
                    gamma += ap * aq;
                }
                off_sq += 2.0 * gamma * gamma;
                if (gamma == 0.0 || gamma * gamma <= 1e-32 * alpha * beta) continue;
                double zeta = (beta - alpha) / (2.0 * gamma);
                double t = (zeta >= 0 ? 1.0 : -1.0) /
                           (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                double c = 1.0 / std::sqrt(1.0 + t * t);
                double s = c * t;
                for (size_t i = 0; i < n; ++i) {
                    double ap = a.at(i, p), aq = a.at(i, q);
                    a.at(i, p) = c * ap - s * aq;
                    a.at(i, q) = s * ap + c * aq;
                }
                for (size_t i = 0; i < m; ++i) {
                    double vp = v.at(i, p), vq = v.at(i, q);
                    v.at(i, p) = c * vp - s * vq;
                    v.at(i, q) = s * vp + c * vq;
                }
            }
        }
        // off_sq uses pre-rotation values, so this lags one sweep behind
        if (std::sqrt(off_sq) <= off_tol * anorm + off_tol) converged = true;
        if (sweep == max_sweeps - 1 && !converged)
            throw NumericError("thin_svd: one-sided Jacobi did not converge within " +
                               std::to_string(max_sweeps) + " sweeps");
    }
    SvdResult r;
    r.s.resize(m);
    r.u = Matrix(n, m);
    std::vector<bool> has_direction(m, false);
    std::vector<size_t> order(m);
    for (size_t j = 0; j < m; ++j) {
        double norm = 0.0;
        for (size_t i = 0; i < n; ++i) norm += a.at(i, j) * a.at(i, j);
        r.s[j] = std::sqrt(norm);
    }
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t i, size_t j) { return r.s[i] > r.s[j]; });
    std::vector<double> sorted_s(m);
    Matrix sorted_v(m, m);
    for (size_t jj = 0; jj < m; ++jj) {
        size_t src = order[jj];
        sorted_s[jj] = r.s[src];
        for (size_t i = 0; i < m; ++i) sorted_v.at(i, jj) = v.at(i, src);
        if (r.s[src] > anorm * 1e-13 && r.s[src] > 0) {
            has_direction[jj] = true;
            for (size_t i = 0; i < n; ++i) r.u.at(i, jj) = a.at(i, src) / r.s[src];
        } else {
            sorted_s[jj] = 0.0;
        }
    }
    r.s = std::move(sorted_s);
    complete_orthonormal_columns(r.u, has_direction);
    r.vt = sorted_v.transposed();
    return r;
}

// Gram-matrix route for very tall inputs: eigendecompose X^T X (cols x cols)
// and recover U = X V S^-1.
inline SvdResult gram_svd(const Matrix& x, int max_sweeps) {
    const size_t n = x.rows, m = x.cols;
    Matrix gram(m, m);
    for (size_t i = 0; i < m; ++i) {
        for (size_t j = i; j < m; ++j) {
            double s = 0.0;
            for (size_t r = 0; r < n; ++r) s += x.at(r, i) * x.at(r, j);
            gram.at(i, j) = s;
            gram.at(j, i) = s;
        }
    }
    std::vector<double> evals;
    Matrix evecs;
    jacobi_eigen_sym(std::move(gram), evals, evecs, max_sweeps);
    SvdResult r;
    r.s.resize(m);
    r.u = Matrix(n, m);
    std::vector<bool> has_direction(m, false);
    double top = evals.empty() ? 0.0 : std::max(evals[0], 0.0);
    for (size_t j = 0; j < m; ++j) {
        double lam = std::max(evals[j], 0.0);
        r.s[j] = std::sqrt(lam);
        if (lam > top * 1e-26 && lam > 0) {
            has_direction[j] = true;
            for (size_t i = 0; i < n; ++i) {
                double acc = 0.0;
                for (size_t k = 0; k < m; ++k) acc += x.at(i, k) * evecs.at(k, j);
                r.u.at(i, j) = acc / r.s[j];
            }
        } else {
            r.s[j] = 0.0;
        }
    }
    complete_orthonormal_columns(r.u, has_direction);
    r.vt = evecs.transposed();
    return r;
}

} // namespace detail

// Thin SVD: x ~= u diag(s) vt, with k = min(rows, cols). One-sided Jacobi on
// the tall orientation; extremely tall-and-thin inputs take the Gram route.
inline SvdResult thin_svd(const Matrix& x, int max_sweeps = 100) {
    if (x.rows == 0 || x.cols == 0) throw ShapeError("thin_svd: empty matrix");
    if (!x.all_finite()) throw NumericError("thin_svd: input contains non-finite values");
    constexpr double kRelTol = 1e-12;
    if (x.rows >= x.cols) {
        if (x.rows >= 50 * x.cols && x.cols <= 1024) return detail::gram_svd(x, max_sweeps);
        return detail::one_sided_jacobi(x, max_sweeps, kRelTol);
    }
    SvdResult t = x.cols >= 50 * x.rows && x.rows <= 1024
                      ? detail::gram_svd(x.transposed(), max_sweeps)
                      : detail::one_sided_jacobi(x.transposed(), max_sweeps, kRelTol);
    SvdResult r;
    r.u = t.vt.transposed();
    r.s = std::move(t.s);
    r.vt = t.u.transposed();
    return r;
}

// Eigendecomposition of a symmetric matrix (values descending, eigenvectors
// as columns). Exposed for the uncentered-PCA Gram route.
inline void eigen_sym(const Matrix& a, std::vector<double>& values, Matrix& vectors) {
    if (!a.all_finite()) throw NumericError("eigen_sym: input contains non-finite values");
    detail::jacobi_eigen_sym(a, values, vectors);
}

inline double dot(const double* a, const double* b, size_t n) {
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

inline double l2_norm(const double* a, size_t n) { return std::sqrt(dot(a, a, n)); }

} // namespace latentscope::linalg
