#include "isocal/svd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "isocal/errors.hpp"

namespace isocal {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

// Row k of `cols` is column k of the working matrix. Rotates pairs of rows of
// `cols` (and of `v`) until all pairs are orthogonal.
void jacobi_sweeps(Matrix& cols, Matrix& v, int max_sweeps) {
    const std::size_t n = cols.rows();
    const std::size_t m = cols.cols();
    const double tol = 4.0 * static_cast<double>(std::max<std::size_t>(m, 1)) * kEps;

    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                auto ap = cols.row(p);
                auto aq = cols.row(q);
                const double alpha = dot(ap, ap);
                const double beta = dot(aq, aq);
                const double gamma = dot(ap, aq);
                if (alpha == 0.0 || beta == 0.0) continue;
                if (std::abs(gamma) <= tol * std::sqrt(alpha) * std::sqrt(beta)) continue;

                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::hypot(1.0, zeta));
                const double c = 1.0 / std::hypot(1.0, t);
                const double s = c * t;
                for (std::size_t k = 0; k < m; ++k) {
                    const double x = ap[k];
                    const double y = aq[k];
                    ap[k] = c * x - s * y;
                    aq[k] = s * x + c * y;
                }
                auto vp = v.row(p);
                auto vq = v.row(q);
                for (std::size_t k = 0; k < v.cols(); ++k) {
                    const double x = vp[k];
                    const double y = vq[k];
                    vp[k] = c * x - s * y;
                    vq[k] = s * x + c * y;
                }
                rotated = true;
            }
        }
        if (!rotated) return;
    }
    throw NumericalError("svd: one-sided Jacobi did not converge within " +
                         std::to_string(max_sweeps) + " sweeps");
}

// Orthonormalizes the rows of `basis` in order (two passes of modified
// Gram-Schmidt). Rows flagged in `replace` are first swapped for the standard
// basis vector with the largest residual against the rows before them.
void reorthonormalize(Matrix& basis, const std::vector<bool>& replace) {
    const std::size_t k = basis.rows();
    const std::size_t n = basis.cols();
    std::vector<double> candidate(n);

    auto project_out = [&](std::span<double> x, std::size_t upto) {
        for (int pass = 0; pass < 2; ++pass)
            for (std::size_t j = 0; j < upto; ++j) {
                const double c = dot(x, basis.row(j));
                for (std::size_t t = 0; t < n; ++t) x[t] -= c * basis(j, t);
            }
    };

    for (std::size_t i = 0; i < k; ++i) {
        auto row = basis.row(i);
        if (replace[i]) {
            double best = -1.0;
            std::vector<double> best_vec;
            for (std::size_t e = 0; e < n; ++e) {
                std::fill(candidate.begin(), candidate.end(), 0.0);
                candidate[e] = 1.0;
                project_out(candidate, i);
                const double r = norm2(candidate);
                if (r > best + 1e-12) {
                    best = r;
                    best_vec = candidate;
                }
            }
            std::copy(best_vec.begin(), best_vec.end(), row.begin());
        } else {
            project_out(row, i);
        }
        const double r = norm2(row);
        if (r == 0.0) throw NumericalError("svd: failed to complete orthonormal basis");
        for (double& x : row) x /= r;
    }
}

// Thin SVD for m >= n given as the transposed working matrix (n x m).
// Returns factors of the original m x n matrix.
SvdFactors tall_svd(Matrix cols, int max_sweeps) {
    const std::size_t n = cols.rows();
    const std::size_t m = cols.cols();
    Matrix v = Matrix::identity(n);
    jacobi_sweeps(cols, v, max_sweeps);

    std::vector<double> sigma(n);
    for (std::size_t j = 0; j < n; ++j) sigma[j] = norm2(cols.row(j));

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return sigma[a] > sigma[b]; });

    const double sigma_max = n ? sigma[order[0]] : 0.0;
    const double null_threshold = sigma_max * static_cast<double>(m) * kEps;

    Matrix ut(n, m);  // rows are left singular vectors
    Matrix vt(n, n);  // rows are right singular vectors
    std::vector<double> sorted(n);
    std::vector<bool> replace(n, false);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t j = order[k];
        sorted[k] = sigma[j];
        auto vr = v.row(j);
        std::copy(vr.begin(), vr.end(), vt.row(k).begin());
        if (sigma[j] == 0.0 || sigma[j] <= null_threshold) {
            replace[k] = true;
        } else {
            auto src = cols.row(j);
            auto dst = ut.row(k);
            for (std::size_t t = 0; t < m; ++t) dst[t] = src[t] / sigma[j];
        }
    }
    reorthonormalize(ut, replace);

    return SvdFactors{ut.transpose(), std::move(sorted), vt.transpose()};
}

void fix_signs(SvdFactors& f) {
    for (std::size_t k = 0; k < f.right.cols(); ++k) {
        std::size_t arg = 0;
        double best = -1.0;
        for (std::size_t i = 0; i < f.right.rows(); ++i) {
            const double a = std::abs(f.right(i, k));
            if (a > best) {
                best = a;
                arg = i;
            }
        }
        if (f.right(arg, k) < 0.0) {
            for (std::size_t i = 0; i < f.right.rows(); ++i) f.right(i, k) = -f.right(i, k);
            for (std::size_t i = 0; i < f.left.rows(); ++i) f.left(i, k) = -f.left(i, k);
        }
    }
}

}  // namespace

SvdFactors svd(const Matrix& w, const SvdOptions& options) {
    require_embedding(w, "svd");
    SvdFactors f;
    if (w.rows() >= w.cols()) {
        f = tall_svd(w.transpose(), options.max_sweeps);
    } else {
        // W^T = U' S V'^T  =>  W = V' S U'^T
        SvdFactors t = tall_svd(w, options.max_sweeps);
        f.left = std::move(t.right);
        f.right = std::move(t.left);
        f.singular_values = std::move(t.singular_values);
    }
    fix_signs(f);
    return f;
}

Matrix reconstruct(const SvdFactors& f) {
    Matrix scaled = f.left;
    for (std::size_t i = 0; i < scaled.rows(); ++i)
        for (std::size_t k = 0; k < scaled.cols(); ++k) scaled(i, k) *= f.singular_values[k];
    return matmul_nt(scaled, f.right);
}

Matrix orthonormal_completion(const Matrix& q) {
    const std::size_t n = q.rows();
    const std::size_t r = q.cols();
    if (r > n) throw ContractError("orthonormal_completion: more columns than rows");
    Matrix basis(n, n);
    for (std::size_t k = 0; k < r; ++k)
        for (std::size_t i = 0; i < n; ++i) basis(k, i) = q(i, k);
    std::vector<bool> replace(n, false);
    for (std::size_t k = r; k < n; ++k) replace[k] = true;
    reorthonormalize(basis, replace);
    return basis.transpose();
}

ProbeSet gram_eigvectors(const Matrix& w) {
    SvdFactors f = svd(w);
    const std::size_t d = w.cols();
    const std::size_t r = f.rank_bound();
    Matrix full = r < d ? orthonormal_completion(f.right) : f.right;

    ProbeSet set{Matrix(2 * d, d), std::vector<double>(d, 0.0)};
    for (std::size_t k = 0; k < d; ++k) {
        if (k < r) set.eigenvalues[k] = f.singular_values[k] * f.singular_values[k];
        double nrm = 0.0;
        for (std::size_t i = 0; i < d; ++i) nrm += full(i, k) * full(i, k);
        nrm = std::sqrt(nrm);
        for (std::size_t i = 0; i < d; ++i) {
            set.probes(2 * k, i) = full(i, k) / nrm;
            set.probes(2 * k + 1, i) = -full(i, k) / nrm;
        }
    }
    return set;
}

}  // namespace isocal
