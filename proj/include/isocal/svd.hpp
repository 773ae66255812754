#pragma once

#include <vector>

#include "isocal/matrix.hpp"

namespace isocal {

/// Thin SVD W = left * diag(singular_values) * right^T with r = min(N, d).
///
/// left is N x r, right is d x r, both with orthonormal columns.
/// singular_values is nonincreasing and nonnegative. The largest-magnitude
/// entry of every right singular vector is positive.
struct SvdFactors {
    Matrix left;
    std::vector<double> singular_values;
    Matrix right;

    std::size_t rank_bound() const noexcept { return singular_values.size(); }
};

struct SvdOptions {
    int max_sweeps = 60;
};

/// One-sided (Hestenes) Jacobi SVD. Column pairs are swept in fixed
/// lexicographic order until every pair is orthogonal to working precision.
/// Throws NumericalError if max_sweeps is exhausted.
SvdFactors svd(const Matrix& w, const SvdOptions& options = {});

Matrix reconstruct(const SvdFactors& f);

/// Extends the orthonormal columns of q to an orthonormal basis of
/// R^{q.rows()}. The added columns are Gram-Schmidt residuals of standard
/// basis vectors, chosen greedily by largest residual.
Matrix orthonormal_completion(const Matrix& q);

/// Probe directions for the partition-function isotropy measures: the d
/// unit eigenvectors of W^T W, each emitted as +v then -v (2d rows of a
/// 2d x d matrix). Eigenvectors appear in order of nonincreasing eigenvalue;
/// when N < d the null-space basis comes from orthonormal_completion.
struct ProbeSet {
    Matrix probes;
    std::vector<double> eigenvalues;  // one per eigenvector (d values)

    std::size_t size() const noexcept { return probes.rows(); }
};

ProbeSet gram_eigvectors(const Matrix& w);

}  // namespace isocal
