#pragma once

#include <cstddef>

#include "isocal/matrix.hpp"
#include "isocal/svd.hpp"

namespace isocal {

// Penalty terms on the output matrix that push embeddings towards isotropy.
// Each loss has an analytic gradient with respect to W.

struct CosRegConfig {
    double lambda_c = 1.0;
};

/// lambda_c / N^2 * sum_{i != j} w_i^T w_j / (|w_i| |w_j|) over ordered pairs.
/// Evaluated as lambda_c / N^2 * (|sum_i w_i/|w_i||^2 - N).
/// Throws DegenerateEmbeddingError on a row with norm < 1e-12.
double cosreg_loss(const Matrix& w, const CosRegConfig& cfg);

/// d cosreg_loss / dW. Row i is 2 lambda_c / N^2 * (I - u_i u_i^T) s / |w_i|
/// with u_i = w_i/|w_i| and s = sum_j u_j.
Matrix cosreg_grad(const Matrix& w, const CosRegConfig& cfg);

enum class PriorKind { polynomial, exponential };

struct SpectrumConfig {
    PriorKind kind = PriorKind::polynomial;
    double lambda = 1.0;
    double c1 = 1.0;
    double c2 = 0.5;
    double gamma = -0.5;

    void validate() const;
};

/// Target singular value at 1-based index k: c1 k^gamma, or
/// c1 exp(-c2 k^gamma) for the exponential prior.
double spectrum_prior(std::size_t k, const SpectrumConfig& cfg);

/// lambda * sum_{k=1}^{r} (sigma_k - prior(k))^2 over all r = min(N, d) values.
double spectrum_loss(const SvdFactors& factors, const SpectrumConfig& cfg);
double spectrum_loss(const Matrix& w, const SpectrumConfig& cfg);

/// Singular values closer than this (or closer than this to zero) make the
/// spectrum gradient undefined.
inline constexpr double kSpectrumGapThreshold = 1e-8;

/// sum_k 2 lambda (sigma_k - prior(k)) u_k v_k^T. Recomputes the SVD.
/// Throws DegenerateSpectrumError if two singular values, or the smallest
/// one and zero, are within kSpectrumGapThreshold.
Matrix spectrum_grad_w(const Matrix& w, const SpectrumConfig& cfg);

}  // namespace isocal
