#include "isocal/calibration.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "isocal/errors.hpp"

namespace isocal {

namespace {

void require_cosreg_input(const Matrix& w, const CosRegConfig& cfg) {
    require_embedding(w, "cosreg");
    if (w.rows() < 2) throw ContractError("cosreg: need at least two rows");
    if (!(cfg.lambda_c >= 0.0)) throw ContractError("cosreg: lambda_c must be nonnegative");
}

std::vector<double> row_norms(const Matrix& w) {
    std::vector<double> norms(w.rows());
    for (std::size_t i = 0; i < w.rows(); ++i) {
        norms[i] = norm2(w.row(i));
        if (norms[i] < 1e-12)
            throw DegenerateEmbeddingError(i, "cosreg: row " + std::to_string(i) +
                                                  " has zero norm, direction undefined");
    }
    return norms;
}

std::vector<double> unit_sum(const Matrix& w, const std::vector<double>& norms) {
    std::vector<double> s(w.cols(), 0.0);
    for (std::size_t i = 0; i < w.rows(); ++i)
        for (std::size_t j = 0; j < w.cols(); ++j) s[j] += w(i, j) / norms[i];
    return s;
}

}  // namespace

double cosreg_loss(const Matrix& w, const CosRegConfig& cfg) {
    require_cosreg_input(w, cfg);
    const auto norms = row_norms(w);
    const auto s = unit_sum(w, norms);
    const double n = static_cast<double>(w.rows());
    return cfg.lambda_c * (dot(s, s) - n) / (n * n);
}

Matrix cosreg_grad(const Matrix& w, const CosRegConfig& cfg) {
    require_cosreg_input(w, cfg);
    const auto norms = row_norms(w);
    const auto s = unit_sum(w, norms);
    const double n = static_cast<double>(w.rows());
    const double scale = 2.0 * cfg.lambda_c / (n * n);

    Matrix g(w.rows(), w.cols());
    std::vector<double> u(w.cols());
    for (std::size_t i = 0; i < w.rows(); ++i) {
        for (std::size_t j = 0; j < w.cols(); ++j) u[j] = w(i, j) / norms[i];
        const double along = dot(u, s);
        for (std::size_t j = 0; j < w.cols(); ++j)
            g(i, j) = scale * (s[j] - along * u[j]) / norms[i];
    }
    return g;
}

void SpectrumConfig::validate() const {
    if (!(lambda >= 0.0)) throw ContractError("spectrum: lambda must be nonnegative");
    if (!(c1 > 0.0)) throw ContractError("spectrum: c1 must be positive");
    if (kind == PriorKind::exponential && !(c2 >= 0.0))
        throw ContractError("spectrum: c2 must be nonnegative");
    if (!std::isfinite(gamma)) throw ContractError("spectrum: gamma must be finite");
}

double spectrum_prior(std::size_t k, const SpectrumConfig& cfg) {
    if (k < 1) throw ContractError("spectrum_prior: index is 1-based");
    const double kp = std::pow(static_cast<double>(k), cfg.gamma);
    if (cfg.kind == PriorKind::polynomial) return cfg.c1 * kp;
    return cfg.c1 * std::exp(-cfg.c2 * kp);
}

double spectrum_loss(const SvdFactors& factors, const SpectrumConfig& cfg) {
    double acc = 0.0;
    for (std::size_t k = 0; k < factors.singular_values.size(); ++k) {
        const double r = factors.singular_values[k] - spectrum_prior(k + 1, cfg);
        acc += r * r;
    }
    return cfg.lambda * acc;
}

double spectrum_loss(const Matrix& w, const SpectrumConfig& cfg) {
    return spectrum_loss(svd(w), cfg);
}

Matrix spectrum_grad_w(const Matrix& w, const SpectrumConfig& cfg) {
    const SvdFactors f = svd(w);
    const auto& sv = f.singular_values;
    for (std::size_t k = 0; k < sv.size(); ++k) {
        const double next = k + 1 < sv.size() ? sv[k + 1] : 0.0;
        if (sv[k] - next < kSpectrumGapThreshold)
            throw DegenerateSpectrumError("spectrum_grad_w: singular values " + std::to_string(k + 1) +
                                          " and " + std::to_string(k + 2) + " are not separated");
    }

    Matrix g(w.rows(), w.cols());
    for (std::size_t k = 0; k < sv.size(); ++k) {
        const double coef = 2.0 * cfg.lambda * (sv[k] - spectrum_prior(k + 1, cfg));
        if (coef == 0.0) continue;
        for (std::size_t i = 0; i < w.rows(); ++i) {
            const double ui = coef * f.left(i, k);
            for (std::size_t j = 0; j < w.cols(); ++j) g(i, j) += ui * f.right(j, k);
        }
    }
    return g;
}

}  // namespace isocal
