#include "isocal/finite_diff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "isocal/errors.hpp"

namespace isocal {

std::vector<double> finite_diff_grad(const ScalarField& f, std::span<const double> x, double eps) {
    if (!(eps > 0.0)) throw ContractError("finite_diff_grad: eps must be positive");
    std::vector<double> probe(x.begin(), x.end());
    std::vector<double> grad(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = probe[i];
        probe[i] = xi + eps;
        const double fp = f(probe);
        probe[i] = xi - eps;
        const double fm = f(probe);
        probe[i] = xi;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NumericalError("finite_diff_grad: non-finite function value at coordinate " +
                                 std::to_string(i));
        grad[i] = (fp - fm) / (2.0 * eps);
    }
    return grad;
}

Matrix finite_diff_grad(const std::function<double(const Matrix&)>& f, const Matrix& x, double eps) {
    Matrix work = x;
    auto flat = [&](std::span<const double> v) {
        std::copy(v.begin(), v.end(), work.data().begin());
        return f(work);
    };
    auto g = finite_diff_grad(flat, x.data(), eps);
    return Matrix(x.rows(), x.cols(), std::move(g));
}

double max_relative_error(std::span<const double> a, std::span<const double> b, double floor) {
    double scale = floor;
    double diff = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
        diff = std::max(diff, std::abs(a[i] - b[i]));
    }
    return diff / scale;
}

}  // namespace isocal
