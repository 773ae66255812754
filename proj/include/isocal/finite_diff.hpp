#pragma once

#include <functional>
#include <span>
#include <vector>

#include "isocal/matrix.hpp"

namespace isocal {

using ScalarField = std::function<double(std::span<const double>)>;

/// Central-difference gradient (f(x + eps e_i) - f(x - eps e_i)) / (2 eps).
/// Throws NumericalError naming the coordinate if f is non-finite there.
std::vector<double> finite_diff_grad(const ScalarField& f, std::span<const double> x, double eps);

/// Same, for a function of a matrix. Result has the shape of x.
Matrix finite_diff_grad(const std::function<double(const Matrix&)>& f, const Matrix& x, double eps);

/// max_i |a_i - b_i| / max(|a|_inf, |b|_inf, floor). The floor keeps the
/// ratio meaningful when both gradients vanish.
double max_relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-8);

}  // namespace isocal
