#pragma once

#include <cstddef>
#include <span>

namespace isocal {

/// Regularized incomplete beta I_x(a, b), by Lentz's continued fraction
/// (relative tolerance 1e-15, at most 500 terms).
double incomplete_beta(double a, double b, double x);

/// Student-t cumulative distribution function with `dof` degrees of freedom.
double student_t_cdf(double t, double dof);

struct SampleSummary {
    double mean = 0.0;
    double stddev = 0.0;  // n - 1 divisor; 0 for n == 1
    std::size_t n = 0;
};

SampleSummary summarize(std::span<const double> xs);

struct TTestResult {
    double t = 0.0;
    double dof = 0.0;
    double p = 1.0;           // two-sided
    bool degenerate = false;  // both samples have zero variance
};

/// Welch's unequal-variance two-sample t-test.
///
/// If both samples have zero variance the statistic is undefined: p is 1
/// (t = 0) when the means agree and 0 (t = +-inf) when they differ, and
/// `degenerate` is set. Samples need at least two values each.
TTestResult welch_ttest(std::span<const double> a, std::span<const double> b);

}  // namespace isocal
