#include "isocal/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "isocal/errors.hpp"

namespace isocal {

namespace {

double beta_continued_fraction(double a, double b, double x) {
    constexpr int kMaxTerms = 500;
    constexpr double kTol = 1e-15;
    constexpr double kTiny = 1e-300;

    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxTerms; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kTol) return h;
    }
    throw NumericalError("incomplete_beta: continued fraction did not converge");
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0)) throw ContractError("incomplete_beta: a and b must be positive");
    if (!(x >= 0.0 && x <= 1.0)) throw ContractError("incomplete_beta: x must lie in [0, 1]");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    const double log_front =
        std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(log_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
    return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double dof) {
    if (!(dof > 0.0)) throw ContractError("student_t_cdf: dof must be positive");
    if (std::isnan(t)) throw ContractError("student_t_cdf: t is NaN");
    if (t == 0.0) return 0.5;
    if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
    const double x = dof / (dof + t * t);
    const double tail = 0.5 * incomplete_beta(0.5 * dof, 0.5, x);
    return t > 0.0 ? 1.0 - tail : tail;
}

SampleSummary summarize(std::span<const double> xs) {
    SampleSummary s;
    s.n = xs.size();
    if (s.n == 0) return s;
    // A constant sample has exactly its value as mean and zero spread; the
    // summed mean would carry rounding noise into both.
    if (std::all_of(xs.begin(), xs.end(), [&](double x) { return x == xs[0]; })) {
        s.mean = xs[0];
        return s;
    }
    for (double x : xs) s.mean += x;
    s.mean /= static_cast<double>(s.n);
    if (s.n > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - s.mean) * (x - s.mean);
        s.stddev = std::sqrt(ss / static_cast<double>(s.n - 1));
    }
    return s;
}

TTestResult welch_ttest(std::span<const double> a, std::span<const double> b) {
    if (a.size() < 2 || b.size() < 2) throw ContractError("welch_ttest: each sample needs at least 2 values");
    const SampleSummary sa = summarize(a);
    const SampleSummary sb = summarize(b);
    const double na = static_cast<double>(sa.n);
    const double nb = static_cast<double>(sb.n);
    const double va = sa.stddev * sa.stddev / na;
    const double vb = sb.stddev * sb.stddev / nb;

    TTestResult r;
    if (va == 0.0 && vb == 0.0) {
        r.degenerate = true;
        r.dof = na + nb - 2.0;
        if (sa.mean == sb.mean) {
            r.t = 0.0;
            r.p = 1.0;
        } else {
            r.t = std::copysign(std::numeric_limits<double>::infinity(), sa.mean - sb.mean);
            r.p = 0.0;
        }
        return r;
    }
    const double se2 = va + vb;
    r.t = (sa.mean - sb.mean) / std::sqrt(se2);
    r.dof = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    if (r.t == 0.0) {
        r.p = 1.0;
    } else {
        r.p = incomplete_beta(0.5 * r.dof, 0.5, r.dof / (r.dof + r.t * r.t));
    }
    return r;
}

}  // namespace isocal
