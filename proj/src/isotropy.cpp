#include "isocal/isotropy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "isocal/errors.hpp"

namespace isocal {

double log_partition(const Matrix& w, std::span<const double> v) {
    if (v.size() != w.cols()) throw ContractError("log_partition: probe dimension mismatch");
    const double nv = norm2(v);
    if (!(std::abs(nv - 1.0) <= 1e-9)) throw ContractError("log_partition: probe is not a unit vector");

    std::vector<double> s(w.rows());
    double smax = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < w.rows(); ++i) {
        s[i] = dot(v, w.row(i));
        smax = std::max(smax, s[i]);
    }
    double acc = 0.0;
    for (double x : s) acc += std::exp(x - smax);
    return smax + std::log(acc);
}

IsotropyReport isotropy(const Matrix& w, ProbeSet probes) {
    require_embedding(w, "isotropy");
    if (probes.probes.cols() != w.cols()) throw ContractError("isotropy: probe dimension mismatch");
    IsotropyReport rep;
    const std::size_t count = probes.size();
    rep.log_z.resize(count);
    for (std::size_t k = 0; k < count; ++k) rep.log_z[k] = log_partition(w, probes.probes.row(k));

    const auto [lo, hi] = std::minmax_element(rep.log_z.begin(), rep.log_z.end());
    const double lmax = *hi;
    rep.i1 = std::exp(*lo - lmax);

    std::vector<double> z(count);
    double mean = 0.0;
    for (std::size_t k = 0; k < count; ++k) {
        z[k] = std::exp(rep.log_z[k] - lmax);
        mean += z[k];
    }
    mean /= static_cast<double>(count);
    double ss = 0.0;
    for (double x : z) ss += (x - mean) * (x - mean);
    rep.i2 = std::sqrt(ss / (static_cast<double>(count) * mean * mean));
    rep.mean_z_scaled = mean;
    rep.probes = std::move(probes);
    return rep;
}

IsotropyReport isotropy(const Matrix& w) {
    require_embedding(w, "isotropy");
    return isotropy(w, gram_eigvectors(w));
}

double isotropy_i1(const Matrix& w) { return isotropy(w).i1; }
double isotropy_i2(const Matrix& w) { return isotropy(w).i2; }

double mean_pairwise_cosine(const Matrix& w) {
    std::vector<std::vector<double>> unit;
    for (std::size_t i = 0; i < w.rows(); ++i) {
        const double n = norm2(w.row(i));
        if (n == 0.0) continue;
        std::vector<double> u(w.row(i).begin(), w.row(i).end());
        for (double& x : u) x /= n;
        unit.push_back(std::move(u));
    }
    const std::size_t n = unit.size();
    if (n < 2) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j) acc += dot(unit[i], unit[j]);
    return acc / static_cast<double>(n * (n - 1));
}

}  // namespace isocal
