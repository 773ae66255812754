#pragma once

#include <span>
#include <vector>

#include "isocal/matrix.hpp"
#include "isocal/svd.hpp"

namespace isocal {

/// log Z(v) with Z(v) = sum_i exp(v . w_i), evaluated with a max shift so
/// rows of large norm do not overflow. v must be a unit vector (1e-9).
double log_partition(const Matrix& w, std::span<const double> v);

/// Partition-function isotropy of an embedding matrix.
///
/// i1 = min Z / max Z over the probe set, i2 = sqrt(sum (Z - mean)^2 / (|V| mean^2)).
/// Both are computed on Z scaled by exp(-max log Z), which leaves them
/// unchanged. mean_z_scaled is the mean of those scaled values.
struct IsotropyReport {
    double i1 = 1.0;
    double i2 = 0.0;
    std::vector<double> log_z;
    double mean_z_scaled = 1.0;
    ProbeSet probes;
};

IsotropyReport isotropy(const Matrix& w);
IsotropyReport isotropy(const Matrix& w, ProbeSet probes);

double isotropy_i1(const Matrix& w);
double isotropy_i2(const Matrix& w);

/// Mean cosine similarity over ordered pairs i != j of rows (zero rows skipped).
double mean_pairwise_cosine(const Matrix& w);

}  // namespace isocal
