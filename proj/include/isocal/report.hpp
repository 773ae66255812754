#pragma once

#include <span>
#include <string>
#include <vector>

#include "isocal/run_record.hpp"
#include "isocal/stats.hpp"

namespace isocal {

/// mean +- std of one metric over the seeds of one method.
struct ComparisonCell {
    double mean = 0.0;
    double stddev = 0.0;
    std::size_t n = 0;
    bool degenerate = false;  // some record flagged this metric
};

enum class Significance {
    baseline,    // the uncalibrated row itself
    none,        // not significantly better
    better,      // p < alpha and mean accuracy above the baseline
    degenerate,  // t-test undefined (zero variance in both groups, flagged cells, n < 2)
};

struct MethodRow {
    Method method = Method::none;
    ComparisonCell accuracy;
    ComparisonCell perplexity;
    ComparisonCell i1;
    ComparisonCell i2;
    ComparisonCell seconds;
    Significance significance = Significance::none;
    TTestResult test;  // accuracy vs baseline (unset for baseline/degenerate rows)
};

struct ReportTable {
    std::vector<MethodRow> rows;  // ordered as kAllMethods
    double alpha = 0.05;
};

/// Groups records by method. Significance is Welch's two-sided test on
/// accuracy against the `none` group; a star needs p < alpha and a higher
/// mean. Throws ContractError without a baseline group.
ReportTable aggregate(std::span<const RunRecord> records, double alpha = 0.05);

/// Pearson correlation of the per-method mean I1 and mean accuracy across
/// rows with non-degenerate cells. NaN when fewer than 3 rows qualify or a
/// column is constant.
double isotropy_performance_correlation(const ReportTable& table);

struct ReportOptions {
    bool include_timing = true;
};

/// Fixed-width text table, one row per method, plus a trend line.
std::string render_text(const ReportTable& table, const ReportOptions& options = {});

/// CSV with header
///   method,n,accuracy_mean,accuracy_std,perplexity_mean,perplexity_std,
///   i1_mean,i1_std,i2_mean,i2_std[,seconds_mean,seconds_std],significance
/// Fields are labels or numbers, so no quoting is used. Degenerate cells hold
/// the word `degenerate` in both mean and std columns; significance is one of
/// base, *, (empty), degenerate.
std::string render_csv(const ReportTable& table, const ReportOptions& options = {});

}  // namespace isocal
