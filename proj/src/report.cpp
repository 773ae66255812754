#include "isocal/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

#include "isocal/errors.hpp"

namespace isocal {

namespace {

ComparisonCell make_cell(const std::vector<const RunRecord*>& group, std::string_view key,
                         double RunRecord::*field) {
    ComparisonCell c;
    std::vector<double> xs;
    for (const RunRecord* r : group) {
        if (r->is_degenerate(key)) c.degenerate = true;
        xs.push_back(r->*field);
    }
    c.n = xs.size();
    if (!c.degenerate) {
        const SampleSummary s = summarize(xs);
        c.mean = s.mean;
        c.stddev = s.stddev;
    }
    return c;
}

std::vector<double> accuracies(const std::vector<const RunRecord*>& group) {
    std::vector<double> xs;
    for (const RunRecord* r : group) xs.push_back(r->accuracy);
    return xs;
}

std::string fixed(double x, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, x);
    return buf;
}

std::string cell_text(const ComparisonCell& c, int digits) {
    if (c.degenerate) return "degenerate";
    return fixed(c.mean, digits) + " \u00b1 " + fixed(c.stddev, digits);
}

std::string sig_text(Significance s) {
    switch (s) {
        case Significance::baseline: return "base";
        case Significance::better: return "*";
        case Significance::degenerate: return "degenerate";
        case Significance::none: return "";
    }
    return "";
}

// Display columns of a UTF-8 string.
std::size_t display_width(const std::string& s) {
    return static_cast<std::size_t>(
        std::count_if(s.begin(), s.end(), [](char ch) { return (static_cast<unsigned char>(ch) & 0xC0) != 0x80; }));
}

std::string csv_num(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", x);
    return buf;
}

}  // namespace

ReportTable aggregate(std::span<const RunRecord> records, double alpha) {
    std::map<Method, std::vector<const RunRecord*>> groups;
    for (const RunRecord& r : records) groups[r.method].push_back(&r);
    for (auto& [m, g] : groups)
        std::stable_sort(g.begin(), g.end(), [](const RunRecord* a, const RunRecord* b) { return a->seed < b->seed; });

    const auto base_it = groups.find(Method::none);
    if (base_it == groups.end()) throw ContractError("aggregate: no baseline ('none') records");
    const auto& base = base_it->second;
    const ComparisonCell base_acc = make_cell(base, "accuracy", &RunRecord::accuracy);

    ReportTable table;
    table.alpha = alpha;
    for (Method m : kAllMethods) {
        auto it = groups.find(m);
        if (it == groups.end()) continue;
        const auto& g = it->second;
        MethodRow row;
        row.method = m;
        row.accuracy = make_cell(g, "accuracy", &RunRecord::accuracy);
        row.perplexity = make_cell(g, "perplexity", &RunRecord::perplexity);
        row.i1 = make_cell(g, "i1", &RunRecord::i1);
        row.i2 = make_cell(g, "i2", &RunRecord::i2);
        row.seconds = make_cell(g, "seconds_per_epoch", &RunRecord::seconds_per_epoch);

        if (m == Method::none) {
            row.significance = Significance::baseline;
        } else if (row.accuracy.degenerate || base_acc.degenerate || g.size() < 2 || base.size() < 2) {
            row.significance = Significance::degenerate;
        } else {
            const auto a = accuracies(g);
            const auto b = accuracies(base);
            row.test = welch_ttest(a, b);
            if (row.test.degenerate)
                row.significance = Significance::degenerate;
            else if (row.test.p < alpha && row.accuracy.mean > base_acc.mean)
                row.significance = Significance::better;
            else
                row.significance = Significance::none;
        }
        table.rows.push_back(row);
    }
    return table;
}

double isotropy_performance_correlation(const ReportTable& table) {
    std::vector<double> x, y;
    for (const auto& row : table.rows) {
        if (row.i1.degenerate || row.accuracy.degenerate) continue;
        x.push_back(row.i1.mean);
        y.push_back(row.accuracy.mean);
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    if (x.size() < 3) return nan;
    const SampleSummary sx = summarize(x);
    const SampleSummary sy = summarize(y);
    if (sx.stddev == 0.0 || sy.stddev == 0.0) return nan;
    double cov = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) cov += (x[i] - sx.mean) * (y[i] - sy.mean);
    cov /= static_cast<double>(x.size() - 1);
    return cov / (sx.stddev * sy.stddev);
}

std::string render_text(const ReportTable& table, const ReportOptions& options) {
    std::vector<std::vector<std::string>> cells;
    std::vector<std::string> header = {"method", "n", "accuracy", "perplexity", "I1", "I2"};
    if (options.include_timing) header.push_back("sec/epoch");
    header.push_back("sig");
    cells.push_back(header);
    for (const auto& row : table.rows) {
        std::vector<std::string> line = {std::string(method_label(row.method)), std::to_string(row.accuracy.n),
                                         cell_text(row.accuracy, 4), cell_text(row.perplexity, 3),
                                         cell_text(row.i1, 4), cell_text(row.i2, 4)};
        if (options.include_timing) line.push_back(cell_text(row.seconds, 3));
        line.push_back(sig_text(row.significance));
        cells.push_back(std::move(line));
    }

    std::vector<std::size_t> width(header.size(), 0);
    for (const auto& line : cells)
        for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], display_width(line[c]));

    std::ostringstream out;
    for (std::size_t r = 0; r < cells.size(); ++r) {
        std::string text;
        for (std::size_t c = 0; c < cells[r].size(); ++c) {
            if (c) text += "  ";
            const std::string& v = cells[r][c];
            text += v;
            text.append(width[c] - display_width(v), ' ');
        }
        while (!text.empty() && text.back() == ' ') text.pop_back();
        out << text << '\n';
        if (r == 0) {
            std::size_t total = 0;
            for (std::size_t c = 0; c < width.size(); ++c) total += width[c] + (c ? 2 : 0);
            out << std::string(total, '-') << '\n';
        }
    }
    out << "* p < " << fixed(table.alpha, 2)
        << " (Welch two-sided t-test on accuracy) and higher mean accuracy than the uncalibrated baseline\n";
    const double corr = isotropy_performance_correlation(table);
    out << "trend: corr(mean I1, mean accuracy) across methods = "
        << (std::isnan(corr) ? std::string("undefined") : fixed(corr, 4)) << '\n';
    return out.str();
}

std::string render_csv(const ReportTable& table, const ReportOptions& options) {
    std::ostringstream out;
    out << "method,n,accuracy_mean,accuracy_std,perplexity_mean,perplexity_std,i1_mean,i1_std,i2_mean,i2_std";
    if (options.include_timing) out << ",seconds_mean,seconds_std";
    out << ",significance\n";
    auto cell = [&](const ComparisonCell& c) {
        if (c.degenerate)
            out << ",degenerate,degenerate";
        else
            out << ',' << csv_num(c.mean) << ',' << csv_num(c.stddev);
    };
    for (const auto& row : table.rows) {
        out << method_label(row.method) << ',' << row.accuracy.n;
        cell(row.accuracy);
        cell(row.perplexity);
        cell(row.i1);
        cell(row.i2);
        if (options.include_timing) cell(row.seconds);
        out << ',' << sig_text(row.significance) << '\n';
    }
    return out.str();
}

}  // namespace isocal
