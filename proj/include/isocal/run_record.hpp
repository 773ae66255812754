#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace isocal {

enum class Method { none, cosreg, spectrum_pol, spectrum_exp, flow_posthoc, flow_joint };

inline constexpr Method kAllMethods[] = {Method::none,         Method::cosreg,       Method::spectrum_pol,
                                         Method::spectrum_exp, Method::flow_posthoc, Method::flow_joint};

std::string_view method_label(Method m);
/// Accepts the labels above plus "flow" for flow-posthoc.
std::optional<Method> parse_method(std::string_view label);

/// Final metrics of one training run.
///
/// File format: one `key=value` per line, '\n' terminated, in this order:
///   format=isocal-run 1
///   method, seed, accuracy, perplexity, i1, i2, seconds_per_epoch, degenerate
/// followed by `extra` entries in insertion order. Reals use %.17g.
/// `degenerate` is a comma-separated list of metric keys (possibly empty)
/// whose values must not be aggregated; non-finite values are treated the same way.
/// For flow methods i1/i2 describe the calibrated contextual vectors; the
/// output matrix is always in i1_w/i2_w.
struct RunRecord {
    Method method = Method::none;
    std::uint64_t seed = 0;
    double accuracy = 0.0;
    double perplexity = 0.0;
    double i1 = 0.0;
    double i2 = 0.0;
    double seconds_per_epoch = 0.0;
    std::set<std::string> degenerate;
    std::vector<std::pair<std::string, std::string>> extra;

    /// True if `key` is listed in `degenerate` or its value is non-finite.
    bool is_degenerate(std::string_view key) const;
    std::optional<std::string> extra_value(std::string_view key) const;
};

std::string serialize(const RunRecord& r);
/// Throws ParseError naming the line on malformed input or a missing key.
RunRecord parse_run_record(std::string_view text);

void write_run_record(const RunRecord& r, const std::filesystem::path& path);
RunRecord read_run_record(const std::filesystem::path& path);

/// Every `*.run` file in dir, sorted by file name. Throws IoError if dir is
/// missing or holds no records.
std::vector<RunRecord> read_run_records(const std::filesystem::path& dir);

}  // namespace isocal
