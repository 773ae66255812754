#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace isocal {

/// %.17g, locale independent. Round-trips every finite double.
std::string format_exact(double x);

/// Shortest round-trip representation, always with a decimal point or
/// exponent ("1.0", "0.1353352832366127", "nan").
std::string format_short(double x);

/// Whole-token parse (from_chars); nullopt on trailing garbage.
std::optional<double> parse_double(std::string_view s);
std::optional<unsigned long long> parse_uint(std::string_view s);

/// Splits on single spaces. Empty fields (doubled spaces) are kept as empty strings.
std::vector<std::string_view> split_spaces(std::string_view line);

}  // namespace isocal
