#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace orchestra {

/// Shortest text that parses back to exactly `v`.
std::string format_double(double v);

std::vector<std::string_view> split_csv_line(std::string_view line);

/// Strict parsers; FormatError names `what` on failure.
double parse_double(std::string_view text, std::string_view what);
std::size_t parse_size(std::string_view text, std::string_view what);

}  // namespace orchestra
