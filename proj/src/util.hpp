#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace udeoc {

/// 17 significant digits.
std::string format_double(double v);
/// Shortest text that round-trips (to_chars).
std::string format_shortest(double v);
std::string_view trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
/// Throw InvalidArgument on malformed input.
double parse_double(std::string_view s);
std::size_t parse_index(std::string_view s);

}  // namespace udeoc
