#include "util.hpp"

#include <charconv>
#include <cstdio>
#include <string>

#include "udeoc/error.hpp"

namespace udeoc {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string format_shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.emplace_back(trim(s.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

double parse_double(std::string_view s) {
  const std::string text(trim(s));
  if (text.empty()) throw InvalidArgument("expected a number, got an empty value");
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    throw InvalidArgument("expected a number, got '" + text + "'");
  }
  if (used != text.size()) throw InvalidArgument("expected a number, got '" + text + "'");
  return v;
}

std::size_t parse_index(std::string_view s) {
  const std::string_view text = trim(s);
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty())
    throw InvalidArgument("expected a non-negative integer, got '" + std::string(text) + "'");
  return v;
}

}  // namespace udeoc
