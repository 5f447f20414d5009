#pragma once

#include <istream>
#include <string>
#include <string_view>
#include <vector>

namespace dmden::textio {

/// Shortest decimal that parses back to exactly `x`.
std::string format_double(double x);

/// Parses a full token as a double; throws IoError on trailing garbage.
double parse_double(std::string_view token);
long long parse_int(std::string_view token);

/// Whitespace-separated tokens of one line.
std::vector<std::string_view> split_ws(std::string_view line);

/// Reads the next line; throws IoError("<what>: unexpected end of file").
std::string read_line(std::istream& in, std::string_view what);

/// Reads one line holding exactly `count` doubles.
std::vector<double> read_doubles(std::istream& in, std::size_t count, std::string_view what);

/// Joins values with single spaces using format_double.
template <typename Range>
std::string join(const Range& values) {
  std::string out;
  bool first = true;
  for (double v : values) {
    if (!first) out.push_back(' ');
    out += format_double(v);
    first = false;
  }
  return out;
}

}  // namespace dmden::textio
