#include "dmden/textio.hpp"

#include <charconv>
#include <cmath>

#include "dmden/error.hpp"

namespace dmden::textio {

std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view token) {
  double value = 0.0;
  const char* first = token.data();
  const char* last = token.data() + token.size();
  if (!token.empty() && *first == '+') ++first;
  const auto res = std::from_chars(first, last, value);
  if (res.ec != std::errc() || res.ptr != last)
    throw IoError("malformed number '" + std::string(token) + "'");
  return value;
}

long long parse_int(std::string_view token) {
  long long value = 0;
  const char* first = token.data();
  const char* last = token.data() + token.size();
  if (!token.empty() && *first == '+') ++first;
  const auto res = std::from_chars(first, last, value);
  if (res.ec != std::errc() || res.ptr != last)
    throw IoError("malformed integer '" + std::string(token) + "'");
  return value;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

std::string read_line(std::istream& in, std::string_view what) {
  std::string line;
  if (!std::getline(in, line)) throw IoError(std::string(what) + ": unexpected end of file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

std::vector<double> read_doubles(std::istream& in, std::size_t count, std::string_view what) {
  const std::string line = read_line(in, what);
  const auto tokens = split_ws(line);
  if (tokens.size() != count)
    throw IoError(std::string(what) + ": expected " + std::to_string(count) + " values, got " +
                  std::to_string(tokens.size()));
  std::vector<double> values;
  values.reserve(count);
  for (auto tok : tokens) values.push_back(parse_double(tok));
  return values;
}

}  // namespace dmden::textio
