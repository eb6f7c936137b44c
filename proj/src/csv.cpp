#include "wscam/csv.hpp"

#include <charconv>
#include <istream>
#include <stdexcept>

namespace wscam::csv {

namespace {
std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

[[noreturn]] void bad_field(const std::string& field, std::size_t line, const char* kind) {
  throw std::runtime_error("line " + std::to_string(line) + ": '" + field + "' is not a valid " + kind);
}
}  // namespace

std::vector<std::string> split(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.emplace_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

void for_each_row(std::istream& is, bool skip_header,
                  const std::function<void(const std::vector<std::string>&, std::size_t)>& fn) {
  std::string line;
  std::size_t number = 0;
  bool header_pending = skip_header;
  while (std::getline(is, line)) {
    ++number;
    if (trim(line).empty()) continue;
    if (header_pending) {
      header_pending = false;
      continue;
    }
    fn(split(line), number);
  }
}

int parse_int(const std::string& field, std::size_t line) {
  int v = 0;
  const auto* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (ec != std::errc{} || ptr != end || field.empty()) bad_field(field, line, "integer");
  return v;
}

double parse_double(const std::string& field, std::size_t line) {
  double v = 0;
  const auto* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (ec != std::errc{} || ptr != end || field.empty()) bad_field(field, line, "number");
  return v;
}

}  // namespace wscam::csv
