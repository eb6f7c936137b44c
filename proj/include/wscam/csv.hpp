#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

// Minimal comma-separated reader for the project's own files (no quoting).
namespace wscam::csv {

std::vector<std::string> split(std::string_view line);

// Calls `fn(fields, line_number)` for every non-blank row; line numbers are 1-based.
void for_each_row(std::istream& is, bool skip_header,
                  const std::function<void(const std::vector<std::string>&, std::size_t)>& fn);

int parse_int(const std::string& field, std::size_t line);
double parse_double(const std::string& field, std::size_t line);

}  // namespace wscam::csv
