#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>

#include "portopt/matrix.hpp"

namespace portopt {

/// Thrown for malformed input files (CSV/JSON). Maps to exit code 2 in the CLI.
class ParseError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Format a double with 17 significant digits so that parsing the text
/// recovers the exact same bit pattern.
std::string g17(double value);

/// Parse one numeric CSV field; `row`/`col` are 1-based positions used in the
/// error message.
double parse_double_field(std::string_view field, std::size_t row, std::size_t col);

/// Split a CSV line on commas. Trims surrounding whitespace and a trailing
/// '\r' (CRLF input).
std::vector<std::string> split_csv_line(const std::string& line);

// FNV-1a 64-bit digests, used by the run manifest.
std::uint64_t fnv1a(std::string_view bytes);
std::uint64_t fnv1a_file(const std::string& path);
std::string hex64(std::uint64_t value);

/// Plain numeric matrix CSV: one row per line, comma separated, no header.
void write_matrix_csv(std::ostream& out, const Matrix& m);
Matrix read_matrix_csv(std::istream& in);
Matrix read_matrix_csv_file(const std::string& path);
void write_matrix_csv_file(const std::string& path, const Matrix& m);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

} // namespace portopt
