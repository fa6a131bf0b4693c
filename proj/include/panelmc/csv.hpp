#pragma once

#include "panelmc/types.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace panelmc::csv {

/// Splits one delimited line. Double-quoted fields may contain the delimiter;
/// a doubled quote inside a quoted field is a literal quote.
std::vector<std::string> split_line(std::string_view line, char delimiter = ',');

/// Shortest decimal text that round-trips to the same double.
std::string format_double(double value);

/// Quotes a field only when it contains the delimiter, a quote or a newline.
std::string escape_field(std::string_view field, char delimiter = ',');

double parse_double(std::string_view text);

std::vector<std::string> read_lines(const std::filesystem::path& path);

/// Headerless numeric grid, one row per line.
void write_matrix(const std::filesystem::path& path, const Matrix& m);
Matrix read_matrix(const std::filesystem::path& path);

void write_bool_grid(const std::filesystem::path& path, const BoolGrid& g);
BoolGrid read_bool_grid(const std::filesystem::path& path);

void write_vector(const std::filesystem::path& path, const Vector& v);
Vector read_vector(const std::filesystem::path& path);

/// Writes text exactly (binary mode, no newline translation).
void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

}  // namespace panelmc::csv
