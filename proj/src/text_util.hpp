#pragma once

// Small line/field helpers shared by the text loaders.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace refnms::detail {

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

std::vector<std::string_view> split_lines(std::string_view text);
std::vector<std::string_view> split_char(std::string_view s, char sep);
std::vector<std::string_view> split_ws(std::string_view s);
std::string_view trim(std::string_view s);

// Throw ParseError mentioning `what` and `line` on failure.
double parse_double(std::string_view s, std::string_view what, std::size_t line);
long long parse_int(std::string_view s, std::string_view what, std::size_t line);

}  // namespace refnms::detail
