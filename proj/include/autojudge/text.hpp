#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

// Small text and file helpers shared by the parsers and the CLI.
namespace autojudge::text {

/// Splits on ASCII whitespace, dropping empty fields.
std::vector<std::string_view> split_ws(std::string_view line);

/// Iterates lines, stripping a trailing '\r'. Callback gets (1-based number, line).
template <typename F>
void for_each_line(std::string_view text, F&& fn) {
  std::size_t lineno = 0;
  while (!text.empty()) {
    auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    fn(++lineno, line);
    if (nl == std::string_view::npos) break;
    text.remove_prefix(nl + 1);
  }
}

bool is_blank(std::string_view s);

/// Shortest decimal form that parses back to the same double.
std::string format_double(double v);
/// Fixed-point with the given number of decimals.
std::string format_fixed(double v, int decimals);

std::string read_file(const std::filesystem::path& path);
/// Writes via a temporary sibling file and rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace autojudge::text
