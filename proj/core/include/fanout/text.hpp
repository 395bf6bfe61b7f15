#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

// Small string helpers shared by the parsers and renderers.
namespace fanout::text {

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
bool iequals(std::string_view a, std::string_view b);
bool istarts_with(std::string_view s, std::string_view prefix);

/// Splits on '\n', dropping a trailing '\r' from each line.
std::vector<std::string> split_lines(std::string_view s);

/// Trims and collapses runs of whitespace to one space.
std::string collapse_whitespace(std::string_view s);

std::string replace_all(std::string s, std::string_view from, std::string_view to);

/// Removes opening and closing occurrences of the named tags, e.g. "<plan>".
std::string strip_tags(std::string_view s, std::initializer_list<std::string_view> tags);

/// Number of UTF-8 code points; invalid lead bytes count as one each.
std::size_t utf8_length(std::string_view s);

/// Byte offset of the first `n` code points (s.size() if shorter).
std::size_t utf8_prefix_bytes(std::string_view s, std::size_t n);

/// Python repr() of a str: single quotes unless the text contains a single
/// quote and no double quote.
std::string python_repr(std::string_view s);

/// 64-bit FNV-1a as 16 lowercase hex digits.
std::string fnv1a_hex(std::string_view s);

}  // namespace fanout::text
