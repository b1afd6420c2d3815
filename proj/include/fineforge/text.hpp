#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace fineforge {

// Decoded UTF-8 text with the byte offset of each code point. Invalid bytes
// are decoded as U+FFFD one byte at a time so offsets stay consistent.
struct DecodedText {
  std::u32string points;
  std::vector<std::size_t> byte_offsets;  // size == points.size() + 1
};

DecodedText decode_utf8(std::string_view text);
std::string encode_utf8(std::u32string_view points);
std::size_t count_code_points(std::string_view text);

bool is_space_char(char32_t c);
char32_t ascii_lower(char32_t c);
std::string ascii_lower_copy(std::string_view text);

// Lowercased alphanumeric word tokens; every other character separates.
// Bytes >= 0x80 are treated as word characters.
std::vector<std::string> alnum_lower_tokens(std::string_view text);

// Splits on whitespace only.
std::vector<std::string> whitespace_tokens(std::string_view text);

// Word tokenization for token budgeting: alphanumeric runs count as one token
// and each remaining non-space character counts as its own token.
std::size_t word_token_count(std::string_view text);
std::vector<std::string> word_tokens(std::string_view text);

// Truncates to at most max_chars code points without splitting a UTF-8
// sequence. Returns the original view when it already fits.
std::string_view truncate_chars(std::string_view text, std::size_t max_chars);

}  // namespace fineforge
