#include "fineforge/text.hpp"

namespace fineforge {
namespace {

constexpr char32_t kReplacement = 0xFFFD;

bool is_word_byte(unsigned char c) {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') ||
         (c >= 'A' && c <= 'Z') || c >= 0x80;
}

bool is_space_byte(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
         c == '\v';
}

}  // namespace

DecodedText decode_utf8(std::string_view text) {
  DecodedText out;
  out.points.reserve(text.size());
  out.byte_offsets.reserve(text.size() + 1);
  std::size_t i = 0;
  while (i < text.size()) {
    out.byte_offsets.push_back(i);
    const auto b0 = static_cast<unsigned char>(text[i]);
    char32_t cp = kReplacement;
    std::size_t len = 1;
    if (b0 < 0x80) {
      cp = b0;
    } else if ((b0 & 0xE0) == 0xC0) {
      len = 2;
    } else if ((b0 & 0xF0) == 0xE0) {
      len = 3;
    } else if ((b0 & 0xF8) == 0xF0) {
      len = 4;
    }
    if (len > 1) {
      if (i + len <= text.size()) {
        char32_t acc = b0 & (0x7F >> len);
        bool ok = true;
        for (std::size_t j = 1; j < len; ++j) {
          const auto bj = static_cast<unsigned char>(text[i + j]);
          if ((bj & 0xC0) != 0x80) {
            ok = false;
            break;
          }
          acc = (acc << 6) | (bj & 0x3F);
        }
        if (ok) {
          cp = acc;
        } else {
          len = 1;
        }
      } else {
        len = 1;
      }
    }
    out.points.push_back(cp);
    i += len;
  }
  out.byte_offsets.push_back(text.size());
  return out;
}

std::string encode_utf8(std::u32string_view points) {
  std::string out;
  out.reserve(points.size());
  for (char32_t cp : points) {
    if (cp < 0x80) {
      out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
      out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
      out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
      out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
  }
  return out;
}

std::size_t count_code_points(std::string_view text) {
  std::size_t n = 0;
  for (char c : text) {
    if ((static_cast<unsigned char>(c) & 0xC0) != 0x80) {
      ++n;
    }
  }
  return n;
}

bool is_space_char(char32_t c) {
  return c == U' ' || c == U'\t' || c == U'\n' || c == U'\r' || c == U'\f' ||
         c == U'\v';
}

char32_t ascii_lower(char32_t c) {
  if (c >= U'A' && c <= U'Z') {
    return c + (U'a' - U'A');
  }
  return c;
}

std::string ascii_lower_copy(std::string_view text) {
  std::string out(text);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') {
      c = static_cast<char>(c - 'A' + 'a');
    }
  }
  return out;
}

std::vector<std::string> alnum_lower_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char raw : text) {
    const auto c = static_cast<unsigned char>(raw);
    if (is_word_byte(c)) {
      current.push_back(
          c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : raw);
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) {
    tokens.push_back(std::move(current));
  }
  return tokens;
}

std::vector<std::string> whitespace_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char raw : text) {
    if (is_space_byte(static_cast<unsigned char>(raw))) {
      if (!current.empty()) {
        tokens.push_back(std::move(current));
        current.clear();
      }
    } else {
      current.push_back(raw);
    }
  }
  if (!current.empty()) {
    tokens.push_back(std::move(current));
  }
  return tokens;
}

std::size_t word_token_count(std::string_view text) {
  std::size_t count = 0;
  bool in_word = false;
  for (char raw : text) {
    const auto c = static_cast<unsigned char>(raw);
    if (is_word_byte(c)) {
      if (!in_word) {
        ++count;
        in_word = true;
      }
    } else {
      in_word = false;
      if (!is_space_byte(c)) {
        ++count;  // punctuation counts as a token of its own
      }
    }
  }
  return count;
}

std::vector<std::string> word_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char raw : text) {
    const auto c = static_cast<unsigned char>(raw);
    if (is_word_byte(c)) {
      current.push_back(raw);
    } else {
      if (!current.empty()) {
        tokens.push_back(std::move(current));
        current.clear();
      }
      if (!is_space_byte(c)) {
        tokens.emplace_back(1, raw);
      }
    }
  }
  if (!current.empty()) {
    tokens.push_back(std::move(current));
  }
  return tokens;
}

std::string_view truncate_chars(std::string_view text, std::size_t max_chars) {
  std::size_t chars = 0;
  std::size_t i = 0;
  while (i < text.size()) {
    if (chars == max_chars) {
      return text.substr(0, i);
    }
    ++i;
    while (i < text.size() &&
           (static_cast<unsigned char>(text[i]) & 0xC0) == 0x80) {
      ++i;
    }
    ++chars;
  }
  return text;
}

}  // namespace fineforge
