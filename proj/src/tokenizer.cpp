#include "fineforge/tokenizer.hpp"

#include "fineforge/text.hpp"

namespace fineforge {

Tokenizer Tokenizer::from_name(std::string_view name) {
  if (name == "word") {
    return Tokenizer(Kind::Word);
  }
  if (name == "whitespace") {
    return Tokenizer(Kind::Whitespace);
  }
  throw std::invalid_argument("unknown tokenizer: " + std::string(name));
}

std::size_t Tokenizer::count(std::string_view text) const {
  if (kind_ == Kind::Word) {
    return word_token_count(text);
  }
  return whitespace_tokens(text).size();
}

std::vector<std::string> Tokenizer::tokens(std::string_view text) const {
  if (kind_ == Kind::Word) {
    return word_tokens(text);
  }
  return whitespace_tokens(text);
}

}  // namespace fineforge
