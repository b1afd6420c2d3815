#pragma once

#include <cstddef>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fineforge {

// Pluggable token counter for budgeting. The default "word" tokenizer counts
// alphanumeric runs as one token each and every other non-space character as
// its own token; "whitespace" splits on whitespace only. Counts are what the
// budget is measured in, so a subword tokenizer can be swapped in behind the
// same interface.
class Tokenizer {
 public:
  enum class Kind { Word, Whitespace };

  explicit Tokenizer(Kind kind = Kind::Word) : kind_(kind) {}

  static Tokenizer from_name(std::string_view name);

  std::size_t count(std::string_view text) const;
  std::vector<std::string> tokens(std::string_view text) const;
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

}  // namespace fineforge
