#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace fineforge {

class ExcerptError : public std::runtime_error {
 public:
  enum class Code {
    UnbalancedExcerptTags,
    MultipleEllipses,
    EmptyExcerptPart,
  };

  ExcerptError(Code code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Code code() const { return code_; }

 private:
  Code code_;
};

inline constexpr std::string_view kExcerptOpenTag = "<excerpt>";
inline constexpr std::string_view kExcerptCloseTag = "</excerpt>";
inline constexpr std::string_view kEllipsisTag = "<...>";

struct GeneratedText {
  std::string text;
};

// Copy instruction: the span starts with a match of `prefix` and, when
// `suffix` is present, ends with a match of it; without a suffix the block is
// copied verbatim.
struct ExcerptDirective {
  std::string prefix;
  std::optional<std::string> suffix;
};

using MarkupItem = std::variant<GeneratedText, ExcerptDirective>;

// Splits model output into generated text and excerpt directives. The
// ellipsis marker is only meaningful inside an excerpt block.
std::vector<MarkupItem> parse_excerpt_markup(std::string_view raw);

struct AnswerSegment {
  enum class Kind { Generated, Excerpt };
  Kind kind = Kind::Generated;
  std::string text;
  // For excerpts: [start, end) code-point offsets into the source document.
  std::size_t start = 0;
  std::size_t end = 0;
};

struct ExpandedAnswer {
  std::vector<AnswerSegment> segments;
  std::string answer_text;
  double excerpt_ratio = 0.0;

  // Start offset of the earliest excerpt span, if any.
  std::optional<std::size_t> first_excerpt_start() const;
};

// Pre-processed view of a source document for span matching: Unicode
// whitespace runs are collapsed to single spaces and resolved matches map
// back to offsets in the original text.
class NormalizedDocument {
 public:
  explicit NormalizedDocument(std::string_view text);

  std::size_t point_count() const { return point_count_; }
  const std::u32string& normalized() const { return normalized_; }

  // Original code-point range and UTF-8 text for a normalized range.
  std::pair<std::size_t, std::size_t> original_range(std::size_t norm_begin,
                                                     std::size_t norm_end) const;
  std::string original_text(std::size_t norm_begin, std::size_t norm_end) const;

 private:
  friend struct DocumentMatcher;
  std::string text_;
  std::size_t point_count_ = 0;
  std::vector<std::size_t> point_byte_offsets_;
  std::u32string normalized_;
  std::u32string normalized_lower_;
  std::vector<std::size_t> norm_to_point_;
};

enum class ExpandStatus { Ok, PrefixNotFound, SuffixNotFound };

struct ExpandResult {
  ExpandStatus status = ExpandStatus::Ok;
  ExpandedAnswer answer;
  std::string detail;

  bool ok() const { return status == ExpandStatus::Ok; }
};

// Resolves directives left to right. Each directive searches at or after the
// end of the previous resolved span and falls back to a whole-document
// search; the leftmost prefix position that also completes its suffix wins,
// and the shortest span for that prefix is taken. Boundaries of 8+ characters
// match case-insensitively and retry with trailing .,;:!? stripped; shorter
// boundaries match exactly.
ExpandResult expand_excerpts(const std::vector<MarkupItem>& items,
                             const NormalizedDocument& document);

struct RatioCheck {
  bool pass = false;
  double ratio = 0.0;
};

// Inclusive lower bound: an answer exactly at min_ratio passes.
RatioCheck check_excerpt_ratio(const ExpandedAnswer& answer, double min_ratio);

}  // namespace fineforge
