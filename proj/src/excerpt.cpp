#include "fineforge/excerpt.hpp"

#include "fineforge/text.hpp"

namespace fineforge {
namespace {

constexpr std::size_t kCaseFoldMinChars = 8;

bool is_strippable_punct(char32_t c) {
  return c == U'.' || c == U',' || c == U';' || c == U':' || c == U'!' ||
         c == U'?';
}

std::u32string normalize_boundary(std::string_view raw) {
  const DecodedText decoded = decode_utf8(raw);
  std::u32string out;
  out.reserve(decoded.points.size());
  for (char32_t cp : decoded.points) {
    if (is_space_char(cp)) {
      if (!out.empty() && out.back() == U' ') {
        continue;
      }
      out.push_back(U' ');
    } else {
      out.push_back(cp);
    }
  }
  // Surrounding whitespace is not part of the boundary.
  std::size_t begin = 0;
  std::size_t end = out.size();
  while (begin < end && out[begin] == U' ') ++begin;
  while (end > begin && out[end - 1] == U' ') --end;
  return out.substr(begin, end - begin);
}

std::u32string lower_copy(const std::u32string& text) {
  std::u32string out(text);
  for (char32_t& c : out) {
    c = ascii_lower(c);
  }
  return out;
}

std::u32string strip_trailing_punct(const std::u32string& text) {
  std::size_t end = text.size();
  while (end > 0 && is_strippable_punct(text[end - 1])) {
    --end;
  }
  return text.substr(0, end);
}

}  // namespace

std::vector<MarkupItem> parse_excerpt_markup(std::string_view raw) {
  std::vector<MarkupItem> items;
  std::size_t cursor = 0;
  while (cursor < raw.size()) {
    const std::size_t open = raw.find(kExcerptOpenTag, cursor);
    const std::size_t close = raw.find(kExcerptCloseTag, cursor);
    if (close < open) {
      throw ExcerptError(ExcerptError::Code::UnbalancedExcerptTags,
                         "close tag without matching open tag at offset " +
                             std::to_string(close));
    }
    if (open == std::string_view::npos) {
      items.push_back(GeneratedText{std::string(raw.substr(cursor))});
      break;
    }
    if (open > cursor) {
      items.push_back(
          GeneratedText{std::string(raw.substr(cursor, open - cursor))});
    }
    const std::size_t inner_start = open + kExcerptOpenTag.size();
    const std::size_t end = raw.find(kExcerptCloseTag, inner_start);
    if (end == std::string_view::npos) {
      throw ExcerptError(ExcerptError::Code::UnbalancedExcerptTags,
                         "open tag without matching close tag at offset " +
                             std::to_string(open));
    }
    const std::size_t nested = raw.find(kExcerptOpenTag, inner_start);
    if (nested != std::string_view::npos && nested < end) {
      throw ExcerptError(ExcerptError::Code::UnbalancedExcerptTags,
                         "nested excerpt block at offset " +
                             std::to_string(nested));
    }
    const std::string_view block = raw.substr(inner_start, end - inner_start);
    const std::size_t ellipsis = block.find(kEllipsisTag);
    ExcerptDirective directive;
    if (ellipsis == std::string_view::npos) {
      directive.prefix = std::string(block);
    } else {
      if (block.find(kEllipsisTag, ellipsis + kEllipsisTag.size()) !=
          std::string_view::npos) {
        throw ExcerptError(ExcerptError::Code::MultipleEllipses,
                           "excerpt block at offset " + std::to_string(open) +
                               " contains more than one ellipsis marker");
      }
      directive.prefix = std::string(block.substr(0, ellipsis));
      directive.suffix =
          std::string(block.substr(ellipsis + kEllipsisTag.size()));
    }
    if (normalize_boundary(directive.prefix).empty() ||
        (directive.suffix && normalize_boundary(*directive.suffix).empty())) {
      throw ExcerptError(ExcerptError::Code::EmptyExcerptPart,
                         "excerpt block at offset " + std::to_string(open) +
                             " has an empty boundary");
    }
    items.push_back(std::move(directive));
    cursor = end + kExcerptCloseTag.size();
  }
  return items;
}

std::optional<std::size_t> ExpandedAnswer::first_excerpt_start() const {
  for (const auto& segment : segments) {
    if (segment.kind == AnswerSegment::Kind::Excerpt) {
      return segment.start;
    }
  }
  return std::nullopt;
}

NormalizedDocument::NormalizedDocument(std::string_view text) : text_(text) {
  DecodedText decoded = decode_utf8(text_);
  point_count_ = decoded.points.size();
  point_byte_offsets_ = std::move(decoded.byte_offsets);
  normalized_.reserve(point_count_);
  norm_to_point_.reserve(point_count_);
  for (std::size_t i = 0; i < decoded.points.size(); ++i) {
    const char32_t cp = decoded.points[i];
    if (is_space_char(cp)) {
      if (!normalized_.empty() && normalized_.back() == U' ') {
        continue;
      }
      normalized_.push_back(U' ');
    } else {
      normalized_.push_back(cp);
    }
    norm_to_point_.push_back(i);
  }
  normalized_lower_ = lower_copy(normalized_);
}

std::pair<std::size_t, std::size_t> NormalizedDocument::original_range(
    std::size_t norm_begin, std::size_t norm_end) const {
  if (norm_begin >= norm_end || norm_end > norm_to_point_.size()) {
    return {0, 0};
  }
  return {norm_to_point_[norm_begin], norm_to_point_[norm_end - 1] + 1};
}

std::string NormalizedDocument::original_text(std::size_t norm_begin,
                                              std::size_t norm_end) const {
  const auto [begin, end] = original_range(norm_begin, norm_end);
  return text_.substr(point_byte_offsets_[begin],
                      point_byte_offsets_[end] - point_byte_offsets_[begin]);
}

struct DocumentMatcher {
  const NormalizedDocument& doc;

  // A boundary and the matching policy its length fixes.
  struct Needle {
    std::u32string exact;
    std::u32string lower;
    bool fold_case = false;        // 8+ chars match case-insensitively
    bool punct_fallback = false;   // 8+ chars retry with trailing .,;:!? cut
  };

  Needle make_needle(std::string_view raw) const {
    Needle needle;
    needle.exact = normalize_boundary(raw);
    needle.lower = lower_copy(needle.exact);
    needle.fold_case = needle.exact.size() >= kCaseFoldMinChars;
    needle.punct_fallback = needle.fold_case;
    return needle;
  }

  std::size_t find(const Needle& needle, const std::u32string& pattern,
                   std::size_t from) const {
    const std::u32string& haystack =
        needle.fold_case ? doc.normalized_lower_ : doc.normalized_;
    return haystack.find(pattern, from);
  }

  // First occurrence at or after `from`, trying the trailing-punctuation
  // fallback when the exact form does not occur anywhere at or after `from`.
  struct Occurrence {
    std::size_t pos = std::u32string::npos;
    std::size_t length = 0;
  };

  Occurrence find_with_fallback(const Needle& needle, std::size_t from) const {
    const std::u32string& pattern = needle.fold_case ? needle.lower
                                                     : needle.exact;
    std::size_t pos = find(needle, pattern, from);
    if (pos != std::u32string::npos) {
      return {pos, pattern.size()};
    }
    if (needle.punct_fallback) {
      const std::u32string stripped =
          strip_trailing_punct(needle.fold_case ? needle.lower : needle.exact);
      if (!stripped.empty() && stripped.size() != pattern.size()) {
        pos = find(needle, stripped, from);
        if (pos != std::u32string::npos) {
          return {pos, stripped.size()};
        }
      }
    }
    return {};
  }

  // Earliest suffix occurrence forming a valid span for a prefix match at
  // [prefix_pos, prefix_pos + prefix_len): the span must contain the whole
  // prefix and end with the suffix; the earliest end gives the shortest span.
  Occurrence find_suffix(const Needle& needle, std::size_t prefix_pos,
                         std::size_t prefix_len) const {
    const std::size_t min_end = prefix_pos + prefix_len;
    for (const bool use_stripped : {false, true}) {
      std::u32string pattern = needle.fold_case ? needle.lower : needle.exact;
      if (use_stripped) {
        if (!needle.punct_fallback) {
          break;
        }
        const std::u32string stripped = strip_trailing_punct(pattern);
        if (stripped.empty() || stripped.size() == pattern.size()) {
          break;
        }
        pattern = stripped;
      }
      std::size_t from = prefix_pos;
      while (true) {
        const std::size_t pos = find(needle, pattern, from);
        if (pos == std::u32string::npos) {
          break;
        }
        if (pos + pattern.size() >= min_end) {
          return {pos, pattern.size()};
        }
        from = pos + 1;
      }
    }
    return {};
  }
};

ExpandResult expand_excerpts(const std::vector<MarkupItem>& items,
                             const NormalizedDocument& document) {
  ExpandResult result;
  DocumentMatcher matcher{document};
  std::size_t cursor = 0;
  for (const auto& item : items) {
    if (const auto* generated = std::get_if<GeneratedText>(&item)) {
      if (!generated->text.empty()) {
        result.answer.segments.push_back(
            {AnswerSegment::Kind::Generated, generated->text, 0, 0});
      }
      continue;
    }
    const auto& directive = std::get<ExcerptDirective>(item);
    const auto prefix = matcher.make_needle(directive.prefix);
    std::optional<DocumentMatcher::Needle> suffix;
    if (directive.suffix) {
      suffix = matcher.make_needle(*directive.suffix);
    }

    std::size_t span_begin = std::u32string::npos;
    std::size_t span_end = 0;
    bool prefix_seen = false;
    for (const std::size_t start : {cursor, std::size_t{0}}) {
      std::size_t from = start;
      while (span_begin == std::u32string::npos) {
        const auto p = matcher.find_with_fallback(prefix, from);
        if (p.pos == std::u32string::npos) {
          break;
        }
        prefix_seen = true;
        if (!suffix) {
          span_begin = p.pos;
          span_end = p.pos + p.length;
          break;
        }
        const auto s = matcher.find_suffix(*suffix, p.pos, p.length);
        if (s.pos != std::u32string::npos) {
          span_begin = p.pos;
          span_end = s.pos + s.length;
          break;
        }
        from = p.pos + 1;  // this prefix match cannot complete; try the next
      }
      if (span_begin != std::u32string::npos || start == 0) {
        break;
      }
    }

    if (span_begin == std::u32string::npos) {
      result.status = prefix_seen ? ExpandStatus::SuffixNotFound
                                  : ExpandStatus::PrefixNotFound;
      result.detail = prefix_seen
                          ? "suffix not found after prefix: " +
                                (directive.suffix ? *directive.suffix : "")
                          : "prefix not found: " + directive.prefix;
      return result;
    }

    AnswerSegment segment;
    segment.kind = AnswerSegment::Kind::Excerpt;
    segment.text = document.original_text(span_begin, span_end);
    const auto [orig_begin, orig_end] =
        document.original_range(span_begin, span_end);
    segment.start = orig_begin;
    segment.end = orig_end;
    result.answer.segments.push_back(std::move(segment));
    cursor = span_end;
  }

  std::size_t total_points = 0;
  std::size_t excerpt_points = 0;
  for (const auto& segment : result.answer.segments) {
    result.answer.answer_text += segment.text;
    const std::size_t points = count_code_points(segment.text);
    total_points += points;
    if (segment.kind == AnswerSegment::Kind::Excerpt) {
      excerpt_points += points;
    }
  }
  result.answer.excerpt_ratio =
      total_points == 0 ? 0.0
                        : static_cast<double>(excerpt_points) /
                              static_cast<double>(total_points);
  return result;
}

RatioCheck check_excerpt_ratio(const ExpandedAnswer& answer, double min_ratio) {
  return {answer.excerpt_ratio >= min_ratio, answer.excerpt_ratio};
}

}  // namespace fineforge
