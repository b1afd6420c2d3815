#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fineforge {

class TemplateError : public std::runtime_error {
 public:
  enum class Code {
    UnbalancedTags,
    EmptySlotDescription,
    ArityMismatch,
    EmptyFill,
  };

  TemplateError(Code code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Code code() const { return code_; }

 private:
  Code code_;
};

// One fillable slot: its ordinal within the template and the natural-language
// description found between the slot tags.
struct SlotSpec {
  std::size_t index = 0;
  std::string description;
};

// Parsed template text as alternating literal and slot segments. Rendering
// concatenates the segments back into the original text byte for byte.
struct TemplateBody {
  struct Segment {
    bool is_slot = false;
    std::string text;  // literal text, or the slot description
  };

  std::vector<Segment> segments;
  std::vector<SlotSpec> slots;
};

inline constexpr std::string_view kSlotOpenTag = "<fi>";
inline constexpr std::string_view kSlotCloseTag = "</fi>";

// Tags are literal, case-sensitive and may not nest; any other angle-bracket
// text is ordinary content.
TemplateBody parse_template(std::string_view raw);
std::string render_template(const TemplateBody& body);

struct InstructionTemplate {
  std::string id;
  std::string source_dataset;
  std::string template_text;
  std::string compatible_doc_description;
  TemplateBody body;

  std::size_t complexity() const { return body.slots.size(); }

  static InstructionTemplate make(std::string id, std::string source_dataset,
                                  std::string template_text,
                                  std::string compatible_doc_description);
};

// Replaces each slot with its fill, in order. Fills are used verbatim but must
// be non-empty after trimming whitespace.
std::string instantiate_template(const InstructionTemplate& tpl,
                                 std::span<const std::string> fills);

// Literal template content with the slots removed; literal segments are
// joined with a single space so words never merge across a removed slot.
std::string template_literal_text(const TemplateBody& body);

}  // namespace fineforge
