#include "fineforge/template.hpp"

namespace fineforge {
namespace {

bool all_whitespace(std::string_view text) {
  for (char c : text) {
    if (c != ' ' && c != '\t' && c != '\n' && c != '\r' && c != '\f' &&
        c != '\v') {
      return false;
    }
  }
  return true;
}

}  // namespace

TemplateBody parse_template(std::string_view raw) {
  TemplateBody body;
  std::size_t cursor = 0;
  std::size_t slot_index = 0;
  while (cursor < raw.size()) {
    const std::size_t open = raw.find(kSlotOpenTag, cursor);
    const std::size_t close = raw.find(kSlotCloseTag, cursor);
    if (close < open) {
      throw TemplateError(TemplateError::Code::UnbalancedTags,
                          "close tag without matching open tag at offset " +
                              std::to_string(close));
    }
    if (open == std::string_view::npos) {
      body.segments.push_back({false, std::string(raw.substr(cursor))});
      break;
    }
    if (open > cursor) {
      body.segments.push_back(
          {false, std::string(raw.substr(cursor, open - cursor))});
    }
    const std::size_t desc_start = open + kSlotOpenTag.size();
    const std::size_t end = raw.find(kSlotCloseTag, desc_start);
    if (end == std::string_view::npos) {
      throw TemplateError(TemplateError::Code::UnbalancedTags,
                          "open tag without matching close tag at offset " +
                              std::to_string(open));
    }
    const std::size_t inner_open = raw.find(kSlotOpenTag, desc_start);
    if (inner_open != std::string_view::npos && inner_open < end) {
      throw TemplateError(TemplateError::Code::UnbalancedTags,
                          "nested open tag at offset " +
                              std::to_string(inner_open));
    }
    std::string description(raw.substr(desc_start, end - desc_start));
    if (description.empty()) {
      throw TemplateError(TemplateError::Code::EmptySlotDescription,
                          "slot at offset " + std::to_string(open) +
                              " has an empty description");
    }
    body.segments.push_back({true, description});
    body.slots.push_back({slot_index++, std::move(description)});
    cursor = end + kSlotCloseTag.size();
  }
  return body;
}

std::string render_template(const TemplateBody& body) {
  std::string out;
  for (const auto& segment : body.segments) {
    if (segment.is_slot) {
      out += kSlotOpenTag;
      out += segment.text;
      out += kSlotCloseTag;
    } else {
      out += segment.text;
    }
  }
  return out;
}

InstructionTemplate InstructionTemplate::make(
    std::string id, std::string source_dataset, std::string template_text,
    std::string compatible_doc_description) {
  InstructionTemplate tpl;
  tpl.body = parse_template(template_text);
  tpl.id = std::move(id);
  tpl.source_dataset = std::move(source_dataset);
  tpl.template_text = std::move(template_text);
  tpl.compatible_doc_description = std::move(compatible_doc_description);
  return tpl;
}

std::string instantiate_template(const InstructionTemplate& tpl,
                                 std::span<const std::string> fills) {
  if (fills.size() != tpl.complexity()) {
    throw TemplateError(
        TemplateError::Code::ArityMismatch,
        "template " + tpl.id + " expects " + std::to_string(tpl.complexity()) +
            " fills, got " + std::to_string(fills.size()));
  }
  for (std::size_t i = 0; i < fills.size(); ++i) {
    if (all_whitespace(fills[i])) {
      throw TemplateError(TemplateError::Code::EmptyFill,
                          "fill " + std::to_string(i) + " is empty");
    }
  }
  std::string out;
  std::size_t next_fill = 0;
  for (const auto& segment : tpl.body.segments) {
    if (segment.is_slot) {
      out += fills[next_fill++];
    } else {
      out += segment.text;
    }
  }
  return out;
}

std::string template_literal_text(const TemplateBody& body) {
  std::string out;
  for (const auto& segment : body.segments) {
    if (segment.is_slot) {
      continue;
    }
    if (!out.empty()) {
      out.push_back(' ');
    }
    out += segment.text;
  }
  return out;
}

}  // namespace fineforge
