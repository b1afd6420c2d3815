#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <string>
#include <vector>

#include "fineforge/decontaminate.hpp"
#include "fineforge/rng.hpp"
#include "fineforge/template.hpp"

using namespace fineforge;

namespace {

InstructionTemplate make_tpl(const std::string& text) {
  return InstructionTemplate::make("t", "test", text, "desc");
}

// Random template text with well-formed slots, for round-trip checks.
std::string random_template_text(DetRng& rng, int& slot_count) {
  static const char* words[] = {"alpha", "beta",  "gamma", "delta",
                                "<",     ">",     "</x>",  "tag",
                                "query", "about", "the",   "topic"};
  std::string out;
  slot_count = 0;
  const int pieces = 1 + static_cast<int>(rng.next_below(12));
  for (int i = 0; i < pieces; ++i) {
    if (rng.unit() < 0.3) {
      out += "<fi>slot ";
      out += std::to_string(slot_count);
      out += "</fi>";
      ++slot_count;
    } else {
      out += words[rng.next_below(12)];
      out += " ";
    }
  }
  return out;
}

}  // namespace

TEST_CASE("parses a single slot") {
  const auto body = parse_template("Give me a summary of <fi>topic</fi>");
  REQUIRE(body.slots.size() == 1);
  CHECK(body.slots[0].description == "topic");
  CHECK(body.slots[0].index == 0);
  CHECK(render_template(body) == "Give me a summary of <fi>topic</fi>");
}

TEST_CASE("plain text has no slots") {
  const auto body = parse_template("plain text, no tags");
  CHECK(body.slots.empty());
  CHECK(render_template(body) == "plain text, no tags");
}

TEST_CASE("parses two slots in order") {
  const auto body = parse_template(
      "Give me free apps that convert a file from <fi>format #1</fi> to "
      "<fi>format #2</fi>");
  REQUIRE(body.slots.size() == 2);
  CHECK(body.slots[0].description == "format #1");
  CHECK(body.slots[1].description == "format #2");
  CHECK(body.slots[0].index == 0);
  CHECK(body.slots[1].index == 1);
}

TEST_CASE("other angle brackets are literal") {
  const auto body = parse_template("compare <b>bold</b> to <i>italic</i>");
  CHECK(body.slots.empty());
  CHECK(render_template(body) == "compare <b>bold</b> to <i>italic</i>");
}

TEST_CASE("tag errors") {
  CHECK_THROWS_WITH_AS(parse_template("open <fi>never closed"),
                       doctest::Contains("open tag"), TemplateError);
  CHECK_THROWS_AS(parse_template("closed </fi> without open"), TemplateError);
  CHECK_THROWS_AS(parse_template("<fi>outer <fi>inner</fi></fi>"),
                  TemplateError);
  CHECK_THROWS_AS(parse_template("empty <fi></fi> slot"), TemplateError);

  try {
    parse_template("<fi>a<fi>b</fi>");
    FAIL("expected TemplateError");
  } catch (const TemplateError& e) {
    CHECK(e.code() == TemplateError::Code::UnbalancedTags);
  }
}

TEST_CASE("round trip is byte identical over random well-formed templates") {
  DetRng rng(2024);
  for (int i = 0; i < 500; ++i) {
    int slots = 0;
    const std::string text = random_template_text(rng, slots);
    const auto body = parse_template(text);
    CHECK(render_template(body) == text);
    CHECK(body.slots.size() == static_cast<std::size_t>(slots));
  }
}

TEST_CASE("complexity equals number of open tags in well-formed input") {
  const auto body =
      parse_template("a <fi>x</fi> b <fi>y</fi> c <fi>z</fi>");
  CHECK(body.slots.size() == 3);
}

TEST_CASE("instantiation substitutes fills in order") {
  const auto tpl = make_tpl("Give me a summary of <fi>topic</fi>");
  const std::vector<std::string> fills = {"the principle of relativity"};
  CHECK(instantiate_template(tpl, fills) ==
        "Give me a summary of the principle of relativity");
}

TEST_CASE("zero-slot instantiation is the identity") {
  const auto tpl = make_tpl("just a plain instruction");
  CHECK(instantiate_template(tpl, {}) == "just a plain instruction");
}

TEST_CASE("instantiation arity and emptiness are enforced") {
  const auto tpl = make_tpl("from <fi>a</fi> to <fi>b</fi>");
  const std::vector<std::string> one = {"x"};
  try {
    instantiate_template(tpl, one);
    FAIL("expected TemplateError");
  } catch (const TemplateError& e) {
    CHECK(e.code() == TemplateError::Code::ArityMismatch);
  }
  const std::vector<std::string> blank = {"x", "   "};
  try {
    instantiate_template(tpl, blank);
    FAIL("expected TemplateError");
  } catch (const TemplateError& e) {
    CHECK(e.code() == TemplateError::Code::EmptyFill);
  }
}

TEST_CASE("instantiated length identity") {
  DetRng rng(99);
  for (int i = 0; i < 200; ++i) {
    int slot_count = 0;
    const std::string text = random_template_text(rng, slot_count);
    const auto tpl = make_tpl(text);
    std::vector<std::string> fills;
    std::size_t fill_len = 0;
    for (int s = 0; s < slot_count; ++s) {
      fills.push_back("fill" + std::to_string(rng.next_below(1000)));
      fill_len += fills.back().size();
    }
    std::size_t tag_len = 0;
    for (const auto& slot : tpl.body.slots) {
      tag_len += slot.description.size() + 9;  // <fi> + </fi>
    }
    const std::string result = instantiate_template(tpl, fills);
    CHECK(result.size() == text.size() + fill_len - tag_len);
    CHECK(result.find("<fi>") == std::string::npos);
  }
}

TEST_CASE("decontamination drops n-gram overlap with the benchmark") {
  BenchmarkNgramSet benchmark(3);
  benchmark.add_text("what is 2+2?");

  std::vector<InstructionTemplate> templates;
  templates.push_back(make_tpl("what is 2+2"));
  templates.push_back(make_tpl("a totally different question here"));

  auto result = decontaminate(std::move(templates), benchmark);
  REQUIRE(result.kept.size() == 1);
  CHECK(result.dropped == 1);
  CHECK(result.kept[0].template_text == "a totally different question here");
}

TEST_CASE("empty benchmark corpus passes everything through") {
  BenchmarkNgramSet benchmark(3);
  std::vector<InstructionTemplate> templates;
  templates.push_back(make_tpl("anything at all goes right through"));
  auto result = decontaminate(std::move(templates), benchmark);
  CHECK(result.kept.size() == 1);
  CHECK(result.dropped == 0);
}

TEST_CASE("templates shorter than n tokens are kept") {
  BenchmarkNgramSet benchmark(8);
  benchmark.add_text("one two three four five six seven eight nine ten");
  std::vector<InstructionTemplate> templates;
  templates.push_back(make_tpl("one two three"));
  auto result = decontaminate(std::move(templates), benchmark);
  CHECK(result.kept.size() == 1);
}

TEST_CASE("only template literals are checked, not slot descriptions") {
  BenchmarkNgramSet benchmark(3);
  benchmark.add_text("secret leaked benchmark answer");
  std::vector<InstructionTemplate> templates;
  templates.push_back(
      make_tpl("tell me about <fi>secret leaked benchmark answer</fi> today"));
  auto result = decontaminate(std::move(templates), benchmark);
  CHECK(result.kept.size() == 1);
}

TEST_CASE("decontamination is idempotent") {
  BenchmarkNgramSet benchmark(2);
  benchmark.add_text("alpha beta gamma");
  std::vector<InstructionTemplate> templates;
  templates.push_back(make_tpl("alpha beta something"));
  templates.push_back(make_tpl("independent text entirely"));
  templates.push_back(make_tpl("gamma alpha beta"));

  auto once = decontaminate(templates, benchmark);
  auto twice = decontaminate(once.kept, benchmark);
  CHECK(twice.dropped == 0);
  REQUIRE(twice.kept.size() == once.kept.size());
  for (std::size_t i = 0; i < once.kept.size(); ++i) {
    CHECK(twice.kept[i].template_text == once.kept[i].template_text);
  }
}
