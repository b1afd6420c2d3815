#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <string>
#include <vector>

#include "fineforge/budget.hpp"
#include "fineforge/rng.hpp"
#include "fineforge/tokenizer.hpp"

using namespace fineforge;

namespace {

TrainingRecord record_of(std::uint64_t tokens, const std::string& tpl = "t") {
  TrainingRecord r;
  r.text = "x";
  r.token_count = tokens;
  r.provenance.document_id = "d";
  r.provenance.template_id = tpl;
  return r;
}

std::string random_text(DetRng& rng) {
  static const char* pieces[] = {"alpha", "beta,", "gamma.", "one",
                                 "two!",  "3.14",  "x-y",    "a_b"};
  std::string out;
  const std::size_t n = rng.next_below(30);
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0 && rng.unit() < 0.9) {
      out += " ";
    }
    out += pieces[rng.next_below(8)];
  }
  return out;
}

}  // namespace

TEST_CASE("token counting") {
  const Tokenizer word = Tokenizer::from_name("word");
  CHECK(word.count("") == 0);
  CHECK(word.count("hello world") == 2);
  CHECK(word.count("a, b.") == 4);  // words plus punctuation marks

  const Tokenizer ws = Tokenizer::from_name("whitespace");
  CHECK(ws.count("a b c") == 3);
  CHECK(ws.count("") == 0);

  CHECK_THROWS_AS(Tokenizer::from_name("bpe"), std::invalid_argument);
}

TEST_CASE("concatenation is nearly subadditive") {
  DetRng rng(8);
  const Tokenizer word = Tokenizer::from_name("word");
  for (int i = 0; i < 500; ++i) {
    const std::string a = random_text(rng);
    const std::string b = random_text(rng);
    CHECK(word.count(a + b) <= word.count(a) + word.count(b) + 1);
  }
}

TEST_CASE("chat template formatting is byte exact") {
  CHECK(format_record("A", "B") == "Instruction: A\n\nAnswer: B");
  CHECK(format_record("line1\nline2", "ans") ==
        "Instruction: line1\nline2\n\nAnswer: ans");
  CHECK_THROWS_AS(format_record("", "B"), std::invalid_argument);
  CHECK_THROWS_AS(format_record("A", ""), std::invalid_argument);
}

TEST_CASE("three forties against a hundred keeps two and carries twenty") {
  std::vector<TrainingRecord> pairs = {record_of(40, "a"), record_of(40, "b"),
                                       record_of(40, "c")};
  const auto outcome = pack_document(pairs, 100, TokenBudgetState{}, 7, "doc");
  CHECK(outcome.kept.size() == 2);
  CHECK(outcome.state.carry == 20);
}

TEST_CASE("documents without pairs do not accrue budget") {
  TokenBudgetState state;
  state.carry = 15;
  const auto outcome = pack_document({}, 500, state, 7, "doc");
  CHECK(outcome.kept.empty());
  CHECK(outcome.state.carry == 15);
}

TEST_CASE("an oversized single pair leaves the whole budget as carry") {
  std::vector<TrainingRecord> pairs = {record_of(1000)};
  TokenBudgetState state;
  state.carry = 30;
  const auto outcome = pack_document(pairs, 100, state, 7, "doc");
  CHECK(outcome.kept.empty());
  CHECK(outcome.state.carry == 130);
}

TEST_CASE("carry rolls into the next document") {
  TokenBudgetState state;
  {
    std::vector<TrainingRecord> pairs = {record_of(70)};
    const auto outcome = pack_document(pairs, 100, state, 7, "doc1");
    CHECK(outcome.kept.size() == 1);
    state = outcome.state;
    CHECK(state.carry == 30);
  }
  {
    // 110 fits only thanks to the 30 carried over.
    std::vector<TrainingRecord> pairs = {record_of(110)};
    const auto outcome = pack_document(pairs, 100, state, 7, "doc2");
    CHECK(outcome.kept.size() == 1);
    CHECK(outcome.state.carry == 20);
  }
}

TEST_CASE("budget safety and conservation over a randomized run") {
  DetRng rng(4242);
  TokenBudgetState state;
  std::uint64_t total_doc_tokens = 0;
  std::uint64_t total_kept_tokens = 0;
  for (int doc = 0; doc < 10000; ++doc) {
    const std::uint64_t doc_tokens = 50 + rng.next_below(400);
    total_doc_tokens += doc_tokens;
    std::vector<TrainingRecord> pairs;
    const std::size_t n = 1 + rng.next_below(6);
    for (std::size_t i = 0; i < n; ++i) {
      pairs.push_back(
          record_of(20 + rng.next_below(200), "t" + std::to_string(i)));
    }
    const std::uint64_t budget = doc_tokens + state.carry;
    const auto outcome = pack_document(pairs, doc_tokens, state, 99,
                                       "doc" + std::to_string(doc));
    std::uint64_t kept = 0;
    for (const auto& record : outcome.kept) {
      kept += record.token_count;
    }
    CHECK(kept <= budget);
    CHECK(outcome.state.carry == budget - kept);
    total_kept_tokens += kept;
    state = outcome.state;
  }
  CHECK(total_doc_tokens == total_kept_tokens + state.carry);
}

TEST_CASE("six pairs of a third of the document each keep about three") {
  DetRng rng(31415);
  TokenBudgetState state;
  std::uint64_t kept_total = 0;
  const int docs = 4000;
  for (int doc = 0; doc < docs; ++doc) {
    const std::uint64_t doc_tokens = 240 + rng.next_below(120);
    std::vector<TrainingRecord> pairs;
    for (int i = 0; i < 6; ++i) {
      // Around a third of the document, with spread.
      const auto size = static_cast<std::uint64_t>(
          static_cast<double>(doc_tokens) * (0.23 + rng.unit() * 0.2));
      pairs.push_back(record_of(size, "t" + std::to_string(i)));
    }
    const auto outcome = pack_document(pairs, doc_tokens, state, 1234,
                                       "doc" + std::to_string(doc));
    kept_total += outcome.kept.size();
    state = outcome.state;
  }
  const double mean_kept = static_cast<double>(kept_total) / docs;
  CHECK(mean_kept >= 2.5);
  CHECK(mean_kept <= 3.5);
}

TEST_CASE("pack order is deterministic under a fixed seed") {
  std::vector<TrainingRecord> pairs;
  for (int i = 0; i < 8; ++i) {
    pairs.push_back(record_of(25, "t" + std::to_string(i)));
  }
  const auto a = pack_document(pairs, 100, TokenBudgetState{}, 5, "doc");
  const auto b = pack_document(pairs, 100, TokenBudgetState{}, 5, "doc");
  REQUIRE(a.kept.size() == b.kept.size());
  for (std::size_t i = 0; i < a.kept.size(); ++i) {
    CHECK(a.kept[i].provenance.template_id == b.kept[i].provenance.template_id);
  }
  const auto c = pack_document(pairs, 100, TokenBudgetState{}, 6, "doc");
  REQUIRE(c.kept.size() == a.kept.size());
  bool identical = true;
  for (std::size_t i = 0; i < a.kept.size(); ++i) {
    identical = identical && a.kept[i].provenance.template_id ==
                                 c.kept[i].provenance.template_id;
  }
  CHECK_FALSE(identical);
}
