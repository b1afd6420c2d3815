#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace fineforge {

// Unused token allowance carried across documents.
struct TokenBudgetState {
  std::uint64_t carry = 0;
};

struct RecordProvenance {
  std::string document_id;
  std::string template_id;
  int chunk_index = 0;
  int judge_score = 0;
  double excerpt_ratio = 0.0;
};

struct TrainingRecord {
  std::string text;
  std::uint64_t token_count = 0;
  RecordProvenance provenance;
};

// "Instruction: <instruction>\n\nAnswer: <answer>", byte-exact, no escaping.
std::string format_record(std::string_view instruction,
                          std::string_view answer);

struct PackOutcome {
  std::vector<TrainingRecord> kept;
  TokenBudgetState state;
};

// Budget B = doc_tokens + carried tokens. Pairs are visited in a seeded
// random order and kept when they fit the remaining budget; leftover budget
// carries forward. Documents that arrive with no pairs at all do not accrue
// budget: their carry passes through unchanged.
PackOutcome pack_document(std::vector<TrainingRecord> pairs,
                          std::uint64_t doc_tokens, TokenBudgetState state,
                          std::uint64_t seed, std::string_view document_id);

}  // namespace fineforge
