#include "fineforge/budget.hpp"

#include <numeric>
#include <stdexcept>

#include "fineforge/rng.hpp"

namespace fineforge {

std::string format_record(std::string_view instruction,
                          std::string_view answer) {
  if (instruction.empty() || answer.empty()) {
    throw std::invalid_argument(
        "instruction and answer must both be non-empty");
  }
  std::string out;
  out.reserve(instruction.size() + answer.size() + 22);
  out += "Instruction: ";
  out += instruction;
  out += "\n\nAnswer: ";
  out += answer;
  return out;
}

PackOutcome pack_document(std::vector<TrainingRecord> pairs,
                          std::uint64_t doc_tokens, TokenBudgetState state,
                          std::uint64_t seed, std::string_view document_id) {
  PackOutcome outcome;
  if (pairs.empty()) {
    outcome.state = state;
    return outcome;
  }

  std::uint64_t remaining = doc_tokens + state.carry;

  // Fisher-Yates visit order from the per-document stream.
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  DetRng rng = record_rng(seed, "pack", document_id);
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.next_below(i));
    std::swap(order[i - 1], order[j]);
  }

  for (std::size_t idx : order) {
    if (pairs[idx].token_count <= remaining) {
      remaining -= pairs[idx].token_count;
      outcome.kept.push_back(std::move(pairs[idx]));
    }
  }
  outcome.state.carry = remaining;
  return outcome;
}

}  // namespace fineforge
