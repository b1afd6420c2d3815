#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "fineforge/template.hpp"

namespace fineforge {

// Token n-gram overlap check against a benchmark corpus. Tokens are
// lowercased alphanumeric words (punctuation separates); n-grams are hashed,
// so membership is probabilistic only in the negligible 64-bit collision
// sense.
class BenchmarkNgramSet {
 public:
  explicit BenchmarkNgramSet(std::size_t n = 8);

  void add_text(std::string_view text);

  // True when the text shares at least one token n-gram with the corpus.
  // Texts with fewer than n tokens can never overlap.
  bool contaminated(std::string_view text) const;

  std::size_t ngram_size() const { return n_; }
  std::size_t size() const { return hashes_.size(); }
  bool empty() const { return hashes_.empty(); }

 private:
  std::size_t n_;
  std::unordered_set<std::uint64_t> hashes_;
};

struct DecontaminationResult {
  std::vector<InstructionTemplate> kept;
  std::size_t dropped = 0;
};

// Drops templates whose literal text (slots removed) overlaps the benchmark
// corpus. Idempotent; an empty corpus passes everything through.
DecontaminationResult decontaminate(std::vector<InstructionTemplate> templates,
                                    const BenchmarkNgramSet& benchmark);

}  // namespace fineforge
