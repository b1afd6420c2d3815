#include "fineforge/decontaminate.hpp"

#include <stdexcept>
#include <string>

#include "fineforge/rng.hpp"
#include "fineforge/text.hpp"

namespace fineforge {
namespace {

std::uint64_t ngram_hash(const std::vector<std::string>& tokens,
                         std::size_t start, std::size_t n) {
  std::uint64_t state = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string& tok = tokens[start + i];
    state ^= stable_hash64({tok});
    state *= 0x100000001b3ULL;
  }
  return state;
}

}  // namespace

BenchmarkNgramSet::BenchmarkNgramSet(std::size_t n) : n_(n) {
  if (n_ < 1) {
    throw std::invalid_argument("n-gram size must be >= 1");
  }
}

void BenchmarkNgramSet::add_text(std::string_view text) {
  const auto tokens = alnum_lower_tokens(text);
  if (tokens.size() < n_) {
    return;
  }
  for (std::size_t i = 0; i + n_ <= tokens.size(); ++i) {
    hashes_.insert(ngram_hash(tokens, i, n_));
  }
}

bool BenchmarkNgramSet::contaminated(std::string_view text) const {
  if (hashes_.empty()) {
    return false;
  }
  const auto tokens = alnum_lower_tokens(text);
  if (tokens.size() < n_) {
    return false;
  }
  for (std::size_t i = 0; i + n_ <= tokens.size(); ++i) {
    if (hashes_.count(ngram_hash(tokens, i, n_)) > 0) {
      return true;
    }
  }
  return false;
}

DecontaminationResult decontaminate(std::vector<InstructionTemplate> templates,
                                    const BenchmarkNgramSet& benchmark) {
  DecontaminationResult result;
  result.kept.reserve(templates.size());
  for (auto& tpl : templates) {
    if (benchmark.contaminated(template_literal_text(tpl.body))) {
      ++result.dropped;
    } else {
      result.kept.push_back(std::move(tpl));
    }
  }
  return result;
}

}  // namespace fineforge
