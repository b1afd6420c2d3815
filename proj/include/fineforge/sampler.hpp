#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fineforge/match_index.hpp"

namespace fineforge {

// Complexity buckets: slot counts 0..9 individually, everything at or above
// 10 in one "10+" bucket.
inline constexpr int kComplexityBuckets = 11;

int complexity_bucket(std::size_t complexity);
std::string bucket_label(int bucket);
int bucket_from_label(std::string_view label);  // -1 when unknown

struct ComplexityDistribution {
  std::array<double, kComplexityBuckets> probability{};

  // Probabilities must be non-negative and sum to 1 within 1e-9.
  void validate() const;
};

struct SamplerConfig {
  ComplexityDistribution target;
  int picks_per_document = 6;
  std::uint64_t seed = 0;
};

// Empirical bucket frequencies of a template bank.
ComplexityDistribution estimate_distribution(
    std::span<const std::size_t> complexities);

struct PoolCandidate {
  CandidateMatch match;
  std::size_t complexity = 0;
};

struct WeightResult {
  std::vector<double> weights;  // aligned with the pool, sum to 1
  // Target mass fell entirely on buckets missing from the pool; weights are
  // uniform and the caller should surface a warning.
  bool degenerate_target = false;
};

// Importance weights proportional to target(bucket) / pool_frequency(bucket),
// renormalized over the pool.
WeightResult compute_weights(std::span<const PoolCandidate> pool,
                             const ComplexityDistribution& target);

// Weighted sampling without replacement by template id, at most
// picks_per_document items, returned in weight-biased order. The pool is
// sorted by template id before any randomness is consumed, so permuting the
// input changes nothing; the RNG stream is a pure function of
// (config.seed, document_id).
std::vector<PoolCandidate> sample_candidates(std::vector<PoolCandidate> pool,
                                             std::vector<double> weights,
                                             const SamplerConfig& config,
                                             std::string_view document_id);

}  // namespace fineforge
