#include "fineforge/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fineforge/rng.hpp"

namespace fineforge {

int complexity_bucket(std::size_t complexity) {
  return complexity >= 10 ? 10 : static_cast<int>(complexity);
}

std::string bucket_label(int bucket) {
  return bucket >= 10 ? "10+" : std::to_string(bucket);
}

int bucket_from_label(std::string_view label) {
  if (label == "10+") {
    return 10;
  }
  if (label.size() == 1 && label[0] >= '0' && label[0] <= '9') {
    return label[0] - '0';
  }
  return -1;
}

void ComplexityDistribution::validate() const {
  double sum = 0.0;
  for (double p : probability) {
    if (p < 0.0) {
      throw std::invalid_argument("bucket probabilities must be >= 0");
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw std::invalid_argument("bucket probabilities must sum to 1, got " +
                                std::to_string(sum));
  }
}

ComplexityDistribution estimate_distribution(
    std::span<const std::size_t> complexities) {
  if (complexities.empty()) {
    throw std::invalid_argument("cannot estimate a distribution from nothing");
  }
  ComplexityDistribution dist;
  for (std::size_t c : complexities) {
    dist.probability[complexity_bucket(c)] += 1.0;
  }
  const double total = static_cast<double>(complexities.size());
  for (double& p : dist.probability) {
    p /= total;
  }
  return dist;
}

WeightResult compute_weights(std::span<const PoolCandidate> pool,
                             const ComplexityDistribution& target) {
  if (pool.empty()) {
    throw std::invalid_argument("cannot weight an empty pool");
  }
  std::array<double, kComplexityBuckets> pool_freq{};
  for (const auto& candidate : pool) {
    pool_freq[complexity_bucket(candidate.complexity)] += 1.0;
  }
  for (double& f : pool_freq) {
    f /= static_cast<double>(pool.size());
  }

  WeightResult result;
  result.weights.resize(pool.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const int bucket = complexity_bucket(pool[i].complexity);
    result.weights[i] = target.probability[bucket] / pool_freq[bucket];
    sum += result.weights[i];
  }
  if (!(sum > 0.0)) {
    // Target mass lives entirely outside the pool; fall back to uniform.
    result.degenerate_target = true;
    const double uniform = 1.0 / static_cast<double>(pool.size());
    std::fill(result.weights.begin(), result.weights.end(), uniform);
    return result;
  }
  for (double& w : result.weights) {
    w /= sum;
  }
  return result;
}

std::vector<PoolCandidate> sample_candidates(std::vector<PoolCandidate> pool,
                                             std::vector<double> weights,
                                             const SamplerConfig& config,
                                             std::string_view document_id) {
  if (weights.size() != pool.size()) {
    throw std::invalid_argument("weights are not aligned with the pool");
  }
  if (config.picks_per_document < 1) {
    throw std::invalid_argument("picks_per_document must be >= 1");
  }

  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return pool[a].match.template_id < pool[b].match.template_id;
  });

  // Weighted sampling without replacement: each item draws the key
  // u^(1/w) and the largest keys win (Efraimidis-Spirakis). Zero-weight
  // items key to 0 and are only returned once positive weights run out.
  DetRng rng = record_rng(config.seed, "sample", document_id);
  std::vector<std::pair<double, std::size_t>> keyed;
  keyed.reserve(order.size());
  for (std::size_t idx : order) {
    const double u = rng.unit();
    const double w = weights[idx];
    const double key = w > 0.0 ? std::pow(u, 1.0 / w) : 0.0;
    keyed.emplace_back(key, idx);
  }
  std::sort(keyed.begin(), keyed.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) {
      return a.first > b.first;
    }
    return pool[a.second].match.template_id < pool[b.second].match.template_id;
  });

  const std::size_t picks =
      std::min(pool.size(), static_cast<std::size_t>(config.picks_per_document));
  std::vector<PoolCandidate> selected;
  selected.reserve(picks);
  for (std::size_t i = 0; i < picks; ++i) {
    selected.push_back(std::move(pool[keyed[i].second]));
  }
  return selected;
}

}  // namespace fineforge
