#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fineforge {

struct PowerFit {
  double a = 0.0;   // coefficient of y = a * x^b
  double b = 0.0;   // exponent
  double r2 = 0.0;  // coefficient of determination, log-log space
};

// Least squares over (ln x, ln y). All points must be strictly positive and
// there must be at least two of them with distinct x. A constant y yields the
// exact fit a = y, b = 0.
PowerFit fit_power_law(std::span<const std::pair<double, double>> points);

struct UsageConcentration {
  std::uint64_t total_instructions = 0;
  std::uint64_t unique_templates = 0;
  double max_share = 0.0;
  std::map<std::string, std::uint64_t> uses_per_template;
};

// Streaming counter with associative merge, so shards can be tallied
// independently and combined.
class UsageAccumulator {
 public:
  void add(std::string_view template_id);
  void merge(const UsageAccumulator& other);
  UsageConcentration finish() const;  // throws on an empty stream

 private:
  std::map<std::string, std::uint64_t> counts_;
  std::uint64_t total_ = 0;
};

UsageConcentration usage_stats(std::span<const std::string> template_ids);

// Streaming Pearson correlation accumulator (counts and raw moments merge
// associatively across shards).
class PearsonAccumulator {
 public:
  void add(double x, double y);
  void merge(const PearsonAccumulator& other);
  std::uint64_t count() const { return n_; }

  // Throws when fewer than two points or either variable has zero variance.
  double correlation() const;

 private:
  std::uint64_t n_ = 0;
  double sum_x_ = 0.0, sum_y_ = 0.0;
  double sum_xx_ = 0.0, sum_yy_ = 0.0, sum_xy_ = 0.0;
};

struct ChunkPositionStats {
  double pearson_r = 0.0;
  std::map<int, double> mean_position_per_chunk;
};

// Pearson correlation between chunk index and excerpt relative position,
// plus the mean position per chunk.
ChunkPositionStats chunk_position_correlation(
    std::span<const std::pair<int, double>> samples);

}  // namespace fineforge
