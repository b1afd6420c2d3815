#include "fineforge/analytics.hpp"

#include <cmath>

namespace fineforge {

PowerFit fit_power_law(std::span<const std::pair<double, double>> points) {
  if (points.size() < 2) {
    throw std::invalid_argument("power fit needs at least two points");
  }
  bool constant_y = true;
  for (const auto& [x, y] : points) {
    if (!(x > 0.0) || !(y > 0.0)) {
      throw std::invalid_argument("power fit points must be positive");
    }
    if (y != points.front().second) {
      constant_y = false;
    }
  }
  if (constant_y) {
    return {points.front().second, 0.0, 1.0};
  }

  const double n = static_cast<double>(points.size());
  double sum_x = 0.0, sum_y = 0.0, sum_xx = 0.0, sum_xy = 0.0;
  for (const auto& [x, y] : points) {
    const double lx = std::log(x);
    const double ly = std::log(y);
    sum_x += lx;
    sum_y += ly;
    sum_xx += lx * lx;
    sum_xy += lx * ly;
  }
  const double denom = n * sum_xx - sum_x * sum_x;
  if (denom == 0.0) {
    throw std::invalid_argument("power fit needs at least two distinct x");
  }
  const double slope = (n * sum_xy - sum_x * sum_y) / denom;
  const double intercept = (sum_y - slope * sum_x) / n;

  const double mean_y = sum_y / n;
  double ss_res = 0.0, ss_tot = 0.0;
  for (const auto& [x, y] : points) {
    const double ly = std::log(y);
    const double predicted = intercept + slope * std::log(x);
    ss_res += (ly - predicted) * (ly - predicted);
    ss_tot += (ly - mean_y) * (ly - mean_y);
  }

  PowerFit fit;
  fit.a = std::exp(intercept);
  fit.b = slope;
  fit.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
  return fit;
}

void UsageAccumulator::add(std::string_view template_id) {
  ++counts_[std::string(template_id)];
  ++total_;
}

void UsageAccumulator::merge(const UsageAccumulator& other) {
  for (const auto& [id, count] : other.counts_) {
    counts_[id] += count;
  }
  total_ += other.total_;
}

UsageConcentration UsageAccumulator::finish() const {
  if (total_ == 0) {
    throw std::invalid_argument("usage stats over an empty stream");
  }
  UsageConcentration out;
  out.total_instructions = total_;
  out.unique_templates = counts_.size();
  out.uses_per_template = counts_;
  std::uint64_t max_count = 0;
  for (const auto& [id, count] : counts_) {
    max_count = std::max(max_count, count);
  }
  out.max_share =
      static_cast<double>(max_count) / static_cast<double>(total_);
  return out;
}

UsageConcentration usage_stats(std::span<const std::string> template_ids) {
  UsageAccumulator acc;
  for (const auto& id : template_ids) {
    acc.add(id);
  }
  return acc.finish();
}

void PearsonAccumulator::add(double x, double y) {
  ++n_;
  sum_x_ += x;
  sum_y_ += y;
  sum_xx_ += x * x;
  sum_yy_ += y * y;
  sum_xy_ += x * y;
}

void PearsonAccumulator::merge(const PearsonAccumulator& other) {
  n_ += other.n_;
  sum_x_ += other.sum_x_;
  sum_y_ += other.sum_y_;
  sum_xx_ += other.sum_xx_;
  sum_yy_ += other.sum_yy_;
  sum_xy_ += other.sum_xy_;
}

double PearsonAccumulator::correlation() const {
  if (n_ < 2) {
    throw std::invalid_argument("correlation needs at least two points");
  }
  const double n = static_cast<double>(n_);
  const double cov = sum_xy_ - sum_x_ * sum_y_ / n;
  const double var_x = sum_xx_ - sum_x_ * sum_x_ / n;
  const double var_y = sum_yy_ - sum_y_ * sum_y_ / n;
  if (!(var_x > 0.0) || !(var_y > 0.0)) {
    throw std::invalid_argument("correlation undefined at zero variance");
  }
  return cov / std::sqrt(var_x * var_y);
}

ChunkPositionStats chunk_position_correlation(
    std::span<const std::pair<int, double>> samples) {
  PearsonAccumulator acc;
  std::map<int, std::pair<double, std::uint64_t>> per_chunk;
  for (const auto& [chunk, position] : samples) {
    acc.add(static_cast<double>(chunk), position);
    auto& [sum, count] = per_chunk[chunk];
    sum += position;
    ++count;
  }
  ChunkPositionStats stats;
  stats.pearson_r = acc.correlation();
  for (const auto& [chunk, entry] : per_chunk) {
    stats.mean_position_per_chunk[chunk] =
        entry.first / static_cast<double>(entry.second);
  }
  return stats;
}

}  // namespace fineforge
