#include "fineforge/pooling.hpp"

#include <cmath>
#include <limits>

namespace fineforge {
namespace {

void check_input(const TokenMatrix& tokens) {
  if (tokens.rows == 0 || tokens.dim == 0) {
    throw PoolingError(PoolingError::Code::BadInput, "empty token matrix");
  }
  if (tokens.data.size() != tokens.rows * tokens.dim ||
      tokens.mask.size() != tokens.rows) {
    throw PoolingError(PoolingError::Code::BadInput,
                       "token matrix shape mismatch");
  }
}

std::size_t attended_or_throw(const TokenMatrix& tokens) {
  const std::size_t attended = tokens.attended_count();
  if (attended == 0) {
    throw PoolingError(PoolingError::Code::AllMasked,
                       "attention mask excludes every token");
  }
  return attended;
}

// Unnormalized kernel exponents for chunk k, shifted by the smallest exponent
// over attended tokens so at least one kernel value is exactly 1 and extreme
// widths cannot underflow the whole row to zero.
std::vector<double> kernel_values(const TokenMatrix& tokens,
                                  const PoolingConfig& config, int k,
                                  std::size_t effective_len) {
  const double center = chunk_center(effective_len, config.chunks, k);
  const double scale = config.sigma * static_cast<double>(effective_len);
  std::vector<double> exponents(tokens.rows, 0.0);
  double min_exponent = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < tokens.rows; ++t) {
    if (tokens.mask[t] == 0) {
      continue;
    }
    const double z = (static_cast<double>(t + 1) - center) / scale;
    exponents[t] = 0.5 * z * z;
    if (exponents[t] < min_exponent) {
      min_exponent = exponents[t];
    }
  }
  std::vector<double> values(tokens.rows, 0.0);
  for (std::size_t t = 0; t < tokens.rows; ++t) {
    if (tokens.mask[t] != 0) {
      values[t] = std::exp(min_exponent - exponents[t]);
    }
  }
  return values;
}

}  // namespace

std::size_t TokenMatrix::attended_count() const {
  std::size_t n = 0;
  for (std::uint8_t m : mask) {
    n += m != 0 ? 1 : 0;
  }
  return n;
}

TokenMatrix TokenMatrix::zeros(std::size_t rows, std::size_t dim) {
  TokenMatrix tm;
  tm.rows = rows;
  tm.dim = dim;
  tm.data.assign(rows * dim, 0.0);
  tm.mask.assign(rows, 1);
  return tm;
}

void PoolingConfig::validate() const {
  if (chunks < 1) {
    throw PoolingError(PoolingError::Code::BadInput, "chunks must be >= 1");
  }
  if (!(sigma > 0.0)) {
    throw PoolingError(PoolingError::Code::BadInput, "sigma must be > 0");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw PoolingError(PoolingError::Code::BadInput,
                       "alpha must be in [0, 1]");
  }
  if (!(hard_mask_threshold > 0.0 && hard_mask_threshold <= 1.0)) {
    throw PoolingError(PoolingError::Code::BadInput,
                       "hard mask threshold must be in (0, 1]");
  }
}

const std::vector<double>& PooledEmbeddingSet::vector_at(
    std::size_t chunk_index) const {
  if (chunk_index == 0) {
    return global;
  }
  return chunks.at(chunk_index - 1);
}

double chunk_center(std::size_t effective_len, int total_chunks, int k) {
  const double rho =
      static_cast<double>(k) / (static_cast<double>(total_chunks) + 1.0);
  return rho * static_cast<double>(effective_len);
}

std::vector<double> global_mean(const TokenMatrix& tokens) {
  check_input(tokens);
  const std::size_t attended = attended_or_throw(tokens);
  std::vector<double> mean(tokens.dim, 0.0);
  for (std::size_t t = 0; t < tokens.rows; ++t) {
    if (tokens.mask[t] == 0) {
      continue;
    }
    for (std::size_t i = 0; i < tokens.dim; ++i) {
      mean[i] += tokens.at(t, i);
    }
  }
  const double count = static_cast<double>(attended);
  for (double& value : mean) {
    value /= count;
  }
  return mean;
}

std::vector<double> gaussian_weights(const TokenMatrix& tokens,
                                     const PoolingConfig& config, int k) {
  check_input(tokens);
  config.validate();
  if (k < 1 || k > config.chunks) {
    throw PoolingError(PoolingError::Code::BadInput,
                       "chunk index out of range: " + std::to_string(k));
  }
  const std::size_t effective_len = attended_or_throw(tokens);
  std::vector<double> weights = kernel_values(tokens, config, k, effective_len);
  double sum = 0.0;
  for (double w : weights) {
    sum += w;
  }
  for (double& w : weights) {
    w /= sum;
  }
  return weights;
}

PooledEmbeddingSet pool(const TokenMatrix& tokens,
                        const PoolingConfig& config) {
  check_input(tokens);
  config.validate();
  const std::size_t effective_len = attended_or_throw(tokens);

  PooledEmbeddingSet out;
  out.dim = tokens.dim;
  out.global = global_mean(tokens);
  out.chunks.reserve(static_cast<std::size_t>(config.chunks));
  out.centers.reserve(static_cast<std::size_t>(config.chunks));
  for (int k = 1; k <= config.chunks; ++k) {
    out.centers.push_back(chunk_center(effective_len, config.chunks, k));
    const std::vector<double> kernel =
        kernel_values(tokens, config, k, effective_len);
    double kernel_sum = 0.0;
    for (double g : kernel) {
      kernel_sum += g;
    }
    std::vector<double> chunk(tokens.dim, 0.0);
    for (std::size_t t = 0; t < tokens.rows; ++t) {
      if (kernel[t] == 0.0) {
        continue;
      }
      for (std::size_t i = 0; i < tokens.dim; ++i) {
        chunk[i] += kernel[t] * tokens.at(t, i);
      }
    }
    for (std::size_t i = 0; i < tokens.dim; ++i) {
      chunk[i] /= kernel_sum;
      chunk[i] = (1.0 - config.alpha) * out.global[i] + config.alpha * chunk[i];
    }
    out.chunks.push_back(std::move(chunk));
  }
  return out;
}

std::vector<std::uint8_t> hard_chunk_mask(const TokenMatrix& tokens,
                                          const PoolingConfig& config, int k) {
  check_input(tokens);
  config.validate();
  if (k < 1 || k > config.chunks) {
    throw PoolingError(PoolingError::Code::BadInput,
                       "chunk index out of range: " + std::to_string(k));
  }
  const std::size_t effective_len = attended_or_throw(tokens);
  const double center = chunk_center(effective_len, config.chunks, k);
  const double radius = config.sigma * static_cast<double>(effective_len) *
                        std::sqrt(2.0 * std::log(1.0 / config.hard_mask_threshold));
  std::vector<std::uint8_t> out(tokens.rows, 0);
  bool any = false;
  for (std::size_t t = 0; t < tokens.rows; ++t) {
    if (tokens.mask[t] == 0) {
      continue;
    }
    if (std::abs(static_cast<double>(t + 1) - center) <= radius) {
      out[t] = 1;
      any = true;
    }
  }
  if (!any) {
    throw PoolingError(PoolingError::Code::EmptyHardMask,
                       "no attended token falls inside the chunk window");
  }
  return out;
}

std::vector<std::uint8_t> hard_chunk_mask_or_nearest(
    const TokenMatrix& tokens, const PoolingConfig& config, int k) {
  try {
    return hard_chunk_mask(tokens, config, k);
  } catch (const PoolingError& e) {
    if (e.code() != PoolingError::Code::EmptyHardMask) {
      throw;
    }
  }
  const std::size_t effective_len = tokens.attended_count();
  const double center = chunk_center(effective_len, config.chunks, k);
  std::size_t nearest = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < tokens.rows; ++t) {
    if (tokens.mask[t] == 0) {
      continue;
    }
    const double distance = std::abs(static_cast<double>(t + 1) - center);
    if (distance < best) {
      best = distance;
      nearest = t;
    }
  }
  std::vector<std::uint8_t> out(tokens.rows, 0);
  out[nearest] = 1;
  return out;
}

}  // namespace fineforge
