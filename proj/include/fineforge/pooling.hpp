#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace fineforge {

class PoolingError : public std::runtime_error {
 public:
  enum class Code { AllMasked, EmptyHardMask, BadInput };

  PoolingError(Code code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Code code() const { return code_; }

 private:
  Code code_;
};

// Token embedding matrix with an attention mask. Values are stored and
// accumulated in double precision.
struct TokenMatrix {
  std::size_t rows = 0;  // sequence positions
  std::size_t dim = 0;
  std::vector<double> data;        // row-major, rows * dim
  std::vector<std::uint8_t> mask;  // length rows, 0 or 1

  double at(std::size_t t, std::size_t i) const { return data[t * dim + i]; }
  std::size_t attended_count() const;

  static TokenMatrix zeros(std::size_t rows, std::size_t dim);
};

struct PoolingConfig {
  int chunks = 5;                    // K
  double sigma = 0.05;               // Gaussian width as a fraction of length
  double alpha = 1.0;                // blend weight between chunk and global
  double hard_mask_threshold = 0.5;  // raw kernel cutoff for hard masks

  void validate() const;
};

// The global mean embedding plus K chunk-local embeddings. Chunk centers sit
// at fixed fractions k/(K+1) of the effective (attended) length; positions
// are 1-based and the effective length counts attended tokens only, so
// trailing padding changes nothing.
struct PooledEmbeddingSet {
  std::vector<double> global;
  std::vector<std::vector<double>> chunks;  // size K
  std::vector<double> centers;              // size K
  std::size_t dim = 0;

  std::size_t vector_count() const { return chunks.size() + 1; }
  // chunk_index 0 is the global embedding, 1..K the chunk embeddings.
  const std::vector<double>& vector_at(std::size_t chunk_index) const;
};

// Mean of attended token embeddings. Throws AllMasked when nothing is
// attended.
std::vector<double> global_mean(const TokenMatrix& tokens);

// Normalized Gaussian weights for chunk k (1-based, 1..K): zero at masked
// positions, summing to 1 over attended ones.
std::vector<double> gaussian_weights(const TokenMatrix& tokens,
                                     const PoolingConfig& config, int k);

PooledEmbeddingSet pool(const TokenMatrix& tokens, const PoolingConfig& config);

// Binary attention mask keeping attended tokens whose unnormalized kernel
// value is at least the threshold (|t - c_k| <= sigma*T*sqrt(2 ln(1/thr))).
// Throws EmptyHardMask when no token qualifies.
std::vector<std::uint8_t> hard_chunk_mask(const TokenMatrix& tokens,
                                          const PoolingConfig& config, int k);

// Same, but falls back to the single attended token nearest the chunk center
// instead of throwing.
std::vector<std::uint8_t> hard_chunk_mask_or_nearest(const TokenMatrix& tokens,
                                                     const PoolingConfig& config,
                                                     int k);

// Center position of chunk k for an effective length, in 1-based token
// coordinates.
double chunk_center(std::size_t effective_len, int total_chunks, int k);

}  // namespace fineforge
