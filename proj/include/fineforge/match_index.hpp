#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "fineforge/pooling.hpp"

namespace fineforge {

class IndexError : public std::runtime_error {
 public:
  enum class Code {
    DimensionMismatch,
    DuplicateId,
    ZeroVector,
    BadFile,
  };

  IndexError(Code code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Code code() const { return code_; }

 private:
  Code code_;
};

struct MatchConfig {
  double threshold = 0.865;
  int top_m = 5;
  bool include_global = true;  // query the global embedding as chunk 0
};

struct CandidateMatch {
  std::string document_id;
  int chunk_index = 0;  // 0 = global embedding, 1..K = chunks
  std::string template_id;
  double similarity = 0.0;
};

// Exact cosine-similarity store over L2-normalized vectors. Search is a
// linear scan, so results are identical to exhaustive comparison by
// construction; vectors are held as 32-bit floats (the on-disk precision)
// and similarities accumulate in double.
class EmbeddingStore {
 public:
  EmbeddingStore() = default;

  void add(std::string id, std::span<const double> vector);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  const std::string& id_at(std::size_t i) const { return ids_[i]; }
  std::span<const float> vector_at(std::size_t i) const {
    return {data_.data() + i * dim_, dim_};
  }

  struct Hit {
    std::string template_id;
    double similarity = 0.0;
  };

  // Up to top_m hits with similarity >= threshold, ordered by similarity
  // descending and template id ascending on ties. The query is normalized
  // internally, so its scale is irrelevant.
  std::vector<Hit> query(std::span<const double> q,
                         const MatchConfig& config) const;

  void save(const std::filesystem::path& path) const;
  static EmbeddingStore load(const std::filesystem::path& path);

 private:
  std::size_t dim_ = 0;
  std::vector<float> data_;
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::size_t> index_of_;
};

// Queries the global and each chunk embedding, tags hits with the chunk
// index that produced them, and keeps only the best-similarity occurrence of
// each template (ties keep the lowest chunk index). Results are ordered by
// similarity descending, template id ascending.
std::vector<CandidateMatch> match_document(const EmbeddingStore& store,
                                           const PooledEmbeddingSet& pooled,
                                           const std::string& document_id,
                                           const MatchConfig& config);

// Raw embedding file: 8-byte magic "FINEEMB1", u32 LE dim, u64 LE count,
// count*dim IEEE-754 LE 32-bit floats row-major, then count
// newline-terminated UTF-8 ids. Index files append one flag byte (1 =
// vectors stored normalized).
struct EmbeddingFile {
  std::size_t dim = 0;
  std::vector<std::string> ids;
  std::vector<float> data;  // row-major
};

inline constexpr std::string_view kEmbeddingMagic = "FINEEMB1";

void write_embedding_file(const std::filesystem::path& path,
                          const EmbeddingFile& file);
EmbeddingFile read_embedding_file(const std::filesystem::path& path);

}  // namespace fineforge
