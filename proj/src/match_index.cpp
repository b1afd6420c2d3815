#include "fineforge/match_index.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

namespace fineforge {
namespace {

void write_u32_le(std::ostream& out, std::uint32_t value) {
  unsigned char buf[4];
  for (int i = 0; i < 4; ++i) {
    buf[i] = static_cast<unsigned char>(value >> (8 * i));
  }
  out.write(reinterpret_cast<const char*>(buf), 4);
}

void write_u64_le(std::ostream& out, std::uint64_t value) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) {
    buf[i] = static_cast<unsigned char>(value >> (8 * i));
  }
  out.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint32_t read_u32_le(std::istream& in) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  std::uint32_t value = 0;
  for (int i = 0; i < 4; ++i) {
    value |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
  }
  return value;
}

std::uint64_t read_u64_le(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  std::uint64_t value = 0;
  for (int i = 0; i < 8; ++i) {
    value |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  }
  return value;
}

void write_f32_le(std::ostream& out, float value) {
  std::uint32_t bits;
  std::memcpy(&bits, &value, 4);
  write_u32_le(out, bits);
}

float read_f32_le(std::istream& in) {
  const std::uint32_t bits = read_u32_le(in);
  float value;
  std::memcpy(&value, &bits, 4);
  return value;
}

double dot(std::span<const float> row, std::span<const double> q) {
  double acc = 0.0;
  for (std::size_t i = 0; i < row.size(); ++i) {
    acc += static_cast<double>(row[i]) * q[i];
  }
  return acc;
}

std::vector<double> normalized(std::span<const double> v) {
  double norm_sq = 0.0;
  for (double x : v) {
    norm_sq += x * x;
  }
  const double norm = std::sqrt(norm_sq);
  if (!(norm > 0.0)) {
    throw IndexError(IndexError::Code::ZeroVector,
                     "cannot normalize a zero vector");
  }
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) {
    x /= norm;
  }
  return out;
}

}  // namespace

void EmbeddingStore::add(std::string id, std::span<const double> vector) {
  if (ids_.empty()) {
    dim_ = vector.size();
  } else if (vector.size() != dim_) {
    throw IndexError(IndexError::Code::DimensionMismatch,
                     "vector for " + id + " has dimension " +
                         std::to_string(vector.size()) + ", expected " +
                         std::to_string(dim_));
  }
  if (dim_ == 0) {
    throw IndexError(IndexError::Code::DimensionMismatch,
                     "vector for " + id + " is empty");
  }
  if (index_of_.count(id) > 0) {
    throw IndexError(IndexError::Code::DuplicateId, "duplicate id: " + id);
  }
  if (id.find('\n') != std::string::npos) {
    throw IndexError(IndexError::Code::BadFile,
                     "ids must not contain newlines");
  }
  const std::vector<double> unit = normalized(vector);
  index_of_.emplace(id, ids_.size());
  ids_.push_back(std::move(id));
  data_.reserve(data_.size() + dim_);
  for (double x : unit) {
    data_.push_back(static_cast<float>(x));
  }
}

std::vector<EmbeddingStore::Hit> EmbeddingStore::query(
    std::span<const double> q, const MatchConfig& config) const {
  if (q.size() != dim_) {
    throw IndexError(IndexError::Code::DimensionMismatch,
                     "query has dimension " + std::to_string(q.size()) +
                         ", store has " + std::to_string(dim_));
  }
  const std::vector<double> unit = normalized(q);
  std::vector<Hit> hits;
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    const double similarity = dot(vector_at(i), unit);
    if (similarity >= config.threshold) {
      hits.push_back({ids_[i], similarity});
    }
  }
  std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) {
    if (a.similarity != b.similarity) {
      return a.similarity > b.similarity;
    }
    return a.template_id < b.template_id;
  });
  if (hits.size() > static_cast<std::size_t>(config.top_m)) {
    hits.resize(static_cast<std::size_t>(config.top_m));
  }
  return hits;
}

void EmbeddingStore::save(const std::filesystem::path& path) const {
  EmbeddingFile file;
  file.dim = dim_;
  file.ids = ids_;
  file.data = data_;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IndexError(IndexError::Code::BadFile,
                     "cannot open for writing: " + path.string());
  }
  out.write(kEmbeddingMagic.data(),
            static_cast<std::streamsize>(kEmbeddingMagic.size()));
  write_u32_le(out, static_cast<std::uint32_t>(file.dim));
  write_u64_le(out, static_cast<std::uint64_t>(file.ids.size()));
  for (float value : file.data) {
    write_f32_le(out, value);
  }
  for (const std::string& id : file.ids) {
    out.write(id.data(), static_cast<std::streamsize>(id.size()));
    out.put('\n');
  }
  out.put(1);  // normalization flag
  if (!out) {
    throw IndexError(IndexError::Code::BadFile,
                     "write failed: " + path.string());
  }
}

EmbeddingStore EmbeddingStore::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IndexError(IndexError::Code::BadFile,
                     "cannot open: " + path.string());
  }
  char magic[8];
  in.read(magic, 8);
  if (!in || std::string_view(magic, 8) != kEmbeddingMagic) {
    throw IndexError(IndexError::Code::BadFile,
                     "bad magic in " + path.string());
  }
  EmbeddingStore store;
  store.dim_ = read_u32_le(in);
  const std::uint64_t count = read_u64_le(in);
  store.data_.resize(static_cast<std::size_t>(count) * store.dim_);
  for (float& value : store.data_) {
    value = read_f32_le(in);
  }
  store.ids_.reserve(static_cast<std::size_t>(count));
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string id;
    if (!std::getline(in, id)) {
      throw IndexError(IndexError::Code::BadFile,
                       "truncated id section in " + path.string());
    }
    store.index_of_.emplace(id, store.ids_.size());
    store.ids_.push_back(std::move(id));
  }
  const int flag = in.get();
  if (flag != 1) {
    throw IndexError(IndexError::Code::BadFile,
                     "index file missing normalization flag: " +
                         path.string());
  }
  if (store.index_of_.size() != store.ids_.size()) {
    throw IndexError(IndexError::Code::DuplicateId,
                     "duplicate ids in " + path.string());
  }
  return store;
}

std::vector<CandidateMatch> match_document(const EmbeddingStore& store,
                                           const PooledEmbeddingSet& pooled,
                                           const std::string& document_id,
                                           const MatchConfig& config) {
  // template id -> best (similarity, chunk index)
  std::map<std::string, std::pair<double, int>> best;
  const std::size_t first = config.include_global ? 0 : 1;
  for (std::size_t chunk = first; chunk < pooled.vector_count(); ++chunk) {
    const auto hits = store.query(pooled.vector_at(chunk), config);
    for (const auto& hit : hits) {
      auto it = best.find(hit.template_id);
      if (it == best.end()) {
        best.emplace(hit.template_id,
                     std::make_pair(hit.similarity, static_cast<int>(chunk)));
      } else if (hit.similarity > it->second.first) {
        it->second = {hit.similarity, static_cast<int>(chunk)};
      }
    }
  }
  std::vector<CandidateMatch> matches;
  matches.reserve(best.size());
  for (const auto& [template_id, entry] : best) {
    matches.push_back({document_id, entry.second, template_id, entry.first});
  }
  std::sort(matches.begin(), matches.end(),
            [](const CandidateMatch& a, const CandidateMatch& b) {
              if (a.similarity != b.similarity) {
                return a.similarity > b.similarity;
              }
              return a.template_id < b.template_id;
            });
  return matches;
}

void write_embedding_file(const std::filesystem::path& path,
                          const EmbeddingFile& file) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IndexError(IndexError::Code::BadFile,
                     "cannot open for writing: " + path.string());
  }
  out.write(kEmbeddingMagic.data(),
            static_cast<std::streamsize>(kEmbeddingMagic.size()));
  write_u32_le(out, static_cast<std::uint32_t>(file.dim));
  write_u64_le(out, static_cast<std::uint64_t>(file.ids.size()));
  for (float value : file.data) {
    write_f32_le(out, value);
  }
  for (const std::string& id : file.ids) {
    out.write(id.data(), static_cast<std::streamsize>(id.size()));
    out.put('\n');
  }
  if (!out) {
    throw IndexError(IndexError::Code::BadFile,
                     "write failed: " + path.string());
  }
}

EmbeddingFile read_embedding_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IndexError(IndexError::Code::BadFile,
                     "cannot open: " + path.string());
  }
  char magic[8];
  in.read(magic, 8);
  if (!in || std::string_view(magic, 8) != kEmbeddingMagic) {
    throw IndexError(IndexError::Code::BadFile,
                     "bad magic in " + path.string());
  }
  EmbeddingFile file;
  file.dim = read_u32_le(in);
  const std::uint64_t count = read_u64_le(in);
  file.data.resize(static_cast<std::size_t>(count) * file.dim);
  for (float& value : file.data) {
    value = read_f32_le(in);
  }
  file.ids.reserve(static_cast<std::size_t>(count));
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string id;
    if (!std::getline(in, id)) {
      throw IndexError(IndexError::Code::BadFile,
                       "truncated id section in " + path.string());
    }
    file.ids.push_back(std::move(id));
  }
  if (!in) {
    throw IndexError(IndexError::Code::BadFile,
                     "truncated file: " + path.string());
  }
  return file;
}

}  // namespace fineforge
