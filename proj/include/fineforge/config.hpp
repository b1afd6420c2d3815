#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include "json.hpp"

#include "fineforge/backends.hpp"
#include "fineforge/match_index.hpp"
#include "fineforge/pooling.hpp"
#include "fineforge/sampler.hpp"

namespace fineforge {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& message)
      : std::runtime_error(message) {}
};

struct PipelinePaths {
  std::filesystem::path templates;      // input template bank (optional when
                                        // queries are genericized)
  std::filesystem::path documents;      // input corpus
  std::filesystem::path queries;        // optional: raw queries to genericize
  std::filesystem::path benchmark;      // optional: decontamination corpus
  std::filesystem::path descriptions;   // optional: describe-stage output
  std::filesystem::path intermediates;  // working directory
  std::filesystem::path dataset;        // final dataset.jsonl
  std::filesystem::path stats;          // stats output directory
};

struct PipelineConfig {
  PipelinePaths paths;
  MatchConfig match;
  PoolingConfig pooling;
  int picks_per_document = 6;
  // Optional explicit target; defaults to the template bank's own
  // complexity distribution.
  std::optional<ComplexityDistribution> target_distribution;
  BackendConfig genericizer;
  BackendConfig describer;
  BackendConfig embedder;
  BackendConfig instantiator;
  BackendConfig judge;
  int judge_threshold = 4;
  double min_excerpt_ratio = 0.80;
  std::uint64_t seed = 0;
  std::size_t decontamination_ngram = 8;
  std::string tokenizer_name = "word";
  std::size_t describe_sample_limit = 200000;
  std::size_t checkpoint_interval = 1000;
  int workers = 1;

  static PipelineConfig load(const std::filesystem::path& path);
  static PipelineConfig from_json(const nlohmann::json& root,
                                  const std::filesystem::path& base_dir);
  void validate() const;

  // The configuration that affects a stage's output, used for change
  // detection. Excludes execution knobs (workers, retries, concurrency).
  nlohmann::json stage_semantic_config(std::string_view stage) const;
};

nlohmann::json distribution_to_json(const ComplexityDistribution& dist);
ComplexityDistribution distribution_from_json(const nlohmann::json& value);

}  // namespace fineforge
