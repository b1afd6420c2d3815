#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "fineforge/config.hpp"

namespace fineforge {

class MissingInputError : public std::runtime_error {
 public:
  explicit MissingInputError(const std::string& message)
      : std::runtime_error(message) {}
};

class StageFailure : public std::runtime_error {
 public:
  StageFailure(std::string stage, const std::string& message)
      : std::runtime_error(stage + ": " + message), stage_(std::move(stage)) {}

  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

// Per-stage accounting. Every input record is accounted for:
// records_in == records_out + dead + sum(filtered).
struct StageReport {
  std::string stage;
  std::uint64_t records_in = 0;
  std::uint64_t records_out = 0;
  std::uint64_t dead = 0;
  std::map<std::string, std::uint64_t> filtered;  // reason -> count
  std::map<std::string, std::uint64_t> counters;
  double wall_ms = 0.0;
  bool skipped = false;  // unchanged inputs, stage was a no-op

  std::uint64_t filtered_total() const;
  bool conserved() const;
  nlohmann::json to_json() const;
  static StageReport from_json(const nlohmann::json& value);
};

// Returns true when a query may enter the pipeline. Hook point for an
// external moderation service; nothing is filtered when unset.
using QueryFilter = std::function<bool(const std::string& query)>;

// Wires the stages into resumable batch jobs: content-hash no-op detection,
// atomic outputs, dead-letter streams, and checkpointed backend stages.
class Orchestrator {
 public:
  explicit Orchestrator(PipelineConfig config, bool resume = false);

  // Applied to raw queries during genericize; rejected queries are counted
  // as filtered("moderation").
  void set_query_filter(QueryFilter allow) { query_filter_ = std::move(allow); }

  // Stage execution order for full runs; optional stages (genericize,
  // describe) are included only when their inputs are configured.
  static const std::vector<std::string>& all_stages();
  bool stage_enabled(const std::string& name) const;

  StageReport run_stage(const std::string& name);
  std::vector<StageReport> run_all();

  const PipelineConfig& config() const { return config_; }
  std::filesystem::path intermediate(const std::string& filename) const;
  std::filesystem::path manifest_path() const;
  nlohmann::json manifest() const { return manifest_; }

 private:
  struct StageIo {
    std::vector<std::filesystem::path> inputs;
    std::vector<std::filesystem::path> outputs;
  };

  StageIo stage_io(const std::string& name) const;
  std::uint64_t inputs_hash(const std::vector<std::filesystem::path>& inputs) const;
  void save_manifest();
  void record_failure(const std::string& stage, const std::string& error);

  StageReport run_genericize();
  StageReport run_describe();
  StageReport run_decontaminate();
  StageReport run_embed();
  StageReport run_index();
  StageReport run_match();
  StageReport run_sample();
  StageReport run_instantiate();
  StageReport run_expand();
  StageReport run_judge();
  StageReport run_filter();
  StageReport run_pack();
  StageReport run_stats();

  PipelineConfig config_;
  bool resume_ = false;
  nlohmann::json manifest_;
  QueryFilter query_filter_;
};

}  // namespace fineforge
