#include "fineforge/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <functional>
#include <memory>
#include <mutex>
#include <set>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include "fineforge/analytics.hpp"
#include "fineforge/budget.hpp"
#include "fineforge/decontaminate.hpp"
#include "fineforge/excerpt.hpp"
#include "fineforge/jsonl.hpp"
#include "fineforge/rng.hpp"
#include "fineforge/text.hpp"
#include "fineforge/tokenizer.hpp"

namespace fineforge {
namespace {

using nlohmann::json;

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(value));
  return std::string(buf);
}

class StageTimer {
 public:
  StageTimer() : start_(std::chrono::steady_clock::now()) {}
  double elapsed_ms() const {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

// Outcome of processing one work item: output lines, dead letters, and
// counter deltas. Every work item contributes exactly one unit to the
// stage's records_in.
struct ItemOutcome {
  std::vector<json> lines;
  std::vector<json> dead;
  std::map<std::string, std::uint64_t> counters;
  std::map<std::string, std::uint64_t> filtered;
};

json dead_letter(std::string_view stage, std::string_view record_id,
                 std::string_view reason, std::string_view detail) {
  json out;
  out["stage"] = std::string(stage);
  out["record_id"] = std::string(record_id);
  out["reason"] = std::string(reason);
  out["detail"] = std::string(detail);
  return out;
}

void apply_outcome(StageReport& report, const ItemOutcome& outcome,
                   AtomicFileWriter& out, AtomicFileWriter& dead) {
  report.records_in += 1;
  for (const auto& line : outcome.lines) {
    out.write_line(line);
    report.records_out += 1;
  }
  for (const auto& letter : outcome.dead) {
    dead.write_line(letter);
    report.dead += 1;
  }
  for (const auto& [key, value] : outcome.counters) {
    report.counters[key] += value;
  }
  for (const auto& [key, value] : outcome.filtered) {
    report.filtered[key] += value;
  }
}

// Runs fn over items with a bounded worker pool; outcomes land in input
// order, so worker count never changes the output stream.
std::vector<ItemOutcome> parallel_map(
    const std::vector<json>& items, int workers,
    const std::function<ItemOutcome(const json&)>& fn) {
  std::vector<ItemOutcome> outcomes(items.size());
  const int used = std::max(
      1, std::min<int>(workers, static_cast<int>(items.size())));
  if (used == 1) {
    for (std::size_t i = 0; i < items.size(); ++i) {
      outcomes[i] = fn(items[i]);
    }
    return outcomes;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&]() {
    while (!failed.load()) {
      const std::size_t i = next.fetch_add(1);
      if (i >= items.size()) {
        break;
      }
      try {
        outcomes[i] = fn(items[i]);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) {
          error = std::current_exception();
        }
        failed.store(true);
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(used));
  for (int i = 0; i < used; ++i) {
    pool.emplace_back(work);
  }
  for (auto& thread : pool) {
    thread.join();
  }
  if (error) {
    std::rethrow_exception(error);
  }
  return outcomes;
}

// Forward-only lookup over documents.jsonl; callers must request ids in file
// order (every downstream intermediate preserves corpus order).
class DocumentCursor {
 public:
  explicit DocumentCursor(const std::filesystem::path& path) : reader_(path) {}

  const SourceDocument* find(const std::string& id) {
    if (has_current_ && current_.id == id) {
      return &current_;
    }
    while (auto row = reader_.next()) {
      current_.id = row->value("id", "");
      current_.text = row->value("text", "");
      has_current_ = true;
      if (current_.id == id) {
        return &current_;
      }
    }
    return nullptr;
  }

 private:
  JsonlReader reader_;
  SourceDocument current_;
  bool has_current_ = false;
};

struct TemplateBank {
  std::unordered_map<std::string, InstructionTemplate> by_id;
  std::vector<std::size_t> complexities;
};

TemplateBank load_template_bank(const std::filesystem::path& path) {
  TemplateBank bank;
  JsonlReader reader(path);
  while (auto row = reader.next()) {
    InstructionTemplate tpl = InstructionTemplate::make(
        row->value("id", ""), row->value("source_dataset", ""),
        row->value("template_text", ""),
        row->value("compatible_doc_description", ""));
    bank.complexities.push_back(tpl.complexity());
    bank.by_id.emplace(tpl.id, std::move(tpl));
  }
  return bank;
}

json template_row(const InstructionTemplate& tpl) {
  json row;
  row["id"] = tpl.id;
  row["source_dataset"] = tpl.source_dataset;
  row["template_text"] = tpl.template_text;
  row["compatible_doc_description"] = tpl.compatible_doc_description;
  row["complexity"] = tpl.complexity();
  return row;
}

std::string record_id_of(const std::string& document_id,
                         const std::string& template_id) {
  return document_id + "/" + template_id;
}

void write_embedding_file_atomic(const std::filesystem::path& path,
                                 const EmbeddingFile& file) {
  const std::filesystem::path tmp(path.string() + ".partial");
  write_embedding_file(tmp, file);
  std::filesystem::rename(tmp, path);
}

struct StreamStageOptions {
  std::string name;
  std::filesystem::path input;
  std::filesystem::path output;
  std::filesystem::path dead_path;
  std::filesystem::path ckpt_path;
  std::uint64_t input_hash = 0;
  std::size_t checkpoint_interval = 1000;
  std::size_t row_limit = 0;  // 0 = no limit
  int workers = 1;
  bool resume = false;
};

void remove_if_exists(const std::filesystem::path& path) {
  std::error_code ec;
  std::filesystem::remove(path, ec);
}

// Record-stream runner for backend-calling stages: reads input rows in
// batches, fans each batch out to the worker pool, writes results in input
// order, and checkpoints progress after every batch so an interrupted stage
// restarts from its last completed batch instead of from scratch.
StageReport run_stream_stage(
    const StreamStageOptions& options,
    const std::function<std::vector<json>(const json&)>& prepare,
    const std::function<ItemOutcome(const json&)>& process) {
  StageReport report;
  report.stage = options.name;
  std::uint64_t rows_consumed = 0;
  bool resumed = false;

  const std::filesystem::path out_partial(options.output.string() + ".partial");
  const std::filesystem::path dead_partial(options.dead_path.string() +
                                           ".partial");
  if (options.resume && std::filesystem::exists(options.ckpt_path) &&
      std::filesystem::exists(out_partial)) {
    std::ifstream in(options.ckpt_path);
    json ckpt;
    try {
      in >> ckpt;
    } catch (const json::exception&) {
      ckpt = json();
    }
    if (ckpt.value("input_hash", "") == hex64(options.input_hash)) {
      rows_consumed = ckpt.value("rows_consumed", std::uint64_t{0});
      std::filesystem::resize_file(out_partial,
                                   ckpt.value("out_bytes", std::uint64_t{0}));
      const auto dead_bytes = ckpt.value("dead_bytes", std::uint64_t{0});
      if (std::filesystem::exists(dead_partial)) {
        std::filesystem::resize_file(dead_partial, dead_bytes);
      }
      report = StageReport::from_json(ckpt.value("report", json::object()));
      report.counters["resumed_rows"] = rows_consumed;
      resumed = true;
    }
  }
  if (!resumed) {
    remove_if_exists(out_partial);
    remove_if_exists(dead_partial);
    remove_if_exists(options.ckpt_path);
  }

  AtomicFileWriter out(options.output, resumed);
  AtomicFileWriter dead(options.dead_path, resumed);
  JsonlReader reader(options.input);
  for (std::uint64_t i = 0; i < rows_consumed; ++i) {
    if (!reader.next()) {
      throw std::runtime_error(options.name +
                               ": checkpoint is ahead of the input file");
    }
  }

  while (true) {
    std::vector<json> batch;
    while (batch.size() < options.checkpoint_interval) {
      if (options.row_limit > 0 &&
          rows_consumed + batch.size() >= options.row_limit) {
        break;
      }
      auto row = reader.next();
      if (!row) {
        break;
      }
      batch.push_back(std::move(*row));
    }
    if (batch.empty()) {
      break;
    }
    const std::size_t batch_rows = batch.size();
    std::vector<json> work;
    if (prepare) {
      for (const auto& row : batch) {
        auto items = prepare(row);
        work.insert(work.end(), std::make_move_iterator(items.begin()),
                    std::make_move_iterator(items.end()));
      }
    } else {
      work = std::move(batch);
    }
    const auto outcomes = parallel_map(work, options.workers, process);
    for (const auto& outcome : outcomes) {
      apply_outcome(report, outcome, out, dead);
    }
    rows_consumed += batch_rows;
    out.flush();
    dead.flush();
    json ckpt;
    ckpt["input_hash"] = hex64(options.input_hash);
    ckpt["rows_consumed"] = rows_consumed;
    ckpt["out_bytes"] = out.bytes_written();
    ckpt["dead_bytes"] = dead.bytes_written();
    ckpt["report"] = report.to_json();
    write_text_file_atomic(options.ckpt_path, ckpt.dump());
  }

  out.commit();
  dead.commit();
  remove_if_exists(options.ckpt_path);
  return report;
}

}  // namespace

std::uint64_t StageReport::filtered_total() const {
  std::uint64_t total = 0;
  for (const auto& [reason, count] : filtered) {
    total += count;
  }
  return total;
}

bool StageReport::conserved() const {
  return records_in == records_out + dead + filtered_total();
}

json StageReport::to_json() const {
  json out;
  out["stage"] = stage;
  out["in"] = records_in;
  out["out"] = records_out;
  out["dead"] = dead;
  out["filtered"] = filtered;
  out["counters"] = counters;
  out["wall_ms"] = wall_ms;
  out["skipped"] = skipped;
  return out;
}

StageReport StageReport::from_json(const json& value) {
  StageReport report;
  report.stage = value.value("stage", "");
  report.records_in = value.value("in", std::uint64_t{0});
  report.records_out = value.value("out", std::uint64_t{0});
  report.dead = value.value("dead", std::uint64_t{0});
  if (value.contains("filtered")) {
    report.filtered =
        value["filtered"].get<std::map<std::string, std::uint64_t>>();
  }
  if (value.contains("counters")) {
    report.counters =
        value["counters"].get<std::map<std::string, std::uint64_t>>();
  }
  report.wall_ms = value.value("wall_ms", 0.0);
  report.skipped = value.value("skipped", false);
  return report;
}

Orchestrator::Orchestrator(PipelineConfig config, bool resume)
    : config_(std::move(config)), resume_(resume) {
  config_.validate();
  std::filesystem::create_directories(config_.paths.intermediates);
  std::filesystem::create_directories(config_.paths.intermediates / "dead");
  std::filesystem::create_directories(config_.paths.intermediates / "ckpt");
  manifest_ = json{{"stages", json::object()}};
  const auto path = manifest_path();
  if (std::filesystem::exists(path)) {
    std::ifstream in(path);
    try {
      in >> manifest_;
    } catch (const json::exception&) {
      manifest_ = json{{"stages", json::object()}};
    }
  }
}

const std::vector<std::string>& Orchestrator::all_stages() {
  static const std::vector<std::string> stages = {
      "genericize", "describe", "decontaminate", "embed",  "index",
      "match",      "sample",   "instantiate",   "expand", "judge",
      "filter",     "pack",     "stats"};
  return stages;
}

bool Orchestrator::stage_enabled(const std::string& name) const {
  if (name == "genericize") {
    return !config_.paths.queries.empty();
  }
  if (name == "describe") {
    return !config_.paths.descriptions.empty();
  }
  return true;
}

std::filesystem::path Orchestrator::intermediate(
    const std::string& filename) const {
  return config_.paths.intermediates / filename;
}

std::filesystem::path Orchestrator::manifest_path() const {
  return intermediate("manifest.json");
}

Orchestrator::StageIo Orchestrator::stage_io(const std::string& name) const {
  StageIo io;
  const auto& paths = config_.paths;
  if (name == "genericize") {
    io.inputs = {paths.queries};
    io.outputs = {intermediate("generated_templates.jsonl")};
  } else if (name == "describe") {
    io.inputs = {paths.documents};
    io.outputs = {paths.descriptions};
  } else if (name == "decontaminate") {
    if (!paths.templates.empty()) {
      io.inputs.push_back(paths.templates);
    }
    if (stage_enabled("genericize")) {
      io.inputs.push_back(intermediate("generated_templates.jsonl"));
    }
    if (!paths.benchmark.empty()) {
      io.inputs.push_back(paths.benchmark);
    }
    io.outputs = {intermediate("template_bank.jsonl")};
  } else if (name == "embed") {
    io.inputs = {intermediate("template_bank.jsonl"), paths.documents};
    io.outputs = {intermediate("templates.femb"),
                  intermediate("documents.femb")};
  } else if (name == "index") {
    io.inputs = {intermediate("templates.femb")};
    io.outputs = {intermediate("index.femb")};
  } else if (name == "match") {
    io.inputs = {intermediate("index.femb"), intermediate("documents.femb")};
    io.outputs = {intermediate("candidates.jsonl")};
  } else if (name == "sample") {
    io.inputs = {intermediate("candidates.jsonl"),
                 intermediate("template_bank.jsonl")};
    io.outputs = {intermediate("selections.jsonl")};
  } else if (name == "instantiate") {
    io.inputs = {intermediate("selections.jsonl"),
                 intermediate("template_bank.jsonl"), paths.documents};
    io.outputs = {intermediate("instantiations.jsonl")};
  } else if (name == "expand") {
    io.inputs = {intermediate("instantiations.jsonl"), paths.documents};
    io.outputs = {intermediate("expanded.jsonl")};
  } else if (name == "judge") {
    io.inputs = {intermediate("expanded.jsonl")};
    io.outputs = {intermediate("judged.jsonl")};
  } else if (name == "filter") {
    io.inputs = {intermediate("judged.jsonl")};
    io.outputs = {intermediate("filtered.jsonl")};
  } else if (name == "pack") {
    io.inputs = {intermediate("filtered.jsonl"), paths.documents};
    io.outputs = {paths.dataset};
  } else if (name == "stats") {
    io.inputs = {paths.dataset, intermediate("filtered.jsonl")};
    io.outputs = {paths.stats / "report.json"};
  } else {
    throw ConfigError("unknown stage: " + name);
  }
  return io;
}

std::uint64_t Orchestrator::inputs_hash(
    const std::vector<std::filesystem::path>& inputs) const {
  std::uint64_t state = 0xcbf29ce484222325ULL;
  for (const auto& path : inputs) {
    state ^= file_hash(path);
    state *= 0x100000001b3ULL;
  }
  return state;
}

void Orchestrator::save_manifest() {
  manifest_["config_seed"] = config_.seed;
  write_text_file_atomic(manifest_path(), manifest_.dump(2) + "\n");
}

void Orchestrator::record_failure(const std::string& stage,
                                  const std::string& error) {
  manifest_["stages"][stage] = {{"failed", true}, {"error", error}};
  save_manifest();
}

StageReport Orchestrator::run_stage(const std::string& name) {
  if (!stage_enabled(name)) {
    throw MissingInputError("stage " + name +
                            " is not configured (missing input path)");
  }
  const StageIo io = stage_io(name);
  for (const auto& path : io.inputs) {
    if (!std::filesystem::exists(path)) {
      throw MissingInputError("stage " + name +
                              " is missing input: " + path.string());
    }
  }
  const std::uint64_t in_hash = inputs_hash(io.inputs);
  const std::uint64_t cfg_hash =
      json_content_hash(config_.stage_semantic_config(name));

  const json& stages = manifest_["stages"];
  if (stages.contains(name)) {
    const json& entry = stages[name];
    if (!entry.value("failed", false) &&
        entry.value("input_hash", "") == hex64(in_hash) &&
        entry.value("config_hash", "") == hex64(cfg_hash)) {
      bool outputs_present = true;
      for (const auto& path : io.outputs) {
        if (!std::filesystem::exists(path)) {
          outputs_present = false;
          break;
        }
      }
      if (outputs_present) {
        StageReport report = StageReport::from_json(entry["report"]);
        report.skipped = true;
        return report;
      }
    }
  }

  StageTimer timer;
  StageReport report;
  try {
    if (name == "genericize") {
      report = run_genericize();
    } else if (name == "describe") {
      report = run_describe();
    } else if (name == "decontaminate") {
      report = run_decontaminate();
    } else if (name == "embed") {
      report = run_embed();
    } else if (name == "index") {
      report = run_index();
    } else if (name == "match") {
      report = run_match();
    } else if (name == "sample") {
      report = run_sample();
    } else if (name == "instantiate") {
      report = run_instantiate();
    } else if (name == "expand") {
      report = run_expand();
    } else if (name == "judge") {
      report = run_judge();
    } else if (name == "filter") {
      report = run_filter();
    } else if (name == "pack") {
      report = run_pack();
    } else if (name == "stats") {
      report = run_stats();
    }
  } catch (const std::exception& e) {
    record_failure(name, e.what());
    throw StageFailure(name, e.what());
  }

  report.stage = name;
  report.wall_ms = timer.elapsed_ms();
  manifest_["stages"][name] = {{"input_hash", hex64(in_hash)},
                               {"config_hash", hex64(cfg_hash)},
                               {"report", report.to_json()}};
  save_manifest();
  return report;
}

std::vector<StageReport> Orchestrator::run_all() {
  std::vector<StageReport> reports;
  for (const auto& name : all_stages()) {
    if (!stage_enabled(name)) {
      continue;
    }
    reports.push_back(run_stage(name));
  }
  return reports;
}

StageReport Orchestrator::run_genericize() {
  const StageIo io = stage_io("genericize");
  auto backend = make_genericizer(config_.genericizer);
  StreamStageOptions options;
  options.name = "genericize";
  options.input = config_.paths.queries;
  options.output = io.outputs[0];
  options.dead_path = intermediate("dead/genericize.jsonl");
  options.ckpt_path = intermediate("ckpt/genericize.json");
  options.input_hash = inputs_hash(io.inputs);
  options.checkpoint_interval = config_.checkpoint_interval;
  options.workers = config_.workers;
  options.resume = resume_;
  return run_stream_stage(options, nullptr, [&](const json& row) {
    ItemOutcome outcome;
    const std::string id = row.value("id", "");
    const std::string text = row.value("text", "");
    if (id.empty() || text.empty()) {
      outcome.dead.push_back(
          dead_letter("genericize", id, "bad_record", "missing id or text"));
      return outcome;
    }
    if (query_filter_ && !query_filter_(text)) {
      outcome.filtered["moderation"] += 1;
      return outcome;
    }
    try {
      const GenericizedQuery generic = backend->genericize(text);
      const InstructionTemplate tpl = InstructionTemplate::make(
          id, "genericized", generic.template_text, generic.description);
      outcome.lines.push_back(template_row(tpl));
    } catch (const TemplateError& e) {
      outcome.dead.push_back(
          dead_letter("genericize", id, "malformed_output", e.what()));
    } catch (const MalformedOutputError& e) {
      outcome.dead.push_back(
          dead_letter("genericize", id, "malformed_output", e.what()));
    } catch (const BackendError& e) {
      outcome.dead.push_back(
          dead_letter("genericize", id, "backend_error", e.what()));
    } catch (const std::invalid_argument& e) {
      outcome.dead.push_back(
          dead_letter("genericize", id, "bad_record", e.what()));
    }
    return outcome;
  });
}

StageReport Orchestrator::run_describe() {
  const StageIo io = stage_io("describe");
  auto backend = make_describer(config_.describer);
  StreamStageOptions options;
  options.name = "describe";
  options.input = config_.paths.documents;
  options.output = config_.paths.descriptions;
  options.dead_path = intermediate("dead/describe.jsonl");
  options.ckpt_path = intermediate("ckpt/describe.json");
  options.input_hash = inputs_hash(io.inputs);
  options.checkpoint_interval = config_.checkpoint_interval;
  options.row_limit = config_.describe_sample_limit;
  options.workers = config_.workers;
  options.resume = resume_;
  return run_stream_stage(options, nullptr, [&](const json& row) {
    ItemOutcome outcome;
    SourceDocument doc;
    doc.id = row.value("id", "");
    doc.text = row.value("text", "");
    if (doc.id.empty()) {
      outcome.dead.push_back(
          dead_letter("describe", "", "bad_record", "missing id"));
      return outcome;
    }
    try {
      const std::string description = backend->describe(doc);
      outcome.lines.push_back(
          json{{"document_id", doc.id}, {"description", description}});
    } catch (const MalformedOutputError& e) {
      outcome.dead.push_back(
          dead_letter("describe", doc.id, "malformed_output", e.what()));
    } catch (const BackendError& e) {
      outcome.dead.push_back(
          dead_letter("describe", doc.id, "backend_error", e.what()));
    }
    return outcome;
  });
}

StageReport Orchestrator::run_decontaminate() {
  StageReport report;
  BenchmarkNgramSet benchmark(config_.decontamination_ngram);
  if (!config_.paths.benchmark.empty() &&
      std::filesystem::exists(config_.paths.benchmark)) {
    JsonlReader reader(config_.paths.benchmark);
    std::uint64_t texts = 0;
    while (auto row = reader.next()) {
      benchmark.add_text(row->value("text", ""));
      ++texts;
    }
    report.counters["benchmark_texts"] = texts;
  }
  report.counters["benchmark_ngrams"] = benchmark.size();

  AtomicFileWriter out(intermediate("template_bank.jsonl"));
  AtomicFileWriter dead(intermediate("dead/decontaminate.jsonl"));
  std::unordered_set<std::string> seen_ids;

  std::vector<std::filesystem::path> sources;
  if (!config_.paths.templates.empty()) {
    sources.push_back(config_.paths.templates);
  }
  if (stage_enabled("genericize")) {
    sources.push_back(intermediate("generated_templates.jsonl"));
  }
  for (const auto& source : sources) {
    JsonlReader reader(source);
    while (auto row = reader.next()) {
      report.records_in += 1;
      const std::string id = row->value("id", "");
      ItemOutcome outcome;
      try {
        InstructionTemplate tpl = InstructionTemplate::make(
            id, row->value("source_dataset", ""),
            row->value("template_text", ""),
            row->value("compatible_doc_description", ""));
        if (tpl.id.empty()) {
          dead.write_line(dead_letter("decontaminate", id, "bad_record",
                                      "missing template id"));
          report.dead += 1;
          continue;
        }
        if (!seen_ids.insert(tpl.id).second) {
          dead.write_line(dead_letter("decontaminate", id, "duplicate_id",
                                      "template id repeats across sources"));
          report.dead += 1;
          continue;
        }
        if (benchmark.contaminated(template_literal_text(tpl.body))) {
          report.filtered["benchmark_overlap"] += 1;
          continue;
        }
        out.write_line(template_row(tpl));
        report.records_out += 1;
      } catch (const TemplateError& e) {
        dead.write_line(
            dead_letter("decontaminate", id, "invalid_template", e.what()));
        report.dead += 1;
      }
    }
  }
  out.commit();
  dead.commit();
  return report;
}

StageReport Orchestrator::run_embed() {
  StageReport report;
  auto backend = make_embedder(config_.embedder);

  // Template descriptions, embedded in batches.
  EmbeddingFile templates_out;
  AtomicFileWriter dead(intermediate("dead/embed.jsonl"));
  {
    JsonlReader reader(intermediate("template_bank.jsonl"));
    std::vector<std::string> batch_ids;
    std::vector<std::string> batch_texts;
    auto flush_batch = [&]() {
      if (batch_ids.empty()) {
        return;
      }
      try {
        const auto vectors = backend->embed(batch_texts);
        for (std::size_t i = 0; i < vectors.size(); ++i) {
          if (templates_out.dim == 0) {
            templates_out.dim = vectors[i].size();
          }
          if (vectors[i].size() != templates_out.dim) {
            throw BackendError("embedding dimension drifted");
          }
          templates_out.ids.push_back(batch_ids[i]);
          for (double value : vectors[i]) {
            templates_out.data.push_back(static_cast<float>(value));
          }
          report.records_out += 1;
          report.counters["template_vectors"] += 1;
        }
      } catch (const MalformedOutputError& e) {
        for (const auto& id : batch_ids) {
          dead.write_line(dead_letter("embed", id, "malformed_output", e.what()));
          report.dead += 1;
        }
      } catch (const BackendError& e) {
        for (const auto& id : batch_ids) {
          dead.write_line(dead_letter("embed", id, "backend_error", e.what()));
          report.dead += 1;
        }
      }
      batch_ids.clear();
      batch_texts.clear();
    };
    while (auto row = reader.next()) {
      report.records_in += 1;
      const std::string id = row->value("id", "");
      const std::string description =
          row->value("compatible_doc_description", "");
      if (alnum_lower_tokens(description).empty()) {
        dead.write_line(dead_letter("embed", id, "empty_description",
                                    "description has no word tokens"));
        report.dead += 1;
        continue;
      }
      batch_ids.push_back(id);
      batch_texts.push_back(description);
      if (batch_ids.size() >= 64) {
        flush_batch();
      }
    }
    flush_batch();
  }

  // Documents: token-level embeddings pooled into K+1 vectors each. Backends
  // without token-level support contribute the sequence embedding as the
  // global vector only.
  EmbeddingFile documents_out;
  {
    JsonlReader reader(config_.paths.documents);
    while (auto row = reader.next()) {
      report.records_in += 1;
      const std::string id = row->value("id", "");
      const std::string text = row->value("text", "");
      if (id.empty() || id.find('#') != std::string::npos ||
          id.find('\n') != std::string::npos) {
        dead.write_line(dead_letter("embed", id, "bad_record",
                                    "document ids must be non-empty and free "
                                    "of '#' and newlines"));
        report.dead += 1;
        continue;
      }
      try {
        std::vector<std::pair<int, std::vector<double>>> rows;
        if (backend->supports_token_embeddings()) {
          const TokenMatrix tokens = backend->embed_tokens(text);
          const PooledEmbeddingSet pooled = pool(tokens, config_.pooling);
          rows.emplace_back(0, pooled.global);
          for (std::size_t k = 0; k < pooled.chunks.size(); ++k) {
            rows.emplace_back(static_cast<int>(k + 1), pooled.chunks[k]);
          }
        } else {
          const std::vector<std::string> one{text};
          rows.emplace_back(0, backend->embed(one)[0]);
          report.counters["docs_without_token_embeddings"] += 1;
        }
        for (const auto& [chunk, vector] : rows) {
          if (documents_out.dim == 0) {
            documents_out.dim = vector.size();
          }
          if (vector.size() != documents_out.dim) {
            throw BackendError("embedding dimension drifted");
          }
          documents_out.ids.push_back(id + "#" + std::to_string(chunk));
          for (double value : vector) {
            documents_out.data.push_back(static_cast<float>(value));
          }
          report.counters["document_vectors"] += 1;
        }
        report.records_out += 1;
      } catch (const MalformedOutputError& e) {
        dead.write_line(dead_letter("embed", id, "empty_document", e.what()));
        report.dead += 1;
      } catch (const PoolingError& e) {
        dead.write_line(dead_letter("embed", id, "empty_document", e.what()));
        report.dead += 1;
      } catch (const BackendError& e) {
        dead.write_line(dead_letter("embed", id, "backend_error", e.what()));
        report.dead += 1;
      }
    }
  }

  write_embedding_file_atomic(intermediate("templates.femb"), templates_out);
  write_embedding_file_atomic(intermediate("documents.femb"), documents_out);
  dead.commit();
  return report;
}

StageReport Orchestrator::run_index() {
  StageReport report;
  const EmbeddingFile file = read_embedding_file(intermediate("templates.femb"));
  AtomicFileWriter dead(intermediate("dead/index.jsonl"));
  EmbeddingStore store;
  for (std::size_t i = 0; i < file.ids.size(); ++i) {
    report.records_in += 1;
    std::vector<double> vector(file.dim);
    for (std::size_t j = 0; j < file.dim; ++j) {
      vector[j] = static_cast<double>(file.data[i * file.dim + j]);
    }
    try {
      store.add(file.ids[i], vector);
      report.records_out += 1;
    } catch (const IndexError& e) {
      dead.write_line(
          dead_letter("index", file.ids[i], "unindexable", e.what()));
      report.dead += 1;
    }
  }
  const std::filesystem::path out = intermediate("index.femb");
  const std::filesystem::path tmp(out.string() + ".partial");
  store.save(tmp);
  std::filesystem::rename(tmp, out);
  dead.commit();
  report.counters["indexed_vectors"] = store.size();
  return report;
}

StageReport Orchestrator::run_match() {
  StageReport report;
  const EmbeddingStore store = EmbeddingStore::load(intermediate("index.femb"));
  const EmbeddingFile docs = read_embedding_file(intermediate("documents.femb"));
  AtomicFileWriter out(intermediate("candidates.jsonl"));

  std::string current_id;
  PooledEmbeddingSet pooled;
  auto flush_document = [&]() {
    if (current_id.empty()) {
      return;
    }
    report.records_in += 1;
    const auto matches =
        match_document(store, pooled, current_id, config_.match);
    json row;
    row["document_id"] = current_id;
    row["candidates"] = json::array();
    for (const auto& match : matches) {
      row["candidates"].push_back({{"template_id", match.template_id},
                                   {"chunk_index", match.chunk_index},
                                   {"similarity", match.similarity}});
    }
    out.write_line(row);
    report.records_out += 1;
    report.counters["candidates_total"] += matches.size();
    if (!matches.empty()) {
      report.counters["docs_with_candidates"] += 1;
    }
    pooled = PooledEmbeddingSet{};
    current_id.clear();
  };

  for (std::size_t i = 0; i < docs.ids.size(); ++i) {
    const std::string& row_id = docs.ids[i];
    const std::size_t sep = row_id.rfind('#');
    if (sep == std::string::npos) {
      throw std::runtime_error("documents.femb row id lacks a chunk suffix: " +
                               row_id);
    }
    const std::string doc_id = row_id.substr(0, sep);
    const int chunk = std::stoi(row_id.substr(sep + 1));
    if (doc_id != current_id) {
      flush_document();
      current_id = doc_id;
      pooled.dim = docs.dim;
    }
    std::vector<double> vector(docs.dim);
    for (std::size_t j = 0; j < docs.dim; ++j) {
      vector[j] = static_cast<double>(docs.data[i * docs.dim + j]);
    }
    if (chunk == 0) {
      pooled.global = std::move(vector);
    } else {
      if (pooled.chunks.size() < static_cast<std::size_t>(chunk)) {
        pooled.chunks.resize(static_cast<std::size_t>(chunk));
      }
      pooled.chunks[static_cast<std::size_t>(chunk - 1)] = std::move(vector);
    }
  }
  flush_document();
  out.commit();
  return report;
}

StageReport Orchestrator::run_sample() {
  StageReport report;
  const TemplateBank bank =
      load_template_bank(intermediate("template_bank.jsonl"));
  SamplerConfig sampler_config;
  sampler_config.picks_per_document = config_.picks_per_document;
  sampler_config.seed = config_.seed;
  if (config_.target_distribution) {
    sampler_config.target = *config_.target_distribution;
  } else if (!bank.complexities.empty()) {
    sampler_config.target = estimate_distribution(bank.complexities);
  } else {
    sampler_config.target.probability[0] = 1.0;
  }

  JsonlReader reader(intermediate("candidates.jsonl"));
  AtomicFileWriter out(intermediate("selections.jsonl"));
  while (auto row = reader.next()) {
    report.records_in += 1;
    const std::string document_id = row->value("document_id", "");
    std::vector<PoolCandidate> pool;
    for (const auto& candidate : row->value("candidates", json::array())) {
      PoolCandidate entry;
      entry.match.document_id = document_id;
      entry.match.template_id = candidate.value("template_id", "");
      entry.match.chunk_index = candidate.value("chunk_index", 0);
      entry.match.similarity = candidate.value("similarity", 0.0);
      const auto it = bank.by_id.find(entry.match.template_id);
      if (it == bank.by_id.end()) {
        throw std::runtime_error("candidate references unknown template: " +
                                 entry.match.template_id);
      }
      entry.complexity = it->second.complexity();
      pool.push_back(std::move(entry));
    }
    json selected = json::array();
    if (!pool.empty()) {
      const WeightResult weights = compute_weights(pool, sampler_config.target);
      if (weights.degenerate_target) {
        report.counters["degenerate_target_docs"] += 1;
      }
      const auto picks = sample_candidates(std::move(pool), weights.weights,
                                           sampler_config, document_id);
      for (const auto& pick : picks) {
        selected.push_back({{"template_id", pick.match.template_id},
                            {"chunk_index", pick.match.chunk_index},
                            {"similarity", pick.match.similarity},
                            {"complexity", pick.complexity}});
      }
      report.counters["selected_total"] += picks.size();
    }
    out.write_line(json{{"document_id", document_id}, {"selected", selected}});
    report.records_out += 1;
  }
  out.commit();
  return report;
}

StageReport Orchestrator::run_instantiate() {
  const StageIo io = stage_io("instantiate");
  const auto bank = std::make_shared<TemplateBank>(
      load_template_bank(intermediate("template_bank.jsonl")));
  auto backend = make_instantiator(config_.instantiator);
  auto cursor = std::make_shared<DocumentCursor>(config_.paths.documents);

  StreamStageOptions options;
  options.name = "instantiate";
  options.input = intermediate("selections.jsonl");
  options.output = intermediate("instantiations.jsonl");
  options.dead_path = intermediate("dead/instantiate.jsonl");
  options.ckpt_path = intermediate("ckpt/instantiate.json");
  options.input_hash = inputs_hash(io.inputs);
  options.checkpoint_interval = config_.checkpoint_interval;
  options.workers = config_.workers;
  options.resume = resume_;

  auto prepare = [cursor](const json& row) {
    std::vector<json> work;
    const std::string document_id = row.value("document_id", "");
    const json selected = row.value("selected", json::array());
    if (selected.empty()) {
      return work;
    }
    const SourceDocument* doc = cursor->find(document_id);
    if (doc == nullptr) {
      throw std::runtime_error("selection references unknown document: " +
                               document_id);
    }
    for (const auto& pick : selected) {
      json item = pick;
      item["document_id"] = document_id;
      item["doc_text"] = doc->text;
      work.push_back(std::move(item));
    }
    return work;
  };

  auto process = [&, bank](const json& item) {
    ItemOutcome outcome;
    const std::string document_id = item.value("document_id", "");
    const std::string template_id = item.value("template_id", "");
    const std::string record_id = record_id_of(document_id, template_id);
    const auto it = bank->by_id.find(template_id);
    if (it == bank->by_id.end()) {
      throw std::runtime_error("selection references unknown template: " +
                               template_id);
    }
    SourceDocument doc;
    doc.id = document_id;
    doc.text = item.value("doc_text", "");
    const int chunk_index = item.value("chunk_index", 0);
    try {
      const InstantiationResult result =
          backend->instantiate(it->second, doc, chunk_index);
      json line;
      line["record_id"] = record_id;
      line["document_id"] = document_id;
      line["template_id"] = template_id;
      line["chunk_index"] = chunk_index;
      line["similarity"] = item.value("similarity", 0.0);
      if (result.status == InstantiationResult::Status::Incompatible) {
        line["status"] = "incompatible";
        outcome.counters["incompatible"] += 1;
      } else {
        line["status"] = "instantiated";
        line["instruction"] = result.instruction;
        line["answer_markup"] = result.answer_markup;
      }
      outcome.lines.push_back(std::move(line));
    } catch (const MalformedOutputError& e) {
      outcome.dead.push_back(
          dead_letter("instantiate", record_id, "malformed_output", e.what()));
    } catch (const BackendError& e) {
      outcome.dead.push_back(
          dead_letter("instantiate", record_id, "backend_error", e.what()));
    }
    return outcome;
  };

  return run_stream_stage(options, prepare, process);
}

StageReport Orchestrator::run_expand() {
  StageReport report;
  JsonlReader reader(intermediate("instantiations.jsonl"));
  AtomicFileWriter out(intermediate("expanded.jsonl"));
  AtomicFileWriter dead(intermediate("dead/expand.jsonl"));
  DocumentCursor cursor(config_.paths.documents);

  std::string current_doc_id;
  std::unique_ptr<NormalizedDocument> normalized;

  while (auto row = reader.next()) {
    report.records_in += 1;
    const std::string record_id = row->value("record_id", "");
    if (row->value("status", "") == "incompatible") {
      out.write_line(*row);
      report.records_out += 1;
      report.counters["incompatible_passthrough"] += 1;
      continue;
    }
    const std::string document_id = row->value("document_id", "");
    if (document_id != current_doc_id) {
      const SourceDocument* doc = cursor.find(document_id);
      if (doc == nullptr) {
        throw std::runtime_error("record references unknown document: " +
                                 document_id);
      }
      normalized = std::make_unique<NormalizedDocument>(doc->text);
      current_doc_id = document_id;
    }
    try {
      const auto items = parse_excerpt_markup(row->value("answer_markup", ""));
      const ExpandResult result = expand_excerpts(items, *normalized);
      if (!result.ok()) {
        const std::string reason =
            result.status == ExpandStatus::PrefixNotFound ? "prefix_not_found"
                                                          : "suffix_not_found";
        dead.write_line(dead_letter("expand", record_id, reason, result.detail));
        report.dead += 1;
        continue;
      }
      if (result.answer.answer_text.empty()) {
        dead.write_line(dead_letter("expand", record_id, "empty_answer",
                                    "expansion produced no text"));
        report.dead += 1;
        continue;
      }
      json line = *row;
      line["answer_text"] = result.answer.answer_text;
      line["excerpt_ratio"] = result.answer.excerpt_ratio;
      json spans = json::array();
      for (const auto& segment : result.answer.segments) {
        if (segment.kind == AnswerSegment::Kind::Excerpt) {
          spans.push_back({segment.start, segment.end});
        }
      }
      line["excerpt_spans"] = spans;
      if (const auto first = result.answer.first_excerpt_start()) {
        const double denom =
            std::max<std::size_t>(normalized->point_count(), 1);
        line["first_excerpt_frac"] = static_cast<double>(*first) / denom;
      }
      out.write_line(line);
      report.records_out += 1;
      report.counters["expanded"] += 1;
    } catch (const ExcerptError& e) {
      const char* reason = "unbalanced_excerpt_tags";
      if (e.code() == ExcerptError::Code::MultipleEllipses) {
        reason = "multiple_ellipses";
      } else if (e.code() == ExcerptError::Code::EmptyExcerptPart) {
        reason = "empty_excerpt_part";
      }
      dead.write_line(dead_letter("expand", record_id, reason, e.what()));
      report.dead += 1;
    }
  }
  out.commit();
  dead.commit();
  return report;
}

StageReport Orchestrator::run_judge() {
  const StageIo io = stage_io("judge");
  auto backend = make_judge(config_.judge);
  StreamStageOptions options;
  options.name = "judge";
  options.input = intermediate("expanded.jsonl");
  options.output = intermediate("judged.jsonl");
  options.dead_path = intermediate("dead/judge.jsonl");
  options.ckpt_path = intermediate("ckpt/judge.json");
  options.input_hash = inputs_hash(io.inputs);
  options.checkpoint_interval = config_.checkpoint_interval;
  options.workers = config_.workers;
  options.resume = resume_;
  return run_stream_stage(options, nullptr, [&](const json& row) {
    ItemOutcome outcome;
    if (row.value("status", "") == "incompatible") {
      outcome.lines.push_back(row);
      return outcome;
    }
    const std::string record_id = row.value("record_id", "");
    try {
      const JudgeScore score = backend->judge(row.value("instruction", ""),
                                              row.value("answer_text", ""));
      json line = row;
      line["judge_score"] = score.score;
      if (!score.rationale.empty()) {
        line["judge_rationale"] = score.rationale;
      }
      outcome.lines.push_back(std::move(line));
      outcome.counters["score_" + std::to_string(score.score)] += 1;
    } catch (const MalformedOutputError& e) {
      outcome.dead.push_back(
          dead_letter("judge", record_id, "unparseable_score", e.what()));
    } catch (const BackendError& e) {
      outcome.dead.push_back(
          dead_letter("judge", record_id, "backend_error", e.what()));
    } catch (const std::invalid_argument& e) {
      outcome.dead.push_back(
          dead_letter("judge", record_id, "bad_record", e.what()));
    }
    return outcome;
  });
}

StageReport Orchestrator::run_filter() {
  StageReport report;
  JsonlReader reader(intermediate("judged.jsonl"));
  AtomicFileWriter out(intermediate("filtered.jsonl"));
  while (auto row = reader.next()) {
    report.records_in += 1;
    if (row->value("status", "") == "incompatible") {
      report.filtered["incompatible"] += 1;
      continue;
    }
    if (row->value("judge_score", 0) < config_.judge_threshold) {
      report.filtered["judge_below_threshold"] += 1;
      continue;
    }
    if (row->value("excerpt_ratio", 0.0) < config_.min_excerpt_ratio) {
      report.filtered["ratio_below_min"] += 1;
      continue;
    }
    out.write_line(*row);
    report.records_out += 1;
  }
  out.commit();
  return report;
}

StageReport Orchestrator::run_pack() {
  StageReport report;
  const Tokenizer tokenizer = Tokenizer::from_name(config_.tokenizer_name);
  JsonlReader reader(intermediate("filtered.jsonl"));
  AtomicFileWriter out(config_.paths.dataset);
  DocumentCursor cursor(config_.paths.documents);

  TokenBudgetState state;
  std::string group_doc_id;
  std::vector<TrainingRecord> group;

  auto flush_group = [&]() {
    if (group_doc_id.empty()) {
      return;
    }
    const SourceDocument* doc = cursor.find(group_doc_id);
    if (doc == nullptr) {
      throw std::runtime_error("record references unknown document: " +
                               group_doc_id);
    }
    const std::uint64_t doc_tokens = tokenizer.count(doc->text);
    const std::size_t considered = group.size();
    PackOutcome outcome = pack_document(std::move(group), doc_tokens, state,
                                        config_.seed, group_doc_id);
    state = outcome.state;
    for (const auto& record : outcome.kept) {
      json line;
      line["text"] = record.text;
      line["token_count"] = record.token_count;
      line["document_id"] = record.provenance.document_id;
      line["template_id"] = record.provenance.template_id;
      line["chunk_index"] = record.provenance.chunk_index;
      line["judge_score"] = record.provenance.judge_score;
      line["excerpt_ratio"] = record.provenance.excerpt_ratio;
      out.write_line(line);
      report.records_out += 1;
    }
    report.filtered["budget_exhausted"] += considered - outcome.kept.size();
    report.counters["docs_packed"] += 1;
    group.clear();
    group_doc_id.clear();
  };

  while (auto row = reader.next()) {
    report.records_in += 1;
    const std::string document_id = row->value("document_id", "");
    if (document_id != group_doc_id) {
      flush_group();
      group_doc_id = document_id;
    }
    TrainingRecord record;
    record.text = format_record(row->value("instruction", ""),
                                row->value("answer_text", ""));
    record.token_count = tokenizer.count(record.text);
    record.provenance.document_id = document_id;
    record.provenance.template_id = row->value("template_id", "");
    record.provenance.chunk_index = row->value("chunk_index", 0);
    record.provenance.judge_score = row->value("judge_score", 0);
    record.provenance.excerpt_ratio = row->value("excerpt_ratio", 0.0);
    group.push_back(std::move(record));
  }
  flush_group();
  out.commit();
  report.counters["final_carry"] = state.carry;
  return report;
}

StageReport Orchestrator::run_stats() {
  StageReport report;
  std::filesystem::create_directories(config_.paths.stats);

  UsageAccumulator usage;
  std::vector<std::pair<double, double>> growth_points;
  {
    JsonlReader reader(config_.paths.dataset);
    std::set<std::string> unique_templates;
    std::string last_doc;
    std::uint64_t docs_seen = 0;
    auto close_doc = [&]() {
      if (!last_doc.empty()) {
        growth_points.emplace_back(static_cast<double>(docs_seen),
                                   static_cast<double>(unique_templates.size()));
      }
    };
    while (auto row = reader.next()) {
      report.records_in += 1;
      report.records_out += 1;
      const std::string doc = row->value("document_id", "");
      if (doc != last_doc) {
        close_doc();
        last_doc = doc;
        ++docs_seen;
      }
      usage.add(row->value("template_id", ""));
      unique_templates.insert(row->value("template_id", ""));
    }
    close_doc();
  }

  PearsonAccumulator position;
  std::map<int, std::pair<double, std::uint64_t>> per_chunk;
  {
    JsonlReader reader(intermediate("filtered.jsonl"));
    while (auto row = reader.next()) {
      if (!row->contains("first_excerpt_frac")) {
        continue;
      }
      const int chunk = row->value("chunk_index", 0);
      const double frac = (*row)["first_excerpt_frac"].get<double>();
      position.add(static_cast<double>(chunk), frac);
      auto& [sum, count] = per_chunk[chunk];
      sum += frac;
      ++count;
    }
  }

  json report_json;
  report_json["usage"] = nullptr;
  report_json["power_fit"] = nullptr;
  report_json["chunk_position"] = nullptr;

  if (report.records_in > 0) {
    const UsageConcentration concentration = usage.finish();
    json uses = json::object();
    for (const auto& [id, count] : concentration.uses_per_template) {
      uses[id] = count;
    }
    report_json["usage"] = {
        {"total_instructions", concentration.total_instructions},
        {"unique_templates", concentration.unique_templates},
        {"max_share", concentration.max_share},
        {"uses_per_template", uses}};
  }

  std::string csv = "documents,unique_templates\n";
  for (const auto& [x, y] : growth_points) {
    csv += std::to_string(static_cast<std::uint64_t>(x)) + "," +
           std::to_string(static_cast<std::uint64_t>(y)) + "\n";
  }
  write_text_file_atomic(config_.paths.stats / "power_fit_points.csv", csv);
  try {
    const PowerFit fit = fit_power_law(growth_points);
    report_json["power_fit"] = {{"a", fit.a},
                                {"b", fit.b},
                                {"r2", fit.r2},
                                {"space", "log-log"}};
  } catch (const std::invalid_argument&) {
    // fewer than two distinct growth points; leave null
  }

  std::string chunk_csv = "chunk,mean_position\n";
  try {
    const double r = position.correlation();
    json means = json::object();
    for (const auto& [chunk, entry] : per_chunk) {
      const double mean = entry.first / static_cast<double>(entry.second);
      means[std::to_string(chunk)] = mean;
      chunk_csv += std::to_string(chunk) + "," + std::to_string(mean) + "\n";
    }
    report_json["chunk_position"] = {{"pearson_r", r},
                                     {"mean_position_per_chunk", means}};
  } catch (const std::invalid_argument&) {
    for (const auto& [chunk, entry] : per_chunk) {
      chunk_csv += std::to_string(chunk) + "," +
                   std::to_string(entry.first /
                                  static_cast<double>(entry.second)) +
                   "\n";
    }
  }
  write_text_file_atomic(config_.paths.stats / "chunk_positions.csv", chunk_csv);
  write_text_file_atomic(config_.paths.stats / "report.json",
                         report_json.dump(2) + "\n");
  return report;
}

}  // namespace fineforge
