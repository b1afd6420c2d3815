#include "fineforge/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "fineforge/tokenizer.hpp"

namespace fineforge {
namespace {

using nlohmann::json;

std::filesystem::path resolve(const std::filesystem::path& base,
                              const std::string& value) {
  if (value.empty()) {
    return {};
  }
  std::filesystem::path p(value);
  return p.is_absolute() ? p : base / p;
}

BackendConfig backend_from_json(const json& node,
                                const std::filesystem::path& base_dir,
                                std::uint64_t seed) {
  BackendConfig config;
  config.url = node.value("url", std::string("mock:"));
  config.model = node.value("model", config.model);
  config.max_input_chars = node.value("max_input_chars", config.max_input_chars);
  config.temperature = node.value("temperature", config.temperature);
  config.retries = node.value("retries", config.retries);
  config.concurrency = node.value("concurrency", config.concurrency);
  config.timeout_seconds = node.value("timeout_seconds", config.timeout_seconds);
  config.backoff_ms = node.value("backoff_ms", config.backoff_ms);
  config.token_env = node.value("token_env", config.token_env);
  config.embed_dim = node.value("embed_dim", config.embed_dim);
  config.incompatible_rate =
      node.value("incompatible_rate", config.incompatible_rate);
  config.judge_min_answer_chars =
      node.value("judge_min_answer_chars", config.judge_min_answer_chars);
  if (node.contains("prompts_dir")) {
    config.prompts_dir = resolve(base_dir, node["prompts_dir"].get<std::string>());
  }
  if (node.contains("prompt_chain")) {
    config.prompt_chain = node["prompt_chain"].get<std::vector<std::string>>();
  }
  config.seed = seed;
  return config;
}

json backend_semantic_json(const BackendConfig& config) {
  // Only fields that change what the backend produces; retries, concurrency
  // and timeouts affect delivery, not content.
  json out;
  out["url"] = config.url;
  out["model"] = config.model;
  out["max_input_chars"] = config.max_input_chars;
  out["temperature"] = config.temperature;
  out["embed_dim"] = config.embed_dim;
  out["incompatible_rate"] = config.incompatible_rate;
  out["judge_min_answer_chars"] = config.judge_min_answer_chars;
  out["prompt_chain"] = config.prompt_chain;
  return out;
}

}  // namespace

json distribution_to_json(const ComplexityDistribution& dist) {
  json out = json::object();
  for (int bucket = 0; bucket < kComplexityBuckets; ++bucket) {
    if (dist.probability[bucket] != 0.0) {
      out[bucket_label(bucket)] = dist.probability[bucket];
    }
  }
  return out;
}

ComplexityDistribution distribution_from_json(const json& value) {
  if (!value.is_object()) {
    throw ConfigError("target_distribution must be an object");
  }
  ComplexityDistribution dist;
  for (const auto& [label, probability] : value.items()) {
    const int bucket = bucket_from_label(label);
    if (bucket < 0) {
      throw ConfigError("unknown complexity bucket: " + label);
    }
    dist.probability[bucket] = probability.get<double>();
  }
  dist.validate();
  return dist;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ConfigError("cannot open config: " + path.string());
  }
  json root;
  try {
    in >> root;
  } catch (const json::exception& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  return from_json(root, path.parent_path());
}

PipelineConfig PipelineConfig::from_json(const json& root,
                                         const std::filesystem::path& base_dir) {
  PipelineConfig config;
  try {
    config.seed = root.value("seed", config.seed);
    config.workers = root.value("workers", config.workers);
    config.judge_threshold = root.value("judge_threshold", config.judge_threshold);
    config.min_excerpt_ratio =
        root.value("min_excerpt_ratio", config.min_excerpt_ratio);
    config.tokenizer_name = root.value("tokenizer", config.tokenizer_name);
    config.describe_sample_limit =
        root.value("describe_sample_limit", config.describe_sample_limit);
    config.checkpoint_interval =
        root.value("checkpoint_interval", config.checkpoint_interval);

    if (root.contains("paths")) {
      const json& paths = root["paths"];
      config.paths.templates = resolve(base_dir, paths.value("templates", ""));
      config.paths.documents = resolve(base_dir, paths.value("documents", ""));
      config.paths.queries = resolve(base_dir, paths.value("queries", ""));
      config.paths.benchmark = resolve(base_dir, paths.value("benchmark", ""));
      config.paths.descriptions =
          resolve(base_dir, paths.value("descriptions", ""));
      config.paths.intermediates =
          resolve(base_dir, paths.value("intermediates", "intermediates"));
      config.paths.dataset =
          resolve(base_dir, paths.value("dataset", "dataset.jsonl"));
      config.paths.stats = resolve(base_dir, paths.value("stats", "stats"));
    }

    if (root.contains("match")) {
      const json& match = root["match"];
      config.match.threshold = match.value("threshold", config.match.threshold);
      config.match.top_m = match.value("top_m", config.match.top_m);
      config.match.include_global =
          match.value("include_global", config.match.include_global);
    }

    if (root.contains("pooling")) {
      const json& pooling = root["pooling"];
      config.pooling.chunks = pooling.value("chunks", config.pooling.chunks);
      config.pooling.sigma = pooling.value("sigma", config.pooling.sigma);
      config.pooling.alpha = pooling.value("alpha", config.pooling.alpha);
      config.pooling.hard_mask_threshold = pooling.value(
          "hard_mask_threshold", config.pooling.hard_mask_threshold);
    }

    if (root.contains("sampler")) {
      const json& sampler = root["sampler"];
      config.picks_per_document =
          sampler.value("picks_per_document", config.picks_per_document);
      if (sampler.contains("target_distribution")) {
        config.target_distribution =
            distribution_from_json(sampler["target_distribution"]);
      }
    }

    if (root.contains("decontamination")) {
      config.decontamination_ngram =
          root["decontamination"].value("ngram", config.decontamination_ngram);
    }

    const json backends = root.value("backends", json::object());
    config.genericizer = backend_from_json(
        backends.value("genericizer", json::object()), base_dir, config.seed);
    config.describer = backend_from_json(
        backends.value("describer", json::object()), base_dir, config.seed);
    config.embedder = backend_from_json(
        backends.value("embedder", json::object()), base_dir, config.seed);
    config.instantiator = backend_from_json(
        backends.value("instantiator", json::object()), base_dir, config.seed);
    config.judge = backend_from_json(backends.value("judge", json::object()),
                                     base_dir, config.seed);
  } catch (const json::exception& e) {
    throw ConfigError("bad config value: " + std::string(e.what()));
  }

  config.validate();
  return config;
}

void PipelineConfig::validate() const {
  if (paths.documents.empty()) {
    throw ConfigError("paths.documents is required");
  }
  if (paths.templates.empty() && paths.queries.empty()) {
    throw ConfigError("one of paths.templates or paths.queries is required");
  }
  if (paths.intermediates.empty() || paths.dataset.empty()) {
    throw ConfigError("paths.intermediates and paths.dataset are required");
  }
  if (judge_threshold < 1 || judge_threshold > 5) {
    throw ConfigError("judge_threshold must be within 1..5");
  }
  if (!(min_excerpt_ratio >= 0.0 && min_excerpt_ratio <= 1.0)) {
    throw ConfigError("min_excerpt_ratio must be within [0, 1]");
  }
  if (!(match.threshold > -1.0 && match.threshold <= 1.0)) {
    throw ConfigError("match.threshold must be within (-1, 1]");
  }
  if (match.top_m < 1) {
    throw ConfigError("match.top_m must be >= 1");
  }
  if (picks_per_document < 1) {
    throw ConfigError("sampler.picks_per_document must be >= 1");
  }
  if (decontamination_ngram < 1) {
    throw ConfigError("decontamination.ngram must be >= 1");
  }
  if (checkpoint_interval < 1) {
    throw ConfigError("checkpoint_interval must be >= 1");
  }
  if (workers < 1) {
    throw ConfigError("workers must be >= 1");
  }
  try {
    pooling.validate();
  } catch (const PoolingError& e) {
    throw ConfigError(std::string("pooling: ") + e.what());
  }
  if (target_distribution) {
    try {
      target_distribution->validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("target_distribution: ") + e.what());
    }
  }
  try {
    (void)Tokenizer::from_name(tokenizer_name);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  std::set<std::string> seen;
  for (const auto* path :
       {&paths.templates, &paths.documents, &paths.queries, &paths.benchmark,
        &paths.descriptions, &paths.dataset}) {
    if (path->empty()) {
      continue;
    }
    if (!seen.insert(path->lexically_normal().string()).second) {
      throw ConfigError("paths must be distinct: " + path->string());
    }
  }
}

nlohmann::json PipelineConfig::stage_semantic_config(
    std::string_view stage) const {
  json out;
  out["seed"] = seed;
  if (stage == "genericize") {
    out["backend"] = backend_semantic_json(genericizer);
  } else if (stage == "describe") {
    out["backend"] = backend_semantic_json(describer);
    out["sample_limit"] = describe_sample_limit;
  } else if (stage == "decontaminate") {
    out["ngram"] = decontamination_ngram;
  } else if (stage == "embed") {
    out["backend"] = backend_semantic_json(embedder);
    out["pooling"] = {{"chunks", pooling.chunks},
                      {"sigma", pooling.sigma},
                      {"alpha", pooling.alpha}};
  } else if (stage == "match") {
    out["match"] = {{"threshold", match.threshold},
                    {"top_m", match.top_m},
                    {"include_global", match.include_global}};
  } else if (stage == "sample") {
    out["picks_per_document"] = picks_per_document;
    out["target"] = target_distribution ? distribution_to_json(*target_distribution)
                                        : json();
  } else if (stage == "instantiate") {
    out["backend"] = backend_semantic_json(instantiator);
  } else if (stage == "judge") {
    out["backend"] = backend_semantic_json(judge);
  } else if (stage == "filter") {
    out["judge_threshold"] = judge_threshold;
    out["min_excerpt_ratio"] = min_excerpt_ratio;
  } else if (stage == "pack") {
    out["tokenizer"] = tokenizer_name;
  }
  return out;
}

}  // namespace fineforge
