#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fineforge/document.hpp"
#include "fineforge/pooling.hpp"
#include "fineforge/template.hpp"

namespace fineforge {

// Transport or availability failure. Transient by assumption: callers retry
// up to the configured limit and dead-letter afterwards.
class BackendError : public std::runtime_error {
 public:
  explicit BackendError(const std::string& message)
      : std::runtime_error(message) {}
};

// The model replied, but with something unusable (unparseable template,
// missing fields, out-of-range score). Never retried.
class MalformedOutputError : public std::runtime_error {
 public:
  explicit MalformedOutputError(const std::string& message)
      : std::runtime_error(message) {}
};

struct ChatMessage {
  std::string role;  // system | user | assistant
  std::string content;
};

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  int max_tokens = 0;  // 0 = server default

  // Messages must be non-empty and the first non-system role must be user.
  void validate() const;
};

struct ChatResponse {
  std::string content;
  std::string finish_reason;
};

struct JudgeScore {
  int score = 0;  // 1..5
  std::string rationale;
};

struct InstantiationResult {
  enum class Status { Instantiated, Incompatible };
  Status status = Status::Incompatible;
  std::string instruction;
  std::string answer_markup;
  std::string template_id;
  std::string document_id;
  int chunk_index = 0;
};

struct GenericizedQuery {
  std::string template_text;
  std::string description;
};

struct BackendConfig {
  std::string url;  // "mock:" selects the deterministic offline backend
  std::string model = "default";
  std::size_t max_input_chars = 0;  // 0 = unlimited
  double temperature = 0.0;
  int retries = 3;
  int concurrency = 8;
  double timeout_seconds = 30.0;
  int backoff_ms = 250;
  std::string token_env = "FINEFORGE_API_TOKEN";
  std::filesystem::path prompts_dir;  // prompt text files for HTTP roles
  // Prompt files applied in order by the genericizer; later steps see the
  // previous step's output as {{previous}}.
  std::vector<std::string> prompt_chain = {"genericize.txt"};
  std::uint64_t seed = 0;

  // Mock knobs.
  std::size_t embed_dim = 64;
  double incompatible_rate = 0.05;
  std::size_t judge_min_answer_chars = 40;

  bool is_mock() const { return url.rfind("mock:", 0) == 0; }
};

class GenericizerBackend {
 public:
  virtual ~GenericizerBackend() = default;
  virtual GenericizedQuery genericize(std::string_view query) = 0;
};

class DescriberBackend {
 public:
  virtual ~DescriberBackend() = default;
  virtual std::string describe(const SourceDocument& doc) = 0;
};

class EmbedderBackend {
 public:
  virtual ~EmbedderBackend() = default;
  virtual std::size_t dim() const = 0;
  virtual std::vector<std::vector<double>> embed(
      std::span<const std::string> texts) = 0;
  // Token-level embeddings for pooling; not every backend can produce them.
  virtual bool supports_token_embeddings() const { return false; }
  virtual TokenMatrix embed_tokens(std::string_view text);
};

class InstantiatorBackend {
 public:
  virtual ~InstantiatorBackend() = default;
  virtual InstantiationResult instantiate(const InstructionTemplate& tpl,
                                          const SourceDocument& doc,
                                          int chunk_index) = 0;
};

class JudgeBackend {
 public:
  virtual ~JudgeBackend() = default;
  virtual JudgeScore judge(std::string_view instruction,
                           std::string_view answer) = 0;
};

std::unique_ptr<GenericizerBackend> make_genericizer(const BackendConfig&);
std::unique_ptr<DescriberBackend> make_describer(const BackendConfig&);
std::unique_ptr<EmbedderBackend> make_embedder(const BackendConfig&);
std::unique_ptr<InstantiatorBackend> make_instantiator(const BackendConfig&);
std::unique_ptr<JudgeBackend> make_judge(const BackendConfig&);

// Leading-integer score extraction: "4 - relevant" parses to 4 with the rest
// as rationale; anything without a leading 1..5 integer is malformed.
JudgeScore parse_judge_reply(std::string_view reply);

// Applies fills the way a backend reply is interpreted: template arity and
// empty-fill violations surface as malformed output rather than as template
// errors.
std::string apply_template_fills(const InstructionTemplate& tpl,
                                 std::span<const std::string> fills);

// {{name}} substitution for prompt files.
std::string render_prompt(std::string_view prompt_template,
                          const std::map<std::string, std::string>& values);
std::string load_prompt_file(const std::filesystem::path& path);

// Sentence-ish splitting used by the mock backends: breaks after ., ! or ?
// followed by whitespace.
std::vector<std::string> split_sentences(std::string_view text);

}  // namespace fineforge
