#include "fineforge/backends.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <semaphore>
#include <set>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"

#include "fineforge/excerpt.hpp"
#include "fineforge/rng.hpp"
#include "fineforge/text.hpp"

namespace fineforge {
namespace {

using nlohmann::json;

std::string_view trim_view(std::string_view text) {
  std::size_t begin = 0;
  std::size_t end = text.size();
  while (begin < end && is_space_char(static_cast<unsigned char>(text[begin]))) {
    ++begin;
  }
  while (end > begin && is_space_char(static_cast<unsigned char>(text[end - 1]))) {
    --end;
  }
  return text.substr(begin, end - begin);
}

std::string join_words(std::span<const std::string> words) {
  std::string out;
  for (const auto& word : words) {
    if (!out.empty()) {
      out.push_back(' ');
    }
    out += word;
  }
  return out;
}

std::uint64_t seeded_hash(std::uint64_t seed,
                          std::initializer_list<std::string_view> parts) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) {
    bytes[i] = static_cast<unsigned char>(seed >> (8 * i));
  }
  std::uint64_t state =
      stable_hash64({std::string_view(reinterpret_cast<char*>(bytes), 8)});
  for (std::string_view part : parts) {
    unsigned char len_bytes[8];
    for (int i = 0; i < 8; ++i) {
      len_bytes[i] = static_cast<unsigned char>(part.size() >> (8 * i));
    }
    state ^= stable_hash64(
        {std::string_view(reinterpret_cast<char*>(len_bytes), 8), part});
    state *= 0x100000001b3ULL;
  }
  return state;
}

std::string_view clip_input(const BackendConfig& config,
                            std::string_view text) {
  if (config.max_input_chars == 0) {
    return text;
  }
  return truncate_chars(text, config.max_input_chars);
}

// ---------------------------------------------------------------------------
// Mock backends: pure functions of (seed, input), used for offline runs and
// tests.
// ---------------------------------------------------------------------------

void add_ngram_features(std::string_view gram, std::vector<double>& vec) {
  const std::uint64_t h = stable_hash64({gram});
  const std::size_t bin = h % vec.size();
  vec[bin] += ((h >> 32) & 1) != 0 ? 1.0 : -1.0;
}

std::vector<double> hash_token_vector(std::string_view word, std::size_t dim) {
  std::vector<double> vec(dim, 0.0);
  std::string marked = "^";
  marked += word;
  marked += "$";
  for (std::size_t n = 2; n <= 3; ++n) {
    if (marked.size() < n) {
      continue;
    }
    for (std::size_t i = 0; i + n <= marked.size(); ++i) {
      add_ngram_features(std::string_view(marked).substr(i, n), vec);
    }
  }
  return vec;
}

class MockGenericizer : public GenericizerBackend {
 public:
  explicit MockGenericizer(BackendConfig config) : config_(std::move(config)) {}

  GenericizedQuery genericize(std::string_view query) override {
    const std::string_view trimmed = trim_view(clip_input(config_, query));
    if (trimmed.empty()) {
      throw std::invalid_argument("query must be non-empty");
    }
    const auto words = whitespace_tokens(trimmed);
    GenericizedQuery out;
    if (words.size() == 1) {
      out.template_text = "<fi>topic</fi>";
    } else {
      out.template_text =
          join_words(std::span(words).first(words.size() - 1)) +
          " <fi>topic</fi>";
    }
    std::string topic = words.back();
    while (!topic.empty() && (topic.back() == '.' || topic.back() == '!' ||
                              topic.back() == '?' || topic.back() == ',')) {
      topic.pop_back();
    }
    if (topic.empty()) {
      topic = words.back();
    }
    out.description = "Documents that discuss " + topic + ".";
    return out;
  }

 private:
  BackendConfig config_;
};

class MockDescriber : public DescriberBackend {
 public:
  explicit MockDescriber(BackendConfig config) : config_(std::move(config)) {}

  std::string describe(const SourceDocument& doc) override {
    const std::string_view text = clip_input(config_, doc.text);
    const auto sentences = split_sentences(text);
    if (!sentences.empty()) {
      return sentences.front();
    }
    const std::string_view trimmed = trim_view(text);
    if (trimmed.empty()) {
      throw MalformedOutputError("document " + doc.id +
                                 " yields an empty description");
    }
    return std::string(trimmed);
  }

 private:
  BackendConfig config_;
};

class MockEmbedder : public EmbedderBackend {
 public:
  explicit MockEmbedder(BackendConfig config) : config_(std::move(config)) {
    if (config_.embed_dim == 0) {
      throw std::invalid_argument("embed_dim must be >= 1");
    }
  }

  std::size_t dim() const override { return config_.embed_dim; }

  std::vector<std::vector<double>> embed(
      std::span<const std::string> texts) override {
    std::vector<std::vector<double>> out;
    out.reserve(texts.size());
    for (const auto& text : texts) {
      const TokenMatrix tokens = embed_tokens(text);
      out.push_back(global_mean(tokens));
    }
    return out;
  }

  bool supports_token_embeddings() const override { return true; }

  TokenMatrix embed_tokens(std::string_view text) override {
    const auto words = alnum_lower_tokens(clip_input(config_, text));
    if (words.empty()) {
      throw MalformedOutputError("cannot embed text without word tokens");
    }
    TokenMatrix tokens = TokenMatrix::zeros(words.size(), config_.embed_dim);
    for (std::size_t t = 0; t < words.size(); ++t) {
      const auto vec = hash_token_vector(words[t], config_.embed_dim);
      for (std::size_t i = 0; i < vec.size(); ++i) {
        tokens.data[t * tokens.dim + i] = vec[i];
      }
    }
    return tokens;
  }

 private:
  BackendConfig config_;
};

class MockInstantiator : public InstantiatorBackend {
 public:
  explicit MockInstantiator(BackendConfig config) : config_(std::move(config)) {}

  InstantiationResult instantiate(const InstructionTemplate& tpl,
                                  const SourceDocument& doc,
                                  int chunk_index) override {
    InstantiationResult result;
    result.template_id = tpl.id;
    result.document_id = doc.id;
    result.chunk_index = chunk_index;

    const std::uint64_t h =
        seeded_hash(config_.seed, {"incompatible", tpl.id, doc.id});
    const auto cutoff =
        static_cast<std::uint64_t>(config_.incompatible_rate * 1e6);
    if (h % 1000000 < cutoff) {
      result.status = InstantiationResult::Status::Incompatible;
      return result;
    }

    const std::string_view text = clip_input(config_, doc.text);
    auto sentences = split_sentences(text);
    if (sentences.empty()) {
      const std::string_view trimmed = trim_view(text);
      if (trimmed.empty()) {
        result.status = InstantiationResult::Status::Incompatible;
        return result;
      }
      sentences.emplace_back(trimmed);
    }
    const std::size_t idx =
        std::min(static_cast<std::size_t>(std::max(chunk_index, 0)),
                 sentences.size() - 1);
    const std::string& sentence = sentences[idx];
    const auto words = whitespace_tokens(sentence);
    const std::string fill =
        join_words(std::span(words).first(std::min<std::size_t>(5, words.size())));

    const std::vector<std::string> fills(tpl.complexity(), fill);
    result.status = InstantiationResult::Status::Instantiated;
    result.instruction = apply_template_fills(tpl, fills);

    std::string markup = "In brief, ";
    if (words.size() >= 9) {
      markup += std::string(kExcerptOpenTag) +
                join_words(std::span(words).first(4)) +
                std::string(kEllipsisTag) +
                join_words(std::span(words).last(4)) +
                std::string(kExcerptCloseTag);
    } else {
      markup += std::string(kExcerptOpenTag) + sentence +
                std::string(kExcerptCloseTag);
    }
    result.answer_markup = std::move(markup);
    return result;
  }

 private:
  BackendConfig config_;
};

class MockJudge : public JudgeBackend {
 public:
  explicit MockJudge(BackendConfig config) : config_(std::move(config)) {}

  JudgeScore judge(std::string_view instruction,
                   std::string_view answer) override {
    if (trim_view(instruction).empty() || trim_view(answer).empty()) {
      throw std::invalid_argument("instruction and answer must be non-empty");
    }
    const bool long_enough =
        count_code_points(answer) >= config_.judge_min_answer_chars;
    bool overlaps = false;
    if (long_enough) {
      const auto answer_words = alnum_lower_tokens(answer);
      const std::set<std::string> vocabulary(answer_words.begin(),
                                             answer_words.end());
      for (const auto& word : alnum_lower_tokens(instruction)) {
        if (word.size() >= 4 && vocabulary.count(word) > 0) {
          overlaps = true;
          break;
        }
      }
    }
    JudgeScore score;
    score.score = long_enough && overlaps ? 5 : 2;
    score.rationale = long_enough && overlaps
                          ? "answer is grounded and substantial"
                          : "answer is short or off-topic";
    return score;
  }

 private:
  BackendConfig config_;
};

// ---------------------------------------------------------------------------
// HTTP backends: the common chat-completion JSON protocol plus the matching
// embeddings endpoint.
// ---------------------------------------------------------------------------

struct ParsedUrl {
  std::string base;  // scheme://host[:port]
  std::string path;
};

ParsedUrl parse_url(const std::string& url) {
  const std::size_t scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw std::invalid_argument("backend url must include a scheme: " + url);
  }
  const std::size_t path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    return {url, "/"};
  }
  return {url.substr(0, path_start), url.substr(path_start)};
}

bool retryable_status(int status) {
  return status == 408 || status == 425 || status == 429 || status >= 500;
}

class HttpTransport {
 public:
  explicit HttpTransport(BackendConfig config)
      : config_(std::move(config)),
        url_(parse_url(config_.url)),
        slots_(std::max(config_.concurrency, 1)) {
    if (const char* token = std::getenv(config_.token_env.c_str())) {
      if (token[0] != '\0') {
        bearer_ = token;
      }
    }
  }

  const BackendConfig& config() const { return config_; }

  json post(const json& body) {
    std::string last_error;
    for (int attempt = 0; attempt <= config_.retries; ++attempt) {
      if (attempt > 0) {
        const auto delay =
            std::chrono::milliseconds(config_.backoff_ms) * (1 << (attempt - 1));
        std::this_thread::sleep_for(delay);
      }
      httplib::Result res = send(body);
      if (!res) {
        last_error = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 200) {
        try {
          return json::parse(res->body);
        } catch (const json::exception& e) {
          throw MalformedOutputError(std::string("response is not JSON: ") +
                                     e.what());
        }
      }
      if (!retryable_status(res->status)) {
        throw BackendError("http " + std::to_string(res->status) + " from " +
                           config_.url + ": " + res->body);
      }
      last_error = "http " + std::to_string(res->status);
    }
    throw BackendError("request to " + config_.url + " failed after " +
                       std::to_string(config_.retries + 1) +
                       " attempts: " + last_error);
  }

 private:
  httplib::Result send(const json& body) {
    // At most `concurrency` requests in flight per backend.
    slots_.acquire();
    struct Release {
      std::counting_semaphore<1 << 20>& slots;
      ~Release() { slots.release(); }
    } release{slots_};

    httplib::Client client(url_.base);
    client.set_tcp_nodelay(true);
    const auto timeout =
        std::chrono::milliseconds(static_cast<long>(config_.timeout_seconds * 1000));
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    httplib::Headers headers;
    if (!bearer_.empty()) {
      headers.emplace("Authorization", "Bearer " + bearer_);
    }
    return client.Post(url_.path, headers, body.dump(), "application/json");
  }

  BackendConfig config_;
  ParsedUrl url_;
  std::counting_semaphore<1 << 20> slots_;
  std::string bearer_;
};

ChatResponse chat_completion(HttpTransport& transport,
                             const std::vector<ChatMessage>& messages) {
  ChatRequest request;
  request.model = transport.config().model;
  request.messages = messages;
  request.temperature = transport.config().temperature;
  request.validate();

  json body;
  body["model"] = request.model;
  body["temperature"] = request.temperature;
  if (request.max_tokens > 0) {
    body["max_tokens"] = request.max_tokens;
  }
  body["messages"] = json::array();
  for (const auto& message : request.messages) {
    body["messages"].push_back(
        {{"role", message.role}, {"content", message.content}});
  }
  const json reply = transport.post(body);
  if (!reply.contains("choices") || reply["choices"].empty()) {
    throw MalformedOutputError("chat response carries no choices");
  }
  const json& choice = reply["choices"][0];
  if (!choice.contains("message") || !choice["message"].contains("content") ||
      !choice["message"]["content"].is_string()) {
    throw MalformedOutputError("chat response carries no message content");
  }
  ChatResponse response;
  response.content = choice["message"]["content"].get<std::string>();
  response.finish_reason = choice.value("finish_reason", "");
  return response;
}

class HttpGenericizer : public GenericizerBackend {
 public:
  explicit HttpGenericizer(const BackendConfig& config) : transport_(config) {
    for (const auto& name : config.prompt_chain) {
      prompts_.push_back(load_prompt_file(config.prompts_dir / name));
    }
    if (prompts_.empty()) {
      throw std::invalid_argument("genericizer prompt chain is empty");
    }
  }

  GenericizedQuery genericize(std::string_view query) override {
    const std::string clipped(clip_input(transport_.config(), query));
    if (trim_view(clipped).empty()) {
      throw std::invalid_argument("query must be non-empty");
    }
    std::string previous;
    std::string reply;
    for (const auto& prompt : prompts_) {
      const std::string rendered = render_prompt(
          prompt, {{"query", clipped}, {"previous", previous}});
      reply = chat_completion(transport_, {{"user", rendered}}).content;
      previous = reply;
    }
    json parsed;
    try {
      parsed = json::parse(reply);
    } catch (const json::exception&) {
      throw MalformedOutputError("genericizer reply is not JSON: " + reply);
    }
    GenericizedQuery out;
    out.template_text = parsed.value("template", "");
    out.description = parsed.value("description", "");
    if (out.description.empty()) {
      throw MalformedOutputError("genericizer reply has no description");
    }
    try {
      parse_template(out.template_text);
    } catch (const TemplateError& e) {
      throw MalformedOutputError(std::string("genericizer template invalid: ") +
                                 e.what());
    }
    return out;
  }

 private:
  HttpTransport transport_;
  std::vector<std::string> prompts_;
};

class HttpDescriber : public DescriberBackend {
 public:
  explicit HttpDescriber(const BackendConfig& config)
      : transport_(config),
        prompt_(load_prompt_file(config.prompts_dir / "describe.txt")) {}

  std::string describe(const SourceDocument& doc) override {
    const std::string rendered = render_prompt(
        prompt_,
        {{"document", std::string(clip_input(transport_.config(), doc.text))}});
    const std::string reply =
        chat_completion(transport_, {{"user", rendered}}).content;
    const std::string_view trimmed = trim_view(reply);
    if (trimmed.empty()) {
      throw MalformedOutputError("describer returned an empty reply");
    }
    return std::string(trimmed);
  }

 private:
  HttpTransport transport_;
  std::string prompt_;
};

class HttpEmbedder : public EmbedderBackend {
 public:
  explicit HttpEmbedder(const BackendConfig& config) : transport_(config) {}

  std::size_t dim() const override { return expected_dim_.load(); }

  std::vector<std::vector<double>> embed(
      std::span<const std::string> texts) override {
    if (texts.empty()) {
      throw std::invalid_argument("embedding batch must be non-empty");
    }
    json body;
    body["model"] = transport_.config().model;
    body["input"] = json::array();
    for (const auto& text : texts) {
      body["input"].push_back(
          std::string(clip_input(transport_.config(), text)));
    }
    const json reply = transport_.post(body);
    if (!reply.contains("data") || !reply["data"].is_array() ||
        reply["data"].size() != texts.size()) {
      throw MalformedOutputError("embedding response shape mismatch");
    }
    std::vector<std::vector<double>> out(texts.size());
    for (const auto& item : reply["data"]) {
      const std::size_t index = item.value("index", out.size());
      if (index >= out.size() || !item.contains("embedding")) {
        throw MalformedOutputError("embedding response shape mismatch");
      }
      out[index] = item["embedding"].get<std::vector<double>>();
      check_dim(out[index].size());
    }
    return out;
  }

 private:
  void check_dim(std::size_t got) {
    std::size_t expected = 0;
    if (expected_dim_.compare_exchange_strong(expected, got)) {
      return;
    }
    if (expected != got) {
      throw BackendError("embedding dimension drifted from " +
                         std::to_string(expected) + " to " +
                         std::to_string(got));
    }
  }

  HttpTransport transport_;
  std::atomic<std::size_t> expected_dim_{0};
};

class HttpInstantiator : public InstantiatorBackend {
 public:
  explicit HttpInstantiator(const BackendConfig& config)
      : transport_(config),
        prompt_(load_prompt_file(config.prompts_dir / "instantiate.txt")) {}

  InstantiationResult instantiate(const InstructionTemplate& tpl,
                                  const SourceDocument& doc,
                                  int chunk_index) override {
    InstantiationResult result;
    result.template_id = tpl.id;
    result.document_id = doc.id;
    result.chunk_index = chunk_index;

    const std::string rendered = render_prompt(
        prompt_,
        {{"template", tpl.template_text},
         {"description", tpl.compatible_doc_description},
         {"document", std::string(clip_input(transport_.config(), doc.text))},
         {"chunk_index", std::to_string(chunk_index)}});
    const std::string reply =
        chat_completion(transport_, {{"user", rendered}}).content;
    const std::string_view trimmed = trim_view(reply);
    if (trimmed == "null") {
      result.status = InstantiationResult::Status::Incompatible;
      return result;
    }
    json parsed;
    try {
      parsed = json::parse(trimmed);
    } catch (const json::exception&) {
      throw MalformedOutputError("instantiator reply is neither null nor JSON");
    }
    if (parsed.is_null()) {
      result.status = InstantiationResult::Status::Incompatible;
      return result;
    }
    result.instruction = parsed.value("instruction", "");
    result.answer_markup = parsed.value("answer", "");
    if (result.instruction.empty() || result.answer_markup.empty()) {
      throw MalformedOutputError(
          "instantiator reply is missing instruction or answer");
    }
    result.status = InstantiationResult::Status::Instantiated;
    return result;
  }

 private:
  HttpTransport transport_;
  std::string prompt_;
};

class HttpJudge : public JudgeBackend {
 public:
  explicit HttpJudge(const BackendConfig& config)
      : transport_(config),
        prompt_(load_prompt_file(config.prompts_dir / "judge.txt")) {}

  JudgeScore judge(std::string_view instruction,
                   std::string_view answer) override {
    const std::string rendered = render_prompt(
        prompt_, {{"instruction", std::string(instruction)},
                  {"answer", std::string(answer)}});
    const std::string reply =
        chat_completion(transport_, {{"user", rendered}}).content;
    return parse_judge_reply(reply);
  }

 private:
  HttpTransport transport_;
  std::string prompt_;
};

}  // namespace

void ChatRequest::validate() const {
  if (messages.empty()) {
    throw std::invalid_argument("chat request has no messages");
  }
  for (const auto& message : messages) {
    if (message.role != "system") {
      if (message.role != "user") {
        throw std::invalid_argument(
            "first non-system chat message must be from the user");
      }
      break;
    }
  }
}

TokenMatrix EmbedderBackend::embed_tokens(std::string_view) {
  throw BackendError("backend does not support token-level embeddings");
}

std::string apply_template_fills(const InstructionTemplate& tpl,
                                 std::span<const std::string> fills) {
  try {
    return instantiate_template(tpl, fills);
  } catch (const TemplateError& e) {
    throw MalformedOutputError(std::string("instantiation failed: ") +
                               e.what());
  }
}

std::unique_ptr<GenericizerBackend> make_genericizer(
    const BackendConfig& config) {
  if (config.is_mock()) {
    return std::make_unique<MockGenericizer>(config);
  }
  return std::make_unique<HttpGenericizer>(config);
}

std::unique_ptr<DescriberBackend> make_describer(const BackendConfig& config) {
  if (config.is_mock()) {
    return std::make_unique<MockDescriber>(config);
  }
  return std::make_unique<HttpDescriber>(config);
}

std::unique_ptr<EmbedderBackend> make_embedder(const BackendConfig& config) {
  if (config.is_mock()) {
    return std::make_unique<MockEmbedder>(config);
  }
  return std::make_unique<HttpEmbedder>(config);
}

std::unique_ptr<InstantiatorBackend> make_instantiator(
    const BackendConfig& config) {
  if (config.is_mock()) {
    return std::make_unique<MockInstantiator>(config);
  }
  return std::make_unique<HttpInstantiator>(config);
}

std::unique_ptr<JudgeBackend> make_judge(const BackendConfig& config) {
  if (config.is_mock()) {
    return std::make_unique<MockJudge>(config);
  }
  return std::make_unique<HttpJudge>(config);
}

JudgeScore parse_judge_reply(std::string_view reply) {
  std::size_t i = 0;
  while (i < reply.size() &&
         is_space_char(static_cast<unsigned char>(reply[i]))) {
    ++i;
  }
  std::size_t digits_end = i;
  while (digits_end < reply.size() && reply[digits_end] >= '0' &&
         reply[digits_end] <= '9') {
    ++digits_end;
  }
  if (digits_end == i || digits_end - i > 2) {
    throw MalformedOutputError("judge reply has no leading score: " +
                               std::string(reply.substr(0, 40)));
  }
  const int score = std::stoi(std::string(reply.substr(i, digits_end - i)));
  if (score < 1 || score > 5) {
    throw MalformedOutputError("judge score out of range: " +
                               std::to_string(score));
  }
  std::size_t rest = digits_end;
  while (rest < reply.size()) {
    const char c = reply[rest];
    if (is_space_char(static_cast<unsigned char>(c)) || c == '-' || c == ':' ||
        c == '.' || c == ',') {
      ++rest;
      continue;
    }
    // UTF-8 en/em dash
    if (rest + 2 < reply.size() &&
        static_cast<unsigned char>(c) == 0xE2 &&
        static_cast<unsigned char>(reply[rest + 1]) == 0x80) {
      rest += 3;
      continue;
    }
    break;
  }
  JudgeScore out;
  out.score = score;
  out.rationale = std::string(trim_view(reply.substr(rest)));
  return out;
}

std::string render_prompt(std::string_view prompt_template,
                          const std::map<std::string, std::string>& values) {
  std::string out(prompt_template);
  for (const auto& [key, value] : values) {
    const std::string marker = "{{" + key + "}}";
    std::size_t pos = 0;
    while ((pos = out.find(marker, pos)) != std::string::npos) {
      out.replace(pos, marker.size(), value);
      pos += value.size();
    }
  }
  return out;
}

std::string load_prompt_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::invalid_argument("cannot read prompt file: " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> sentences;
  std::string current;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    current.push_back(c);
    if (c == '.' || c == '!' || c == '?') {
      const bool at_end = i + 1 == text.size();
      const bool before_space =
          !at_end && is_space_char(static_cast<unsigned char>(text[i + 1]));
      if (at_end || before_space) {
        const std::string_view trimmed = trim_view(current);
        if (!trimmed.empty()) {
          sentences.emplace_back(trimmed);
        }
        current.clear();
      }
    }
  }
  const std::string_view trimmed = trim_view(current);
  if (!trimmed.empty()) {
    sentences.emplace_back(trimmed);
  }
  return sentences;
}

}  // namespace fineforge
