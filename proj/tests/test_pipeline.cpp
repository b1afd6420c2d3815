#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "fineforge/backends.hpp"
#include "fineforge/jsonl.hpp"
#include "fineforge/pipeline.hpp"

using namespace fineforge;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path toy_dir() { return fs::path(FINEFORGE_TOY_DIR); }

fs::path fresh_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() /
                       ("fineforge_pipe_" + tag + "_" +
                        std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

json toy_config_json(const fs::path& out_root) {
  std::ifstream in(toy_dir() / "config.json");
  json root;
  in >> root;
  root["paths"]["templates"] = (toy_dir() / "templates.jsonl").string();
  root["paths"]["documents"] = (toy_dir() / "documents.jsonl").string();
  root["paths"]["queries"] = (toy_dir() / "queries.jsonl").string();
  root["paths"]["benchmark"] = (toy_dir() / "benchmark.jsonl").string();
  root["paths"]["descriptions"] = (out_root / "descriptions.jsonl").string();
  root["paths"]["intermediates"] = (out_root / "intermediates").string();
  root["paths"]["dataset"] = (out_root / "dataset.jsonl").string();
  root["paths"]["stats"] = (out_root / "stats").string();
  return root;
}

PipelineConfig toy_config(const fs::path& out_root, int workers = 1) {
  json root = toy_config_json(out_root);
  root["workers"] = workers;
  return PipelineConfig::from_json(root, out_root);
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

void write_lines(const fs::path& path, const std::vector<json>& rows) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  for (const auto& row : rows) {
    out << row.dump() << "\n";
  }
}

// Mirrors the orchestrator's multi-input hash so tests can forge a
// mid-stage checkpoint.
std::uint64_t combined_hash(const std::vector<fs::path>& inputs) {
  std::uint64_t state = 0xcbf29ce484222325ULL;
  for (const auto& path : inputs) {
    state ^= file_hash(path);
    state *= 0x100000001b3ULL;
  }
  return state;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(value));
  return std::string(buf);
}

}  // namespace

TEST_CASE("full toy run is deterministic across worker counts") {
  const fs::path dir1 = fresh_dir("w1");
  const fs::path dir4 = fresh_dir("w4");
  Orchestrator one(toy_config(dir1, 1));
  Orchestrator four(toy_config(dir4, 4));
  const auto reports1 = one.run_all();
  const auto reports4 = four.run_all();

  CHECK(read_bytes(dir1 / "dataset.jsonl") ==
        read_bytes(dir4 / "dataset.jsonl"));
  CHECK(read_bytes(dir1 / "intermediates" / "instantiations.jsonl") ==
        read_bytes(dir4 / "intermediates" / "instantiations.jsonl"));
  CHECK(read_bytes(dir1 / "intermediates" / "judged.jsonl") ==
        read_bytes(dir4 / "intermediates" / "judged.jsonl"));

  REQUIRE(reports1.size() == reports4.size());
  for (std::size_t i = 0; i < reports1.size(); ++i) {
    CHECK(reports1[i].conserved());
    CHECK(reports1[i].records_in == reports4[i].records_in);
    CHECK(reports1[i].records_out == reports4[i].records_out);
    CHECK(reports1[i].dead == reports4[i].dead);
  }

  // The dataset has substance: records exist and reference real documents.
  const auto rows = read_jsonl(dir1 / "dataset.jsonl");
  CHECK(rows.size() > 100);
  for (const auto& row : rows) {
    CHECK(row.value("judge_score", 0) >= 4);
    CHECK(row.value("excerpt_ratio", 0.0) >= 0.80);
    CHECK(row.value("text", "").rfind("Instruction: ", 0) == 0);
    CHECK(row.value("text", "").find("\n\nAnswer: ") != std::string::npos);
  }

  fs::remove_all(dir1);
  fs::remove_all(dir4);
}

TEST_CASE("rerunning with unchanged inputs is a no-op") {
  const fs::path dir = fresh_dir("noop");
  {
    Orchestrator orchestrator(toy_config(dir));
    orchestrator.run_all();
  }
  Orchestrator again(toy_config(dir));
  const auto match = again.run_stage("match");
  CHECK(match.skipped);
  const auto reports = again.run_all();
  for (const auto& report : reports) {
    CHECK(report.skipped);
  }
  fs::remove_all(dir);
}

TEST_CASE("changing the match threshold reruns match and downstream") {
  const fs::path dir = fresh_dir("invalidate");
  {
    Orchestrator orchestrator(toy_config(dir));
    orchestrator.run_all();
  }
  json root = toy_config_json(dir);
  root["match"]["threshold"] = 0.70;
  Orchestrator changed(PipelineConfig::from_json(root, dir));
  const auto reports = changed.run_all();
  bool saw_match = false;
  for (const auto& report : reports) {
    if (report.stage == "embed" || report.stage == "index" ||
        report.stage == "decontaminate") {
      CHECK(report.skipped);
    }
    if (report.stage == "match") {
      saw_match = true;
      CHECK_FALSE(report.skipped);
    }
    if (report.stage == "sample" || report.stage == "pack") {
      CHECK_FALSE(report.skipped);  // candidate stream changed
    }
  }
  CHECK(saw_match);
  fs::remove_all(dir);
}

TEST_CASE("resume restarts instantiate from its last checkpoint") {
  // Reference run for the expected output bytes.
  const fs::path ref = fresh_dir("resume_ref");
  {
    Orchestrator orchestrator(toy_config(ref));
    orchestrator.run_all();
  }
  const std::string final_bytes =
      read_bytes(ref / "intermediates" / "instantiations.jsonl");

  // Second directory, stopped after sampling.
  const fs::path dir = fresh_dir("resume");
  PipelineConfig config = toy_config(dir);
  config.checkpoint_interval = 30;
  {
    Orchestrator orchestrator(config);
    for (const std::string stage :
         {"genericize", "describe", "decontaminate", "embed", "index", "match",
          "sample"}) {
      orchestrator.run_stage(stage);
    }
  }

  // Forge the state a mid-stage kill leaves behind: a partial output covering
  // the first checkpoint batch (30 input rows), a checkpoint file recording
  // it, and a torn trailing write past the checkpoint.
  const fs::path inter = dir / "intermediates";
  std::size_t expected_lines = 0;
  {
    const auto selections = read_jsonl(inter / "selections.jsonl");
    REQUIRE(selections.size() > 30);
    for (std::size_t i = 0; i < 30; ++i) {
      expected_lines += selections[i].value("selected", json::array()).size();
    }
  }
  std::string partial;
  std::size_t incompatible = 0;
  {
    std::istringstream all(final_bytes);
    std::string line;
    for (std::size_t i = 0; i < expected_lines; ++i) {
      REQUIRE(std::getline(all, line));
      partial += line + "\n";
      if (json::parse(line).value("status", "") == "incompatible") {
        ++incompatible;
      }
    }
  }
  {
    std::ofstream out(inter / "instantiations.jsonl.partial",
                      std::ios::binary);
    out << partial << "{\"record_id\": \"torn-mid-wri";  // crash artifact
  }
  json report;
  report["stage"] = "instantiate";
  report["in"] = expected_lines;
  report["out"] = expected_lines;
  report["dead"] = 0;
  report["filtered"] = json::object();
  report["counters"] = {{"incompatible", incompatible}};
  json ckpt;
  ckpt["input_hash"] = hex64(combined_hash(
      {inter / "selections.jsonl", inter / "template_bank.jsonl",
       toy_dir() / "documents.jsonl"}));
  ckpt["rows_consumed"] = 30;
  ckpt["out_bytes"] = partial.size();
  ckpt["dead_bytes"] = 0;
  ckpt["report"] = report;
  {
    std::ofstream out(inter / "ckpt" / "instantiate.json");
    out << ckpt.dump();
  }

  config.workers = 4;  // resume must stay byte-stable under a worker pool
  Orchestrator resumed(config, /*resume=*/true);
  const auto resumed_report = resumed.run_stage("instantiate");
  CHECK(resumed_report.conserved());
  CHECK(resumed_report.counters.at("resumed_rows") == 30);
  CHECK(read_bytes(inter / "instantiations.jsonl") == final_bytes);

  // The remaining stages complete from there with the same final dataset.
  for (const std::string stage : {"expand", "judge", "filter", "pack"}) {
    resumed.run_stage(stage);
  }
  CHECK(read_bytes(dir / "dataset.jsonl") == read_bytes(ref / "dataset.jsonl"));

  fs::remove_all(ref);
  fs::remove_all(dir);
}

TEST_CASE("filter keeps judge scores at or above the threshold") {
  const fs::path dir = fresh_dir("filter");
  std::vector<json> rows;
  for (int score : {5, 4, 3, 2, 1}) {
    json row;
    row["record_id"] = "d/t" + std::to_string(score);
    row["document_id"] = "d";
    row["template_id"] = "t" + std::to_string(score);
    row["chunk_index"] = 1;
    row["status"] = "instantiated";
    row["instruction"] = "why";
    row["answer_text"] = "because";
    row["excerpt_ratio"] = 0.95;
    row["judge_score"] = score;
    rows.push_back(row);
  }
  write_lines(dir / "intermediates" / "judged.jsonl", rows);

  Orchestrator orchestrator(toy_config(dir));
  const auto report = orchestrator.run_stage("filter");
  CHECK(report.records_in == 5);
  CHECK(report.records_out == 2);
  CHECK(report.filtered.at("judge_below_threshold") == 3);
  CHECK(report.conserved());
  fs::remove_all(dir);
}

TEST_CASE("expand dead-letters records whose excerpts cannot resolve") {
  const fs::path dir = fresh_dir("expand");
  // Use the first toy document; one record copies real text, one does not.
  const auto docs = read_jsonl(toy_dir() / "documents.jsonl");
  const std::string doc_id = docs[0].value("id", "");

  std::vector<json> rows;
  json good;
  good["record_id"] = doc_id + "/ok";
  good["document_id"] = doc_id;
  good["template_id"] = "ok";
  good["chunk_index"] = 0;
  good["status"] = "instantiated";
  good["instruction"] = "inspect";
  const std::string text = docs[0].value("text", "");
  good["answer_markup"] =
      "<excerpt>" + text.substr(0, 24) + "</excerpt>";
  rows.push_back(good);

  json bad = good;
  bad["record_id"] = doc_id + "/bad";
  bad["template_id"] = "bad";
  bad["answer_markup"] = "<excerpt>zz-never-in-any-document</excerpt>";
  rows.push_back(bad);

  write_lines(dir / "intermediates" / "instantiations.jsonl", rows);
  Orchestrator orchestrator(toy_config(dir));
  const auto report = orchestrator.run_stage("expand");
  CHECK(report.records_in == 2);
  CHECK(report.records_out == 1);
  CHECK(report.dead == 1);
  CHECK(report.conserved());

  const auto dead = read_jsonl(dir / "intermediates" / "dead" /
                               "expand.jsonl");
  REQUIRE(dead.size() == 1);
  CHECK(dead[0].value("reason", "") == "prefix_not_found");
  CHECK(dead[0].value("record_id", "") == doc_id + "/bad");
  fs::remove_all(dir);
}

TEST_CASE("an empty document set flows through every stage") {
  const fs::path dir = fresh_dir("empty");
  const fs::path empty_docs = dir / "documents.jsonl";
  fs::create_directories(dir);
  std::ofstream(empty_docs).close();

  json root = toy_config_json(dir);
  root["paths"]["documents"] = empty_docs.string();
  root["paths"].erase("queries");
  root["paths"].erase("descriptions");
  Orchestrator orchestrator(PipelineConfig::from_json(root, dir));
  const auto reports = orchestrator.run_all();
  for (const auto& report : reports) {
    CHECK(report.conserved());
    if (report.stage == "match" || report.stage == "pack" ||
        report.stage == "stats") {
      CHECK(report.records_in == 0);
      CHECK(report.records_out == 0);
    }
  }
  CHECK(read_bytes(dir / "dataset.jsonl").empty());
  fs::remove_all(dir);
}

TEST_CASE("the moderation hook filters queries before genericization") {
  const fs::path dir = fresh_dir("moderation");
  Orchestrator orchestrator(toy_config(dir));
  orchestrator.set_query_filter([](const std::string& query) {
    return query.find("railway") == std::string::npos;
  });
  const auto report = orchestrator.run_stage("genericize");
  CHECK(report.filtered.at("moderation") == 1);
  CHECK(report.conserved());
  for (const auto& row :
       read_jsonl(dir / "intermediates" / "generated_templates.jsonl")) {
    CHECK(row.value("template_text", "").find("railway") ==
          std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("without an explicit target the bank distribution is used") {
  const fs::path dir = fresh_dir("no_target");
  json root = toy_config_json(dir);
  root["sampler"].erase("target_distribution");
  Orchestrator orchestrator(PipelineConfig::from_json(root, dir));
  for (const std::string stage :
       {"genericize", "describe", "decontaminate", "embed", "index", "match",
        "sample"}) {
    const auto report = orchestrator.run_stage(stage);
    CHECK(report.conserved());
  }
  const auto selections = read_jsonl(dir / "intermediates" /
                                     "selections.jsonl");
  CHECK(selections.size() == 98);
  std::size_t selected_total = 0;
  for (const auto& row : selections) {
    selected_total += row.value("selected", json::array()).size();
  }
  CHECK(selected_total > 0);
  fs::remove_all(dir);
}

TEST_CASE("missing inputs are reported before a stage runs") {
  const fs::path dir = fresh_dir("missing");
  Orchestrator orchestrator(toy_config(dir));
  CHECK_THROWS_AS(orchestrator.run_stage("pack"), MissingInputError);
  // genericize is configured; expand inputs do not exist yet
  CHECK_THROWS_AS(orchestrator.run_stage("expand"), MissingInputError);
  fs::remove_all(dir);
}

TEST_CASE("a failing stage persists its failure in the manifest") {
  const fs::path dir = fresh_dir("failure");
  write_lines(dir / "intermediates" / "placeholder.jsonl", {});
  {
    std::ofstream out(dir / "intermediates" / "templates.femb",
                      std::ios::binary);
    out << "not an embedding file";
  }
  Orchestrator orchestrator(toy_config(dir));
  CHECK_THROWS_AS(orchestrator.run_stage("index"), StageFailure);

  std::ifstream in(dir / "intermediates" / "manifest.json");
  json manifest;
  in >> manifest;
  CHECK(manifest["stages"]["index"]["failed"] == true);
  fs::remove_all(dir);
}

namespace {

// Fields arrive one per line as "@NAME@\n<value>\n@NEXT@"; line markers
// cannot collide with template or document content.
std::string field_of(const std::string& text, const std::string& name,
                     const std::string& next) {
  const std::string open = "@" + name + "@\n";
  const std::string close = "\n@" + next + "@";
  const auto start = text.find(open);
  if (start == std::string::npos) return "";
  const auto end = text.find(close, start + open.size());
  if (end == std::string::npos) return "";
  return text.substr(start + open.size(), end - start - open.size());
}

std::string chat_reply_body(const std::string& content) {
  json body;
  body["choices"] = json::array();
  body["choices"].push_back({{"message", {{"content", content}}},
                             {"finish_reason", "stop"}});
  return body.dump();
}

}  // namespace

TEST_CASE("the whole pipeline runs against http model endpoints") {
  // Every model role is served over the chat-completion protocol by a local
  // server that delegates to the deterministic mocks.
  BackendConfig mock_cfg;
  mock_cfg.url = "mock:";
  mock_cfg.seed = 7;
  mock_cfg.incompatible_rate = 0.0;
  auto genericizer = make_genericizer(mock_cfg);
  auto describer = make_describer(mock_cfg);
  auto embedder = make_embedder(mock_cfg);
  auto instantiator = make_instantiator(mock_cfg);
  auto judge = make_judge(mock_cfg);

  httplib::Server server;
  server.Post("/roles/genericize", [&](const httplib::Request& req,
                                       httplib::Response& res) {
    const json body = json::parse(req.body);
    const std::string query = body["messages"][0]["content"];
    const auto result = genericizer->genericize(query);
    res.set_content(
        chat_reply_body(json{{"template", result.template_text},
                             {"description", result.description}}
                            .dump()),
        "application/json");
  });
  server.Post("/roles/describe", [&](const httplib::Request& req,
                                     httplib::Response& res) {
    const json body = json::parse(req.body);
    SourceDocument doc;
    doc.id = "remote";
    doc.text = body["messages"][0]["content"];
    res.set_content(chat_reply_body(describer->describe(doc)),
                    "application/json");
  });
  server.Post("/roles/instantiate", [&](const httplib::Request& req,
                                        httplib::Response& res) {
    const json body = json::parse(req.body);
    const std::string content = body["messages"][0]["content"];
    const std::string template_text = field_of(content, "TPL", "DOC");
    const std::string document = field_of(content, "DOC", "CHUNK");
    const std::string chunk = field_of(content, "CHUNK", "END");
    const auto tpl = InstructionTemplate::make("remote", "x", template_text,
                                               "remote description");
    SourceDocument doc;
    doc.id = "remote";
    doc.text = document;
    const auto result =
        instantiator->instantiate(tpl, doc, std::stoi(chunk));
    res.set_content(
        chat_reply_body(json{{"instruction", result.instruction},
                             {"answer", result.answer_markup}}
                            .dump()),
        "application/json");
  });
  server.Post("/roles/judge", [&](const httplib::Request& req,
                                  httplib::Response& res) {
    const json body = json::parse(req.body);
    const std::string content = body["messages"][0]["content"];
    const auto score = judge->judge(field_of(content, "INSTR", "ANS"),
                                    field_of(content, "ANS", "END"));
    res.set_content(
        chat_reply_body(std::to_string(score.score) + " - " + score.rationale),
        "application/json");
  });
  server.Post("/v1/embeddings", [&](const httplib::Request& req,
                                    httplib::Response& res) {
    const json body = json::parse(req.body);
    const std::vector<std::string> inputs =
        body["input"].get<std::vector<std::string>>();
    const auto vectors = embedder->embed(inputs);
    json reply;
    reply["data"] = json::array();
    for (std::size_t i = 0; i < vectors.size(); ++i) {
      reply["data"].push_back({{"index", i}, {"embedding", vectors[i]}});
    }
    res.set_content(reply.dump(), "application/json");
  });

  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread listener([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  const std::string base = "http://127.0.0.1:" + std::to_string(port);

  const fs::path dir = fresh_dir("http_e2e");
  const fs::path prompts = dir / "prompts";
  fs::create_directories(prompts);
  std::ofstream(prompts / "genericize.txt") << "{{query}}";
  std::ofstream(prompts / "describe.txt") << "{{document}}";
  std::ofstream(prompts / "instantiate.txt")
      << "@TPL@\n{{template}}\n@DOC@\n{{document}}\n@CHUNK@\n{{chunk_index}}"
         "\n@END@";
  std::ofstream(prompts / "judge.txt")
      << "@INSTR@\n{{instruction}}\n@ANS@\n{{answer}}\n@END@";

  json root = toy_config_json(dir);
  root["workers"] = 2;
  // Without token-level embeddings only the global vector is available per
  // document, so matching needs a looser threshold.
  root["match"]["threshold"] = 0.25;
  for (const std::string role :
       {"genericizer", "describer", "embedder", "instantiator", "judge"}) {
    root["backends"][role]["prompts_dir"] = prompts.string();
    root["backends"][role]["concurrency"] = 4;
    root["backends"][role]["backoff_ms"] = 1;
  }
  root["backends"]["genericizer"]["url"] = base + "/roles/genericize";
  root["backends"]["describer"]["url"] = base + "/roles/describe";
  root["backends"]["embedder"]["url"] = base + "/v1/embeddings";
  root["backends"]["instantiator"]["url"] = base + "/roles/instantiate";
  root["backends"]["judge"]["url"] = base + "/roles/judge";

  Orchestrator orchestrator(PipelineConfig::from_json(root, dir));
  std::vector<StageReport> reports = orchestrator.run_all();
  for (const auto& report : reports) {
    CHECK(report.conserved());
    if (report.stage == "embed") {
      CHECK(report.counters.at("docs_without_token_embeddings") == 98);
    }
    if (report.stage == "instantiate" || report.stage == "judge") {
      CHECK(report.dead == 0);
      CHECK(report.records_in > 0);
    }
  }

  const auto rows = read_jsonl(dir / "dataset.jsonl");
  CHECK(!rows.empty());
  for (const auto& row : rows) {
    CHECK(row.value("judge_score", 0) >= 4);
    CHECK(row.value("excerpt_ratio", 0.0) >= 0.80);
    CHECK(row.value("chunk_index", -1) == 0);  // global-only retrieval
  }

  server.stop();
  listener.join();
  fs::remove_all(dir);
}

TEST_CASE("cli maps config problems and stage failures to exit codes") {
  const std::string cli = FINEFORGE_CLI_PATH;
  const fs::path dir = fresh_dir("cli");

  const int missing = std::system(
      (cli + " run --config /nonexistent/config.json 2>/dev/null").c_str());
  CHECK(WEXITSTATUS(missing) == 1);

  json root = toy_config_json(dir);
  root["paths"].erase("queries");  // decontaminate then needs no genericize
  const fs::path config_path = dir / "config.json";
  {
    std::ofstream out(config_path);
    out << root.dump(2);
  }
  const int ok = std::system(
      (cli + " decontaminate --config " + config_path.string() +
       " >/dev/null 2>&1")
          .c_str());
  CHECK(WEXITSTATUS(ok) == 0);

  // Stage failure: corrupt the produced embedding input for `index`.
  {
    std::ofstream out(dir / "intermediates" / "templates.femb",
                      std::ios::binary);
    out << "garbage";
  }
  const int failed = std::system(
      (cli + " index --config " + config_path.string() + " >/dev/null 2>&1")
          .c_str());
  CHECK(WEXITSTATUS(failed) == 2);
  fs::remove_all(dir);
}
