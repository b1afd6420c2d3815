#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "fineforge/pipeline.hpp"

namespace {

void print_report(const fineforge::StageReport& report) {
  std::string filtered;
  for (const auto& [reason, count] : report.filtered) {
    filtered += " " + reason + "=" + std::to_string(count);
  }
  std::fprintf(stdout, "%-13s in=%llu out=%llu dead=%llu%s%s (%.1f ms)\n",
               report.stage.c_str(),
               static_cast<unsigned long long>(report.records_in),
               static_cast<unsigned long long>(report.records_out),
               static_cast<unsigned long long>(report.dead), filtered.c_str(),
               report.skipped ? " [skipped: up to date]" : "",
               report.wall_ms);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "fineforge: turn documents into instruction-answer training records"};
  app.name("fineforge");

  std::string command;
  std::string config_path;
  std::int64_t seed_override = -1;
  int workers_override = 0;
  bool resume = false;

  std::vector<std::string> commands = fineforge::Orchestrator::all_stages();
  commands.insert(commands.begin(), "run");
  app.add_option("command", command,
                 "one of: run, " + [&] {
                   std::string joined;
                   for (const auto& name : fineforge::Orchestrator::all_stages()) {
                     if (!joined.empty()) joined += ", ";
                     joined += name;
                   }
                   return joined;
                 }())
      ->required()
      ->check(CLI::IsMember(commands));
  app.add_option("--config", config_path, "pipeline config JSON")->required();
  app.add_option("--seed", seed_override, "override the config seed");
  app.add_option("--workers", workers_override, "override the worker count");
  app.add_flag("--resume", resume, "resume checkpointed stages");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  fineforge::PipelineConfig config;
  try {
    config = fineforge::PipelineConfig::load(config_path);
    if (seed_override >= 0) {
      config.seed = static_cast<std::uint64_t>(seed_override);
    }
    if (workers_override > 0) {
      config.workers = workers_override;
    }
    config.validate();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  }

  try {
    fineforge::Orchestrator orchestrator(std::move(config), resume);
    if (command == "run") {
      for (const auto& report : orchestrator.run_all()) {
        print_report(report);
      }
    } else {
      print_report(orchestrator.run_stage(command));
    }
  } catch (const fineforge::MissingInputError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const fineforge::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "stage failed: %s\n", e.what());
    return 2;
  }
  return 0;
}
