#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "commands.hpp"
#include "zsseg/error.hpp"

namespace {

int fail(const std::string& kind, const std::string& message, int code) {
  nlohmann::ordered_json j;
  j["error"] = kind;
  j["message"] = message;
  std::cerr << j.dump() << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  using zsseg::cli::RunConfig;
  CLI::App app{"zsseg: concept-aligned text tower training and zero-shot segmentation"};
  app.require_subcommand(1);

  std::string config_path;
  std::map<std::string, std::string> overrides;
  for (const char* const* name = zsseg::cli::command_names(); *name; ++name) {
    CLI::App* sub = app.add_subcommand(*name);
    sub->add_option("--config", config_path, "key = value configuration file");
    for (const auto& key : RunConfig::keys()) {
      sub->add_option("--" + key.name, overrides[key.name], key.help + " (default: " + key.default_value + ")");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  CLI::App* chosen = app.get_subcommands().front();
  try {
    RunConfig config;
    if (!config_path.empty()) config.merge_file(config_path);
    for (const auto& key : RunConfig::keys()) {
      if (chosen->count("--" + key.name) > 0) config.set(key.name, overrides[key.name]);
    }
    zsseg::cli::run_command(chosen->get_name(), config, std::cout);
  } catch (const zsseg::Error& e) {
    return fail(e.kind(), e.what(), 1);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
  return 0;
}
