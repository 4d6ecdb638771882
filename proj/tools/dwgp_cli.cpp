#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "dwgp/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Double-well Gross-Pitaevskii lab"};
  app.require_subcommand(1);
  std::string config;
  std::string out;
  for (const auto& name : dwgp::cli::command_names()) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config, "JSON run configuration")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "output directory (overrides output.directory)");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : dwgp::cli::kConfig;
  }
  const std::string cmd = app.get_subcommands().front()->get_name();
  std::optional<std::filesystem::path> dir;
  if (!out.empty()) dir = out;
  return dwgp::cli::run(cmd, config, dir, std::cerr);
}
