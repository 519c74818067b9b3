#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "drrel/error.hpp"
#include "drrel/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitAcceptance = 2;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw drrel::ConfigError("cannot read config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"drrel: doubly robust relevance estimation experiments"};
  app.require_subcommand(1, 0);
  app.fallthrough();

  std::string config_path;
  std::vector<std::string> overrides;
  std::size_t jobs = 0;
  std::string output_dir;
  app.add_option("-c,--config", config_path, "JSON config file (defaults apply when omitted)");
  app.add_option("-s,--set", overrides, "Override a config key, e.g. --set simulation.n_sessions=5000");
  app.add_option("-j,--jobs", jobs, "Cap on worker threads");
  app.add_option("-o,--output-dir", output_dir, "Artifact directory");

  bool ci = false;
  for (const auto& name : drrel::pipeline::stage_names()) {
    auto* sub = app.add_subcommand(name, "Run the " + name + " stage");
    if (name == "verify-theory") sub->add_flag("--ci", ci, "Exit with status 2 when any theory check fails");
  }
  auto* all = app.add_subcommand("run-all", "Run every stage in order");
  auto* show = app.add_subcommand("show-config", "Print the effective config and its hash");

  app.require_subcommand();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitValidation;
  }

  try {
    const std::string text = config_path.empty() ? std::string() : read_file(config_path);
    if (jobs > 0) overrides.push_back("jobs=" + std::to_string(jobs));
    if (!output_dir.empty()) overrides.push_back("output_dir=\"" + output_dir + "\"");
    const auto config = drrel::pipeline::load_config(text, overrides);

    if (show->parsed()) {
      std::cout << config.to_json() << "\nconfig_hash " << config.hash() << "\n";
      return kExitOk;
    }
    std::vector<std::string> to_run;
    if (all->parsed()) {
      to_run = drrel::pipeline::stage_names();
    } else {
      for (auto* s : app.get_subcommands()) to_run.push_back(s->get_name());
    }
    bool checks_ok = true;
    for (const auto& stage : to_run) {
      const auto r = drrel::pipeline::run_stage(stage, config);
      std::cout << "[" << stage << "] " << r.summary << (r.summary.ends_with('\n') ? "" : "\n");
      checks_ok = checks_ok && r.checks_passed;
    }
    if (!checks_ok) {
      std::cerr << "theory checks failed\n";
      if (ci) return kExitAcceptance;
    }
    return kExitOk;
  } catch (const drrel::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
}
