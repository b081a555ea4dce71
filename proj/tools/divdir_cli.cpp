// divdir: train, attack and verify Bayesian networks with gradient-diversity penalties.
//
// Exit codes: 0 success, 1 verify checks failed, 2 invalid configuration or usage,
// 3 runtime/data error, 4 training diverged or produced non-finite values.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "divdir/config.hpp"

namespace {

struct Invocation {
  std::string config;
  std::vector<std::string> overrides;
  std::string run_dir;
  bool print_config = false;
  bool quiet = false;
};

void add_common(CLI::App* sub, Invocation& inv) {
  sub->add_option("-c,--config", inv.config, "JSON run configuration")->check(CLI::ExistingFile);
  sub->add_option("-s,--set", inv.overrides, "Override a config field, e.g. train.epochs=5 (repeatable)");
  sub->add_option("-o,--run-dir", inv.run_dir, "Run directory (default runs/<command>-<config hash>)");
  sub->add_flag("--print-config", inv.print_config, "Print the resolved configuration and exit");
  sub->add_flag("-q,--quiet", inv.quiet, "Only print the summary");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"divdir: Bayesian networks trained for diverse input gradients"};
  app.require_subcommand(1);
  Invocation inv;
  const std::vector<std::pair<divdir::Command, std::string>> commands{
      {divdir::Command::train, "Train a network; writes metrics CSVs and checkpoints"},
      {divdir::Command::attack, "Evaluate the configured attacks against a checkpoint"},
      {divdir::Command::sweep, "Evaluate one attack family over a grid of budgets"},
      {divdir::Command::gen_offline, "Build an offline adversarially augmented training set"},
      {divdir::Command::verify, "Run the brute-force oracle suite"},
      {divdir::Command::gen_data, "Materialize datasets (IDX ingest or synthetic) as containers"},
  };
  std::vector<std::pair<CLI::App*, divdir::Command>> subs;
  for (const auto& [cmd, help] : commands) {
    auto* sub = app.add_subcommand(divdir::to_string(cmd), help);
    add_common(sub, inv);
    subs.emplace_back(sub, cmd);
  }
  CLI11_PARSE(app, argc, argv);

  divdir::Command command = divdir::Command::train;
  for (const auto& [sub, cmd] : subs)
    if (sub->parsed()) command = cmd;

  divdir::RunConfig cfg;
  try {
    if (!inv.run_dir.empty()) inv.overrides.push_back("run_dir=\"" + inv.run_dir + "\"");
    cfg = divdir::load_run_config(inv.config, command, inv.overrides);
  } catch (const std::exception& e) {
    std::cerr << "divdir: invalid configuration: " << e.what() << "\n";
    return 2;
  }
  if (inv.print_config) {
    std::cout << divdir::run_to_json(cfg).dump(2) << "\n";
    return 0;
  }

  divdir::Logger log;
  if (!inv.quiet) log = [](const std::string& s) { std::cerr << s << (s.ends_with('\n') ? "" : "\n"); };
  try {
    const auto summary = divdir::run_command(cfg, log);
    std::cout << summary.dump(2) << "\n";
    if (command == divdir::Command::verify && !summary.at("passed").get<bool>()) return 1;
    return 0;
  } catch (const std::invalid_argument& e) {
    std::cerr << "divdir: invalid configuration: " << e.what() << "\n";
    return 2;
  } catch (const divdir::TrainingDiverged& e) {
    std::cerr << "divdir: " << e.what();
    if (!e.last_good_checkpoint.empty()) std::cerr << " (last good checkpoint: " << e.last_good_checkpoint.string() << ")";
    std::cerr << "\n";
    return 4;
  } catch (const divdir::NonFiniteLoss& e) {
    std::cerr << "divdir: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "divdir: " << e.what() << "\n";
    return 3;
  }
}
