#pragma once

// Run configuration shared by every subcommand. Files are JSON; unknown keys are
// rejected at every level. See README.md for the schema.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "divdir/attacks.hpp"
#include "divdir/dataset.hpp"
#include "divdir/sweep.hpp"
#include "divdir/training.hpp"
#include "divdir/variational.hpp"
#include "divdir/verify.hpp"

namespace divdir {

struct DataSource {
  enum class Kind { idx, synthetic, container };
  Kind kind = Kind::synthetic;
  // any kind: keep examples [offset, offset + limit)
  std::size_t offset = 0;
  std::optional<std::size_t> limit;
  // idx
  std::string images, labels;
  // synthetic
  std::size_t count = 1000;
  std::size_t features = 20;
  std::size_t classes = 10;
  std::uint64_t seed = 0;
  double margin = 1.0;
  // container
  std::string path;

  void validate(const std::string& where) const;
  Dataset load() const;
};

nlohmann::json data_source_to_json(const DataSource& d);
DataSource data_source_from_json(const nlohmann::json& j, const std::string& where);

struct NamedAttack {
  std::string name;
  AttackConfig attack;
};

struct EvalConfig {
  std::size_t predict_draws = 10;
  std::size_t batch_size = 100;
  std::optional<std::size_t> limit;  // evaluate only the first `limit` test examples
};

struct MonitorConfig {
  std::size_t examples = 500;
  std::size_t attack_every = 1;
  std::vector<NamedAttack> attacks;
};

enum class Command { train, attack, sweep, gen_offline, verify, gen_data };

std::string to_string(Command c);
Command command_from(const std::string& s);

struct RunConfig {
  Command command = Command::train;
  std::string run_dir;  // empty: runs/<command>-<config hash>
  std::uint64_t seed = 0;  // evaluation seed (training uses train.seed)
  std::optional<DataSource> train_data;
  std::optional<DataSource> test_data;
  NetworkSpec network = NetworkSpec::mnist_default();
  TrainConfig train;
  std::vector<NamedAttack> attacks;
  std::string checkpoint;
  SweepGrid sweep;
  EvalConfig eval;
  MonitorConfig monitor;
  bool save_adversarial = false;
  VerifyConfig verify;

  /// Command-specific requirements, checked before any computation.
  void validate() const;
};

nlohmann::json run_to_json(const RunConfig& c);
RunConfig run_from_json(const nlohmann::json& j);

/// Applies "a.b.c=value" to a JSON document. The value is parsed as JSON when
/// possible and kept as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Reads a config file (or starts from defaults when `path` is empty) and applies overrides.
RunConfig load_run_config(const std::filesystem::path& path, Command command,
                          const std::vector<std::string>& overrides = {});

/// Directory a run writes into: run_dir, or runs/<command>-<hash of the resolved config>.
std::filesystem::path resolve_run_dir(const RunConfig& c);

using Logger = std::function<void(const std::string&)>;

/// Executes the configured subcommand into its run directory (which must not
/// already contain a config.json). Returns a JSON summary that is also written
/// to summary.json. Verify failures are reported in the summary's "passed" field.
nlohmann::json run_command(const RunConfig& cfg, const Logger& log = {});

extern const char* const kAttackResultsHeader;

}  // namespace divdir
