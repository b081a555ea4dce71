#pragma once

// Attack-budget sweeps and their CSV form.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "divdir/attacks.hpp"

namespace divdir {

/// One attack family evaluated at several budgets. Cells whose eps is below
/// `alpha` use alpha = eps; single-step grids always use alpha = eps.
struct SweepGrid {
  Norm norm = Norm::linf;
  std::vector<double> eps{0.05, 0.1, 0.2, 0.3};
  double alpha = 0.01;
  std::size_t steps = 40;
  bool random_start = true;
  std::size_t draws_for_gradient = 10;

  void validate() const;
  AttackConfig cell(double eps) const;
};

nlohmann::json sweep_grid_to_json(const SweepGrid& g);
SweepGrid sweep_grid_from_json(const nlohmann::json& j);

/// "fgsm", "fgm", "pgd" or "bim".
std::string attack_kind(const AttackConfig& cfg);

struct SweepRow {
  std::string model_id;
  std::string attack;
  Norm norm = Norm::linf;
  double eps = 0.0;
  double alpha = 0.0;
  std::size_t steps = 0;
  bool random_start = false;
  double accuracy = 0.0;
  std::size_t examples = 0;
};

struct SweepResult {
  std::vector<SweepRow> rows;

  /// Throws unless eps strictly increases within every (model, attack, norm) run of rows.
  void validate() const;
};

extern const char* const kSweepHeader;

std::string sweep_csv_row(const SweepRow& r);
void write_sweep_csv(const std::filesystem::path& path, const SweepResult& res);

/// 16 hex digits of the FNV-1a hash of the checkpoint file bytes.
std::string model_id(const std::filesystem::path& checkpoint);

/// Evaluates every grid cell with the same seed, so random starts are shared across budgets.
SweepResult sweep(const Dataset& data, const BayesianNetwork& net, const SweepGrid& grid, const std::string& id,
                  std::uint64_t seed, std::size_t predict_draws, std::size_t batch_size = 100);

}  // namespace divdir
