#pragma once

// Brute-force oracles for the library's mathematical claims. Each check uses
// its own naive arithmetic rather than the code path it validates.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace divdir {

enum class OracleStatus { pass, fail, inconclusive };

std::string to_string(OracleStatus s);

struct OracleReport {
  std::string name;
  OracleStatus status = OracleStatus::fail;
  double measured = 0.0;
  double tolerance = 0.0;
  double runtime_seconds = 0.0;
  std::string detail;  // names the quantity and the compared values
};

/// Independent coordinates, each Beta(a, a) on [0,1]. a = 1 is the uniform
/// distribution; a = infinity is the point mass at 0.5.
struct SharpeningFamily {
  std::size_t dims = 4;
  std::vector<double> concentrations{1.0, 1.5, 2.0, 3.0, 5.0, 8.0, 13.0, 21.0, 40.0, INFINITY};
  std::size_t bins = 32;
};

/// Histogram plug-in entropy (sum of per-coordinate entropies) against the summed
/// sample variance; passes when their Spearman correlation is 1. Too few samples
/// per bin yields `inconclusive`.
OracleReport check_entropy_variance_monotonicity(const SharpeningFamily& family, std::size_t samples,
                                                 std::uint64_t seed);

/// Max |sum_d Var[u_d] - (1 - Omega_M)| over random unit-vector batches.
OracleReport check_variance_identity(std::size_t trials, std::size_t draws, std::size_t dims, std::uint64_t seed,
                                     double tolerance = 1e-8);

/// Finite-difference checks over a toy catalog: first-order losses, each penalty
/// alone (second-order path), and frozen weights.
std::vector<OracleReport> check_gradients(std::uint64_t seed);

/// Closed-form KL against a Monte Carlo estimate on random settings, plus KL(q, q) = 0.
std::vector<OracleReport> check_kl(std::size_t settings, std::size_t samples, std::uint64_t seed);

/// Random PGD runs stay inside the eps-ball (declared norm) and the input range.
OracleReport check_projection(std::size_t runs, std::uint64_t seed);

/// One-step PGD (alpha = eps, no random start) against FGSM on shared draws.
OracleReport check_fgsm_pgd_equivalence(std::size_t inputs, std::uint64_t seed);

struct VerifyConfig {
  std::uint64_t seed = 0;
  std::size_t entropy_samples = 100000;
  std::size_t identity_trials = 1000;
  std::size_t kl_settings = 20;
  std::size_t kl_samples = 1000000;
  std::size_t projection_runs = 10000;
  std::size_t equivalence_inputs = 100;

  void validate() const;
};

nlohmann::json verify_to_json(const VerifyConfig& c);
VerifyConfig verify_from_json(const nlohmann::json& j);

/// Runs every check concurrently; reports come back in declaration order.
std::vector<OracleReport> run_verify_suite(const VerifyConfig& cfg);

extern const char* const kVerifyHeader;
std::string verify_csv(const std::vector<OracleReport>& reports);
std::string verify_summary(const std::vector<OracleReport>& reports);
bool all_passed(const std::vector<OracleReport>& reports);

}  // namespace divdir
