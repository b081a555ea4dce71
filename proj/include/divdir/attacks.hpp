#pragma once

// White-box gradient attacks with exact norm-ball projection.
//
// Adversarial dump container (integers little-endian): the DIVDIRDS dataset
// layout, with the attack configuration stored under meta["attack"].

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "divdir/dataset.hpp"
#include "divdir/random.hpp"
#include "divdir/variational.hpp"

namespace divdir {

enum class Norm { linf, l2 };

std::string to_string(Norm n);
Norm norm_from(const std::string& s);

struct AttackConfig {
  Norm norm = Norm::linf;
  double eps_max = 0.3;
  double alpha = 0.01;
  std::size_t steps = 40;
  bool random_start = true;
  std::size_t draws_for_gradient = 10;
  double lo = 0.0;  // valid input range
  double hi = 1.0;

  void validate() const;

  static AttackConfig fgsm(double eps, std::size_t draws = 10);
  static AttackConfig fgm(double eps, std::size_t draws = 10);
  static AttackConfig pgd(double eps, Norm norm = Norm::linf, double alpha = 0.01, std::size_t steps = 40,
                          std::size_t draws = 10);
  static AttackConfig bim(double eps, Norm norm = Norm::linf, double alpha = 0.01, std::size_t steps = 40,
                          std::size_t draws = 10);
};

nlohmann::json attack_to_json(const AttackConfig& cfg);
AttackConfig attack_from_json(const nlohmann::json& j);

/// Anything that can supply an input gradient of its loss.
class GradientOracle {
 public:
  virtual ~GradientOracle() = default;
  /// d loss / d x for x [batch, D], averaged over `draws` stochastic passes.
  virtual Tensor loss_gradient(const Tensor& x, std::span<const std::size_t> labels, std::size_t draws,
                               Rng& rng) const = 0;
};

/// Summed cross-entropy of a network, averaged over weight draws.
class NetworkOracle final : public GradientOracle {
 public:
  explicit NetworkOracle(const BayesianNetwork& net) : net_(net) {}
  Tensor loss_gradient(const Tensor& x, std::span<const std::size_t> labels, std::size_t draws,
                       Rng& rng) const override;

 private:
  const BayesianNetwork& net_;
};

/// Projects each row of x_adv onto {x' : ||x' - x0||_norm <= eps} and then the input range.
Tensor project(const Tensor& x_adv, const Tensor& x0, const AttackConfig& cfg);

/// One ascent step of size `alpha` from x_cur along sign(g) (Linf) or g/||g|| (L2),
/// followed by projection around x0.
Tensor step_and_project(const Tensor& x_cur, const Tensor& x0, const Tensor& g, double alpha,
                        const AttackConfig& cfg);

Tensor fgsm(const Tensor& x, std::span<const std::size_t> labels, const GradientOracle& model,
            const AttackConfig& cfg, Rng& rng);
/// L2 counterpart of fgsm.
Tensor fgm(const Tensor& x, std::span<const std::size_t> labels, const GradientOracle& model,
           const AttackConfig& cfg, Rng& rng);
/// Random starts (when enabled) are drawn from `rng` before any gradient draw.
Tensor pgd(const Tensor& x, std::span<const std::size_t> labels, const GradientOracle& model,
           const AttackConfig& cfg, Rng& rng);
Tensor bim(const Tensor& x, std::span<const std::size_t> labels, const GradientOracle& model,
           const AttackConfig& cfg, Rng& rng);

/// Dispatch: steps == 1 without random start is FGSM/FGM, otherwise PGD.
Tensor run_attack(const Tensor& x, std::span<const std::size_t> labels, const GradientOracle& model,
                  const AttackConfig& cfg, Rng& rng);

struct AttackEvaluation {
  double accuracy = 0.0;
  std::size_t examples = 0;
  std::size_t correct = 0;
};

/// Accuracy of the mean-softmax prediction (`predict_draws` passes) on attacked inputs.
/// Batch b uses randomness derived from (seed, b) only, so different budgets share
/// their random starts and weight draws.
AttackEvaluation evaluate_attack(const Dataset& data, const BayesianNetwork& net, const AttackConfig& cfg,
                                 std::uint64_t seed, std::size_t predict_draws, std::size_t batch_size = 100,
                                 Dataset* adversarial_out = nullptr);

/// Mean-softmax accuracy without any attack.
double standard_accuracy(const Dataset& data, const BayesianNetwork& net, std::uint64_t seed,
                         std::size_t predict_draws, std::size_t batch_size = 100);

void save_adversarial(const std::filesystem::path& path, const Dataset& adv, const AttackConfig& cfg,
                      const nlohmann::json& extra = nlohmann::json::object());
Dataset load_adversarial(const std::filesystem::path& path, AttackConfig* cfg = nullptr);

}  // namespace divdir
