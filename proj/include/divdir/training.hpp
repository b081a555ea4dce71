#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "divdir/attacks.hpp"
#include "divdir/dataset.hpp"
#include "divdir/penalties.hpp"
#include "divdir/variational.hpp"

namespace divdir {

/// Offline adversarial augmentation: PGD examples crafted once against a
/// deterministic twin and appended to the training set.
struct OfflineAdvConfig {
  AttackConfig attack = AttackConfig::pgd(0.3);
  double ratio = 1.0;               // appended examples per clean example
  std::string twin_checkpoint;      // reuse this twin instead of training one
  std::string augmented_path;       // reuse a persisted augmented set
  std::optional<std::size_t> twin_epochs;  // defaults to the main epoch count

  void validate() const;
};

enum class SigmaMode { learn, freeze, collapse };

std::string to_string(SigmaMode m);
SigmaMode sigma_mode_from(const std::string& s);

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::optional<double> kl_weight;  // default: 1 / batches per epoch
  PenaltyConfig penalty;
  // Penalty weights are zero for the first `penalty_warmup_epochs`, then rise
  // linearly to full strength over `penalty_ramp_epochs`.
  std::size_t penalty_warmup_epochs = 0;
  std::size_t penalty_ramp_epochs = 0;
  SigmaMode sigma_mode = SigmaMode::learn;
  std::optional<OfflineAdvConfig> offline_adv;
  std::uint64_t seed = 0;

  void validate() const;
  double penalty_scale(std::size_t epoch) const;
};

nlohmann::json train_to_json(const TrainConfig& cfg);
TrainConfig train_from_json(const nlohmann::json& j);

/// Values of one evaluated batch objective.
struct LossTerms {
  Var total;  // differentiable scalar
  double nll = 0.0;
  double kl = 0.0;
  double omega_M = 0.0;  // batch means
  double omega_V = 0.0;
  double omega_S = 0.0;
  std::size_t correct = 0;  // mean-softmax argmax hits within the batch
};

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, std::filesystem::path last_good)
      : std::runtime_error(what), last_good_checkpoint(std::move(last_good)) {}
  std::filesystem::path last_good_checkpoint;
};

/// (1/B) [ sum_n (l_n + s*(lM*OmegaM_n + lV*OmegaV_n + lS*OmegaS_n)) + kl_weight * KL ]
/// where l_n is the cross-entropy averaged over K draws and s is `penalty_scale`.
/// Throws NonFiniteLoss naming the offending term.
LossTerms batch_loss(const BayesianNetwork& net, const ParamView& params, const Tensor& x,
                     std::span<const std::size_t> labels, const TrainConfig& cfg, double kl_weight,
                     double penalty_scale, Rng& rng);

/// Adam with bias correction. Entries with `frozen[i]` set are never changed.
class Adam {
 public:
  Adam(const std::vector<Tensor>& params, double lr, double beta1, double beta2, double eps);
  void step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, const std::vector<bool>& frozen);

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

struct AttackMetric {
  std::string name;
  AttackConfig attack;
  double accuracy = 0.0;
};

struct MetricsRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double nll = 0.0;
  double kl = 0.0;
  double omega_M = 0.0;
  double omega_V = 0.0;
  double omega_S = 0.0;
  double var_sum = 0.0;            // mean over probe examples of sum_d Var[u_d]
  double identity_residual = 0.0;  // max |sum_d Var[u_d] + Omega_M - 1| on the probe batch
  double train_accuracy = 0.0;
  double monitor_accuracy = 0.0;
  std::vector<AttackMetric> attacks;
};

/// Fixed header of metrics.csv.
extern const char* const kMetricsHeader;
/// Fixed header of attack_metrics.csv (one row per epoch and monitored attack).
extern const char* const kAttackMetricsHeader;

std::string metrics_csv_row(const MetricsRecord& r);
std::string format_number(double v);

struct TrainOptions {
  const Dataset* monitor = nullptr;        // defaults to the head of the training set
  std::size_t monitor_examples = 500;
  std::vector<AttackMetric> monitor_attacks;  // accuracy fields ignored on input
  std::size_t attack_every = 1;            // evaluate attacks every n epochs (and the last)
  std::filesystem::path out_dir;           // empty: write nothing
  std::function<void(const MetricsRecord&)> on_epoch;
  std::function<void(std::uint64_t step, double loss)> on_step;
  std::function<void(const std::string&)> log;
};

struct TrainResult {
  BayesianNetwork net;
  std::vector<MetricsRecord> history;
};

/// Optimizes batch_loss. With out_dir set, writes metrics.csv, attack_metrics.csv,
/// checkpoint.bin (final) and checkpoint_last_good.bin (on divergence).
TrainResult train(const Dataset& data, const NetworkSpec& spec, const TrainConfig& cfg,
                  const TrainOptions& opts = {});

struct OfflineResult {
  Dataset augmented;
  double twin_clean_accuracy = 0.0;
  double twin_adversarial_accuracy = 0.0;  // on the appended examples
  std::size_t appended = 0;
};

/// Trains (or loads) the deterministic twin of `spec`, crafts PGD examples against it,
/// and appends them with their original labels. Persists the augmented set to
/// `out_path` when given.
OfflineResult build_offline_adversaries(const Dataset& data, const NetworkSpec& spec, const TrainConfig& cfg,
                                        const std::filesystem::path& out_path = {},
                                        const std::function<void(const std::string&)>& log = {});

}  // namespace divdir
