#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "divdir/autodiff.hpp"
#include "divdir/random.hpp"

namespace divdir {

/// Zero-mean isotropic Gaussian prior over every Bayesian weight.
struct PriorConfig {
  double prior_sigma = 1.0;
};

/// Diagonal Gaussian posterior q(w) = N(mu, softplus(rho)^2), both fields tape leaves.
struct VariationalParam {
  Var mu;
  Var rho;

  Tensor sigma() const;
};

VariationalParam make_variational(Tensor mu, Tensor rho);

/// Inverse of softplus: the rho giving posterior scale `sigma`.
double rho_for_sigma(double sigma);

/// Reparameterized draw mu + softplus(rho) * noise; differentiable in mu and rho.
Var sample_weights(const VariationalParam& param, const Tensor& noise);

/// Closed-form KL(q || p) summed over all elements:
/// sum log(prior_sigma / sigma) + (sigma^2 + mu^2) / (2 prior_sigma^2) - 1/2.
Var kl_to_prior(const VariationalParam& param, const PriorConfig& prior);

enum class LayerKind { conv, dense, avgpool };
enum class Activation { relu, none };

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  std::size_t units = 0;  // output channels for conv, width for dense
  std::size_t kernel = 3;
  Activation activation = Activation::relu;
  bool bayesian = false;

  bool has_params() const { return kind != LayerKind::avgpool; }
};

struct NetworkSpec {
  Shape input_shape;  // [D] or [C,H,W]
  std::vector<LayerSpec> layers;
  std::size_t draws = 10;  // K
  double init_sigma = 0.05;
  PriorConfig prior;

  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;

  std::size_t input_size() const { return shape_numel(input_shape); }
  std::size_t classes() const;
  std::size_t parametric_layers() const;
  std::size_t bayesian_layers() const;
  /// Fraction of parametric layers that are Bayesian.
  double bayesian_fraction() const;
  /// Index of the first layer executed per draw; layers.size() when fully deterministic.
  std::size_t split_index() const;

  /// Marks the trailing round(fraction * parametric_layers) parametric layers Bayesian.
  NetworkSpec with_bayesian_fraction(double fraction) const;
  NetworkSpec deterministic_twin() const;

  /// Small CNN for 28x28 digits: two deterministic convs, then a Bayesian conv and two
  /// Bayesian dense layers.
  static NetworkSpec mnist_default();
  /// Fully connected network over flat inputs; the last `bayesian_tail` layers are Bayesian.
  static NetworkSpec mlp(std::size_t inputs, const std::vector<std::size_t>& hidden, std::size_t classes,
                         std::size_t bayesian_tail, std::size_t draws = 10);

  friend bool operator==(const NetworkSpec&, const NetworkSpec&);
};

bool operator==(const LayerSpec&, const LayerSpec&);

/// K forward passes over one batch. `front` is shared by all draws.
struct DrawEnsemble {
  Var front;
  std::vector<Var> logits;           // K x [batch, classes]
  std::vector<Var> input_grad_dirs;  // K x [batch, D], filled by the penalty code
};

/// Tape leaves for every parameter, in the network's canonical order.
struct ParamView {
  std::vector<Var> vars;
};

class BayesianNetwork {
 public:
  BayesianNetwork(NetworkSpec spec, std::uint64_t init_seed);

  const NetworkSpec& spec() const { return spec_; }

  std::vector<Tensor>& tensors() { return tensors_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }
  const std::vector<std::string>& names() const { return names_; }
  /// True for entries holding a rho (posterior scale) parameter.
  const std::vector<bool>& rho_mask() const { return rho_mask_; }

  /// Wraps the parameter tensors as tape leaves (constants when !trainable).
  ParamView bind(bool trainable) const;

  /// Deterministic front on x of shape [batch, D].
  Var front(const ParamView& params, const Var& x) const;
  /// One stochastic pass of the tail with a fresh weight draw shared across the batch.
  Var tail(const ParamView& params, const Var& front_out, Rng& rng) const;

  /// Front once, tail `k` times. Requires k >= 2.
  DrawEnsemble forward_k(const ParamView& params, const Var& x, std::size_t k, Rng& rng) const;
  /// Same as forward_k but accepts any k >= 1 (attack-time gradient estimation).
  DrawEnsemble forward_draws(const ParamView& params, const Var& x, std::size_t k, Rng& rng) const;

  /// Sum of kl_to_prior over every variational parameter.
  Var kl(const ParamView& params) const;

  /// Mean of per-draw softmax probabilities, [batch, classes]. No tape.
  Tensor predict_proba(const Tensor& x, std::size_t draws, Rng& rng) const;

  /// Drives every posterior scale to ~0 so draws become identical.
  void collapse_sigma(double rho = -40.0);

 private:
  struct Slot {
    std::size_t layer;
    bool bayesian;
    std::size_t weight;  // index of W (or W_mu; W_rho = weight + 1)
    std::size_t bias;    // index of b (or b_mu; b_rho = bias + 1)
  };

  Var apply_layer(const LayerSpec& layer, const Var& x, const Var& w, const Var& b) const;

  NetworkSpec spec_;
  std::vector<Tensor> tensors_;
  std::vector<std::string> names_;
  std::vector<bool> rho_mask_;
  std::vector<Slot> slots_;
  std::vector<int> slot_of_layer_;
};

}  // namespace divdir
