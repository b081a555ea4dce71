#pragma once

#include <span>
#include <string>
#include <vector>

#include "divdir/autodiff.hpp"
#include "divdir/variational.hpp"

namespace divdir {

enum class VarianceVariant { minvar, softmin, euclidean };
enum class ScalarTarget { true_class_logit, loss };

std::string to_string(VarianceVariant v);
std::string to_string(ScalarTarget t);
VarianceVariant variance_variant_from(const std::string& s);
ScalarTarget scalar_target_from(const std::string& s);

struct PenaltyConfig {
  double lambda_M = 0.0;
  double lambda_V = 0.0;
  double lambda_S = 0.0;
  double alpha = 100.0;  // softmin temperature
  VarianceVariant variance_variant = VarianceVariant::softmin;
  ScalarTarget scalar_target = ScalarTarget::true_class_logit;

  void validate() const;
  bool active() const { return lambda_M > 0.0 || lambda_V > 0.0 || lambda_S > 0.0; }
};

/// Per-example scalar whose input gradient defines the direction: the true-class
/// logit, or the per-example cross-entropy. logits [batch, classes] -> [batch].
Var target_scalar(const Var& logits, std::span<const std::size_t> labels, ScalarTarget target);

/// Unit input-gradient direction per example: grad / (||grad||_2 + 1e-12).
/// `x` is [batch, D] and must be a gradient-requiring leaf; `per_example` is [batch]
/// with row i depending only on row i of x. The result stays on the tape.
Var direction(const Var& x, const Var& per_example);

/// Fills ens.input_grad_dirs with one direction per draw. `x` must be the leaf the
/// ensemble was computed from.
void fill_directions(DrawEnsemble& ens, const Var& x, std::span<const std::size_t> labels, ScalarTarget target);

/// Statistics across K directions, each [batch, D]. All fields are tape nodes.
struct DirectionStats {
  Var mean_dir;  // [batch, D]
  Var var_dir;   // [batch, D], population variance (divide by K)
  Var l1_norms;  // [batch, K]
};

DirectionStats direction_stats(std::span<const Var> dirs);

// Each penalty returns one value per example, shape [batch].
Var omega_M(const DirectionStats& stats);
Var omega_V(const DirectionStats& stats, const PenaltyConfig& cfg);
Var omega_S(const DirectionStats& stats);

/// softmax(-alpha * v) over the last axis.
Var softmin_weights(const Var& v, double alpha);

}  // namespace divdir
