#include "divdir/penalties.hpp"

#include <stdexcept>

namespace divdir {

std::string to_string(VarianceVariant v) {
  switch (v) {
    case VarianceVariant::minvar: return "minvar";
    case VarianceVariant::softmin: return "softmin";
    case VarianceVariant::euclidean: return "euclidean";
  }
  return "?";
}

std::string to_string(ScalarTarget t) { return t == ScalarTarget::loss ? "loss" : "true_class_logit"; }

VarianceVariant variance_variant_from(const std::string& s) {
  if (s == "minvar") return VarianceVariant::minvar;
  if (s == "softmin") return VarianceVariant::softmin;
  if (s == "euclidean") return VarianceVariant::euclidean;
  throw std::invalid_argument("unknown variance variant '" + s + "' (minvar, softmin, euclidean)");
}

ScalarTarget scalar_target_from(const std::string& s) {
  if (s == "true_class_logit") return ScalarTarget::true_class_logit;
  if (s == "loss") return ScalarTarget::loss;
  throw std::invalid_argument("unknown scalar target '" + s + "' (true_class_logit, loss)");
}

void PenaltyConfig::validate() const {
  if (lambda_M < 0.0 || lambda_V < 0.0 || lambda_S < 0.0) throw std::invalid_argument("penalty weights must be >= 0");
  if (!(alpha > 0.0)) throw std::invalid_argument("softmin alpha must be positive");
}

Var target_scalar(const Var& logits, std::span<const std::size_t> labels, ScalarTarget target) {
  const auto& s = logits.shape();
  if (s.size() != 2 || s[0] != labels.size()) {
    throw std::invalid_argument("target_scalar: logits " + shape_str(s) + " vs " + std::to_string(labels.size()) +
                                " labels");
  }
  Tensor onehot(s, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= s[1]) throw std::invalid_argument("target_scalar: label out of range");
    onehot[i * s[1] + labels[i]] = 1.0;
  }
  if (target == ScalarTarget::true_class_logit) return sum_last(mul(logits, constant(onehot)));
  return negate(sum_last(mul(log_softmax(logits), constant(onehot))));
}

Var direction(const Var& x, const Var& per_example) {
  if (x.shape().size() != 2 || per_example.shape() != Shape{x.shape()[0]}) {
    throw std::invalid_argument("direction: x " + shape_str(x.shape()) + " vs per-example output " +
                                shape_str(per_example.shape()));
  }
  Var g = gradient(sum(per_example), x, true);
  // The tiny offset keeps sqrt differentiable on all-zero gradients; it vanishes in
  // floating point against any realistic squared norm.
  Var norm = sqrt(sum_last(square(g)) + 1e-100);
  return div(g, reshape(norm + 1e-12, Shape{x.shape()[0], 1}));
}

void fill_directions(DrawEnsemble& ens, const Var& x, std::span<const std::size_t> labels, ScalarTarget target) {
  ens.input_grad_dirs.clear();
  ens.input_grad_dirs.reserve(ens.logits.size());
  for (const auto& z : ens.logits) ens.input_grad_dirs.push_back(direction(x, target_scalar(z, labels, target)));
}

DirectionStats direction_stats(std::span<const Var> dirs) {
  if (dirs.empty()) throw std::invalid_argument("direction_stats: no directions");
  const Shape shape = dirs.front().shape();
  if (shape.size() != 2) throw std::invalid_argument("direction_stats: directions must be [batch, D]");
  const double inv_k = 1.0 / static_cast<double>(dirs.size());

  Var total = dirs.front();
  for (std::size_t k = 1; k < dirs.size(); ++k) {
    if (dirs[k].shape() != shape) {
      throw std::invalid_argument("direction_stats: shape " + shape_str(dirs[k].shape()) + " vs " + shape_str(shape));
    }
    total = add(total, dirs[k]);
  }
  DirectionStats st;
  st.mean_dir = scale(total, inv_k);

  Var dev = square(sub(dirs.front(), st.mean_dir));
  for (std::size_t k = 1; k < dirs.size(); ++k) dev = add(dev, square(sub(dirs[k], st.mean_dir)));
  st.var_dir = scale(dev, inv_k);

  // [batch, K] assembled as a sum of column k times the unit row e_k.
  const std::size_t K = dirs.size();
  Var l1;
  for (std::size_t k = 0; k < K; ++k) {
    Tensor unit({1, K}, 0.0);
    unit[k] = 1.0;
    Var term = mul(reshape(sum_last(abs(dirs[k])), Shape{shape[0], 1}), constant(unit));
    l1 = k == 0 ? term : add(l1, term);
  }
  st.l1_norms = l1;
  return st;
}

Var omega_M(const DirectionStats& stats) { return sum_last(square(stats.mean_dir)); }

Var softmin_weights(const Var& v, double alpha) { return softmax(scale(v, -alpha)); }

Var omega_V(const DirectionStats& stats, const PenaltyConfig& cfg) {
  const Var& v = stats.var_dir;
  switch (cfg.variance_variant) {
    case VarianceVariant::minvar:
      return negate(min_last(v));
    case VarianceVariant::softmin:
      return negate(sum_last(mul(softmin_weights(v, cfg.alpha), v)));
    case VarianceVariant::euclidean: {
      const double target = 1.0 / static_cast<double>(v.shape().back());
      return sum_last(square(v + (-target)));
    }
  }
  throw std::logic_error("omega_V: unhandled variant");
}

Var omega_S(const DirectionStats& stats) { return negate(mean_last(stats.l1_norms)); }

}  // namespace divdir
