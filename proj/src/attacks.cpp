#include "divdir/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "divdir/autodiff.hpp"

namespace divdir {

namespace {

// Independent randomness streams per evaluation batch.
enum Stream : std::uint64_t { kAttackStream = 1, kPredictStream = 2 };

std::pair<std::size_t, std::size_t> rows_cols(const Tensor& x) {
  if (x.rank() != 2) throw std::invalid_argument("attack: expected [batch, D] input, got " + shape_str(x.shape()));
  return {x.shape()[0], x.shape()[1]};
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

Tensor random_start(const Tensor& x0, const AttackConfig& cfg, Rng& rng) {
  const auto [n, d] = rows_cols(x0);
  Tensor out = x0;
  for (std::size_t i = 0; i < n; ++i) {
    double* row = out.data().data() + i * d;
    if (cfg.norm == Norm::linf) {
      for (std::size_t j = 0; j < d; ++j) row[j] += cfg.eps_max * rng.uniform(-1.0, 1.0);
    } else {
      // uniform in the L2 ball: gaussian direction, radius eps * U^(1/d)
      std::vector<double> g(d);
      double norm = 0.0;
      for (auto& v : g) {
        v = rng.normal();
        norm += v * v;
      }
      norm = std::sqrt(norm);
      const double r = cfg.eps_max * std::pow(rng.uniform(0.0, 1.0), 1.0 / static_cast<double>(d));
      for (std::size_t j = 0; j < d; ++j) row[j] += norm > 0.0 ? r * g[j] / norm : 0.0;
    }
  }
  return project(out, x0, cfg);
}

}  // namespace

std::string to_string(Norm n) { return n == Norm::linf ? "linf" : "l2"; }

Norm norm_from(const std::string& s) {
  if (s == "linf" || s == "Linf") return Norm::linf;
  if (s == "l2" || s == "L2") return Norm::l2;
  throw std::invalid_argument("unknown norm '" + s + "' (linf, l2)");
}

void AttackConfig::validate() const {
  if (!(eps_max >= 0.0) || !std::isfinite(eps_max)) throw std::invalid_argument("attack: eps_max must be >= 0");
  if (steps < 1) throw std::invalid_argument("attack: steps must be >= 1");
  if (draws_for_gradient < 1) throw std::invalid_argument("attack: draws_for_gradient must be >= 1");
  if (!(lo < hi)) throw std::invalid_argument("attack: input range must satisfy lo < hi");
  if (steps == 1) {
    if (!(alpha >= 0.0)) throw std::invalid_argument("attack: alpha must be >= 0");
  } else {
    if (!(alpha > 0.0)) throw std::invalid_argument("attack: alpha must be positive");
    if (eps_max > 0.0 && alpha > eps_max) {
      throw std::invalid_argument("attack: alpha (" + std::to_string(alpha) + ") exceeds eps_max (" +
                                  std::to_string(eps_max) + ") for a multi-step attack");
    }
  }
}

AttackConfig AttackConfig::fgsm(double eps, std::size_t draws) {
  return {Norm::linf, eps, eps, 1, false, draws};
}

AttackConfig AttackConfig::fgm(double eps, std::size_t draws) { return {Norm::l2, eps, eps, 1, false, draws}; }

AttackConfig AttackConfig::pgd(double eps, Norm norm, double alpha, std::size_t steps, std::size_t draws) {
  return {norm, eps, alpha, steps, true, draws};
}

AttackConfig AttackConfig::bim(double eps, Norm norm, double alpha, std::size_t steps, std::size_t draws) {
  return {norm, eps, alpha, steps, false, draws};
}

nlohmann::json attack_to_json(const AttackConfig& c) {
  return {{"norm", to_string(c.norm)}, {"eps_max", c.eps_max},         {"alpha", c.alpha},
          {"steps", c.steps},          {"random_start", c.random_start}, {"draws_for_gradient", c.draws_for_gradient},
          {"lo", c.lo},                {"hi", c.hi}};
}

AttackConfig attack_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> keys{"norm",         "eps_max",            "alpha", "steps",
                                             "random_start", "draws_for_gradient", "lo",    "hi"};
  if (!j.is_object()) throw std::invalid_argument("attack: expected an object");
  for (const auto& [k, _] : j.items())
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
      throw std::invalid_argument("attack: unknown key '" + k + "'");
    }
  AttackConfig c;
  c.norm = norm_from(j.value("norm", std::string("linf")));
  c.eps_max = j.value("eps_max", c.eps_max);
  c.alpha = j.value("alpha", c.alpha);
  c.steps = j.value("steps", c.steps);
  c.random_start = j.value("random_start", c.random_start);
  c.draws_for_gradient = j.value("draws_for_gradient", c.draws_for_gradient);
  c.lo = j.value("lo", c.lo);
  c.hi = j.value("hi", c.hi);
  c.validate();
  return c;
}

Tensor NetworkOracle::loss_gradient(const Tensor& x, std::span<const std::size_t> labels, std::size_t draws,
                                    Rng& rng) const {
  const auto [n, d] = rows_cols(x);
  if (labels.size() != n) throw std::invalid_argument("attack: label count does not match batch");
  const std::size_t classes = net_.spec().classes();
  Tensor onehot({n, classes}, 0.0);
  for (std::size_t i = 0; i < n; ++i) onehot[i * classes + labels[i]] = 1.0;

  // A deterministic network gives identical draws; one pass is enough.
  if (net_.spec().bayesian_layers() == 0) draws = 1;
  ParamView params = net_.bind(false);
  Var xv = leaf(x);
  DrawEnsemble ens = net_.forward_draws(params, xv, draws, rng);
  Var total;
  for (const auto& z : ens.logits) {
    Var ce = negate(sum(mul(log_softmax(z), constant(onehot))));
    total = total.defined() ? add(total, ce) : ce;
  }
  total = scale(total, 1.0 / static_cast<double>(draws));
  return gradient(total, xv).value();
}

Tensor project(const Tensor& x_adv, const Tensor& x0, const AttackConfig& cfg) {
  const auto [n, d] = rows_cols(x0);
  if (x_adv.shape() != x0.shape()) throw std::invalid_argument("project: shape mismatch");
  Tensor out(x0.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double* a = x_adv.data().data() + i * d;
    const double* o = x0.data().data() + i * d;
    double* r = out.data().data() + i * d;
    if (cfg.norm == Norm::linf) {
      for (std::size_t j = 0; j < d; ++j) r[j] = o[j] + std::clamp(a[j] - o[j], -cfg.eps_max, cfg.eps_max);
    } else {
      double norm = 0.0;
      for (std::size_t j = 0; j < d; ++j) norm += (a[j] - o[j]) * (a[j] - o[j]);
      norm = std::sqrt(norm);
      const double f = norm > cfg.eps_max ? cfg.eps_max / norm : 1.0;
      for (std::size_t j = 0; j < d; ++j) r[j] = o[j] + f * (a[j] - o[j]);
    }
    // Clipping each coordinate toward the (in-range) original can only shrink the perturbation.
    for (std::size_t j = 0; j < d; ++j) r[j] = std::clamp(r[j], cfg.lo, cfg.hi);
  }
  return out;
}

Tensor step_and_project(const Tensor& x_cur, const Tensor& x0, const Tensor& g, double alpha,
                        const AttackConfig& cfg) {
  const auto [n, d] = rows_cols(x_cur);
  Tensor next = x_cur;
  for (std::size_t i = 0; i < n; ++i) {
    const double* gi = g.data().data() + i * d;
    double* xi = next.data().data() + i * d;
    if (cfg.norm == Norm::linf) {
      for (std::size_t j = 0; j < d; ++j) xi[j] += alpha * sign(gi[j]);
    } else {
      double norm = 0.0;
      for (std::size_t j = 0; j < d; ++j) norm += gi[j] * gi[j];
      norm = std::sqrt(norm);
      if (norm > 0.0)
        for (std::size_t j = 0; j < d; ++j) xi[j] += alpha * gi[j] / norm;
    }
  }
  return project(next, x0, cfg);
}

Tensor fgsm(const Tensor& x, std::span<const std::size_t> labels, const GradientOracle& model,
            const AttackConfig& cfg, Rng& rng) {
  if (cfg.norm != Norm::linf) throw std::invalid_argument("fgsm: requires the Linf norm");
  return step_and_project(x, x, model.loss_gradient(x, labels, cfg.draws_for_gradient, rng), cfg.eps_max, cfg);
}

Tensor fgm(const Tensor& x, std::span<const std::size_t> labels, const GradientOracle& model,
           const AttackConfig& cfg, Rng& rng) {
  if (cfg.norm != Norm::l2) throw std::invalid_argument("fgm: requires the L2 norm");
  return step_and_project(x, x, model.loss_gradient(x, labels, cfg.draws_for_gradient, rng), cfg.eps_max, cfg);
}

Tensor pgd(const Tensor& x, std::span<const std::size_t> labels, const GradientOracle& model,
           const AttackConfig& cfg, Rng& rng) {
  cfg.validate();
  Tensor cur = cfg.random_start && cfg.eps_max > 0.0 ? random_start(x, cfg, rng) : x;
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    cur = step_and_project(cur, x, model.loss_gradient(cur, labels, cfg.draws_for_gradient, rng), cfg.alpha, cfg);
  }
  return cur;
}

Tensor bim(const Tensor& x, std::span<const std::size_t> labels, const GradientOracle& model,
           const AttackConfig& cfg, Rng& rng) {
  AttackConfig c = cfg;
  c.random_start = false;
  return pgd(x, labels, model, c, rng);
}

Tensor run_attack(const Tensor& x, std::span<const std::size_t> labels, const GradientOracle& model,
                  const AttackConfig& cfg, Rng& rng) {
  cfg.validate();
  if (cfg.eps_max == 0.0) return x;
  if (cfg.steps == 1 && !cfg.random_start && cfg.alpha == cfg.eps_max) {
    return cfg.norm == Norm::linf ? fgsm(x, labels, model, cfg, rng) : fgm(x, labels, model, cfg, rng);
  }
  return pgd(x, labels, model, cfg, rng);
}

namespace {

std::size_t count_correct(const Tensor& proba, std::span<const std::size_t> labels) {
  const std::size_t classes = proba.shape()[1];
  std::size_t ok = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double* row = proba.data().data() + i * classes;
    const auto best = static_cast<std::size_t>(std::max_element(row, row + classes) - row);
    ok += best == labels[i] ? 1 : 0;
  }
  return ok;
}

template <class Attack>
AttackEvaluation evaluate_batches(const Dataset& data, const BayesianNetwork& net, std::uint64_t seed,
                                  std::size_t predict_draws, std::size_t batch_size, Attack&& attack,
                                  Dataset* adversarial_out) {
  if (data.size() == 0) throw std::invalid_argument("evaluate_attack: empty dataset");
  if (batch_size == 0) throw std::invalid_argument("evaluate_attack: batch_size must be >= 1");
  if (predict_draws == 0) throw std::invalid_argument("evaluate_attack: predict_draws must be >= 1");
  AttackEvaluation ev;
  std::vector<double> adv_values;
  if (adversarial_out) adv_values.reserve(data.x.numel());
  for (std::size_t start = 0, b = 0; start < data.size(); start += batch_size, ++b) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) idx.push_back(i);
    const Tensor x = data.rows(idx);
    const auto labels = data.labels_at(idx);
    Rng attack_rng(derive_seed(derive_seed(seed, b), kAttackStream));
    Tensor x_adv = attack(x, labels, attack_rng);
    Rng predict_rng(derive_seed(derive_seed(seed, b), kPredictStream));
    ev.correct += count_correct(net.predict_proba(x_adv, predict_draws, predict_rng), labels);
    ev.examples += idx.size();
    if (adversarial_out) adv_values.insert(adv_values.end(), x_adv.data().begin(), x_adv.data().end());
  }
  ev.accuracy = static_cast<double>(ev.correct) / static_cast<double>(ev.examples);
  if (adversarial_out) {
    adversarial_out->x = Tensor({data.size(), data.features()}, std::move(adv_values));
    adversarial_out->labels = data.labels;
    adversarial_out->sample_shape = data.sample_shape;
    adversarial_out->classes = data.classes;
  }
  return ev;
}

}  // namespace

AttackEvaluation evaluate_attack(const Dataset& data, const BayesianNetwork& net, const AttackConfig& cfg,
                                 std::uint64_t seed, std::size_t predict_draws, std::size_t batch_size,
                                 Dataset* adversarial_out) {
  cfg.validate();
  NetworkOracle oracle(net);
  return evaluate_batches(
      data, net, seed, predict_draws, batch_size,
      [&](const Tensor& x, const std::vector<std::size_t>& labels, Rng& rng) {
        return run_attack(x, labels, oracle, cfg, rng);
      },
      adversarial_out);
}

double standard_accuracy(const Dataset& data, const BayesianNetwork& net, std::uint64_t seed,
                         std::size_t predict_draws, std::size_t batch_size) {
  return evaluate_batches(
             data, net, seed, predict_draws, batch_size,
             [](const Tensor& x, const std::vector<std::size_t>&, Rng&) { return x; }, nullptr)
      .accuracy;
}

void save_adversarial(const std::filesystem::path& path, const Dataset& adv, const AttackConfig& cfg,
                      const nlohmann::json& extra) {
  nlohmann::json meta = extra;
  meta["attack"] = attack_to_json(cfg);
  save_dataset(path, adv, meta);
}

Dataset load_adversarial(const std::filesystem::path& path, AttackConfig* cfg) {
  nlohmann::json meta;
  Dataset ds = load_dataset(path, &meta);
  if (!meta.contains("attack")) throw std::runtime_error(path.string() + ": not an adversarial dump (no attack)");
  if (cfg) *cfg = attack_from_json(meta.at("attack"));
  return ds;
}

}  // namespace divdir
