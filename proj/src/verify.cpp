#include "divdir/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <future>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "divdir/attacks.hpp"
#include "divdir/penalties.hpp"
#include "divdir/training.hpp"
#include "divdir/variational.hpp"

namespace divdir {

namespace {

using Clock = std::chrono::steady_clock;

std::string num(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

OracleReport finish(std::string name, bool ok, double measured, double tol, Clock::time_point t0, std::string detail) {
  OracleReport r;
  r.name = std::move(name);
  r.status = ok ? OracleStatus::pass : OracleStatus::fail;
  r.measured = measured;
  r.tolerance = tol;
  r.runtime_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  r.detail = std::move(detail);
  return r;
}

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j);
    for (std::size_t t = i; t <= j; ++t) r[order[t]] = avg;
    i = j + 1;
  }
  return r;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

// ---------------------------------------------------------------------------
// Finite differences

double norm2(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  return std::sqrt(s);
}

struct GradCase {
  std::string name;
  NetworkSpec spec;
  PenaltyConfig penalty;
  double kl_weight = 0.0;
  double tolerance = 1e-4;
  double h = 1e-5;
};

NetworkSpec small_conv(bool with_bayesian_conv) {
  NetworkSpec s;
  s.input_shape = {1, 6, 6};
  s.layers = {{LayerKind::conv, 3, 3, Activation::relu, false},
              {LayerKind::avgpool, 0, 0, Activation::none, false},
              {LayerKind::conv, 2, 3, Activation::relu, with_bayesian_conv},
              {LayerKind::dense, 3, 0, Activation::none, true}};
  s.draws = 3;
  return s;
}

OracleReport gradient_case(const GradCase& c, std::uint64_t seed) {
  const auto t0 = Clock::now();
  BayesianNetwork net(c.spec, seed);
  Rng data(seed + 1);
  const std::size_t batch = 3;
  Tensor x = data.uniform_tensor({batch, c.spec.input_size()}, 0.05, 0.95);
  std::vector<std::size_t> y(batch);
  for (std::size_t i = 0; i < batch; ++i) y[i] = i % c.spec.classes();
  TrainConfig cfg;
  cfg.penalty = c.penalty;

  auto loss_of = [&](const BayesianNetwork& n) {
    Rng noise(seed + 2);
    return batch_loss(n, n.bind(false), x, y, cfg, c.kl_weight, 1.0, noise).total.item();
  };
  ParamView params = net.bind(true);
  Rng noise(seed + 2);
  const Var total = batch_loss(net, params, x, y, cfg, c.kl_weight, 1.0, noise).total;
  const auto grads = gradient(total, params.vars);

  double worst = 0.0;
  std::string worst_detail = "all tensors agree";
  BayesianNetwork probe = net;
  for (std::size_t p = 0; p < net.tensors().size(); ++p) {
    Tensor numeric(net.tensors()[p].shape());
    for (std::size_t i = 0; i < numeric.numel(); ++i) {
      const double orig = net.tensors()[p][i];
      probe.tensors()[p][i] = orig + c.h;
      const double up = loss_of(probe);
      probe.tensors()[p][i] = orig - c.h;
      const double down = loss_of(probe);
      probe.tensors()[p][i] = orig;
      numeric[i] = (up - down) / (2.0 * c.h);
    }
    const Tensor& analytic = grads[p].value();
    Tensor diff = analytic;
    for (std::size_t i = 0; i < diff.numel(); ++i) diff[i] -= numeric[i];
    const double rel = norm2(diff) / std::max({norm2(analytic), norm2(numeric), 1e-6});
    if (rel > worst) {
      worst = rel;
      worst_detail = "worst d(loss)/d(" + net.names()[p] + "): analytic norm " + num(norm2(analytic)) +
                     ", finite-difference norm " + num(norm2(numeric)) + ", relative error " + num(rel);
    }
  }
  return finish("gradients/" + c.name, worst < c.tolerance, worst, c.tolerance, t0, worst_detail);
}

OracleReport frozen_case(std::uint64_t seed) {
  const auto t0 = Clock::now();
  BayesianNetwork net(NetworkSpec::mlp(5, {6}, 3, 1, 3), seed);
  ParamView params = net.bind(true);
  Rng data(seed);
  Var x = leaf(data.uniform_tensor({2, 5}, 0.0, 1.0));
  // output that ignores every weight
  Var out = sum(mul(x, x));
  const auto grads = gradient(out, params.vars);
  double worst = 0.0;
  for (const auto& g : grads)
    for (double v : g.value().data()) worst = std::max(worst, std::fabs(v));

  // optimizer step with every weight frozen
  std::vector<Tensor> before = net.tensors();
  std::vector<Tensor> ones;
  for (const auto& t : before) ones.emplace_back(t.shape(), 1.0);
  Adam opt(net.tensors(), 0.1, 0.9, 0.999, 1e-8);
  opt.step(net.tensors(), ones, std::vector<bool>(before.size(), true));
  double moved = 0.0;
  for (std::size_t i = 0; i < before.size(); ++i)
    for (std::size_t j = 0; j < before[i].numel(); ++j)
      moved = std::max(moved, std::fabs(net.tensors()[i][j] - before[i][j]));
  return finish("gradients/frozen", worst == 0.0 && moved == 0.0, std::max(worst, moved), 0.0, t0,
                "max |gradient of weight-free output| " + num(worst) + ", max frozen-weight change " + num(moved));
}

// ---------------------------------------------------------------------------
// Attack helpers

class GaussianOracle final : public GradientOracle {
 public:
  Tensor loss_gradient(const Tensor& x, std::span<const std::size_t>, std::size_t, Rng& rng) const override {
    return rng.normal_tensor(x.shape());
  }
};

}  // namespace

std::string to_string(OracleStatus s) {
  switch (s) {
    case OracleStatus::pass: return "pass";
    case OracleStatus::fail: return "fail";
    case OracleStatus::inconclusive: return "inconclusive";
  }
  return "?";
}

OracleReport check_entropy_variance_monotonicity(const SharpeningFamily& fam, std::size_t samples,
                                                 std::uint64_t seed) {
  const auto t0 = Clock::now();
  const std::string name = "entropy_variance_monotonicity";
  if (fam.concentrations.size() < 2 || fam.dims == 0 || fam.bins < 2)
    throw std::invalid_argument("entropy check: need >= 2 settings, dims >= 1, bins >= 2");
  if (samples < 50 * fam.bins) {
    auto r = finish(name, false, 0.0, 0.0, t0,
                    std::to_string(samples) + " samples is too few for " + std::to_string(fam.bins) + " bins");
    r.status = OracleStatus::inconclusive;
    return r;
  }
  const double width = 1.0 / static_cast<double>(fam.bins);
  const double n = static_cast<double>(samples);
  std::vector<double> entropy, var_sum, std_err;
  for (std::size_t s = 0; s < fam.concentrations.size(); ++s) {
    const double a = fam.concentrations[s];
    std::mt19937_64 gen(seed * 1000003u + s);
    std::gamma_distribution<double> gamma(std::isfinite(a) ? a : 1.0, 1.0);
    double h_total = 0.0, v_total = 0.0, se2 = 0.0;
    std::vector<double> xs(samples);
    for (std::size_t d = 0; d < fam.dims; ++d) {
      std::vector<std::size_t> counts(fam.bins, 0);
      for (std::size_t i = 0; i < samples; ++i) {
        double v = 0.5;
        if (std::isfinite(a)) {
          const double g1 = gamma(gen), g2 = gamma(gen);
          v = g1 / (g1 + g2);
        }
        xs[i] = v;
        const auto b = std::min(fam.bins - 1, static_cast<std::size_t>(v * static_cast<double>(fam.bins)));
        ++counts[b];
      }
      double h = 0.0, m2 = 0.0;
      for (auto c : counts) {
        if (c == 0) continue;
        const double p = static_cast<double>(c) / n;
        const double lp = std::log(p / width);
        h -= p * lp;
        m2 += p * lp * lp;
      }
      h_total += h;
      se2 += std::max(0.0, m2 - h * h) / n;
      double mean = 0.0;
      for (double v : xs) mean += v;
      mean /= n;
      double var = 0.0;
      for (double v : xs) var += (v - mean) * (v - mean);
      v_total += var / (n - 1.0);
    }
    entropy.push_back(h_total);
    var_sum.push_back(v_total);
    std_err.push_back(std::sqrt(se2));
  }
  const double rho = pearson(ranks(entropy), ranks(var_sum));
  const bool ok = rho >= 1.0 - 1e-12;

  const auto mn_h = std::min_element(entropy.begin(), entropy.end()) - entropy.begin();
  const auto mn_v = std::min_element(var_sum.begin(), var_sum.end()) - var_sum.begin();
  const auto mx_v = std::max_element(var_sum.begin(), var_sum.end()) - var_sum.begin();
  std::string detail = "spearman(entropy, sum var) = " + num(rho) + "; min entropy at a=" +
                       num(fam.concentrations[mn_h]) + ", min sum var at a=" + num(fam.concentrations[mn_v]) +
                       ", max sum var " + num(var_sum[mx_v]) + " at a=" + num(fam.concentrations[mx_v]) +
                       " (uniform: " + num(static_cast<double>(fam.dims) / 12.0) + ")";
  auto r = finish("entropy_variance_monotonicity", ok, rho, 1e-12, t0, detail);
  if (!ok) {
    // disagreements between settings whose entropies are statistically tied are not evidence
    bool resolvable = false;
    for (std::size_t i = 0; i < entropy.size(); ++i)
      for (std::size_t j = 0; j < entropy.size(); ++j) {
        const bool disagree = (entropy[i] - entropy[j]) * (var_sum[i] - var_sum[j]) < 0.0;
        const double gap = std::fabs(entropy[i] - entropy[j]);
        if (disagree && gap > 3.0 * std::hypot(std_err[i], std_err[j])) resolvable = true;
      }
    if (!resolvable) r.status = OracleStatus::inconclusive;
  }
  return r;
}

OracleReport check_variance_identity(std::size_t trials, std::size_t k, std::size_t d, std::uint64_t seed,
                                     double tolerance) {
  const auto t0 = Clock::now();
  if (k < 2 || d < 2) throw std::invalid_argument("variance identity: need K >= 2 and D >= 2");
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  double worst = 0.0, worst_var = 0.0, worst_m = 0.0, worst_lib = 0.0;
  NoGradGuard guard;
  for (std::size_t t = 0; t < trials; ++t) {
    std::vector<std::vector<double>> u(k, std::vector<double>(d));
    std::vector<Var> dirs;
    for (auto& row : u) {
      double nn = 0.0;
      for (auto& v : row) {
        v = z(gen);
        nn += v * v;
      }
      nn = std::sqrt(nn);
      for (auto& v : row) v /= nn;
      dirs.push_back(constant(Tensor({1, d}, row)));
    }
    // naive two-pass statistics
    double var_sum = 0.0, mean_sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      double m = 0.0;
      for (std::size_t i = 0; i < k; ++i) m += u[i][j];
      m /= static_cast<double>(k);
      double v = 0.0;
      for (std::size_t i = 0; i < k; ++i) v += (u[i][j] - m) * (u[i][j] - m);
      var_sum += v / static_cast<double>(k);
      mean_sq += m * m;
    }
    // library statistics
    const auto stats = direction_stats(dirs);
    const double lib_var = sum(stats.var_dir).item();
    const double lib_m = omega_M(stats).item();
    const double err = std::max({std::fabs(var_sum - (1.0 - mean_sq)), std::fabs(lib_var - (1.0 - lib_m)),
                                 std::fabs(lib_var - var_sum)});
    if (err >= worst) {
      worst = err;
      worst_var = lib_var;
      worst_m = lib_m;
      worst_lib = var_sum;
    }
  }
  return finish("variance_identity", worst < tolerance, worst, tolerance, t0,
                std::to_string(trials) + " batches (K=" + std::to_string(k) + ", D=" + std::to_string(d) +
                    "); worst: sum Var " + num(worst_var) + " (naive " + num(worst_lib) + ") vs 1 - Omega_M " +
                    num(1.0 - worst_m));
}

std::vector<OracleReport> check_gradients(std::uint64_t seed) {
  std::vector<GradCase> cases;
  PenaltyConfig none;
  cases.push_back({"ce_deterministic", NetworkSpec::mlp(5, {6}, 3, 0, 3), none, 0.0});
  cases.push_back({"ce_kl_bayesian_tail", NetworkSpec::mlp(5, {6}, 3, 1, 3), none, 0.1});
  cases.push_back({"ce_kl_conv", small_conv(true), none, 0.1});
  auto second = [&](std::string name, PenaltyConfig p, NetworkSpec spec) {
    cases.push_back({std::move(name), std::move(spec), p, 0.0, 1e-2, 1e-4});
  };
  const auto toy = NetworkSpec::mlp(5, {6}, 3, 1, 3);
  PenaltyConfig p;
  p.lambda_M = 1.0;
  second("omega_M_only", p, toy);
  for (auto variant : {VarianceVariant::minvar, VarianceVariant::softmin, VarianceVariant::euclidean}) {
    PenaltyConfig q;
    q.lambda_V = 1.0;
    q.alpha = 5.0;
    q.variance_variant = variant;
    second("omega_V_" + to_string(variant) + "_only", q, toy);
  }
  PenaltyConfig s;
  s.lambda_S = 1.0;
  second("omega_S_only", s, toy);
  second("omega_S_conv", s, small_conv(true));
  PenaltyConfig loss_target = s;
  loss_target.lambda_M = 1.0;
  loss_target.scalar_target = ScalarTarget::loss;
  second("omega_M_S_loss_target", loss_target, toy);

  std::vector<OracleReport> out;
  for (const auto& c : cases) out.push_back(gradient_case(c, seed));
  out.push_back(frozen_case(seed));
  return out;
}

std::vector<OracleReport> check_kl(std::size_t settings, std::size_t samples, std::uint64_t seed) {
  const auto t0 = Clock::now();
  const std::size_t dims = 10;
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> umu(-1.0, 1.0), usig(0.2, 1.5), uprior(0.5, 2.0);
  std::normal_distribution<double> z(0.0, 1.0);
  double worst = 0.0;
  std::string detail;
  for (std::size_t s = 0; s < settings; ++s) {
    Tensor mu({dims}), rho({dims});
    for (std::size_t i = 0; i < dims; ++i) {
      mu[i] = umu(gen);
      rho[i] = rho_for_sigma(usig(gen));
    }
    const double ps = uprior(gen);
    const auto param = make_variational(mu, rho);
    const Tensor sigma = param.sigma();
    const double closed = kl_to_prior(param, {ps}).item();
    // E_q[log q(w) - log p(w)], normalizing constants cancel
    double acc = 0.0;
    for (std::size_t n = 0; n < samples; ++n) {
      double lr = 0.0;
      for (std::size_t i = 0; i < dims; ++i) {
        const double e = z(gen);
        const double w = mu[i] + sigma[i] * e;
        lr += -0.5 * e * e - std::log(sigma[i]) + 0.5 * (w / ps) * (w / ps) + std::log(ps);
      }
      acc += lr;
    }
    const double mc = acc / static_cast<double>(samples);
    const double rel = std::fabs(closed - mc) / std::fabs(mc);
    if (rel >= worst) {
      worst = rel;
      detail = "worst setting " + std::to_string(s) + ": closed form " + num(closed) + " vs Monte Carlo " + num(mc);
    }
  }
  std::vector<OracleReport> out;
  out.push_back(finish("kl_monte_carlo", worst < 0.01, worst, 0.01, t0,
                       std::to_string(settings) + " settings x " + std::to_string(samples) + " samples; " + detail));

  const auto t1 = Clock::now();
  const auto q = make_variational(Tensor::vector({0.0, 0.0, 0.0}), Tensor::vector({-1.0, 0.3, 2.0}));
  const Tensor qs = q.sigma();
  double worst_self = 0.0;
  for (std::size_t i = 0; i < qs.numel(); ++i) {
    const auto one = make_variational(Tensor::vector({0.0}), Tensor::vector({q.rho.value()[i]}));
    worst_self = std::max(worst_self, std::fabs(kl_to_prior(one, {qs[i]}).item()));
  }
  out.push_back(finish("kl_self_zero", worst_self == 0.0, worst_self, 0.0, t1,
                       "max |KL(q, q)| over 3 scales = " + num(worst_self)));
  return out;
}

OracleReport check_projection(std::size_t runs, std::uint64_t seed) {
  const auto t0 = Clock::now();
  GaussianOracle noise;
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  std::size_t out_of_range = 0;
  for (std::size_t run = 0; run < runs; ++run) {
    const Norm norm = run % 2 ? Norm::l2 : Norm::linf;
    const std::size_t d = 1 + gen() % 16;
    const double eps = u(gen) * (norm == Norm::l2 ? 2.0 : 0.5);
    AttackConfig cfg = AttackConfig::pgd(eps, norm, std::max(eps * u(gen), 1e-6 * eps), 1 + gen() % 10, 1);
    if (eps == 0.0) cfg.alpha = 0.01;
    cfg.random_start = u(gen) < 0.5;
    Rng rng(gen());
    const std::size_t rows = 2;
    Tensor x = rng.uniform_tensor({rows, d}, 0.0, 1.0);
    const std::vector<std::size_t> labels(rows, 0);
    const Tensor adv = run % 3 == 0 ? bim(x, labels, noise, cfg, rng) : pgd(x, labels, noise, cfg, rng);
    for (std::size_t r = 0; r < rows; ++r) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double v = adv[r * d + j];
        if (!(v >= 0.0 && v <= 1.0)) ++out_of_range;
        const double diff = std::fabs(v - x[r * d + j]);
        acc = norm == Norm::linf ? std::max(acc, diff) : acc + diff * diff;
      }
      const double dist = norm == Norm::linf ? acc : std::sqrt(acc);
      worst = std::max(worst, dist - eps);
    }
  }
  const bool ok = worst <= 1e-9 && out_of_range == 0;
  return finish("projection", ok, worst, 1e-9, t0,
                std::to_string(runs) + " runs; max excess over eps " + num(worst) + ", coordinates outside [0,1]: " +
                    std::to_string(out_of_range));
}

OracleReport check_fgsm_pgd_equivalence(std::size_t inputs, std::uint64_t seed) {
  const auto t0 = Clock::now();
  BayesianNetwork net(NetworkSpec::mlp(12, {16}, 4, 2, 5), seed);
  NetworkOracle oracle(net);
  Rng data(seed + 1);
  std::size_t mismatches = 0;
  for (std::size_t t = 0; t < inputs; ++t) {
    const Tensor x = data.uniform_tensor({1, 12}, 0.0, 1.0);
    const std::vector<std::size_t> y{t % 4};
    const double eps = data.uniform(0.01, 0.5);
    auto step = AttackConfig::pgd(eps, Norm::linf, eps, 1, 5);
    step.random_start = false;
    const std::uint64_t s = data.next();
    Rng a(s), b(s);
    if (!(pgd(x, y, oracle, step, a) == fgsm(x, y, oracle, AttackConfig::fgsm(eps, 5), b))) ++mismatches;
  }
  return finish("fgsm_pgd_equivalence", mismatches == 0, static_cast<double>(mismatches), 0.0, t0,
                std::to_string(mismatches) + " of " + std::to_string(inputs) + " inputs differ bitwise");
}

void VerifyConfig::validate() const {
  if (entropy_samples == 0 || identity_trials == 0 || kl_settings == 0 || kl_samples < 2 || projection_runs == 0 ||
      equivalence_inputs == 0)
    throw std::invalid_argument("verify: every count must be positive");
}

nlohmann::json verify_to_json(const VerifyConfig& c) {
  return {{"seed", c.seed},
          {"entropy_samples", c.entropy_samples},
          {"identity_trials", c.identity_trials},
          {"kl_settings", c.kl_settings},
          {"kl_samples", c.kl_samples},
          {"projection_runs", c.projection_runs},
          {"equivalence_inputs", c.equivalence_inputs}};
}

VerifyConfig verify_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("verify: expected an object");
  VerifyConfig c;
  const auto defaults = verify_to_json(c);
  for (const auto& [k, _] : j.items())
    if (!defaults.contains(k)) throw std::invalid_argument("verify: unknown key '" + k + "'");
  c.seed = j.value("seed", c.seed);
  c.entropy_samples = j.value("entropy_samples", c.entropy_samples);
  c.identity_trials = j.value("identity_trials", c.identity_trials);
  c.kl_settings = j.value("kl_settings", c.kl_settings);
  c.kl_samples = j.value("kl_samples", c.kl_samples);
  c.projection_runs = j.value("projection_runs", c.projection_runs);
  c.equivalence_inputs = j.value("equivalence_inputs", c.equivalence_inputs);
  c.validate();
  return c;
}

std::vector<OracleReport> run_verify_suite(const VerifyConfig& cfg) {
  cfg.validate();
  using Batch = std::function<std::vector<OracleReport>()>;
  const std::vector<Batch> checks{
      [&] { return std::vector{check_entropy_variance_monotonicity({}, cfg.entropy_samples, cfg.seed)}; },
      [&] { return std::vector{check_variance_identity(cfg.identity_trials, 10, 50, cfg.seed)}; },
      [&] { return check_gradients(cfg.seed); },
      [&] { return check_kl(cfg.kl_settings, cfg.kl_samples, cfg.seed); },
      [&] { return std::vector{check_projection(cfg.projection_runs, cfg.seed)}; },
      [&] { return std::vector{check_fgsm_pgd_equivalence(cfg.equivalence_inputs, cfg.seed)}; },
  };
  std::vector<std::future<std::vector<OracleReport>>> running;
  for (const auto& c : checks) running.push_back(std::async(std::launch::async, c));
  std::vector<OracleReport> out;
  for (auto& f : running) {
    auto part = f.get();
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

const char* const kVerifyHeader = "check,status,measured,tolerance,runtime_s,detail";

std::string verify_csv(const std::vector<OracleReport>& reports) {
  std::string s = std::string(kVerifyHeader) + "\n";
  for (const auto& r : reports) {
    std::string detail = r.detail;
    std::replace(detail.begin(), detail.end(), '"', '\'');
    s += r.name + "," + to_string(r.status) + "," + format_number(r.measured) + "," + format_number(r.tolerance) + "," +
         format_number(r.runtime_seconds) + ",\"" + detail + "\"\n";
  }
  return s;
}

std::string verify_summary(const std::vector<OracleReport>& reports) {
  std::ostringstream os;
  std::size_t passed = 0;
  for (const auto& r : reports) {
    os << "[" << to_string(r.status) << "] " << r.name << ": " << r.detail << " (" << num(r.runtime_seconds)
       << " s)\n";
    passed += r.status == OracleStatus::pass;
  }
  os << passed << "/" << reports.size() << " checks passed\n";
  return os.str();
}

bool all_passed(const std::vector<OracleReport>& reports) {
  return std::all_of(reports.begin(), reports.end(), [](const auto& r) { return r.status == OracleStatus::pass; });
}

}  // namespace divdir
