#include "divdir/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "divdir/checkpoint.hpp"

namespace divdir {

namespace {

enum Stream : std::uint64_t { kInit = 1, kShuffle = 2, kNoise = 3, kMonitor = 4, kOffline = 5 };

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + ": expected an object");
  for (const auto& [k, _] : j.items())
    if (!allowed.contains(k)) throw std::invalid_argument(where + ": unknown key '" + k + "'");
}

void check_finite(double v, const char* term) {
  if (!std::isfinite(v)) throw NonFiniteLoss(std::string("non-finite loss term '") + term + "'");
}

Tensor onehot(std::span<const std::size_t> labels, std::size_t classes) {
  Tensor t({labels.size(), classes}, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) throw std::invalid_argument("label out of range");
    t[i * classes + labels[i]] = 1.0;
  }
  return t;
}

double batch_mean(const Var& v) { return v.numel() ? sum(v).item() / static_cast<double>(v.numel()) : 0.0; }

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

std::string to_string(SigmaMode m) {
  switch (m) {
    case SigmaMode::learn: return "learn";
    case SigmaMode::freeze: return "freeze";
    case SigmaMode::collapse: return "collapse";
  }
  return "?";
}

SigmaMode sigma_mode_from(const std::string& s) {
  if (s == "learn") return SigmaMode::learn;
  if (s == "freeze") return SigmaMode::freeze;
  if (s == "collapse") return SigmaMode::collapse;
  throw std::invalid_argument("unknown sigma_mode '" + s + "' (learn, freeze, collapse)");
}

void OfflineAdvConfig::validate() const {
  attack.validate();
  if (!(ratio > 0.0)) throw std::invalid_argument("offline_adv: ratio must be positive");
  if (twin_epochs && *twin_epochs == 0) throw std::invalid_argument("offline_adv: twin_epochs must be >= 1");
}

void TrainConfig::validate() const {
  if (epochs == 0) throw std::invalid_argument("train: epochs must be >= 1");
  if (batch_size == 0) throw std::invalid_argument("train: batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("train: Adam betas must lie in [0,1)");
  }
  if (!(adam_eps > 0.0)) throw std::invalid_argument("train: adam_eps must be positive");
  if (kl_weight && !(*kl_weight >= 0.0)) throw std::invalid_argument("train: kl_weight must be >= 0");
  penalty.validate();
  if (offline_adv) offline_adv->validate();
}

double TrainConfig::penalty_scale(std::size_t epoch) const {
  if (epoch < penalty_warmup_epochs) return 0.0;
  if (penalty_ramp_epochs == 0) return 1.0;
  const double done = static_cast<double>(epoch - penalty_warmup_epochs + 1);
  return std::min(1.0, done / static_cast<double>(penalty_ramp_epochs));
}

nlohmann::json train_to_json(const TrainConfig& c) {
  nlohmann::json j{
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"learning_rate", c.learning_rate},
      {"beta1", c.beta1},
      {"beta2", c.beta2},
      {"adam_eps", c.adam_eps},
      {"kl_weight", c.kl_weight ? nlohmann::json(*c.kl_weight) : nlohmann::json("auto")},
      {"penalty",
       {{"lambda_M", c.penalty.lambda_M},
        {"lambda_V", c.penalty.lambda_V},
        {"lambda_S", c.penalty.lambda_S},
        {"alpha", c.penalty.alpha},
        {"variance_variant", to_string(c.penalty.variance_variant)},
        {"scalar_target", to_string(c.penalty.scalar_target)}}},
      {"penalty_warmup_epochs", c.penalty_warmup_epochs},
      {"penalty_ramp_epochs", c.penalty_ramp_epochs},
      {"sigma_mode", to_string(c.sigma_mode)},
      {"seed", c.seed},
      {"offline_adv", nullptr},
  };
  if (c.offline_adv) {
    const auto& o = *c.offline_adv;
    j["offline_adv"] = {{"attack", attack_to_json(o.attack)},
                        {"ratio", o.ratio},
                        {"twin_checkpoint", o.twin_checkpoint},
                        {"augmented_path", o.augmented_path},
                        {"twin_epochs", o.twin_epochs ? nlohmann::json(*o.twin_epochs) : nlohmann::json(nullptr)}};
  }
  return j;
}

TrainConfig train_from_json(const nlohmann::json& j) {
  reject_unknown(j,
                 {"epochs", "batch_size", "learning_rate", "beta1", "beta2", "adam_eps", "kl_weight", "penalty",
                  "penalty_warmup_epochs", "penalty_ramp_epochs", "sigma_mode", "seed", "offline_adv"},
                 "train");
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  if (j.contains("kl_weight") && !(j["kl_weight"].is_string() && j["kl_weight"] == "auto")) {
    c.kl_weight = j["kl_weight"].get<double>();
  }
  if (j.contains("penalty")) {
    const auto& p = j["penalty"];
    reject_unknown(p, {"lambda_M", "lambda_V", "lambda_S", "alpha", "variance_variant", "scalar_target"},
                   "train.penalty");
    c.penalty.lambda_M = p.value("lambda_M", c.penalty.lambda_M);
    c.penalty.lambda_V = p.value("lambda_V", c.penalty.lambda_V);
    c.penalty.lambda_S = p.value("lambda_S", c.penalty.lambda_S);
    c.penalty.alpha = p.value("alpha", c.penalty.alpha);
    c.penalty.variance_variant = variance_variant_from(p.value("variance_variant", to_string(c.penalty.variance_variant)));
    c.penalty.scalar_target = scalar_target_from(p.value("scalar_target", to_string(c.penalty.scalar_target)));
  }
  c.penalty_warmup_epochs = j.value("penalty_warmup_epochs", c.penalty_warmup_epochs);
  c.penalty_ramp_epochs = j.value("penalty_ramp_epochs", c.penalty_ramp_epochs);
  c.sigma_mode = sigma_mode_from(j.value("sigma_mode", to_string(c.sigma_mode)));
  c.seed = j.value("seed", c.seed);
  if (j.contains("offline_adv") && !j["offline_adv"].is_null()) {
    const auto& o = j["offline_adv"];
    reject_unknown(o, {"attack", "ratio", "twin_checkpoint", "augmented_path", "twin_epochs"}, "train.offline_adv");
    OfflineAdvConfig off;
    if (o.contains("attack")) off.attack = attack_from_json(o["attack"]);
    off.ratio = o.value("ratio", off.ratio);
    off.twin_checkpoint = o.value("twin_checkpoint", std::string());
    off.augmented_path = o.value("augmented_path", std::string());
    if (o.contains("twin_epochs") && !o["twin_epochs"].is_null()) off.twin_epochs = o["twin_epochs"].get<std::size_t>();
    c.offline_adv = off;
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Objective

LossTerms batch_loss(const BayesianNetwork& net, const ParamView& params, const Tensor& x,
                     std::span<const std::size_t> labels, const TrainConfig& cfg, double kl_weight,
                     double penalty_scale, Rng& rng) {
  const std::size_t batch = labels.size();
  if (batch == 0 || x.shape() != Shape{batch, net.spec().input_size()}) {
    throw std::invalid_argument("batch_loss: x " + shape_str(x.shape()) + " vs " + std::to_string(batch) + " labels");
  }
  const PenaltyConfig& pc = cfg.penalty;
  const bool penalties = pc.active() && penalty_scale > 0.0;
  const std::size_t k = net.spec().draws;
  if (penalties && k < 2) throw std::invalid_argument("batch_loss: penalties need K >= 2 draws");

  Var xv = penalties ? leaf(x) : constant(x);
  DrawEnsemble ens = net.forward_k(params, xv, k, rng);
  const Tensor y1h = onehot(labels, net.spec().classes());

  // per-example cross-entropy averaged over draws, and the mean-softmax prediction
  Var nll_rows;
  Tensor proba({batch, net.spec().classes()}, 0.0);
  for (const auto& z : ens.logits) {
    Var ls = log_softmax(z);
    Var ce = negate(sum_last(mul(ls, constant(y1h))));
    nll_rows = nll_rows.defined() ? add(nll_rows, ce) : ce;
    const Tensor& lv = ls.value();
    for (std::size_t i = 0; i < proba.numel(); ++i) proba[i] += std::exp(lv[i]);
  }
  nll_rows = scale(nll_rows, 1.0 / static_cast<double>(k));

  LossTerms out;
  const std::size_t classes = net.spec().classes();
  for (std::size_t i = 0; i < batch; ++i) {
    const double* row = proba.data().data() + i * classes;
    out.correct += static_cast<std::size_t>(std::max_element(row, row + classes) - row) == labels[i] ? 1 : 0;
  }

  Var per_example = nll_rows;
  out.nll = batch_mean(nll_rows);
  check_finite(out.nll, "nll");
  if (penalties) {
    fill_directions(ens, xv, labels, pc.scalar_target);
    DirectionStats st = direction_stats(ens.input_grad_dirs);
    if (pc.lambda_M > 0.0) {
      Var om = omega_M(st);
      out.omega_M = batch_mean(om);
      check_finite(out.omega_M, "omega_M");
      per_example = add(per_example, scale(om, penalty_scale * pc.lambda_M));
    }
    if (pc.lambda_V > 0.0) {
      Var ov = omega_V(st, pc);
      out.omega_V = batch_mean(ov);
      check_finite(out.omega_V, "omega_V");
      per_example = add(per_example, scale(ov, penalty_scale * pc.lambda_V));
    }
    if (pc.lambda_S > 0.0) {
      Var os = omega_S(st);
      out.omega_S = batch_mean(os);
      check_finite(out.omega_S, "omega_S");
      per_example = add(per_example, scale(os, penalty_scale * pc.lambda_S));
    }
  }

  Var total = sum(per_example);
  if (net.spec().bayesian_layers() > 0 && kl_weight > 0.0) {
    Var kl = net.kl(params);
    out.kl = kl.item();
    check_finite(out.kl, "kl");
    total = add(total, scale(kl, kl_weight));
  }
  out.total = scale(total, 1.0 / static_cast<double>(batch));
  check_finite(out.total.item(), "total");
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer

Adam::Adam(const std::vector<Tensor>& params, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params) {
    m_.emplace_back(p.shape(), 0.0);
    v_.emplace_back(p.shape(), 0.0);
  }
}

void Adam::step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, const std::vector<bool>& frozen) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (frozen[p]) continue;
    auto w = params[p].data();
    auto g = grads[p].data();
    auto m = m_[p].data();
    auto v = v_[p].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

// ---------------------------------------------------------------------------
// Metrics

const char* const kMetricsHeader =
    "epoch,loss,nll,kl,omega_M,omega_V,omega_S,var_sum,identity_residual,train_accuracy,monitor_accuracy";
const char* const kAttackMetricsHeader = "epoch,attack,norm,eps,alpha,steps,random_start,accuracy";

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string metrics_csv_row(const MetricsRecord& r) {
  std::string s = std::to_string(r.epoch);
  for (double v : {r.loss, r.nll, r.kl, r.omega_M, r.omega_V, r.omega_S, r.var_sum, r.identity_residual,
                   r.train_accuracy, r.monitor_accuracy}) {
    s += ',';
    s += format_number(v);
  }
  return s;
}

namespace {

std::string attack_csv_row(std::size_t epoch, const AttackMetric& a) {
  return std::to_string(epoch) + ',' + a.name + ',' + to_string(a.attack.norm) + ',' +
         format_number(a.attack.eps_max) + ',' + format_number(a.attack.alpha) + ',' + std::to_string(a.attack.steps) +
         ',' + (a.attack.random_start ? "1" : "0") + ',' + format_number(a.accuracy);
}

// Direction statistics on a fixed probe batch, independent of the training penalties.
void probe_directions(const BayesianNetwork& net, const Dataset& probe, const TrainConfig& cfg, std::uint64_t seed,
                      MetricsRecord& rec) {
  std::vector<std::size_t> idx(std::min<std::size_t>(probe.size(), 64));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const Tensor x = probe.rows(idx);
  const auto labels = probe.labels_at(idx);
  ParamView params = net.bind(false);
  Var xv = leaf(x);
  Rng rng(seed);
  auto ens = net.forward_draws(params, xv, std::max<std::size_t>(net.spec().draws, 2), rng);
  fill_directions(ens, xv, labels, cfg.penalty.scalar_target);
  auto st = direction_stats(ens.input_grad_dirs);
  const Tensor om = omega_M(st).value();
  const Tensor vs = sum_last(st.var_dir).value();
  rec.omega_M = batch_mean(constant(om));
  rec.omega_V = batch_mean(omega_V(st, cfg.penalty));
  rec.omega_S = batch_mean(omega_S(st));
  rec.var_sum = batch_mean(constant(vs));
  rec.identity_residual = 0.0;
  for (std::size_t i = 0; i < om.numel(); ++i)
    rec.identity_residual = std::max(rec.identity_residual, std::fabs(vs[i] + om[i] - 1.0));
}

}  // namespace

// ---------------------------------------------------------------------------
// Training loop

TrainResult train(const Dataset& data_in, const NetworkSpec& spec, const TrainConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  spec.validate();
  data_in.validate();
  if (data_in.features() != spec.input_size() || data_in.classes != spec.classes()) {
    throw std::invalid_argument("train: dataset layout does not match the network spec");
  }
  auto log = [&](const std::string& s) {
    if (opts.log) opts.log(s);
  };

  Dataset data = data_in;
  if (cfg.offline_adv) {
    const auto& off = *cfg.offline_adv;
    if (!off.augmented_path.empty() && std::filesystem::exists(off.augmented_path)) {
      data = load_dataset(off.augmented_path);
      log("loaded offline-augmented set " + off.augmented_path + " (" + std::to_string(data.size()) + " examples)");
    } else {
      const auto path = off.augmented_path.empty() && !opts.out_dir.empty()
                            ? opts.out_dir / "offline_augmented.bin"
                            : std::filesystem::path(off.augmented_path);
      data = build_offline_adversaries(data_in, spec, cfg, path, opts.log).augmented;
    }
  }

  BayesianNetwork net(spec, derive_seed(cfg.seed, kInit));
  if (cfg.sigma_mode == SigmaMode::collapse) net.collapse_sigma();
  std::vector<bool> frozen(net.tensors().size(), false);
  if (cfg.sigma_mode != SigmaMode::learn) frozen = net.rho_mask();

  const std::size_t n = data.size();
  const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
  const double kl_weight = cfg.kl_weight.value_or(1.0 / static_cast<double>(batches));
  Adam opt(net.tensors(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);

  Dataset monitor = opts.monitor ? *opts.monitor : data_in;
  monitor = monitor.head(opts.monitor_examples);

  std::ofstream metrics_csv, attack_csv;
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    metrics_csv.open(opts.out_dir / "metrics.csv", std::ios::trunc);
    metrics_csv << kMetricsHeader << '\n';
    if (!opts.monitor_attacks.empty()) {
      attack_csv.open(opts.out_dir / "attack_metrics.csv", std::ios::trunc);
      attack_csv << kAttackMetricsHeader << '\n';
    }
  }

  std::vector<Tensor> last_good = net.tensors();
  std::vector<MetricsRecord> history;
  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double pscale = cfg.penalty_scale(epoch);
    Rng shuffle(derive_seed(derive_seed(cfg.seed, kShuffle), epoch));
    const auto order = shuffle.permutation(n);
    MetricsRecord rec;
    rec.epoch = epoch + 1;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < batches; ++b, ++step) {
      const std::span<const std::size_t> idx(order.data() + b * cfg.batch_size,
                                             std::min(cfg.batch_size, n - b * cfg.batch_size));
      const Tensor x = data.rows(idx);
      const auto labels = data.labels_at(idx);
      Rng noise(derive_seed(derive_seed(cfg.seed, kNoise), step));
      ParamView params = net.bind(true);
      LossTerms terms = batch_loss(net, params, x, labels, cfg, kl_weight, pscale, noise);
      const double value = terms.total.item();
      if (opts.on_step) opts.on_step(step, value);
      if (value > 1e6) {
        std::filesystem::path saved;
        if (!opts.out_dir.empty()) {
          BayesianNetwork good = net;
          good.tensors() = last_good;
          saved = opts.out_dir / "checkpoint_last_good.bin";
          save_checkpoint(saved, good, {{"epoch", epoch}, {"reason", "divergence"}});
        }
        throw TrainingDiverged("training diverged: loss " + format_number(value) + " at epoch " +
                                   std::to_string(epoch + 1) + " batch " + std::to_string(b + 1),
                               saved);
      }
      auto grads = gradient(terms.total, params.vars);
      std::vector<Tensor> g;
      g.reserve(grads.size());
      for (auto& v : grads) g.push_back(v.value());
      opt.step(net.tensors(), g, frozen);

      const double w = static_cast<double>(idx.size()) / static_cast<double>(n);
      rec.loss += w * value;
      rec.nll += w * terms.nll;
      rec.kl = terms.kl;
      correct += terms.correct;
    }
    for (const auto& t : net.tensors())
      if (!t.all_finite()) throw NonFiniteLoss("non-finite parameters after epoch " + std::to_string(epoch + 1));
    last_good = net.tensors();

    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    const std::uint64_t mseed = derive_seed(cfg.seed, kMonitor);
    probe_directions(net, monitor, cfg, mseed, rec);
    rec.monitor_accuracy = standard_accuracy(monitor, net, mseed, spec.draws);
    const bool attack_epoch = (epoch + 1) % std::max<std::size_t>(opts.attack_every, 1) == 0 || epoch + 1 == cfg.epochs;
    if (attack_epoch) {
      for (auto a : opts.monitor_attacks) {
        a.accuracy = evaluate_attack(monitor, net, a.attack, mseed, spec.draws).accuracy;
        rec.attacks.push_back(a);
      }
    }
    if (metrics_csv.is_open()) metrics_csv << metrics_csv_row(rec) << std::endl;
    if (attack_csv.is_open())
      for (const auto& a : rec.attacks) attack_csv << attack_csv_row(rec.epoch, a) << std::endl;

    std::string line = "epoch " + std::to_string(rec.epoch) + " loss " + format_number(rec.loss) + " nll " +
                       format_number(rec.nll) + " acc " + format_number(rec.train_accuracy) + " monitor " +
                       format_number(rec.monitor_accuracy) + " omega_M " + format_number(rec.omega_M) +
                       " omega_S " + format_number(rec.omega_S);
    for (const auto& a : rec.attacks) line += " " + a.name + " " + format_number(a.accuracy);
    log(line);
    if (opts.on_epoch) opts.on_epoch(rec);
    history.push_back(std::move(rec));
  }

  if (!opts.out_dir.empty()) {
    save_checkpoint(opts.out_dir / "checkpoint.bin", net, {{"epochs", cfg.epochs}, {"train", train_to_json(cfg)}});
  }
  return {std::move(net), std::move(history)};
}

// ---------------------------------------------------------------------------
// Offline adversarial augmentation

OfflineResult build_offline_adversaries(const Dataset& data, const NetworkSpec& spec, const TrainConfig& cfg,
                                        const std::filesystem::path& out_path,
                                        const std::function<void(const std::string&)>& log) {
  if (!cfg.offline_adv) throw std::invalid_argument("build_offline_adversaries: offline_adv is not configured");
  const OfflineAdvConfig& off = *cfg.offline_adv;
  off.validate();
  const NetworkSpec twin_spec = spec.deterministic_twin();

  std::optional<BayesianNetwork> twin;
  if (!off.twin_checkpoint.empty()) {
    twin = load_checkpoint(off.twin_checkpoint);
    if (twin->spec().bayesian_layers() != 0) throw std::invalid_argument("offline twin checkpoint is not deterministic");
  } else {
    TrainConfig tc = cfg;
    tc.offline_adv.reset();
    tc.penalty = PenaltyConfig{};
    tc.epochs = off.twin_epochs.value_or(cfg.epochs);
    tc.seed = derive_seed(cfg.seed, kOffline);
    TrainOptions topts;
    if (log) topts.log = [&](const std::string& s) { log("twin " + s); };
    twin = train(data, twin_spec, tc, topts).net;
  }

  const std::size_t count = static_cast<std::size_t>(std::llround(off.ratio * static_cast<double>(data.size())));
  Rng pick(derive_seed(cfg.seed, kOffline + 1));
  const auto perm = pick.permutation(data.size());
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = perm[i % data.size()];
  const Dataset source = data.subset(idx);

  OfflineResult res;
  const std::uint64_t aseed = derive_seed(cfg.seed, kOffline + 2);
  res.twin_clean_accuracy = standard_accuracy(source, *twin, aseed, 1);
  Dataset adv;
  res.twin_adversarial_accuracy = evaluate_attack(source, *twin, off.attack, aseed, 1, 100, &adv).accuracy;
  res.appended = adv.size();
  res.augmented = data;
  res.augmented.append(adv);
  if (log) {
    log("offline: appended " + std::to_string(res.appended) + " PGD examples; twin accuracy clean " +
        format_number(res.twin_clean_accuracy) + " adversarial " + format_number(res.twin_adversarial_accuracy));
  }
  if (!out_path.empty()) {
    if (out_path.has_parent_path()) std::filesystem::create_directories(out_path.parent_path());
    save_dataset(out_path, res.augmented,
                 {{"attack", attack_to_json(off.attack)},
                  {"ratio", off.ratio},
                  {"appended", res.appended},
                  {"twin_adversarial_accuracy", res.twin_adversarial_accuracy}});
  }
  return res;
}

}  // namespace divdir
