#include "divdir/variational.hpp"

#include <cmath>
#include <stdexcept>

namespace divdir {

Tensor VariationalParam::sigma() const {
  NoGradGuard guard;
  return softplus(rho).value();
}

VariationalParam make_variational(Tensor mu, Tensor rho) {
  if (mu.shape() != rho.shape()) {
    throw std::invalid_argument("variational param: mu " + shape_str(mu.shape()) + " vs rho " + shape_str(rho.shape()));
  }
  return {leaf(std::move(mu)), leaf(std::move(rho))};
}

double rho_for_sigma(double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("rho_for_sigma: sigma must be positive");
  // log(exp(sigma) - 1), stable for large sigma
  return sigma > 30.0 ? sigma : std::log(std::expm1(sigma));
}

Var sample_weights(const VariationalParam& param, const Tensor& noise) {
  if (noise.shape() != param.mu.shape()) {
    throw std::invalid_argument("sample_weights: noise " + shape_str(noise.shape()) + " vs mu " +
                                shape_str(param.mu.shape()));
  }
  return add(param.mu, mul(softplus(param.rho), constant(noise)));
}

Var kl_to_prior(const VariationalParam& param, const PriorConfig& prior) {
  if (!(prior.prior_sigma > 0.0)) throw std::invalid_argument("prior_sigma must be positive");
  const double ps = prior.prior_sigma;
  Var sigma = softplus(param.rho);
  Var log_ratio = std::log(ps) - log(sigma);
  Var quad = scale(add(square(sigma), square(param.mu)), 1.0 / (2.0 * ps * ps));
  Var per = add(log_ratio, quad);
  return add(sum(per), constant(Tensor::scalar(-0.5 * static_cast<double>(param.mu.numel()))));
}

// ---------------------------------------------------------------------------
// NetworkSpec

bool operator==(const LayerSpec& a, const LayerSpec& b) {
  return a.kind == b.kind && a.units == b.units && a.kernel == b.kernel && a.activation == b.activation &&
         a.bayesian == b.bayesian;
}

bool operator==(const NetworkSpec& a, const NetworkSpec& b) {
  return a.input_shape == b.input_shape && a.layers == b.layers && a.draws == b.draws &&
         a.init_sigma == b.init_sigma && a.prior.prior_sigma == b.prior.prior_sigma;
}

void NetworkSpec::validate() const {
  if (input_shape.size() != 1 && input_shape.size() != 3) {
    throw std::invalid_argument("network: input_shape must be [D] or [C,H,W], got " + shape_str(input_shape));
  }
  for (auto d : input_shape)
    if (d == 0) throw std::invalid_argument("network: zero input dimension");
  if (layers.empty()) throw std::invalid_argument("network: no layers");
  if (draws < 2) throw std::invalid_argument("network: draws (K) must be at least 2, got " + std::to_string(draws));
  if (!(init_sigma > 0.0)) throw std::invalid_argument("network: init_sigma must be positive");
  if (!(prior.prior_sigma > 0.0)) throw std::invalid_argument("network: prior_sigma must be positive");

  Shape act = input_shape;
  bool seen_bayesian = false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const std::string where = "network: layer " + std::to_string(i) + ": ";
    switch (l.kind) {
      case LayerKind::conv:
        if (act.size() != 3) throw std::invalid_argument(where + "conv needs [C,H,W] activations");
        if (l.units == 0) throw std::invalid_argument(where + "conv needs units > 0");
        if (l.kernel % 2 == 0) throw std::invalid_argument(where + "conv kernel must be odd");
        act[0] = l.units;
        break;
      case LayerKind::avgpool:
        if (act.size() != 3 || act[1] % 2 || act[2] % 2) {
          throw std::invalid_argument(where + "avgpool needs [C,H,W] with even H and W, got " + shape_str(act));
        }
        act[1] /= 2;
        act[2] /= 2;
        break;
      case LayerKind::dense:
        if (l.units == 0) throw std::invalid_argument(where + "dense needs units > 0");
        act = Shape{l.units};
        break;
    }
    if (l.has_params()) {
      if (seen_bayesian && !l.bayesian) {
        throw std::invalid_argument(where + "deterministic layer after a Bayesian one; Bayesian layers must form a suffix");
      }
      seen_bayesian = seen_bayesian || l.bayesian;
    }
  }
  const auto& last = layers.back();
  if (last.kind != LayerKind::dense || last.activation != Activation::none) {
    throw std::invalid_argument("network: last layer must be dense with no activation (the logits)");
  }
}

std::size_t NetworkSpec::classes() const { return layers.back().units; }

std::size_t NetworkSpec::parametric_layers() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.has_params() ? 1 : 0;
  return n;
}

std::size_t NetworkSpec::bayesian_layers() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += (l.has_params() && l.bayesian) ? 1 : 0;
  return n;
}

double NetworkSpec::bayesian_fraction() const {
  const auto p = parametric_layers();
  return p == 0 ? 0.0 : static_cast<double>(bayesian_layers()) / static_cast<double>(p);
}

std::size_t NetworkSpec::split_index() const {
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].has_params() && layers[i].bayesian) return i;
  return layers.size();
}

NetworkSpec NetworkSpec::with_bayesian_fraction(double fraction) const {
  if (fraction < 0.0 || fraction > 1.0) throw std::invalid_argument("bayesian_fraction must lie in [0,1]");
  NetworkSpec out = *this;
  auto remaining = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(parametric_layers())));
  for (auto it = out.layers.rbegin(); it != out.layers.rend(); ++it) {
    if (!it->has_params()) continue;
    it->bayesian = remaining > 0;
    if (remaining > 0) --remaining;
  }
  return out;
}

NetworkSpec NetworkSpec::deterministic_twin() const {
  NetworkSpec out = *this;
  for (auto& l : out.layers) l.bayesian = false;
  return out;
}

NetworkSpec NetworkSpec::mnist_default() {
  NetworkSpec s;
  s.input_shape = {1, 28, 28};
  s.layers = {
      {LayerKind::conv, 8, 3, Activation::relu, false},
      {LayerKind::conv, 16, 3, Activation::relu, false},
      {LayerKind::avgpool, 0, 0, Activation::none, false},
      {LayerKind::conv, 16, 3, Activation::relu, true},
      {LayerKind::avgpool, 0, 0, Activation::none, true},
      {LayerKind::dense, 64, 0, Activation::relu, true},
      {LayerKind::dense, 10, 0, Activation::none, true},
  };
  s.draws = 10;
  return s;
}

NetworkSpec NetworkSpec::mlp(std::size_t inputs, const std::vector<std::size_t>& hidden, std::size_t classes,
                             std::size_t bayesian_tail, std::size_t draws) {
  NetworkSpec s;
  s.input_shape = {inputs};
  for (auto h : hidden) s.layers.push_back({LayerKind::dense, h, 0, Activation::relu, false});
  s.layers.push_back({LayerKind::dense, classes, 0, Activation::none, false});
  std::size_t marked = 0;
  for (auto it = s.layers.rbegin(); it != s.layers.rend() && marked < bayesian_tail; ++it, ++marked) it->bayesian = true;
  s.draws = draws;
  return s;
}

// ---------------------------------------------------------------------------
// BayesianNetwork

BayesianNetwork::BayesianNetwork(NetworkSpec spec, std::uint64_t init_seed) : spec_(std::move(spec)) {
  spec_.validate();
  Rng rng(init_seed);
  const double rho0 = rho_for_sigma(spec_.init_sigma);
  Shape act = spec_.input_shape;
  slot_of_layer_.assign(spec_.layers.size(), -1);
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const auto& l = spec_.layers[i];
    Shape wshape, bshape;
    double fan_in = 0.0;
    switch (l.kind) {
      case LayerKind::avgpool:
        act[1] /= 2;
        act[2] /= 2;
        continue;
      case LayerKind::conv:
        wshape = {l.units, act[0], l.kernel, l.kernel};
        bshape = {l.units};
        fan_in = static_cast<double>(act[0] * l.kernel * l.kernel);
        act[0] = l.units;
        break;
      case LayerKind::dense:
        wshape = {shape_numel(act), l.units};
        bshape = {l.units};
        fan_in = static_cast<double>(shape_numel(act));
        act = Shape{l.units};
        break;
    }
    const double bound = 1.0 / std::sqrt(fan_in);
    const std::string prefix = "layer" + std::to_string(i);
    Slot slot{i, l.bayesian, tensors_.size(), 0};
    tensors_.push_back(rng.uniform_tensor(wshape, -bound, bound));
    if (l.bayesian) {
      names_.insert(names_.end(), {prefix + ".weight_mu", prefix + ".weight_rho"});
      rho_mask_.insert(rho_mask_.end(), {false, true});
      tensors_.emplace_back(wshape, rho0);
    } else {
      names_.push_back(prefix + ".weight");
      rho_mask_.push_back(false);
    }
    slot.bias = tensors_.size();
    tensors_.emplace_back(bshape, 0.0);
    if (l.bayesian) {
      names_.insert(names_.end(), {prefix + ".bias_mu", prefix + ".bias_rho"});
      rho_mask_.insert(rho_mask_.end(), {false, true});
      tensors_.emplace_back(bshape, rho0);
    } else {
      names_.push_back(prefix + ".bias");
      rho_mask_.push_back(false);
    }
    slot_of_layer_[i] = static_cast<int>(slots_.size());
    slots_.push_back(slot);
  }
}

ParamView BayesianNetwork::bind(bool trainable) const {
  ParamView view;
  view.vars.reserve(tensors_.size());
  for (const auto& t : tensors_) view.vars.push_back(leaf(t, trainable));
  return view;
}

Var BayesianNetwork::apply_layer(const LayerSpec& layer, const Var& x, const Var& w, const Var& b) const {
  Var y;
  switch (layer.kind) {
    case LayerKind::avgpool:
      return avgpool2(x);
    case LayerKind::conv:
      y = add(conv2d(x, w), reshape(b, Shape{layer.units, 1, 1}));
      break;
    case LayerKind::dense: {
      Var flat = x;
      if (x.shape().size() != 2) flat = reshape(x, Shape{x.shape()[0], x.numel() / x.shape()[0]});
      y = add(matmul(flat, w), b);
      break;
    }
  }
  return layer.activation == Activation::relu ? relu(y) : y;
}

Var BayesianNetwork::front(const ParamView& params, const Var& x) const {
  if (x.shape().size() != 2 || x.shape()[1] != spec_.input_size()) {
    throw std::invalid_argument("network: expected input [batch," + std::to_string(spec_.input_size()) + "], got " +
                                shape_str(x.shape()));
  }
  Var h = x;
  if (spec_.input_shape.size() == 3) {
    Shape s{x.shape()[0]};
    s.insert(s.end(), spec_.input_shape.begin(), spec_.input_shape.end());
    h = reshape(x, s);
  }
  const std::size_t split = spec_.split_index();
  for (std::size_t i = 0; i < split; ++i) {
    const auto& l = spec_.layers[i];
    if (!l.has_params()) {
      h = apply_layer(l, h, Var(), Var());
      continue;
    }
    const Slot& s = slots_[static_cast<std::size_t>(slot_of_layer_[i])];
    h = apply_layer(l, h, params.vars[s.weight], params.vars[s.bias]);
  }
  return h;
}

Var BayesianNetwork::tail(const ParamView& params, const Var& front_out, Rng& rng) const {
  Var h = front_out;
  for (std::size_t i = spec_.split_index(); i < spec_.layers.size(); ++i) {
    const auto& l = spec_.layers[i];
    if (!l.has_params()) {
      h = apply_layer(l, h, Var(), Var());
      continue;
    }
    const Slot& s = slots_[static_cast<std::size_t>(slot_of_layer_[i])];
    VariationalParam wq{params.vars[s.weight], params.vars[s.weight + 1]};
    VariationalParam bq{params.vars[s.bias], params.vars[s.bias + 1]};
    Var w = sample_weights(wq, rng.normal_tensor(wq.mu.shape()));
    Var b = sample_weights(bq, rng.normal_tensor(bq.mu.shape()));
    h = apply_layer(l, h, w, b);
  }
  return h;
}

DrawEnsemble BayesianNetwork::forward_k(const ParamView& params, const Var& x, std::size_t k, Rng& rng) const {
  if (k < 2) throw std::invalid_argument("forward_k: K must be at least 2, got " + std::to_string(k));
  return forward_draws(params, x, k, rng);
}

DrawEnsemble BayesianNetwork::forward_draws(const ParamView& params, const Var& x, std::size_t k, Rng& rng) const {
  if (k < 1) throw std::invalid_argument("forward_draws: need at least one draw");
  DrawEnsemble out;
  out.front = front(params, x);
  out.logits.reserve(k);
  if (spec_.split_index() == spec_.layers.size()) {
    out.logits.assign(k, out.front);
    return out;
  }
  for (std::size_t d = 0; d < k; ++d) out.logits.push_back(tail(params, out.front, rng));
  return out;
}

Var BayesianNetwork::kl(const ParamView& params) const {
  Var total = constant(Tensor::scalar(0.0));
  for (const auto& s : slots_) {
    if (!s.bayesian) continue;
    total = add(total, kl_to_prior({params.vars[s.weight], params.vars[s.weight + 1]}, spec_.prior));
    total = add(total, kl_to_prior({params.vars[s.bias], params.vars[s.bias + 1]}, spec_.prior));
  }
  return total;
}

Tensor BayesianNetwork::predict_proba(const Tensor& x, std::size_t draws, Rng& rng) const {
  NoGradGuard guard;
  ParamView params = bind(false);
  DrawEnsemble ens = forward_draws(params, constant(x), draws, rng);
  Tensor acc(ens.logits.front().shape(), 0.0);
  for (const auto& z : ens.logits) {
    Tensor p = softmax(z).value();
    for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += p[i];
  }
  const double inv = 1.0 / static_cast<double>(ens.logits.size());
  for (auto& v : acc.data()) v *= inv;
  return acc;
}

void BayesianNetwork::collapse_sigma(double rho) {
  for (std::size_t i = 0; i < tensors_.size(); ++i)
    if (rho_mask_[i])
      for (auto& v : tensors_[i].data()) v = rho;
}

}  // namespace divdir
