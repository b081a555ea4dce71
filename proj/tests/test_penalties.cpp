#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "divdir/penalties.hpp"
#include "doctest.h"
#include "fd_oracle.hpp"

using namespace divdir;

namespace {

using Dirs = std::vector<std::vector<double>>;  // K x D, one example

// Random unit vectors, drawn and normalized without the library.
Dirs random_unit_vectors(std::mt19937_64& gen, std::size_t k, std::size_t d) {
  std::normal_distribution<double> z(0.0, 1.0);
  Dirs out(k, std::vector<double>(d));
  for (auto& u : out) {
    double n = 0.0;
    for (auto& v : u) {
      v = z(gen);
      n += v * v;
    }
    for (auto& v : u) v /= std::sqrt(n);
  }
  return out;
}

std::vector<Var> as_vars(const Dirs& dirs) {
  std::vector<Var> out;
  for (const auto& u : dirs) out.push_back(constant(Tensor({1, u.size()}, u)));
  return out;
}

double naive_omega_M(const Dirs& u) {
  const std::size_t k = u.size(), d = u[0].size();
  double total = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < k; ++i) m += u[i][j];
    m /= static_cast<double>(k);
    total += m * m;
  }
  return total;
}

double naive_omega_S(const Dirs& u) {
  double total = 0.0;
  for (const auto& row : u) {
    double l1 = 0.0;
    for (double v : row) l1 += std::fabs(v);
    total += l1;
  }
  return -total / static_cast<double>(u.size());
}

DirectionStats stats_with_variance(std::vector<double> v) {
  DirectionStats st;
  const std::size_t d = v.size();
  st.var_dir = constant(Tensor({1, d}, std::move(v)));
  return st;
}

// Sum over the batch of the selected penalty for a small Bayesian MLP with fixed noise.
double penalty_value(const BayesianNetwork& net, const Tensor& x, const std::vector<std::size_t>& labels,
                     const PenaltyConfig& cfg, int which, ParamView* params_out = nullptr, Var* out = nullptr) {
  ParamView params = net.bind(true);
  Var xv = leaf(x);
  Rng rng(99);
  auto ens = net.forward_k(params, xv, 3, rng);
  fill_directions(ens, xv, labels, cfg.scalar_target);
  auto st = direction_stats(ens.input_grad_dirs);
  Var p = which == 0 ? omega_M(st) : which == 1 ? omega_V(st, cfg) : omega_S(st);
  Var total = sum(p);
  if (params_out) *params_out = params;
  if (out) *out = total;
  return total.item();
}

}  // namespace

TEST_CASE("direction examples") {
  Var x = leaf(Tensor({2, 3}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6}));
  Tensor c({2, 3}, {3.0, 4.0, 0.0, 0.0, 0.0, 5.0});
  Var u = direction(x, sum_last(mul(x, constant(c))));
  const auto& v = u.value();
  CHECK(v[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(v[1] == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(v[2] == 0.0);
  CHECK(v[3] == 0.0);
  CHECK(v[5] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("direction of a random gradient has unit norm") {
  std::mt19937_64 gen(3);
  for (int t = 0; t < 20; ++t) {
    Var x = leaf(fd::random_tensor(gen, {1, 10}));
    Tensor c = fd::random_tensor(gen, {1, 10});
    Var u = direction(x, sum_last(mul(square(x), constant(c))));
    double n = 0.0;
    for (double e : u.value().data()) n += e * e;
    CHECK(std::fabs(std::sqrt(n) - 1.0) < 1e-6);
  }
}

TEST_CASE("direction of a zero gradient is finite") {
  Var x = leaf(Tensor({1, 3}, 0.5));
  Var u = direction(x, sum_last(mul(x, constant(Tensor({1, 3}, 0.0)))));
  CHECK(u.value().all_finite());
  Var w = leaf(Tensor::scalar(2.0));
  Var xs = leaf(Tensor({1, 3}, 0.5));
  Var y = sum_last(mul(relu(xs + (-1.0)), broadcast_to(w, {1, 3})));
  Var g = gradient(sum(direction(xs, y)), w);
  CHECK(g.value().all_finite());
}

TEST_CASE("omega_M examples") {
  Dirs same{{1.0, 0.0}, {1.0, 0.0}, {1.0, 0.0}};
  auto vs = as_vars(same);
  CHECK(omega_M(direction_stats(vs)).item() == 1.0);
  Dirs two{{1.0, 0.0}, {0.0, 1.0}};
  auto vt = as_vars(two);
  CHECK(omega_M(direction_stats(vt)).item() == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("omega_M and omega_S match naive loops") {
  std::mt19937_64 gen(17);
  for (int t = 0; t < 50; ++t) {
    auto u8 = random_unit_vectors(gen, 10, 8);
    auto v8 = as_vars(u8);
    CHECK(std::fabs(omega_M(direction_stats(v8)).item() - naive_omega_M(u8)) < 1e-10);
    auto u16 = random_unit_vectors(gen, 10, 16);
    auto v16 = as_vars(u16);
    CHECK(std::fabs(omega_S(direction_stats(v16)).item() - naive_omega_S(u16)) < 1e-10);
  }
}

TEST_CASE("omega_V variants") {
  PenaltyConfig cfg;
  cfg.variance_variant = VarianceVariant::euclidean;
  CHECK(omega_V(stats_with_variance({0.25, 0.25, 0.25, 0.25}), cfg).item() == 0.0);
  cfg.variance_variant = VarianceVariant::minvar;
  CHECK(omega_V(stats_with_variance({0.1, 0.4}), cfg).item() == -0.1);
  cfg.variance_variant = VarianceVariant::softmin;
  cfg.alpha = 1e-8;
  CHECK(std::fabs(omega_V(stats_with_variance({0.2, 0.6}), cfg).item() + 0.4) < 1e-6);
  cfg.alpha = 1e4;
  CHECK(omega_V(stats_with_variance({0.2, 0.6}), cfg).item() == doctest::Approx(-0.2).epsilon(1e-9));
}

TEST_CASE("softmin weights form a distribution") {
  std::mt19937_64 gen(8);
  for (double alpha : {1e-6, 0.1, 1.0, 10.0, 1e3, 1e6}) {
    Var v = constant(fd::random_tensor(gen, {3, 7}, 0.0, 1.0));
    Tensor w = softmin_weights(v, alpha).value();
    for (std::size_t i = 0; i < 3; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 7; ++j) {
        CHECK(w[i * 7 + j] >= 0.0);
        s += w[i * 7 + j];
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("omega_S examples and bounds") {
  Dirs hot{{0.0, 1.0, 0.0, 0.0}, {1.0, 0.0, 0.0, 0.0}};
  auto vh = as_vars(hot);
  CHECK(omega_S(direction_stats(vh)).item() == -1.0);
  const double r = 1.0 / std::sqrt(9.0);
  Dirs flat{std::vector<double>(9, r), std::vector<double>(9, -r)};
  auto vf = as_vars(flat);
  CHECK(omega_S(direction_stats(vf)).item() == doctest::Approx(-3.0).epsilon(1e-14));

  std::mt19937_64 gen(2);
  for (int t = 0; t < 100; ++t) {
    auto u = random_unit_vectors(gen, 4, 12);
    auto v = as_vars(u);
    auto st = direction_stats(v);
    const double m = omega_M(st).item(), s = omega_S(st).item();
    CHECK(m >= 0.0);
    CHECK(m <= 1.0 + 1e-12);
    CHECK(s <= -1.0 + 1e-12);
    CHECK(s >= -std::sqrt(12.0) - 1e-12);
  }
}

TEST_CASE("variance identity") {
  std::mt19937_64 gen(4);
  for (int t = 0; t < 200; ++t) {
    auto u = random_unit_vectors(gen, 10, 50);
    auto v = as_vars(u);
    auto st = direction_stats(v);
    double var_sum = 0.0;
    for (double e : st.var_dir.value().data()) {
      CHECK(e >= 0.0);
      var_sum += e;
    }
    CHECK(std::fabs(var_sum - (1.0 - omega_M(st).item())) < 1e-8);
  }
  CHECK(direction_stats(as_vars({{1.0, 0.0}, {0.0, 1.0}})).l1_norms.shape() == Shape{1, 2});
}

TEST_CASE("penalties are differentiable in the posterior means") {
  BayesianNetwork net(NetworkSpec::mlp(4, {6}, 3, 1), 5);
  Rng r(7);
  Tensor x = r.uniform_tensor({3, 4}, 0.0, 1.0);
  std::vector<std::size_t> labels{0, 2, 1};
  for (auto variant : {VarianceVariant::minvar, VarianceVariant::softmin, VarianceVariant::euclidean}) {
    PenaltyConfig cfg;
    cfg.variance_variant = variant;
    cfg.alpha = 5.0;
    for (int which = 0; which < 3; ++which) {
      if (which != 1 && variant != VarianceVariant::minvar) continue;
      ParamView params;
      Var total;
      penalty_value(net, x, labels, cfg, which, &params, &total);
      auto grads = gradient(total, params.vars);
      // every tensor of the network: front weights and the Bayesian mu entries
      for (std::size_t p = 0; p < net.tensors().size(); ++p) {
        if (net.rho_mask()[p]) continue;
        BayesianNetwork probe = net;
        auto f = [&](const Tensor& t) {
          probe.tensors()[p] = t;
          return penalty_value(probe, x, labels, cfg, which);
        };
        Tensor numeric = fd::central_gradient(f, net.tensors()[p], 1e-4);
        CHECK_MESSAGE(fd::relative_error(grads[p].value(), numeric) < 1e-2,
                      "penalty " << which << " tensor " << net.names()[p]);
      }
    }
  }
}

TEST_CASE("penalties ignore positive rescaling of the scalar output") {
  BayesianNetwork net(NetworkSpec::mlp(5, {6}, 3, 1), 1);
  Rng r(2);
  Tensor x = r.uniform_tensor({4, 5}, 0.0, 1.0);
  std::vector<std::size_t> labels{0, 1, 2, 0};
  auto eval = [&](double factor) {
    ParamView params = net.bind(true);
    Var xv = leaf(x);
    Rng rng(3);
    auto ens = net.forward_k(params, xv, 4, rng);
    std::vector<Var> dirs;
    for (const auto& z : ens.logits) dirs.push_back(direction(xv, scale(target_scalar(z, labels, {}), factor)));
    auto st = direction_stats(dirs);
    PenaltyConfig cfg;
    return std::vector<double>{sum(omega_M(st)).item(), sum(omega_V(st, cfg)).item(), sum(omega_S(st)).item()};
  };
  auto a = eval(1.0), b = eval(7.0);
  for (int i = 0; i < 3; ++i) CHECK(std::fabs(a[i] - b[i]) < 1e-8);
}

TEST_CASE("loss target uses the cross-entropy gradient") {
  Var z = leaf(Tensor({1, 3}, {1.0, 2.0, 0.5}));
  std::vector<std::size_t> y{1};
  const double ce = target_scalar(z, y, ScalarTarget::loss).item();
  const double ref = -(2.0 - std::log(std::exp(1.0) + std::exp(2.0) + std::exp(0.5)));
  CHECK(ce == doctest::Approx(ref).epsilon(1e-12));
  CHECK(target_scalar(z, y, ScalarTarget::true_class_logit).item() == 2.0);
  CHECK_THROWS_AS(target_scalar(z, std::vector<std::size_t>{3}, ScalarTarget::loss), std::invalid_argument);
}
