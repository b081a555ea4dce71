#include <cmath>
#include <functional>
#include <random>
#include <string>

#include "divdir/autodiff.hpp"
#include "doctest.h"
#include "fd_oracle.hpp"

using namespace divdir;

namespace {

// Builds sum(weights * op(inputs)) so the check covers the full Jacobian.
using MultiOp = std::function<Var(const std::vector<Var>&)>;

double weighted_value(const MultiOp& op, const std::vector<Tensor>& inputs, const Tensor& weights) {
  NoGradGuard guard;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(constant(t));
  Var out = op(vars);
  double acc = 0.0;
  for (std::size_t i = 0; i < out.numel(); ++i) acc += weights[i] * out.value()[i];
  return acc;
}

// Returns the worst relative error over all inputs.
double check_primitive(const MultiOp& op, const std::vector<Tensor>& inputs, std::mt19937_64& rng) {
  std::vector<Var> leaves;
  for (const auto& t : inputs) leaves.push_back(leaf(t));
  Var out = op(leaves);
  Tensor weights = fd::random_tensor(rng, out.shape(), -1.0, 1.0);
  Var loss = sum(mul(out, constant(weights)));
  auto grads = gradient(loss, leaves);
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto f = [&](const Tensor& t) {
      auto in = inputs;
      in[k] = t;
      return weighted_value(op, in, weights);
    };
    Tensor numeric = fd::central_gradient(f, inputs[k]);
    worst = std::max(worst, fd::relative_error(grads[k].value(), numeric));
  }
  return worst;
}

// Pushes entries at least `gap` away from each listed kink.
Tensor away_from(Tensor t, std::initializer_list<double> kinks, double gap = 1e-3) {
  for (auto& v : t.data())
    for (double k : kinks)
      if (std::fabs(v - k) < gap) v = k + (v >= k ? gap : -gap) * 2.0;
  return t;
}

struct PrimitiveCase {
  std::string name;
  MultiOp op;
  std::function<std::vector<Tensor>(std::mt19937_64&)> make_inputs;
};

std::vector<PrimitiveCase> primitive_cases() {
  auto r = [](std::mt19937_64& g, Shape s, double lo = -2.0, double hi = 2.0) { return fd::random_tensor(g, s, lo, hi); };
  std::vector<PrimitiveCase> cases;
  cases.push_back({"add", [](auto& v) { return add(v[0], v[1]); },
                   [r](auto& g) { return std::vector<Tensor>{r(g, {3, 4}), r(g, {4})}; }});
  cases.push_back({"sub", [](auto& v) { return sub(v[0], v[1]); },
                   [r](auto& g) { return std::vector<Tensor>{r(g, {2, 3, 1}), r(g, {3, 2})}; }});
  cases.push_back({"mul", [](auto& v) { return mul(v[0], v[1]); },
                   [r](auto& g) { return std::vector<Tensor>{r(g, {3, 4}), r(g, {3, 1})}; }});
  cases.push_back({"div", [](auto& v) { return div(v[0], v[1]); },
                   [r](auto& g) { return std::vector<Tensor>{r(g, {5}), r(g, {5}, 0.5, 2.0)}; }});
  cases.push_back({"scale", [](auto& v) { return scale(v[0], -1.7); },
                   [r](auto& g) { return std::vector<Tensor>{r(g, {4})}; }});
  cases.push_back({"negate", [](auto& v) { return negate(v[0]); },
                   [r](auto& g) { return std::vector<Tensor>{r(g, {4})}; }});
  cases.push_back({"matmul", [](auto& v) { return matmul(v[0], v[1]); },
                   [r](auto& g) { return std::vector<Tensor>{r(g, {3, 4}), r(g, {4, 2})}; }});
  cases.push_back({"transpose", [](auto& v) { return transpose(v[0]); },
                   [r](auto& g) { return std::vector<Tensor>{r(g, {2, 3})}; }});
  cases.push_back({"conv2d", [](auto& v) { return conv2d(v[0], v[1]); },
                   [r](auto& g) { return std::vector<Tensor>{r(g, {2, 2, 4, 5}), r(g, {3, 2, 3, 3})}; }});
  cases.push_back({"conv2d_weight_grad", [](auto& v) { return conv2d_weight_grad(v[0], v[1], 3); },
                   [r](auto& g) { return std::vector<Tensor>{r(g, {2, 2, 4, 4}), r(g, {2, 3, 4, 4})}; }});
  cases.push_back({"flip_kernel", [](auto& v) { return flip_kernel(v[0]); },
                   [r](auto& g) { return std::vector<Tensor>{r(g, {2, 3, 3, 3})}; }});
  cases.push_back({"avgpool2", [](auto& v) { return avgpool2(v[0]); },
                   [r](auto& g) { return std::vector<Tensor>{r(g, {1, 2, 4, 6})}; }});
  cases.push_back({"avgpool2_adjoint", [](auto& v) { return avgpool2_adjoint(v[0]); },
                   [r](auto& g) { return std::vector<Tensor>{r(g, {1, 2, 2, 3})}; }});
  cases.push_back({"relu", [](auto& v) { return relu(v[0]); },
                   [r](auto& g) { return std::vector<Tensor>{away_from(r(g, {6}), {0.0})}; }});
  cases.push_back({"softplus", [](auto& v) { return softplus(v[0]); },
                   [r](auto& g) { return std::vector<Tensor>{r(g, {6})}; }});
  cases.push_back({"sigmoid", [](auto& v) { return sigmoid(v[0]); },
                   [r](auto& g) { return std::vector<Tensor>{r(g, {6})}; }});
  cases.push_back({"exp", [](auto& v) { return exp(v[0]); },
                   [r](auto& g) { return std::vector<Tensor>{r(g, {6})}; }});
  cases.push_back({"log", [](auto& v) { return log(v[0]); },
                   [r](auto& g) { return std::vector<Tensor>{r(g, {6}, 0.2, 2.0)}; }});
  cases.push_back({"square", [](auto& v) { return square(v[0]); },
                   [r](auto& g) { return std::vector<Tensor>{r(g, {6})}; }});
  cases.push_back({"sqrt", [](auto& v) { return sqrt(v[0]); },
                   [r](auto& g) { return std::vector<Tensor>{r(g, {6}, 0.2, 2.0)}; }});
  cases.push_back({"abs", [](auto& v) { return abs(v[0]); },
                   [r](auto& g) { return std::vector<Tensor>{away_from(r(g, {6}), {0.0})}; }});
  cases.push_back({"clip", [](auto& v) { return clip(v[0], -1.0, 1.0); },
                   [r](auto& g) { return std::vector<Tensor>{away_from(r(g, {6}), {-1.0, 1.0})}; }});
  cases.push_back({"sum", [](auto& v) { return sum(v[0]); },
                   [r](auto& g) { return std::vector<Tensor>{r(g, {2, 3})}; }});
  cases.push_back({"mean", [](auto& v) { return mean(v[0]); },
                   [r](auto& g) { return std::vector<Tensor>{r(g, {2, 3})}; }});
  cases.push_back({"sum_to", [](auto& v) { return sum_to(v[0], Shape{3, 1}); },
                   [r](auto& g) { return std::vector<Tensor>{r(g, {2, 3, 4})}; }});
  cases.push_back({"broadcast_to", [](auto& v) { return broadcast_to(v[0], Shape{2, 3, 4}); },
                   [r](auto& g) { return std::vector<Tensor>{r(g, {3, 1})}; }});
  cases.push_back({"min_last", [](auto& v) { return min_last(v[0]); },
                   [](auto& g) {
                     // distinct values with a gap so the argmin is stable under h
                     Tensor t(Shape{3, 5});
                     std::uniform_real_distribution<double> u(-2.0, 2.0);
                     for (std::size_t row = 0; row < 3; ++row) {
                       double base = u(g);
                       for (std::size_t j = 0; j < 5; ++j) t[row * 5 + j] = base + 0.01 * static_cast<double>((j * 3 + row) % 5) + 1e-3;
                     }
                     return std::vector<Tensor>{t};
                   }});
  cases.push_back({"log_softmax", [](auto& v) { return log_softmax(v[0]); },
                   [r](auto& g) { return std::vector<Tensor>{r(g, {3, 4})}; }});
  cases.push_back({"softmax", [](auto& v) { return softmax(v[0]); },
                   [r](auto& g) { return std::vector<Tensor>{r(g, {3, 4})}; }});
  cases.push_back({"reshape", [](auto& v) { return reshape(v[0], Shape{3, 2}); },
                   [r](auto& g) { return std::vector<Tensor>{r(g, {2, 3})}; }});
  return cases;
}

}  // namespace

TEST_CASE("forward examples") {
  CHECK(add(constant(Tensor::vector({1, 2})), constant(Tensor::vector({3, 4}))).value() == Tensor::vector({4, 6}));

  std::mt19937_64 rng(7);
  Tensor a = fd::random_tensor(rng, {3, 3});
  Tensor eye(Shape{3, 3});
  eye[0] = eye[4] = eye[8] = 1.0;
  CHECK(matmul(constant(eye), constant(a)).value() == a);

  CHECK(softplus(constant(Tensor::scalar(0.0))).item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("first derivative examples") {
  Var x = leaf(Tensor::scalar(3.0));
  CHECK(gradient(square(x), x).item() == 6.0);

  for (auto [at, expected] : {std::pair{0.5, 1.0}, std::pair{1.5, 0.0}, std::pair{1.0, 0.0}, std::pair{0.0, 0.0}}) {
    Var v = leaf(Tensor::vector({at}));
    CHECK(gradient(sum(clip(v, 0.0, 1.0)), v).value()[0] == expected);
  }
  Var z = leaf(Tensor::vector({0.0}));
  CHECK(gradient(sum(relu(z)), z).value()[0] == 0.0);
  CHECK(gradient(sum(abs(z)), z).value()[0] == 0.0);
}

TEST_CASE("second derivative of squared input-gradient matches finite differences") {
  // f = theta * x^2; inner = (df/dx)^2; outer = d inner / d theta at theta=1, x=2.
  auto inner_at = [](double theta) {
    Var t = leaf(Tensor::scalar(theta));
    Var x = leaf(Tensor::scalar(2.0));
    Var gx = gradient(mul(t, square(x)), x);
    return gx.item() * gx.item();
  };
  const double h = 1e-5;
  const double numeric = (inner_at(1.0 + h) - inner_at(1.0 - h)) / (2 * h);
  CHECK(numeric == doctest::Approx(32.0).epsilon(1e-6));

  Var t = leaf(Tensor::scalar(1.0));
  Var x = leaf(Tensor::scalar(2.0));
  Var gx = gradient(mul(t, square(x)), x, /*higher_order=*/true);
  Var outer = gradient(square(gx), t, true);
  CHECK(std::fabs(outer.item() - numeric) < 1e-4);
}

TEST_CASE("every primitive matches central differences on 100 random tensors") {
  std::mt19937_64 rng(2024);
  for (const auto& c : primitive_cases()) {
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) worst = std::max(worst, check_primitive(c.op, c.make_inputs(rng), rng));
    INFO("primitive " << c.name << " worst relative error " << worst);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("second-order: gradient of an input-gradient functional matches finite differences") {
  std::mt19937_64 rng(99);
  // Smooth composites mirroring what the penalties differentiate.
  std::vector<std::function<Var(const Var&, const Var&)>> models = {
      [](const Var& x, const Var& w) { return sum(softplus(matmul(x, w))); },
      [](const Var& x, const Var& w) { return sum(mul(log_softmax(matmul(x, w)), constant(Tensor(Shape{2, 3}, 0.3)))); },
      [](const Var& x, const Var& w) {
        return sum(sigmoid(avgpool2(conv2d(reshape(x, Shape{1, 1, 2, 4}), reshape(w, Shape{1, 1, 3, 3})))));
      },
  };
  std::vector<std::pair<Shape, Shape>> shapes = {{{2, 4}, {4, 3}}, {{2, 4}, {4, 3}}, {{2, 4}, {9}}};
  for (std::size_t m = 0; m < models.size(); ++m) {
    for (int trial = 0; trial < 10; ++trial) {
      Tensor xv = fd::random_tensor(rng, shapes[m].first, -1.0, 1.0);
      Tensor wv = fd::random_tensor(rng, shapes[m].second, -1.0, 1.0);
      Tensor dir = fd::random_tensor(rng, shapes[m].first, -1.0, 1.0);
      // inner(w) = sum(dir * d model / dx)^2 + sum((d model/dx)^2)
      auto inner = [&](const Tensor& w, bool higher, Var* wleaf_out) {
        Var x = leaf(xv);
        Var w_leaf = leaf(w);
        if (wleaf_out) *wleaf_out = w_leaf;
        Var gx = gradient(models[m](x, w_leaf), x, higher);
        return add(square(sum(mul(gx, constant(dir)))), sum(square(gx)));
      };
      Var w_leaf;
      Var value = inner(wv, true, &w_leaf);
      Tensor analytic = gradient(value, w_leaf, true).value();
      Tensor numeric = fd::central_gradient([&](const Tensor& w) { return inner(w, false, nullptr).item(); }, wv);
      INFO("model " << m << " trial " << trial);
      CHECK(fd::relative_error(analytic, numeric) < 1e-3);
    }
  }
}

TEST_CASE("gradient of sum is exactly ones; constants have zero gradient") {
  std::mt19937_64 rng(3);
  Var x = leaf(fd::random_tensor(rng, {4, 5}));
  CHECK(gradient(sum(x), x).value() == Tensor(Shape{4, 5}, 1.0));

  Var c = constant(fd::random_tensor(rng, {3}));
  Var y = leaf(fd::random_tensor(rng, {3}));
  CHECK(gradient(sum(square(c)), y).value() == Tensor(Shape{3}, 0.0));
  // y does not reach the output
  Var z = leaf(fd::random_tensor(rng, {3}));
  CHECK(gradient(sum(z), y).value() == Tensor(Shape{3}, 0.0));
}

TEST_CASE("error contracts") {
  Var a = leaf(Tensor(Shape{2, 3}));
  Var b = leaf(Tensor(Shape{4}));
  try {
    (void)add(a, b);
    FAIL("expected shape mismatch");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4]") != std::string::npos);
  }
  CHECK_THROWS_AS((void)matmul(a, leaf(Tensor(Shape{2, 2}))), std::invalid_argument);

  try {
    (void)gradient(square(a), a);
    FAIL("expected non-scalar rejection");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("reduce") != std::string::npos);
  }

  Var t = leaf(Tensor::scalar(1.0));
  Var x = leaf(Tensor::scalar(2.0));
  Var gx = gradient(mul(t, square(x)), x, /*higher_order=*/false);
  CHECK_FALSE(gx.requires_grad());
  CHECK_THROWS_AS((void)gradient(square(gx), t), std::logic_error);
}

TEST_CASE("higher-order gradients are tape nodes") {
  Var x = leaf(Tensor::scalar(1.5));
  Var g1 = gradient(exp(scale(x, 2.0)), x, true);
  CHECK(g1.requires_grad());
  Var g2 = gradient(g1, x, true);
  CHECK(g2.item() == doctest::Approx(4.0 * std::exp(3.0)));
}

TEST_CASE("tape nodes are created in topological order") {
  Var x = leaf(Tensor::vector({1.0, 2.0}));
  Var y = relu(x);
  Var z = sum(mul(y, x));
  CHECK(z.node()->seq > z.inputs()[0].node()->seq);
  for (const auto& in : z.inputs()[0].inputs()) CHECK(in.node()->seq < z.inputs()[0].node()->seq);
}
