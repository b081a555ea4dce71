#include "divdir/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>

#include "kernels.hpp"

namespace divdir {

namespace {

std::atomic<std::uint64_t> g_seq{0};
thread_local bool t_recording = true;

[[noreturn]] void shape_error(std::string_view op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

template <typename F>
Tensor map_unary(const Tensor& x, F&& f) {
  Tensor out(x.shape());
  auto in = x.data();
  auto o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = f(in[i]);
  return out;
}

template <typename F>
Tensor map_binary(std::string_view op, const Tensor& a, const Tensor& b, F&& f) {
  if (a.shape() == b.shape()) {
    Tensor out(a.shape());
    auto o = out.data();
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(x[i], y[i]);
    return out;
  }
  const Shape shape = broadcast_shape(a.shape(), b.shape(), op);
  Tensor out(shape);
  auto o = out.data();
  if (b.numel() == 1) {
    const double y = b[0];
    if (a.numel() == o.size()) {
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(a[i], y);
      return out;
    }
  }
  if (a.numel() == 1 && b.numel() == o.size()) {
    const double x = a[0];
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(x, b[i]);
    return out;
  }
  std::vector<double> ea(o.size()), eb(o.size());
  kernels::expand(a.data(), a.shape(), ea, shape);
  kernels::expand(b.data(), b.shape(), eb, shape);
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(ea[i], eb[i]);
  return out;
}

Shape keep_last_as_one(const Shape& s) {
  Shape k = s;
  if (k.empty()) throw std::invalid_argument("reduction over last axis of a scalar");
  k.back() = 1;
  return k;
}

Shape drop_last(const Shape& s) { return Shape(s.begin(), s.end() - 1); }

Var scalar_const(double v) { return constant(Tensor::scalar(v)); }

void require_rank(std::string_view op, const Var& x, std::size_t rank) {
  if (x.shape().size() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                                shape_str(x.shape()));
  }
}

}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::constant: return "constant";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::div: return "div";
    case OpKind::scale: return "scale";
    case OpKind::negate: return "negate";
    case OpKind::matmul: return "matmul";
    case OpKind::transpose: return "transpose";
    case OpKind::conv2d: return "conv2d";
    case OpKind::conv2d_weight_grad: return "conv2d_weight_grad";
    case OpKind::flip_kernel: return "flip_kernel";
    case OpKind::avgpool2: return "avgpool2";
    case OpKind::avgpool2_adjoint: return "avgpool2_adjoint";
    case OpKind::relu: return "relu";
    case OpKind::softplus: return "softplus";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::square: return "square";
    case OpKind::sqrt: return "sqrt";
    case OpKind::abs: return "abs";
    case OpKind::clip: return "clip";
    case OpKind::sum: return "sum";
    case OpKind::sum_to: return "sum_to";
    case OpKind::broadcast_to: return "broadcast_to";
    case OpKind::min_last: return "min_last";
    case OpKind::log_softmax: return "log_softmax";
    case OpKind::reshape: return "reshape";
  }
  return "unknown";
}

Shape broadcast_shape(const Shape& a, const Shape& b, std::string_view op) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) shape_error(op, a, b);
    out[i] = std::max(da, db);
  }
  return out;
}

NoGradGuard::NoGradGuard() : previous_(t_recording) { t_recording = false; }
NoGradGuard::~NoGradGuard() { t_recording = previous_; }
bool grad_recording() { return t_recording; }

Var leaf(Tensor value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->kind = requires_grad ? OpKind::leaf : OpKind::constant;
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  node->seq = g_seq.fetch_add(1);
  return Var(std::move(node));
}

Var constant(Tensor value) { return leaf(std::move(value), false); }

Var make_node(OpKind kind, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->kind = kind;
  node->value = std::move(value);
  node->seq = g_seq.fetch_add(1);
  bool needs = false;
  for (const auto& in : inputs) {
    needs = needs || in.requires_grad();
    node->first_order_gradient = node->first_order_gradient || in.node_->first_order_gradient;
  }
  if (t_recording && needs) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

Var mark_first_order(Var v) {
  auto node = std::make_shared<Node>();
  node->kind = OpKind::constant;
  node->value = v.value();
  node->first_order_gradient = true;
  node->seq = g_seq.fetch_add(1);
  return Var(std::move(node));
}

std::vector<Var> gradient(const Var& output, std::span<const Var> wrt, bool higher_order) {
  if (!output.defined()) throw std::invalid_argument("gradient: undefined output");
  if (output.numel() != 1) {
    throw std::invalid_argument("gradient: output has shape " + shape_str(output.shape()) +
                                "; reduce it to a single element (sum or mean) before differentiating");
  }
  if (output.node_->first_order_gradient) {
    throw std::logic_error(
        "gradient: output depends on a first-order gradient; differentiate again only with higher_order=true");
  }

  std::vector<Node*> order;
  {
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack;
    if (output.requires_grad()) {
      stack.push_back(output.node_.get());
      seen.insert(output.node_.get());
    }
    while (!stack.empty()) {
      Node* n = stack.back();
      stack.pop_back();
      order.push_back(n);
      for (const auto& in : n->inputs) {
        Node* p = in.node_.get();
        if (p->requires_grad && seen.insert(p).second) stack.push_back(p);
      }
    }
    std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->seq > b->seq; });
  }

  std::unordered_set<const Node*> targets;
  for (const auto& w : wrt) targets.insert(w.node_.get());

  std::unordered_map<const Node*, Var> grads;
  if (output.requires_grad()) grads[output.node_.get()] = constant(Tensor(output.shape(), 1.0));

  {
    const bool prev = t_recording;
    t_recording = higher_order;
    try {
      for (Node* n : order) {
        auto it = grads.find(n);
        if (it == grads.end()) continue;
        Var g = it->second;
        if (!targets.contains(n)) grads.erase(it);
        if (n->inputs.empty()) continue;
        std::vector<bool> needs(n->inputs.size());
        for (std::size_t i = 0; i < needs.size(); ++i) needs[i] = n->inputs[i].requires_grad();
        std::vector<Var> in_grads = n->backward(n->inputs, g, needs);
        for (std::size_t i = 0; i < n->inputs.size(); ++i) {
          if (!needs[i] || !in_grads[i].defined()) continue;
          const Node* p = n->inputs[i].node_.get();
          if (in_grads[i].shape() != p->value.shape()) {
            throw std::logic_error(std::string("gradient: backward of ") + std::string(op_name(n->kind)) +
                                   " produced " + shape_str(in_grads[i].shape()) + " for input " +
                                   shape_str(p->value.shape()));
          }
          auto [pos, inserted] = grads.try_emplace(p, in_grads[i]);
          if (!inserted) pos->second = add(pos->second, in_grads[i]);
        }
      }
    } catch (...) {
      t_recording = prev;
      throw;
    }
    t_recording = prev;
  }

  std::vector<Var> result;
  result.reserve(wrt.size());
  for (const auto& w : wrt) {
    auto it = grads.find(w.node_.get());
    Var g = it == grads.end() ? constant(Tensor(w.shape(), 0.0)) : it->second;
    result.push_back(higher_order ? g : mark_first_order(g));
  }
  return result;
}

Var gradient(const Var& output, const Var& wrt, bool higher_order) {
  return gradient(output, std::span<const Var>(&wrt, 1), higher_order).front();
}

// ---------------------------------------------------------------------------
// elementwise

Var add(const Var& a, const Var& b) {
  Tensor v = map_binary("add", a.value(), b.value(), [](double x, double y) { return x + y; });
  return make_node(OpKind::add, std::move(v), {a, b},
                   [](std::span<const Var> in, const Var& g, const std::vector<bool>& needs) {
                     std::vector<Var> r(2);
                     if (needs[0]) r[0] = sum_to(g, in[0].shape());
                     if (needs[1]) r[1] = sum_to(g, in[1].shape());
                     return r;
                   });
}

Var sub(const Var& a, const Var& b) {
  Tensor v = map_binary("sub", a.value(), b.value(), [](double x, double y) { return x - y; });
  return make_node(OpKind::sub, std::move(v), {a, b},
                   [](std::span<const Var> in, const Var& g, const std::vector<bool>& needs) {
                     std::vector<Var> r(2);
                     if (needs[0]) r[0] = sum_to(g, in[0].shape());
                     if (needs[1]) r[1] = sum_to(negate(g), in[1].shape());
                     return r;
                   });
}

Var mul(const Var& a, const Var& b) {
  Tensor v = map_binary("mul", a.value(), b.value(), [](double x, double y) { return x * y; });
  return make_node(OpKind::mul, std::move(v), {a, b},
                   [](std::span<const Var> in, const Var& g, const std::vector<bool>& needs) {
                     std::vector<Var> r(2);
                     if (needs[0]) r[0] = sum_to(mul(g, in[1]), in[0].shape());
                     if (needs[1]) r[1] = sum_to(mul(g, in[0]), in[1].shape());
                     return r;
                   });
}

Var div(const Var& a, const Var& b) {
  Tensor v = map_binary("div", a.value(), b.value(), [](double x, double y) { return x / y; });
  return make_node(OpKind::div, std::move(v), {a, b},
                   [](std::span<const Var> in, const Var& g, const std::vector<bool>& needs) {
                     std::vector<Var> r(2);
                     if (needs[0]) r[0] = sum_to(div(g, in[1]), in[0].shape());
                     if (needs[1]) r[1] = sum_to(negate(div(mul(g, in[0]), square(in[1]))), in[1].shape());
                     return r;
                   });
}

Var scale(const Var& a, double factor) {
  Tensor v = map_unary(a.value(), [factor](double x) { return x * factor; });
  return make_node(OpKind::scale, std::move(v), {a},
                   [factor](std::span<const Var>, const Var& g, const std::vector<bool>&) {
                     return std::vector<Var>{scale(g, factor)};
                   });
}

Var negate(const Var& a) {
  Tensor v = map_unary(a.value(), [](double x) { return -x; });
  return make_node(OpKind::negate, std::move(v), {a},
                   [](std::span<const Var>, const Var& g, const std::vector<bool>&) {
                     return std::vector<Var>{negate(g)};
                   });
}

Var operator+(const Var& a, const Var& b) { return add(a, b); }
Var operator-(const Var& a, const Var& b) { return sub(a, b); }
Var operator*(const Var& a, const Var& b) { return mul(a, b); }
Var operator/(const Var& a, const Var& b) { return div(a, b); }
Var operator-(const Var& a) { return negate(a); }
Var operator*(const Var& a, double s) { return scale(a, s); }
Var operator*(double s, const Var& a) { return scale(a, s); }
Var operator+(const Var& a, double s) { return add(a, scalar_const(s)); }
Var operator-(double s, const Var& a) { return sub(scalar_const(s), a); }

// ---------------------------------------------------------------------------
// linear algebra

Var matmul(const Var& a, const Var& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) shape_error("matmul", a.shape(), b.shape());
  Tensor out(Shape{m, n});
  kernels::matmul(a.value().data(), b.value().data(), out.data(), m, k, n);
  return make_node(OpKind::matmul, std::move(out), {a, b},
                   [](std::span<const Var> in, const Var& g, const std::vector<bool>& needs) {
                     std::vector<Var> r(2);
                     if (needs[0]) r[0] = matmul(g, transpose(in[1]));
                     if (needs[1]) r[1] = matmul(transpose(in[0]), g);
                     return r;
                   });
}

Var transpose(const Var& a) {
  require_rank("transpose", a, 2);
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  Tensor out(Shape{cols, rows});
  kernels::transpose(a.value().data(), out.data(), rows, cols);
  return make_node(OpKind::transpose, std::move(out), {a},
                   [](std::span<const Var>, const Var& g, const std::vector<bool>&) {
                     return std::vector<Var>{transpose(g)};
                   });
}

// ---------------------------------------------------------------------------
// convolution and pooling

Var conv2d(const Var& x, const Var& w) {
  require_rank("conv2d", x, 4);
  require_rank("conv2d", w, 4);
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (ws[1] != xs[1] || ws[2] != ws[3] || ws[2] % 2 == 0) shape_error("conv2d", xs, ws);
  const kernels::ConvDims d{xs[0], xs[1], ws[0], xs[2], xs[3], ws[2]};
  Tensor out(Shape{xs[0], ws[0], xs[2], xs[3]});
  kernels::conv2d(x.value().data(), w.value().data(), out.data(), d);
  return make_node(OpKind::conv2d, std::move(out), {x, w},
                   [](std::span<const Var> in, const Var& g, const std::vector<bool>& needs) {
                     std::vector<Var> r(2);
                     if (needs[0]) r[0] = conv2d(g, flip_kernel(in[1]));
                     if (needs[1]) r[1] = conv2d_weight_grad(in[0], g, in[1].shape()[2]);
                     return r;
                   });
}

Var conv2d_weight_grad(const Var& x, const Var& gy, std::size_t kernel) {
  require_rank("conv2d_weight_grad", x, 4);
  require_rank("conv2d_weight_grad", gy, 4);
  const auto& xs = x.shape();
  const auto& gs = gy.shape();
  if (xs[0] != gs[0] || xs[2] != gs[2] || xs[3] != gs[3] || kernel % 2 == 0) {
    shape_error("conv2d_weight_grad", xs, gs);
  }
  const kernels::ConvDims d{xs[0], xs[1], gs[1], xs[2], xs[3], kernel};
  Tensor out(Shape{gs[1], xs[1], kernel, kernel});
  kernels::conv2d_weight_grad(x.value().data(), gy.value().data(), out.data(), d);
  return make_node(OpKind::conv2d_weight_grad, std::move(out), {x, gy},
                   [](std::span<const Var> in, const Var& g, const std::vector<bool>& needs) {
                     std::vector<Var> r(2);
                     if (needs[0]) r[0] = conv2d(in[1], flip_kernel(g));
                     if (needs[1]) r[1] = conv2d(in[0], g);
                     return r;
                   });
}

Var flip_kernel(const Var& w) {
  require_rank("flip_kernel", w, 4);
  const auto& s = w.shape();
  const std::size_t O = s[0], C = s[1], K = s[2];
  if (s[3] != K) throw std::invalid_argument("flip_kernel: non-square kernel " + shape_str(s));
  Tensor out(Shape{C, O, K, K});
  const auto src = w.value().data();
  auto dst = out.data();
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < K; ++i)
        for (std::size_t j = 0; j < K; ++j)
          dst[((c * O + o) * K + (K - 1 - i)) * K + (K - 1 - j)] = src[((o * C + c) * K + i) * K + j];
  return make_node(OpKind::flip_kernel, std::move(out), {w},
                   [](std::span<const Var>, const Var& g, const std::vector<bool>&) {
                     return std::vector<Var>{flip_kernel(g)};
                   });
}

Var avgpool2(const Var& x) {
  require_rank("avgpool2", x, 4);
  const auto& s = x.shape();
  if (s[2] % 2 || s[3] % 2) throw std::invalid_argument("avgpool2: odd spatial size " + shape_str(s));
  const std::size_t planes = s[0] * s[1], H = s[2], W = s[3], h2 = H / 2, w2 = W / 2;
  Tensor out(Shape{s[0], s[1], h2, w2});
  const auto in = x.value().data();
  auto o = out.data();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < h2; ++i)
      for (std::size_t j = 0; j < w2; ++j) {
        const double* base = in.data() + p * H * W + 2 * i * W + 2 * j;
        o[(p * h2 + i) * w2 + j] = 0.25 * (base[0] + base[1] + base[W] + base[W + 1]);
      }
  return make_node(OpKind::avgpool2, std::move(out), {x},
                   [](std::span<const Var>, const Var& g, const std::vector<bool>&) {
                     return std::vector<Var>{avgpool2_adjoint(g)};
                   });
}

Var avgpool2_adjoint(const Var& g) {
  require_rank("avgpool2_adjoint", g, 4);
  const auto& s = g.shape();
  const std::size_t planes = s[0] * s[1], h2 = s[2], w2 = s[3], W = 2 * w2;
  Tensor out(Shape{s[0], s[1], 2 * h2, W});
  const auto in = g.value().data();
  auto o = out.data();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < h2; ++i)
      for (std::size_t j = 0; j < w2; ++j) {
        const double v = 0.25 * in[(p * h2 + i) * w2 + j];
        double* base = o.data() + p * 2 * h2 * W + 2 * i * W + 2 * j;
        base[0] = base[1] = base[W] = base[W + 1] = v;
      }
  return make_node(OpKind::avgpool2_adjoint, std::move(out), {g},
                   [](std::span<const Var>, const Var& gg, const std::vector<bool>&) {
                     return std::vector<Var>{avgpool2(gg)};
                   });
}

// ---------------------------------------------------------------------------
// pointwise nonlinearities

Var relu(const Var& x) {
  Tensor v = map_unary(x.value(), [](double t) { return t > 0.0 || std::isnan(t) ? t : 0.0; });
  return make_node(OpKind::relu, std::move(v), {x},
                   [](std::span<const Var> in, const Var& g, const std::vector<bool>&) {
                     Var mask = constant(map_unary(in[0].value(), [](double t) { return t > 0.0 ? 1.0 : 0.0; }));
                     return std::vector<Var>{mul(g, mask)};
                   });
}

Var softplus(const Var& x) {
  Tensor v = map_unary(x.value(), [](double t) { return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); });
  return make_node(OpKind::softplus, std::move(v), {x},
                   [](std::span<const Var> in, const Var& g, const std::vector<bool>&) {
                     return std::vector<Var>{mul(g, sigmoid(in[0]))};
                   });
}

Var sigmoid(const Var& x) {
  Tensor v = map_unary(x.value(), [](double t) {
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
  });
  return make_node(OpKind::sigmoid, std::move(v), {x},
                   [](std::span<const Var> in, const Var& g, const std::vector<bool>&) {
                     Var s = sigmoid(in[0]);
                     return std::vector<Var>{mul(g, mul(s, 1.0 - s))};
                   });
}

Var exp(const Var& x) {
  Tensor v = map_unary(x.value(), [](double t) { return std::exp(t); });
  return make_node(OpKind::exp, std::move(v), {x},
                   [](std::span<const Var> in, const Var& g, const std::vector<bool>&) {
                     return std::vector<Var>{mul(g, exp(in[0]))};
                   });
}

Var log(const Var& x) {
  Tensor v = map_unary(x.value(), [](double t) { return std::log(t); });
  return make_node(OpKind::log, std::move(v), {x},
                   [](std::span<const Var> in, const Var& g, const std::vector<bool>&) {
                     return std::vector<Var>{div(g, in[0])};
                   });
}

Var square(const Var& x) {
  Tensor v = map_unary(x.value(), [](double t) { return t * t; });
  return make_node(OpKind::square, std::move(v), {x},
                   [](std::span<const Var> in, const Var& g, const std::vector<bool>&) {
                     return std::vector<Var>{mul(g, scale(in[0], 2.0))};
                   });
}

Var sqrt(const Var& x) {
  Tensor v = map_unary(x.value(), [](double t) { return std::sqrt(t); });
  return make_node(OpKind::sqrt, std::move(v), {x},
                   [](std::span<const Var> in, const Var& g, const std::vector<bool>&) {
                     return std::vector<Var>{div(g, scale(sqrt(in[0]), 2.0))};
                   });
}

Var abs(const Var& x) {
  Tensor v = map_unary(x.value(), [](double t) { return std::fabs(t); });
  return make_node(OpKind::abs, std::move(v), {x},
                   [](std::span<const Var> in, const Var& g, const std::vector<bool>&) {
                     Var sign = constant(map_unary(in[0].value(), [](double t) {
                       return t > 0.0 ? 1.0 : (t < 0.0 ? -1.0 : 0.0);
                     }));
                     return std::vector<Var>{mul(g, sign)};
                   });
}

Var clip(const Var& x, double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clip: lower bound exceeds upper bound");
  Tensor v = map_unary(x.value(), [lo, hi](double t) { return std::clamp(t, lo, hi); });
  return make_node(OpKind::clip, std::move(v), {x},
                   [lo, hi](std::span<const Var> in, const Var& g, const std::vector<bool>&) {
                     Var inside = constant(map_unary(in[0].value(), [lo, hi](double t) {
                       return (t > lo && t < hi) ? 1.0 : 0.0;
                     }));
                     return std::vector<Var>{mul(g, inside)};
                   });
}

// ---------------------------------------------------------------------------
// reductions and shape ops

Var sum(const Var& x) {
  double acc = 0.0;
  for (double v : x.value().data()) acc += v;
  return make_node(OpKind::sum, Tensor::scalar(acc), {x},
                   [](std::span<const Var> in, const Var& g, const std::vector<bool>&) {
                     return std::vector<Var>{broadcast_to(g, in[0].shape())};
                   });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Var sum_to(const Var& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  if (broadcast_shape(shape, x.shape(), "sum_to") != x.shape()) shape_error("sum_to", x.shape(), shape);
  Tensor out(shape);
  kernels::reduce(x.value().data(), x.shape(), out.data(), shape);
  return make_node(OpKind::sum_to, std::move(out), {x},
                   [](std::span<const Var> in, const Var& g, const std::vector<bool>&) {
                     return std::vector<Var>{broadcast_to(g, in[0].shape())};
                   });
}

Var broadcast_to(const Var& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  if (broadcast_shape(x.shape(), shape, "broadcast_to") != shape) shape_error("broadcast_to", x.shape(), shape);
  Tensor out(shape);
  kernels::expand(x.value().data(), x.shape(), out.data(), shape);
  return make_node(OpKind::broadcast_to, std::move(out), {x},
                   [](std::span<const Var> in, const Var& g, const std::vector<bool>&) {
                     return std::vector<Var>{sum_to(g, in[0].shape())};
                   });
}

Var sum_last(const Var& x) { return reshape(sum_to(x, keep_last_as_one(x.shape())), drop_last(x.shape())); }

Var mean_last(const Var& x) { return scale(sum_last(x), 1.0 / static_cast<double>(x.shape().back())); }

Var min_last(const Var& x) {
  const Shape keep = keep_last_as_one(x.shape());
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / d;
  Tensor out(drop_last(x.shape()));
  const auto in = x.value().data();
  for (std::size_t r = 0; r < rows; ++r) out[r] = *std::min_element(in.begin() + r * d, in.begin() + (r + 1) * d);
  return make_node(OpKind::min_last, std::move(out), {x},
                   [keep](std::span<const Var> in_vars, const Var& g, const std::vector<bool>&) {
                     const Tensor& xv = in_vars[0].value();
                     const std::size_t dd = xv.shape().back();
                     Tensor mask(xv.shape(), 0.0);
                     for (std::size_t r = 0; r < xv.numel() / dd; ++r) {
                       auto row = xv.data().subspan(r * dd, dd);
                       mask[r * dd + static_cast<std::size_t>(std::min_element(row.begin(), row.end()) - row.begin())] = 1.0;
                     }
                     return std::vector<Var>{mul(reshape(g, keep), constant(std::move(mask)))};
                   });
}

Var log_softmax(const Var& x) {
  if (x.shape().empty()) throw std::invalid_argument("log_softmax: scalar input");
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / d;
  Tensor out(x.shape());
  const auto in = x.value().data();
  auto o = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * d;
    const double m = *std::max_element(row, row + d);
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += std::exp(row[j] - m);
    const double lse = m + std::log(s);
    for (std::size_t j = 0; j < d; ++j) o[r * d + j] = row[j] - lse;
  }
  return make_node(OpKind::log_softmax, std::move(out), {x},
                   [](std::span<const Var> in_vars, const Var& g, const std::vector<bool>&) {
                     const Var& xv = in_vars[0];
                     Var gsum = reshape(sum_last(g), keep_last_as_one(xv.shape()));
                     return std::vector<Var>{sub(g, mul(softmax(xv), gsum))};
                   });
}

Var softmax(const Var& x) { return exp(log_softmax(x)); }

Var reshape(const Var& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  Tensor v = x.value().reshaped(shape);
  return make_node(OpKind::reshape, std::move(v), {x},
                   [](std::span<const Var> in, const Var& g, const std::vector<bool>&) {
                     return std::vector<Var>{reshape(g, in[0].shape())};
                   });
}

}  // namespace divdir
