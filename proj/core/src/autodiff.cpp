#include "paid/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "paid/error.hpp"

namespace paid {

std::string_view to_string(OpKind kind) noexcept {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::matmul: return "matmul";
    case OpKind::conv2d: return "conv2d";
    case OpKind::relu: return "relu";
    case OpKind::max_pool2: return "max_pool2";
    case OpKind::flatten: return "flatten";
    case OpKind::add_bias: return "add_bias";
    case OpKind::scale: return "scale";
    case OpKind::log_softmax: return "log_softmax";
    case OpKind::mean: return "mean";
    case OpKind::sum: return "sum";
    case OpKind::exp: return "exp";
    case OpKind::clamp_min: return "clamp_min";
  }
  return "unknown";
}

const Tensor& Var::value() const { return tape->value(*this); }
bool Var::requires_grad() const { return tape->requires_grad(*this); }

Var Tape::push(Node node) {
  if (nodes_.size() >= std::numeric_limits<NodeId>::max()) throw ContractError("tape: node limit reached");
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<NodeId>(nodes_.size() - 1)};
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.kind = OpKind::leaf;
  n.requires_grad = requires_grad;
  n.value = std::move(value);
  return push(std::move(n));
}

const Tape::Node& Tape::node(Var v) const {
  if (v.tape != this || v.id >= nodes_.size()) throw ContractError("tape: variable does not belong to this tape");
  return nodes_[v.id];
}

const Tensor& Tape::value(Var v) const { return node(v).value; }
bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }
OpKind Tape::kind(Var v) const { return node(v).kind; }

std::span<const NodeId> Tape::inputs(Var v) const {
  const auto& n = node(v);
  return {n.in.data(), n.arity};
}

Tensor Tape::grad(Var v) const {
  const auto& n = node(v);
  if (!n.requires_grad) throw ContractError("tape: node does not require a gradient");
  if (n.grad.empty()) return Tensor(n.value.shape());
  return Tensor(n.value.shape(), n.grad);
}

std::vector<Real>& Tape::grad_buffer(NodeId id) {
  auto& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.value.numel(), Real{0});
  return n.grad;
}

void Tape::backward(Var output, Real seed) {
  const auto& out = node(output);
  if (out.value.numel() != 1) {
    throw ContractError("backward: output must be a scalar, got shape " + to_string(out.value.shape()));
  }
  for (auto& n : nodes_) n.grad.clear();
  visits_ = 0;
  if (!out.requires_grad) return;
  grad_buffer(output.id)[0] = seed;
  for (std::int64_t id = output.id; id >= 0; --id) {
    const auto& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad || n.grad.empty() || n.kind == OpKind::leaf) continue;
    ++visits_;
    backprop_node(static_cast<NodeId>(id));
  }
}

// ----------------------------------------------------------------------------
// Forward construction

struct OpBuilder {
  static Var make(Tape& tape, OpKind kind, std::initializer_list<Var> inputs, Tensor value, Real param = 0,
                  std::vector<std::size_t> index = {}) {
    Tape::Node n;
    n.kind = kind;
    n.param = param;
    n.value = std::move(value);
    n.index = std::move(index);
    std::uint8_t k = 0;
    for (const auto& in : inputs) {
      n.in[k] = in.id;
      n.requires_grad = n.requires_grad || tape.nodes_[in.id].requires_grad;
      ++k;
    }
    n.arity = k;
    return tape.push(std::move(n));
  }
};

namespace {

Tape& same_tape(Var a, Var b, std::string_view op) {
  if (a.tape == nullptr || a.tape != b.tape) {
    throw ContractError(std::string(op) + ": operands belong to different tapes");
  }
  return *a.tape;
}

Tape& tape_of(Var a, std::string_view op) {
  if (a.tape == nullptr) throw ContractError(std::string(op) + ": unbound variable");
  return *a.tape;
}

[[noreturn]] void shape_error(OpKind kind, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(to_string(kind)) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

[[noreturn]] void shape_error(OpKind kind, const Shape& a, std::string_view expected) {
  throw ShapeError(std::string(to_string(kind)) + ": shape " + to_string(a) + " is not " + std::string(expected));
}

Var elementwise(Var a, Var b, OpKind kind) {
  auto& tape = same_tape(a, b, to_string(kind));
  const auto& x = a.value();
  const auto& y = b.value();
  if (x.shape() != y.shape()) shape_error(kind, x.shape(), y.shape());
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    switch (kind) {
      case OpKind::add: out[i] = x[i] + y[i]; break;
      case OpKind::sub: out[i] = x[i] - y[i]; break;
      default: out[i] = x[i] * y[i]; break;
    }
  }
  return OpBuilder::make(tape, kind, {a, b}, std::move(out));
}

}  // namespace

Var add(Var a, Var b) { return elementwise(a, b, OpKind::add); }
Var sub(Var a, Var b) { return elementwise(a, b, OpKind::sub); }
Var mul(Var a, Var b) { return elementwise(a, b, OpKind::mul); }

Var matmul(Var a, Var b) {
  auto& tape = same_tape(a, b, "matmul");
  const auto& x = a.value();
  const auto& w = b.value();
  if (x.rank() != 2 || w.rank() != 2 || x.extent(1) != w.extent(0)) shape_error(OpKind::matmul, x.shape(), w.shape());
  const auto n = x.extent(0), k = x.extent(1), m = w.extent(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    Real* row = &out[i * m];
    for (std::size_t p = 0; p < k; ++p) {
      const Real xv = x[i * k + p];
      const Real* wrow = w.values().data() + (p * m);
      for (std::size_t j = 0; j < m; ++j) row[j] += xv * wrow[j];
    }
  }
  return OpBuilder::make(tape, OpKind::matmul, {a, b}, std::move(out));
}

Var conv2d(Var input, Var weight) {
  auto& tape = same_tape(input, weight, "conv2d");
  const auto& x = input.value();
  const auto& w = weight.value();
  if (x.rank() != 4 || w.rank() != 4 || w.extent(1) != x.extent(1) || w.extent(2) != 3 || w.extent(3) != 3) {
    shape_error(OpKind::conv2d, x.shape(), w.shape());
  }
  const auto n = x.extent(0), c = x.extent(1), h = x.extent(2), wd = x.extent(3), o = w.extent(0);
  Tensor out({n, o, h, wd});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t oc = 0; oc < o; ++oc) {
      Real* plane = &out[((b * o) + oc) * h * wd];
      for (std::size_t ic = 0; ic < c; ++ic) {
        const Real* src = x.values().data() + (((b * c) + ic) * h * wd);
        const Real* ker = w.values().data() + (((oc * c) + ic) * 9);
        for (std::size_t i = 0; i < h; ++i) {
          for (std::size_t j = 0; j < wd; ++j) {
            Real acc = 0;
            for (std::size_t di = 0; di < 3; ++di) {
              const auto si = static_cast<std::ptrdiff_t>(i + di) - 1;
              if (si < 0 || si >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t dj = 0; dj < 3; ++dj) {
                const auto sj = static_cast<std::ptrdiff_t>(j + dj) - 1;
                if (sj < 0 || sj >= static_cast<std::ptrdiff_t>(wd)) continue;
                acc += ker[di * 3 + dj] * src[static_cast<std::size_t>(si) * wd + static_cast<std::size_t>(sj)];
              }
            }
            plane[i * wd + j] += acc;
          }
        }
      }
    }
  }
  return OpBuilder::make(tape, OpKind::conv2d, {input, weight}, std::move(out));
}

Var relu(Var x) {
  auto& tape = tape_of(x, "relu");
  Tensor out = x.value();
  for (auto& v : out.values()) v = v > 0 ? v : Real{0};
  return OpBuilder::make(tape, OpKind::relu, {x}, std::move(out));
}

Var max_pool2(Var x) {
  auto& tape = tape_of(x, "max_pool2");
  const auto& in = x.value();
  if (in.rank() != 4 || in.extent(2) < 2 || in.extent(3) < 2) shape_error(OpKind::max_pool2, in.shape(), "[n, c, h>=2, w>=2]");
  const auto n = in.extent(0), c = in.extent(1), h = in.extent(2), w = in.extent(3);
  const auto oh = h / 2, ow = w / 2;
  Tensor out({n, c, oh, ow});
  std::vector<std::size_t> argmax(out.numel());
  std::size_t k = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j, ++k) {
        std::size_t best = base + (2 * i) * w + 2 * j;
        for (std::size_t di = 0; di < 2; ++di) {
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t idx = base + (2 * i + di) * w + (2 * j + dj);
            if (in[idx] > in[best]) best = idx;
          }
        }
        argmax[k] = best;
        out[k] = in[best];
      }
    }
  }
  return OpBuilder::make(tape, OpKind::max_pool2, {x}, std::move(out), 0, std::move(argmax));
}

Var flatten(Var x) {
  auto& tape = tape_of(x, "flatten");
  const auto& in = x.value();
  if (in.rank() < 1) shape_error(OpKind::flatten, in.shape(), "batched");
  const auto n = in.extent(0);
  return OpBuilder::make(tape, OpKind::flatten, {x}, in.reshaped({n, n == 0 ? 0 : in.numel() / n}));
}

Var add_bias(Var x, Var bias) {
  auto& tape = same_tape(x, bias, "add_bias");
  const auto& in = x.value();
  const auto& b = bias.value();
  if ((in.rank() != 2 && in.rank() != 4) || b.rank() != 1 || b.extent(0) != in.extent(1)) {
    shape_error(OpKind::add_bias, in.shape(), b.shape());
  }
  const auto n = in.extent(0), c = in.extent(1);
  const auto spatial = in.rank() == 4 ? in.extent(2) * in.extent(3) : std::size_t{1};
  Tensor out = in;
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < spatial; ++p) out[(s * c + ch) * spatial + p] += b[ch];
  return OpBuilder::make(tape, OpKind::add_bias, {x, bias}, std::move(out));
}

Var scale(Var x, Real factor) {
  auto& tape = tape_of(x, "scale");
  Tensor out = x.value();
  for (auto& v : out.values()) v *= factor;
  return OpBuilder::make(tape, OpKind::scale, {x}, std::move(out), factor);
}

Var log_softmax(Var x, Real temperature) {
  auto& tape = tape_of(x, "log_softmax");
  if (!(temperature > 0)) throw ParameterError("log_softmax: temperature must be > 0, got " + std::to_string(temperature));
  const auto& in = x.value();
  if (in.rank() != 2 || in.extent(1) == 0) shape_error(OpKind::log_softmax, in.shape(), "[n, k>0]");
  const auto rows = in.extent(0), cols = in.extent(1);
  Tensor out({rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* z = in.values().data() + (r * cols);
    Real* y = &out[r * cols];
    Real top = z[0] / temperature;
    for (std::size_t c = 1; c < cols; ++c) top = std::max(top, z[c] / temperature);
    Real total = 0;
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(z[c] / temperature - top);
    const Real lse = top + std::log(total);
    for (std::size_t c = 0; c < cols; ++c) y[c] = z[c] / temperature - lse;
  }
  return OpBuilder::make(tape, OpKind::log_softmax, {x}, std::move(out), temperature);
}

Var mean(Var x) {
  auto& tape = tape_of(x, "mean");
  const auto& in = x.value();
  if (in.numel() == 0) shape_error(OpKind::mean, in.shape(), "non-empty");
  Real total = 0;
  for (auto v : in.values()) total += v;
  return OpBuilder::make(tape, OpKind::mean, {x}, Tensor::scalar(total / static_cast<Real>(in.numel())));
}

Var sum(Var x) {
  auto& tape = tape_of(x, "sum");
  Real total = 0;
  for (auto v : x.value().values()) total += v;
  return OpBuilder::make(tape, OpKind::sum, {x}, Tensor::scalar(total));
}

Var exp(Var x) {
  auto& tape = tape_of(x, "exp");
  Tensor out = x.value();
  for (auto& v : out.values()) v = std::exp(v);
  return OpBuilder::make(tape, OpKind::exp, {x}, std::move(out));
}

Var clamp_min(Var x, Real floor) {
  auto& tape = tape_of(x, "clamp_min");
  Tensor out = x.value();
  for (auto& v : out.values()) v = std::max(v, floor);
  return OpBuilder::make(tape, OpKind::clamp_min, {x}, std::move(out), floor);
}

// ----------------------------------------------------------------------------
// Backward rules

void Tape::backprop_node(NodeId id) {
  // `grad_buffer` may grow other nodes' buffers but never reallocates
  // `nodes_`, so references into it stay valid.
  const Node& n = nodes_[id];
  const std::vector<Real>& g = n.grad;
  const bool need0 = n.arity > 0 && nodes_[n.in[0]].requires_grad;
  const bool need1 = n.arity > 1 && nodes_[n.in[1]].requires_grad;

  switch (n.kind) {
    case OpKind::leaf:
      break;
    case OpKind::add:
    case OpKind::sub: {
      if (need0) {
        auto& ga = grad_buffer(n.in[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (need1) {
        auto& gb = grad_buffer(n.in[1]);
        if (n.kind == OpKind::add)
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        else
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
      break;
    }
    case OpKind::mul: {
      const auto& a = nodes_[n.in[0]].value;
      const auto& b = nodes_[n.in[1]].value;
      if (need0) {
        auto& ga = grad_buffer(n.in[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
      }
      if (need1) {
        auto& gb = grad_buffer(n.in[1]);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
      }
      break;
    }
    case OpKind::matmul: {
      const auto& a = nodes_[n.in[0]].value;
      const auto& b = nodes_[n.in[1]].value;
      const auto rows = a.extent(0), k = a.extent(1), m = b.extent(1);
      if (need0) {
        auto& ga = grad_buffer(n.in[0]);
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            Real acc = 0;
            for (std::size_t j = 0; j < m; ++j) acc += g[i * m + j] * b[p * m + j];
            ga[i * k + p] += acc;
          }
      }
      if (need1) {
        auto& gb = grad_buffer(n.in[1]);
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const Real av = a[i * k + p];
            for (std::size_t j = 0; j < m; ++j) gb[p * m + j] += av * g[i * m + j];
          }
      }
      break;
    }
    case OpKind::conv2d: {
      const auto& x = nodes_[n.in[0]].value;
      const auto& w = nodes_[n.in[1]].value;
      const auto batch = x.extent(0), c = x.extent(1), h = x.extent(2), wd = x.extent(3), o = w.extent(0);
      std::vector<Real>* gx = need0 ? &grad_buffer(n.in[0]) : nullptr;
      std::vector<Real>* gw = need1 ? &grad_buffer(n.in[1]) : nullptr;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t oc = 0; oc < o; ++oc) {
          const Real* gplane = &g[((b * o) + oc) * h * wd];
          for (std::size_t ic = 0; ic < c; ++ic) {
            const std::size_t xbase = ((b * c) + ic) * h * wd;
            const std::size_t kbase = ((oc * c) + ic) * 9;
            for (std::size_t i = 0; i < h; ++i)
              for (std::size_t j = 0; j < wd; ++j) {
                const Real gv = gplane[i * wd + j];
                if (gv == 0) continue;
                for (std::size_t di = 0; di < 3; ++di) {
                  const auto si = static_cast<std::ptrdiff_t>(i + di) - 1;
                  if (si < 0 || si >= static_cast<std::ptrdiff_t>(h)) continue;
                  for (std::size_t dj = 0; dj < 3; ++dj) {
                    const auto sj = static_cast<std::ptrdiff_t>(j + dj) - 1;
                    if (sj < 0 || sj >= static_cast<std::ptrdiff_t>(wd)) continue;
                    const std::size_t xi = xbase + static_cast<std::size_t>(si) * wd + static_cast<std::size_t>(sj);
                    if (gx) (*gx)[xi] += gv * w[kbase + di * 3 + dj];
                    if (gw) (*gw)[kbase + di * 3 + dj] += gv * x[xi];
                  }
                }
              }
          }
        }
      break;
    }
    case OpKind::relu: {
      if (!need0) break;
      const auto& x = nodes_[n.in[0]].value;
      auto& gx = grad_buffer(n.in[0]);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x[i] > 0) gx[i] += g[i];
      break;
    }
    case OpKind::max_pool2: {
      if (!need0) break;
      auto& gx = grad_buffer(n.in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) gx[n.index[i]] += g[i];
      break;
    }
    case OpKind::flatten:
    case OpKind::scale: {
      if (!need0) break;
      auto& gx = grad_buffer(n.in[0]);
      const Real f = n.kind == OpKind::scale ? n.param : Real{1};
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * f;
      break;
    }
    case OpKind::add_bias: {
      const auto& x = nodes_[n.in[0]].value;
      if (need0) {
        auto& gx = grad_buffer(n.in[0]);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (need1) {
        auto& gb = grad_buffer(n.in[1]);
        const auto batch = x.extent(0), c = x.extent(1);
        const auto spatial = x.rank() == 4 ? x.extent(2) * x.extent(3) : std::size_t{1};
        for (std::size_t s = 0; s < batch; ++s)
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t p = 0; p < spatial; ++p) gb[ch] += g[(s * c + ch) * spatial + p];
      }
      break;
    }
    case OpKind::log_softmax: {
      if (!need0) break;
      const auto& y = n.value;
      const auto rows = y.extent(0), cols = y.extent(1);
      auto& gx = grad_buffer(n.in[0]);
      for (std::size_t r = 0; r < rows; ++r) {
        Real gsum = 0;
        for (std::size_t c = 0; c < cols; ++c) gsum += g[r * cols + c];
        for (std::size_t c = 0; c < cols; ++c) {
          const std::size_t i = r * cols + c;
          gx[i] += (g[i] - std::exp(y[i]) * gsum) / n.param;
        }
      }
      break;
    }
    case OpKind::mean:
    case OpKind::sum: {
      if (!need0) break;
      auto& gx = grad_buffer(n.in[0]);
      const Real share = n.kind == OpKind::mean ? g[0] / static_cast<Real>(gx.size()) : g[0];
      for (auto& v : gx) v += share;
      break;
    }
    case OpKind::exp: {
      if (!need0) break;
      auto& gx = grad_buffer(n.in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * n.value[i];
      break;
    }
    case OpKind::clamp_min: {
      if (!need0) break;
      const auto& x = nodes_[n.in[0]].value;
      auto& gx = grad_buffer(n.in[0]);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x[i] > n.param) gx[i] += g[i];
      break;
    }
  }
}

Tensor finite_diff_grad(const std::function<Real(const Tensor&)>& loss_fn, const Tensor& x, Real h) {
  if (!(h > 0)) throw ParameterError("finite_diff_grad: step must be > 0");
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const Real orig = probe[i];
    probe[i] = orig + h;
    const Real up = loss_fn(probe);
    probe[i] = orig - h;
    const Real down = loss_fn(probe);
    probe[i] = orig;
    grad[i] = (up - down) / (2 * h);
  }
  return grad;
}

}  // namespace paid
