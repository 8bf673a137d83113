#pragma once

// Dense reverse-mode differentiation on an explicit tape.
//
// Values live in tape nodes; a Var is a (tape, node) handle. Learnable
// parameters are Tensor objects owned outside the tape and bound with
// Tape::param; after backward, accumulate_param_grads() adds the node
// gradients into Tensor::grad. One tape per forward pass, single owner.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "eqpose/errors.hpp"

namespace eqpose::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

/// Named dense array with an optional gradient buffer (empty when absent).
template <class T>
struct Tensor {
  std::string name;
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;

  Tensor() = default;
  Tensor(std::string n, Shape s)
      : name(std::move(n)), shape(std::move(s)), data(numel(shape), T(0)) {}
  Tensor(std::string n, Shape s, std::vector<T> d)
      : name(std::move(n)), shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel(shape))
      throw ContractViolation("tensor '" + name + "' data length " +
                              std::to_string(data.size()) +
                              " does not match shape " + to_string(shape));
  }

  std::size_t size() const { return data.size(); }
  bool has_grad() const { return grad.size() == data.size(); }
  void zero_grad() { grad.assign(data.size(), T(0)); }
  void clear_grad() { grad.clear(); }
};

template <class T>
class Tape;

template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Shape& shape() const { return tape->node(id).shape; }
  std::size_t size() const { return tape->node(id).value.size(); }
  std::span<const T> value() const { return tape->node(id).value; }
  std::span<const T> grad() const { return tape->node(id).grad; }
  T item() const {
    if (size() != 1)
      throw ContractViolation("item() on non-scalar of shape " +
                              to_string(shape()));
    return value()[0];
  }
  bool requires_grad() const { return tape->node(id).requires_grad; }
};

template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    Backward backward;
    Tensor<T>* param = nullptr;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Node& node(std::size_t id) { return nodes_[id]; }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }

  Var<T> constant(Shape shape, std::vector<T> value) {
    return push(std::move(shape), std::move(value), false, {});
  }
  Var<T> scalar(T v) { return constant({1}, {v}); }

  /// Differentiable leaf not bound to a parameter.
  Var<T> leaf(Shape shape, std::vector<T> value) {
    return push(std::move(shape), std::move(value), true, {});
  }

  Var<T> param(Tensor<T>& p) {
    Var<T> v = push(p.shape, p.data, true, {});
    nodes_[v.id].param = &p;
    return v;
  }

  /// Record an op. `backward(tape, self)` reads node `self`'s grad and adds
  /// into the grads of its inputs.
  Var<T> push(Shape shape, std::vector<T> value, bool requires_grad,
              Backward backward) {
    if (value.size() != numel(shape))
      throw ContractViolation("op produced " + std::to_string(value.size()) +
                              " values for shape " + to_string(shape));
    nodes_.push_back(Node{std::move(shape), std::move(value), {}, requires_grad,
                          std::move(backward), nullptr});
    return Var<T>{this, nodes_.size() - 1};
  }

  /// Gradient buffer of a node, allocated on first use.
  std::vector<T>& grad(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), T(0));
    return n.grad;
  }

  void backward(Var<T> loss) {
    if (loss.tape != this) throw ContractViolation("loss from another tape");
    if (nodes_[loss.id].value.size() != 1)
      throw ContractViolation("backward requires a scalar loss, got shape " +
                              to_string(nodes_[loss.id].shape));
    for (auto& n : nodes_) n.grad.clear();
    grad(loss.id)[0] = T(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
      n.backward(*this, i);
    }
  }

  /// Add scale * d(loss)/d(param) into each bound parameter's grad.
  void accumulate_param_grads(T scale = T(1)) {
    for (auto& n : nodes_) {
      if (!n.param) continue;
      Tensor<T>& p = *n.param;
      if (!p.has_grad()) p.zero_grad();
      if (n.grad.empty()) continue;
      for (std::size_t k = 0; k < n.grad.size(); ++k)
        p.grad[k] += scale * n.grad[k];
    }
  }

 private:
  std::vector<Node> nodes_;
};

namespace detail {

template <class T>
void same_tape(const Var<T>& a, const Var<T>& b) {
  if (a.tape != b.tape) throw ContractViolation("vars from different tapes");
}

template <class T>
void same_shape(const char* op, const Var<T>& a, const Var<T>& b) {
  same_tape(a, b);
  if (a.shape() != b.shape())
    throw ContractViolation(std::string(op) + ": shape mismatch " +
                            to_string(a.shape()) + " vs " +
                            to_string(b.shape()));
}

// (outer, len, inner) of a shape around `axis`.
inline std::array<std::size_t, 3> split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.size())
    throw ContractViolation("axis " + std::to_string(axis) +
                            " out of range for shape " + to_string(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  return {outer, s[axis], inner};
}

inline Shape drop_axis(const Shape& s, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) out.push_back(s[i]);
  if (out.empty()) out.push_back(1);
  return out;
}

template <class T>
using RowMat =
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

// Elementwise op; dfdx receives (input, output).
template <class T, class F, class D>
Var<T> unary(const Var<T>& a, F f, D dfdx) {
  const auto in = a.value();
  std::vector<T> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  const std::size_t ia = a.id;
  return a.tape->push(
      a.shape(), std::move(out), a.requires_grad(),
      [ia, dfdx](Tape<T>& t, std::size_t self) {
        if (!t.node(ia).requires_grad) return;
        auto& ga = t.grad(ia);
        const auto& x = t.node(ia).value;
        const auto& y = t.node(self).value;
        const auto& gy = t.node(self).grad;
        for (std::size_t i = 0; i < ga.size(); ++i)
          ga[i] += gy[i] * dfdx(x[i], y[i]);
      });
}

// Reduction over one axis that routes the gradient to a single selected
// element; `better(candidate, current)` decides replacement, so the first
// (lowest flat index) extreme wins ties.
template <class T, class Better>
Var<T> select_reduce(const Var<T>& a, std::size_t axis, Better better) {
  const auto [outer, len, inner] = split_axis(a.shape(), axis);
  if (len == 0) throw ContractViolation("reduction over empty axis");
  const auto x = a.value();
  std::vector<T> out(outer * inner);
  std::vector<std::size_t> arg(outer * inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      std::size_t best = o * len * inner + i;
      for (std::size_t l = 1; l < len; ++l) {
        const std::size_t k = (o * len + l) * inner + i;
        if (better(x[k], x[best])) best = k;
      }
      out[o * inner + i] = x[best];
      arg[o * inner + i] = best;
    }
  const std::size_t ia = a.id;
  return a.tape->push(drop_axis(a.shape(), axis), std::move(out),
                      a.requires_grad(),
                      [ia, arg = std::move(arg)](Tape<T>& t, std::size_t self) {
                        if (!t.node(ia).requires_grad) return;
                        auto& ga = t.grad(ia);
                        const auto& gy = t.node(self).grad;
                        for (std::size_t k = 0; k < arg.size(); ++k)
                          ga[arg[k]] += gy[k];
                      });
}

}  // namespace detail

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::same_shape("add", a, b);
  const auto x = a.value(), y = b.value();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->push(a.shape(), std::move(out),
                      a.requires_grad() || b.requires_grad(),
                      [ia, ib](Tape<T>& t, std::size_t self) {
                        const auto& g = t.node(self).grad;
                        for (std::size_t in : {ia, ib}) {
                          if (!t.node(in).requires_grad) continue;
                          auto& gi = t.grad(in);
                          for (std::size_t i = 0; i < g.size(); ++i)
                            gi[i] += g[i];
                        }
                      });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::same_shape("sub", a, b);
  const auto x = a.value(), y = b.value();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->push(a.shape(), std::move(out),
                      a.requires_grad() || b.requires_grad(),
                      [ia, ib](Tape<T>& t, std::size_t self) {
                        const auto& g = t.node(self).grad;
                        if (t.node(ia).requires_grad) {
                          auto& ga = t.grad(ia);
                          for (std::size_t i = 0; i < g.size(); ++i)
                            ga[i] += g[i];
                        }
                        if (t.node(ib).requires_grad) {
                          auto& gb = t.grad(ib);
                          for (std::size_t i = 0; i < g.size(); ++i)
                            gb[i] -= g[i];
                        }
                      });
}

/// Elementwise product.
template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::same_shape("mul", a, b);
  const auto x = a.value(), y = b.value();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->push(
      a.shape(), std::move(out), a.requires_grad() || b.requires_grad(),
      [ia, ib](Tape<T>& t, std::size_t self) {
        const auto& g = t.node(self).grad;
        const auto& xa = t.node(ia).value;
        const auto& xb = t.node(ib).value;
        if (t.node(ia).requires_grad) {
          auto& ga = t.grad(ia);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * xb[i];
        }
        if (t.node(ib).requires_grad) {
          auto& gb = t.grad(ib);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * xa[i];
        }
      });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  return detail::unary(
      a, [s](T x) { return s * x; }, [s](T, T) { return s; });
}

template <class T>
Var<T> add_scalar(const Var<T>& a, T s) {
  return detail::unary(
      a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <class T>
Var<T> sigmoid(const Var<T>& a) {
  return detail::unary(
      a,
      [](T x) {
        return x >= 0 ? T(1) / (T(1) + std::exp(-x))
                      : std::exp(x) / (T(1) + std::exp(x));
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
  return detail::unary(
      a, [slope](T x) { return x > 0 ? x : slope * x; },
      [slope](T x, T) { return x > 0 ? T(1) : slope; });
}

template <class T>
Var<T> square(const Var<T>& a) {
  return detail::unary(
      a, [](T x) { return x * x; }, [](T x, T) { return 2 * x; });
}

/// sqrt; the derivative at 0 is taken as 0.
template <class T>
Var<T> sqrt(const Var<T>& a) {
  return detail::unary(
      a, [](T x) { return std::sqrt(x); },
      [](T, T y) { return y > 0 ? T(0.5) / y : T(0); });
}

/// Same data, new shape.
template <class T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  if (numel(shape) != a.size())
    throw ContractViolation("reshape: cannot view " + to_string(a.shape()) +
                            " as " + to_string(shape));
  const auto x = a.value();
  const std::size_t ia = a.id;
  return a.tape->push(std::move(shape), std::vector<T>(x.begin(), x.end()),
                      a.requires_grad(), [ia](Tape<T>& t, std::size_t self) {
                        if (!t.node(ia).requires_grad) return;
                        auto& ga = t.grad(ia);
                        const auto& g = t.node(self).grad;
                        for (std::size_t i = 0; i < g.size(); ++i)
                          ga[i] += g[i];
                      });
}

/// [M x K] * [K x N].
template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  detail::same_tape(a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
    throw ContractViolation("matmul: shape mismatch " + to_string(sa) +
                            " vs " + to_string(sb));
  const std::size_t M = sa[0], K = sa[1], N = sb[1];
  std::vector<T> out(M * N);
  detail::MapMat<T>(out.data(), M, N).noalias() =
      detail::CMapMat<T>(a.value().data(), M, K) *
      detail::CMapMat<T>(b.value().data(), K, N);
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->push(
      {M, N}, std::move(out), a.requires_grad() || b.requires_grad(),
      [ia, ib, M, K, N](Tape<T>& t, std::size_t self) {
        detail::CMapMat<T> g(t.node(self).grad.data(), M, N);
        if (t.node(ia).requires_grad) {
          detail::MapMat<T>(t.grad(ia).data(), M, K).noalias() +=
              g * detail::CMapMat<T>(t.node(ib).value.data(), K, N).transpose();
        }
        if (t.node(ib).requires_grad) {
          detail::MapMat<T>(t.grad(ib).data(), K, N).noalias() +=
              detail::CMapMat<T>(t.node(ia).value.data(), M, K).transpose() * g;
        }
      });
}

/// Adds a vector of length C to every row of a [..., C] tensor.
template <class T>
Var<T> add_rowwise(const Var<T>& a, const Var<T>& bias) {
  detail::same_tape(a, bias);
  const std::size_t C = a.shape().back();
  if (bias.size() != C)
    throw ContractViolation("add_rowwise: shape mismatch " +
                            to_string(a.shape()) + " vs " +
                            to_string(bias.shape()));
  const auto x = a.value();
  const auto b = bias.value();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + b[i % C];
  const std::size_t ia = a.id, ib = bias.id;
  return a.tape->push(a.shape(), std::move(out),
                      a.requires_grad() || bias.requires_grad(),
                      [ia, ib, C](Tape<T>& t, std::size_t self) {
                        const auto& g = t.node(self).grad;
                        if (t.node(ia).requires_grad) {
                          auto& ga = t.grad(ia);
                          for (std::size_t i = 0; i < g.size(); ++i)
                            ga[i] += g[i];
                        }
                        if (t.node(ib).requires_grad) {
                          auto& gb = t.grad(ib);
                          for (std::size_t i = 0; i < g.size(); ++i)
                            gb[i % C] += g[i];
                        }
                      });
}

/// Selects slices along the first axis: out[r] = a[index[r]].
template <class T>
Var<T> gather(const Var<T>& a, std::vector<std::size_t> index) {
  const Shape& s = a.shape();
  const std::size_t rows = s.at(0);
  const std::size_t width = a.size() / std::max<std::size_t>(rows, 1);
  const auto x = a.value();
  std::vector<T> out(index.size() * width);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= rows)
      throw ContractViolation("gather: index " + std::to_string(index[r]) +
                              " out of range for shape " + to_string(s));
    std::copy_n(x.begin() + index[r] * width, width, out.begin() + r * width);
  }
  Shape os = s;
  os[0] = index.size();
  const std::size_t ia = a.id;
  return a.tape->push(
      std::move(os), std::move(out), a.requires_grad(),
      [ia, width, index = std::move(index)](Tape<T>& t, std::size_t self) {
        if (!t.node(ia).requires_grad) return;
        auto& ga = t.grad(ia);
        const auto& g = t.node(self).grad;
        for (std::size_t r = 0; r < index.size(); ++r)
          for (std::size_t c = 0; c < width; ++c)
            ga[index[r] * width + c] += g[r * width + c];
      });
}

/// Columns [begin, end) of a [M x K] tensor.
template <class T>
Var<T> slice_cols(const Var<T>& a, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  if (s.size() != 2 || begin >= end || end > s[1])
    throw ContractViolation("slice_cols: range [" + std::to_string(begin) + "," +
                            std::to_string(end) + ") invalid for shape " +
                            to_string(s));
  const std::size_t M = s[0], K = s[1], W = end - begin;
  const auto x = a.value();
  std::vector<T> out(M * W);
  for (std::size_t r = 0; r < M; ++r)
    std::copy_n(x.begin() + r * K + begin, W, out.begin() + r * W);
  const std::size_t ia = a.id;
  return a.tape->push({M, W}, std::move(out), a.requires_grad(),
                      [ia, M, K, W, begin](Tape<T>& t, std::size_t self) {
                        if (!t.node(ia).requires_grad) return;
                        auto& ga = t.grad(ia);
                        const auto& g = t.node(self).grad;
                        for (std::size_t r = 0; r < M; ++r)
                          for (std::size_t c = 0; c < W; ++c)
                            ga[r * K + begin + c] += g[r * W + c];
                      });
}

template <class T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractViolation("concat of zero tensors");
  Shape shape = parts[0].shape();
  if (axis >= shape.size()) throw ContractViolation("concat: bad axis");
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::same_tape(parts[0], p);
    Shape a = p.shape(), b = shape;
    if (a.size() != b.size())
      throw ContractViolation("concat: shape mismatch " + to_string(a) +
                              " vs " + to_string(b));
    a[axis] = b[axis] = 0;
    if (a != b)
      throw ContractViolation("concat: shape mismatch " +
                              to_string(p.shape()) + " vs " + to_string(shape));
    total += p.shape()[axis];
  }
  shape[axis] = total;
  const auto [outer, unused, inner] = detail::split_axis(shape, axis);
  (void)unused;
  std::vector<T> out(numel(shape));
  std::vector<std::size_t> ids, lens;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t len = p.shape()[axis];
    const auto x = p.value();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(x.begin() + o * len * inner, len * inner,
                  out.begin() + (o * total + offset) * inner);
    ids.push_back(p.id);
    lens.push_back(len);
    offset += len;
  }
  bool rg = std::any_of(parts.begin(), parts.end(),
                        [](const auto& p) { return p.requires_grad(); });
  return parts[0].tape->push(
      std::move(shape), std::move(out), rg,
      [ids, lens, outer = outer, inner = inner, total](Tape<T>& t,
                                                       std::size_t self) {
        const auto& g = t.node(self).grad;
        std::size_t offset = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (t.node(ids[k]).requires_grad) {
            auto& gk = t.grad(ids[k]);
            for (std::size_t o = 0; o < outer; ++o)
              for (std::size_t l = 0; l < lens[k] * inner; ++l)
                gk[o * lens[k] * inner + l] +=
                    g[(o * total + offset) * inner + l];
          }
          offset += lens[k];
        }
      });
}

template <class T>
Var<T> reduce_sum(const Var<T>& a, std::size_t axis) {
  const auto [outer, len, inner] = detail::split_axis(a.shape(), axis);
  const auto x = a.value();
  std::vector<T> out(outer * inner, T(0));
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i)
        out[o * inner + i] += x[(o * len + l) * inner + i];
  const std::size_t ia = a.id;
  return a.tape->push(
      detail::drop_axis(a.shape(), axis), std::move(out), a.requires_grad(),
      [ia, outer = outer, len = len, inner = inner](Tape<T>& t,
                                                    std::size_t self) {
        if (!t.node(ia).requires_grad) return;
        auto& ga = t.grad(ia);
        const auto& g = t.node(self).grad;
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t l = 0; l < len; ++l)
            for (std::size_t i = 0; i < inner; ++i)
              ga[(o * len + l) * inner + i] += g[o * inner + i];
      });
}

template <class T>
Var<T> reduce_mean(const Var<T>& a, std::size_t axis) {
  const T len = static_cast<T>(a.shape().at(axis));
  return scale(reduce_sum(a, axis), T(1) / len);
}

/// Sum of all elements, shape [1].
template <class T>
Var<T> sum(const Var<T>& a) {
  return reduce_sum(reshape(a, {a.size()}), 0);
}

template <class T>
Var<T> mean(const Var<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

/// Max over an axis; gradient goes to the first maximal element only.
template <class T>
Var<T> reduce_max(const Var<T>& a, std::size_t axis) {
  return detail::select_reduce(a, axis, [](T c, T b) { return c > b; });
}

/// Min over an axis; gradient goes to the first minimal element only.
template <class T>
Var<T> reduce_min(const Var<T>& a, std::size_t axis) {
  return detail::select_reduce(a, axis, [](T c, T b) { return c < b; });
}

/// Squared distances between rows of A [m x 3] and B [k x 3], shape [m x k].
template <class T>
Var<T> pairwise_sqdist(const Var<T>& A, const Var<T>& B) {
  detail::same_tape(A, B);
  const Shape& sa = A.shape();
  const Shape& sb = B.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != 3 || sb[1] != 3)
    throw ContractViolation("pairwise_sqdist: shape mismatch " +
                            to_string(sa) + " vs " + to_string(sb));
  const std::size_t m = sa[0], k = sb[0];
  const auto a = A.value();
  const auto b = B.value();
  std::vector<T> out(m * k);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const T dx = a[3 * i] - b[3 * j], dy = a[3 * i + 1] - b[3 * j + 1],
              dz = a[3 * i + 2] - b[3 * j + 2];
      out[i * k + j] = dx * dx + dy * dy + dz * dz;
    }
  const std::size_t ia = A.id, ib = B.id;
  return A.tape->push(
      {m, k}, std::move(out), A.requires_grad() || B.requires_grad(),
      [ia, ib, m, k](Tape<T>& t, std::size_t self) {
        const auto& g = t.node(self).grad;
        const auto& a = t.node(ia).value;
        const auto& b = t.node(ib).value;
        const bool ra = t.node(ia).requires_grad;
        const bool rb = t.node(ib).requires_grad;
        std::vector<T>* ga = ra ? &t.grad(ia) : nullptr;
        std::vector<T>* gb = rb ? &t.grad(ib) : nullptr;
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < k; ++j) {
            const T w = g[i * k + j];
            if (w == T(0)) continue;
            for (std::size_t c = 0; c < 3; ++c) {
              const T d = 2 * w * (a[3 * i + c] - b[3 * j + c]);
              if (ra) (*ga)[3 * i + c] += d;
              if (rb) (*gb)[3 * j + c] -= d;
            }
          }
      });
}

/// Per-column standardization of a [M x C] tensor followed by a learned
/// per-column scale and shift.
template <class T>
Var<T> standardize_columns(const Var<T>& a, const Var<T>& gamma,
                           const Var<T>& beta, T eps = T(1e-5)) {
  detail::same_tape(a, gamma);
  detail::same_tape(a, beta);
  const Shape& s = a.shape();
  if (s.size() != 2 || gamma.size() != s[1] || beta.size() != s[1])
    throw ContractViolation("standardize_columns: shape mismatch " +
                            to_string(s) + " vs " + to_string(gamma.shape()) +
                            " / " + to_string(beta.shape()));
  const std::size_t M = s[0], C = s[1];
  const auto x = a.value();
  const auto gm = gamma.value();
  const auto bt = beta.value();
  // Statistics accumulate in double: permuting rows must not change them
  // beyond rounding of the final result.
  std::vector<double> mu(C, 0.0), var(C, 0.0);
  std::vector<T> inv_std(C, T(0)), xhat(M * C), out(M * C);
  for (std::size_t r = 0; r < M; ++r)
    for (std::size_t c = 0; c < C; ++c) mu[c] += double(x[r * C + c]);
  for (std::size_t c = 0; c < C; ++c) mu[c] /= double(M);
  for (std::size_t r = 0; r < M; ++r)
    for (std::size_t c = 0; c < C; ++c) {
      const double d = double(x[r * C + c]) - mu[c];
      var[c] += d * d;
    }
  for (std::size_t c = 0; c < C; ++c)
    inv_std[c] = static_cast<T>(1.0 / std::sqrt(var[c] / double(M) + double(eps)));
  for (std::size_t r = 0; r < M; ++r)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t k = r * C + c;
      xhat[k] = static_cast<T>((double(x[k]) - mu[c]) * double(inv_std[c]));
      out[k] = gm[c] * xhat[k] + bt[c];
    }
  const std::size_t ia = a.id, ig = gamma.id, ib = beta.id;
  const bool rg =
      a.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  return a.tape->push(
      s, std::move(out), rg,
      [ia, ig, ib, M, C, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Tape<T>& t, std::size_t self) {
        const auto& g = t.node(self).grad;
        const auto& gm = t.node(ig).value;
        if (t.node(ig).requires_grad || t.node(ib).requires_grad) {
          std::vector<T> dg(C, T(0)), db(C, T(0));
          for (std::size_t r = 0; r < M; ++r)
            for (std::size_t c = 0; c < C; ++c) {
              dg[c] += g[r * C + c] * xhat[r * C + c];
              db[c] += g[r * C + c];
            }
          if (t.node(ig).requires_grad) {
            auto& G = t.grad(ig);
            for (std::size_t c = 0; c < C; ++c) G[c] += dg[c];
          }
          if (t.node(ib).requires_grad) {
            auto& B = t.grad(ib);
            for (std::size_t c = 0; c < C; ++c) B[c] += db[c];
          }
        }
        if (!t.node(ia).requires_grad) return;
        // dx = gamma * inv_std * (g - mean(g) - xhat * mean(g * xhat))
        std::vector<T> mg(C, T(0)), mgx(C, T(0));
        for (std::size_t r = 0; r < M; ++r)
          for (std::size_t c = 0; c < C; ++c) {
            mg[c] += g[r * C + c];
            mgx[c] += g[r * C + c] * xhat[r * C + c];
          }
        for (std::size_t c = 0; c < C; ++c) {
          mg[c] /= static_cast<T>(M);
          mgx[c] /= static_cast<T>(M);
        }
        auto& ga = t.grad(ia);
        for (std::size_t r = 0; r < M; ++r)
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t k = r * C + c;
            ga[k] += gm[c] * inv_std[c] * (g[k] - mg[c] - xhat[k] * mgx[c]);
          }
      });
}

/// Rotates rows of P [N x 3] by the rotation of q / |q| (q has 4 entries,
/// w first). Differentiable in both q and P.
template <class T>
Var<T> rotate_by_quaternion(const Var<T>& q, const Var<T>& P) {
  detail::same_tape(q, P);
  if (q.size() != 4 || P.shape().size() != 2 || P.shape()[1] != 3)
    throw ContractViolation("rotate_by_quaternion: shape mismatch " +
                            to_string(q.shape()) + " vs " +
                            to_string(P.shape()));
  const std::size_t N = P.shape()[0];
  const auto qv = q.value();
  const T n2 = qv[0] * qv[0] + qv[1] * qv[1] + qv[2] * qv[2] + qv[3] * qv[3];
  if (!(n2 > T(0)))
    throw NumericalError("rotate_by_quaternion: zero quaternion");
  // R(q) = M(q) / |q|^2 with M quadratic in q.
  auto quad = [](const T* v) {
    const T w = v[0], x = v[1], y = v[2], z = v[3];
    return std::array<T, 9>{w * w + x * x - y * y - z * z, 2 * (x * y - w * z),
                            2 * (x * z + w * y), 2 * (x * y + w * z),
                            w * w - x * x + y * y - z * z, 2 * (y * z - w * x),
                            2 * (x * z - w * y), 2 * (y * z + w * x),
                            w * w - x * x - y * y + z * z};
  };
  const auto Mq = quad(qv.data());
  std::array<T, 9> R;
  for (std::size_t k = 0; k < 9; ++k) R[k] = Mq[k] / n2;
  const auto p = P.value();
  std::vector<T> out(N * 3);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t r = 0; r < 3; ++r)
      out[3 * i + r] = R[3 * r] * p[3 * i] + R[3 * r + 1] * p[3 * i + 1] +
                       R[3 * r + 2] * p[3 * i + 2];
  const std::size_t iq = q.id, ip = P.id;
  return q.tape->push(
      {N, 3}, std::move(out), q.requires_grad() || P.requires_grad(),
      [iq, ip, N, R, Mq, n2](Tape<T>& t, std::size_t self) {
        const auto& g = t.node(self).grad;
        const auto& p = t.node(ip).value;
        if (t.node(ip).requires_grad) {
          auto& gp = t.grad(ip);
          for (std::size_t i = 0; i < N; ++i)
            for (std::size_t r = 0; r < 3; ++r)
              for (std::size_t c = 0; c < 3; ++c)
                gp[3 * i + c] += R[3 * r + c] * g[3 * i + r];
        }
        if (!t.node(iq).requires_grad) return;
        // dL/dR_rc = sum_i g_ir p_ic
        std::array<T, 9> dR{};
        for (std::size_t i = 0; i < N; ++i)
          for (std::size_t r = 0; r < 3; ++r)
            for (std::size_t c = 0; c < 3; ++c)
              dR[3 * r + c] += g[3 * i + r] * p[3 * i + c];
        const auto& qv = t.node(iq).value;
        const T w = qv[0], x = qv[1], y = qv[2], z = qv[3];
        // dM/dq_k for k = w, x, y, z.
        const std::array<std::array<T, 9>, 4> dM{{
            {2 * w, -2 * z, 2 * y, 2 * z, 2 * w, -2 * x, -2 * y, 2 * x, 2 * w},
            {2 * x, 2 * y, 2 * z, 2 * y, -2 * x, -2 * w, 2 * z, 2 * w, -2 * x},
            {-2 * y, 2 * x, 2 * w, 2 * x, 2 * y, 2 * z, -2 * w, 2 * z, -2 * y},
            {-2 * z, -2 * w, 2 * x, 2 * w, -2 * z, 2 * y, 2 * x, 2 * y, 2 * z},
        }};
        T dRM = 0;  // sum dR * M
        for (std::size_t k = 0; k < 9; ++k) dRM += dR[k] * Mq[k];
        auto& gq = t.grad(iq);
        for (std::size_t k = 0; k < 4; ++k) {
          T s = 0;
          for (std::size_t e = 0; e < 9; ++e) s += dR[e] * dM[k][e];
          gq[k] += s / n2 - 2 * qv[k] * dRM / (n2 * n2);
        }
      });
}

}  // namespace eqpose::ad
