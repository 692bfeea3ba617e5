#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "gtnp/tensor.hpp"

namespace gtnp {

namespace {

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T, typename Bw>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::vector<NodePtr<T>> inputs,
                      const char* op, Bw&& bw) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool need = false;
  if (GradMode::enabled()) {
    for (const auto& p : inputs) need = need || p->requires_grad;
  }
  if (need) {
    node->requires_grad = true;
    node->parents = std::move(inputs);
    node->backward_fn = std::forward<Bw>(bw);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
bool wants_grad(const Tensor<T>& t) {
  return GradMode::enabled() && t.requires_grad();
}

Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast shapes " + shape_str(a) +
                           " and " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

bool is_suffix(const Shape& s, const Shape& out) {
  std::size_t first = 0;
  while (first < s.size() && s[first] == 1) ++first;
  const std::size_t len = s.size() - first;
  if (len > out.size()) return false;
  return std::equal(s.begin() + static_cast<std::ptrdiff_t>(first), s.end(),
                    out.end() - static_cast<std::ptrdiff_t>(len));
}

/// Calls f(out_index, a_index, b_index) for each element of the broadcast.
template <typename F>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b, F&& f) {
  const std::size_t n = shape_numel(out);
  const std::size_t na = shape_numel(a);
  const std::size_t nb = shape_numel(b);
  if (na == n && nb == n && is_suffix(a, out) && is_suffix(b, out)) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  if (na == n && is_suffix(b, out)) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i % nb);
    return;
  }
  if (nb == n && is_suffix(a, out)) {
    for (std::size_t i = 0; i < n; ++i) f(i, i % na, i);
    return;
  }
  const std::size_t r = out.size();
  std::vector<std::size_t> sa(r, 0), sb(r, 0);
  {
    std::size_t acc = 1;
    for (std::size_t i = a.size(); i-- > 0;) {
      const std::size_t oi = i + (r - a.size());
      sa[oi] = a[i] == 1 ? 0 : acc;
      acc *= a[i];
    }
    acc = 1;
    for (std::size_t i = b.size(); i-- > 0;) {
      const std::size_t oi = i + (r - b.size());
      sb[oi] = b[i] == 1 ? 0 : acc;
      acc *= b[i];
    }
  }
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (std::size_t d = r; d-- > 0;) {
      if (++idx[d] < out[d]) {
        ia += sa[d];
        ib += sb[d];
        break;
      }
      ia -= sa[d] * (out[d] - 1);
      ib -= sb[d] * (out[d] - 1);
      idx[d] = 0;
    }
  }
}

// C (m x n) (+)= A (m x k) * B (k x n). Each output row depends only on the
// matching row of A, so results are independent of how many rows are batched.
template <typename T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* __restrict a,
             const T* __restrict b, T* __restrict c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    T* __restrict crow = c + i * n;
    if (!accumulate) std::fill(crow, crow + n, T(0));
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* __restrict brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// D (k x n) += A^T (k x m) * G (m x n)
template <typename T>
void gemm_tn_acc(std::size_t m, std::size_t k, std::size_t n, const T* __restrict a,
                 const T* __restrict g, T* __restrict d) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* grow = g + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      T* __restrict drow = d + p * n;
      for (std::size_t j = 0; j < n; ++j) drow[j] += av * grow[j];
    }
  }
}

// D (m x k) += G (m x n) * B^T where B is (k x n)
template <typename T>
void gemm_nt_acc(std::size_t m, std::size_t n, std::size_t k, const T* g, const T* b, T* d) {
  std::vector<T> bt(n * k);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  gemm_nn(m, n, k, g, bt.data(), d, true);
}

template <typename T, typename Fwd, typename Dydx>
Tensor<T> unary(const Tensor<T>& a, const char* op, Fwd fwd, Dydx dydx) {
  const auto& x = a.data();
  std::vector<T> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
  return make_result<T>(a.shape(), std::move(y), {a.node_ptr()}, op, [dydx](Node<T>& self) {
    auto& in = *self.parents[0];
    T* gi = in.grad_ptr();
    const T* g = self.grad.data();
    for (std::size_t i = 0; i < self.data.size(); ++i) gi[i] += g[i] * dydx(in.data[i], self.data[i]);
  });
}

struct AxisLayout {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisLayout axis_layout(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(s));
  }
  AxisLayout l;
  for (std::size_t i = 0; i < axis; ++i) l.outer *= s[i];
  l.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) l.inner *= s[i];
  return l;
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise binary

template <std::floating_point T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape out = broadcast_shapes(a.shape(), b.shape(), "add");
  std::vector<T> y(shape_numel(out));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for_each_broadcast(out, a.shape(), b.shape(),
                     [&](std::size_t i, std::size_t ia, std::size_t ib) { y[i] = pa[ia] + pb[ib]; });
  return make_result<T>(out, std::move(y), {a.node_ptr(), b.node_ptr()}, "add", [](Node<T>& self) {
    auto& na = *self.parents[0];
    auto& nb = *self.parents[1];
    const T* g = self.grad.data();
    T* ga = na.requires_grad ? na.grad_ptr() : nullptr;
    T* gb = nb.requires_grad ? nb.grad_ptr() : nullptr;
    for_each_broadcast(self.shape, na.shape, nb.shape, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      if (ga) ga[ia] += g[i];
      if (gb) gb[ib] += g[i];
    });
  });
}

template <std::floating_point T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape out = broadcast_shapes(a.shape(), b.shape(), "sub");
  std::vector<T> y(shape_numel(out));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for_each_broadcast(out, a.shape(), b.shape(),
                     [&](std::size_t i, std::size_t ia, std::size_t ib) { y[i] = pa[ia] - pb[ib]; });
  return make_result<T>(out, std::move(y), {a.node_ptr(), b.node_ptr()}, "sub", [](Node<T>& self) {
    auto& na = *self.parents[0];
    auto& nb = *self.parents[1];
    const T* g = self.grad.data();
    T* ga = na.requires_grad ? na.grad_ptr() : nullptr;
    T* gb = nb.requires_grad ? nb.grad_ptr() : nullptr;
    for_each_broadcast(self.shape, na.shape, nb.shape, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      if (ga) ga[ia] += g[i];
      if (gb) gb[ib] -= g[i];
    });
  });
}

template <std::floating_point T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape out = broadcast_shapes(a.shape(), b.shape(), "mul");
  std::vector<T> y(shape_numel(out));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for_each_broadcast(out, a.shape(), b.shape(),
                     [&](std::size_t i, std::size_t ia, std::size_t ib) { y[i] = pa[ia] * pb[ib]; });
  return make_result<T>(out, std::move(y), {a.node_ptr(), b.node_ptr()}, "mul", [](Node<T>& self) {
    auto& na = *self.parents[0];
    auto& nb = *self.parents[1];
    const T* g = self.grad.data();
    T* ga = na.requires_grad ? na.grad_ptr() : nullptr;
    T* gb = nb.requires_grad ? nb.grad_ptr() : nullptr;
    const T* pa = na.data.data();
    const T* pb = nb.data.data();
    for_each_broadcast(self.shape, na.shape, nb.shape, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      if (ga) ga[ia] += g[i] * pb[ib];
      if (gb) gb[ib] += g[i] * pa[ia];
    });
  });
}

template <std::floating_point T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape out = broadcast_shapes(a.shape(), b.shape(), "div");
  std::vector<T> y(shape_numel(out));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for_each_broadcast(out, a.shape(), b.shape(),
                     [&](std::size_t i, std::size_t ia, std::size_t ib) { y[i] = pa[ia] / pb[ib]; });
  return make_result<T>(out, std::move(y), {a.node_ptr(), b.node_ptr()}, "div", [](Node<T>& self) {
    auto& na = *self.parents[0];
    auto& nb = *self.parents[1];
    const T* g = self.grad.data();
    T* ga = na.requires_grad ? na.grad_ptr() : nullptr;
    T* gb = nb.requires_grad ? nb.grad_ptr() : nullptr;
    const T* pb = nb.data.data();
    const T* py = self.data.data();
    for_each_broadcast(self.shape, na.shape, nb.shape, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      if (ga) ga[ia] += g[i] / pb[ib];
      if (gb) gb[ib] -= g[i] * py[i] / pb[ib];
    });
  });
}

template <std::floating_point T>
Tensor<T> neg(const Tensor<T>& a) {
  return scale(a, T(-1));
}

template <std::floating_point T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  return unary(
      a, "scale", [factor](T x) { return x * factor; }, [factor](T, T) { return factor; });
}

template <std::floating_point T>
Tensor<T> add_scalar(const Tensor<T>& a, T value) {
  return unary(
      a, "add_scalar", [value](T x) { return x + value; }, [](T, T) { return T(1); });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <std::floating_point T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw DimensionError("matmul: operands need rank >= 2, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.shape()[a.rank() - 2];
  const std::size_t k = a.shape()[a.rank() - 1];
  const std::size_t k2 = b.shape()[b.rank() - 2];
  const std::size_t n = b.shape()[b.rank() - 1];
  if (k != k2) {
    throw DimensionError("matmul: inner dimensions differ for shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  const Shape ba(a.shape().begin(), a.shape().end() - 2);
  const Shape bb(b.shape().begin(), b.shape().end() - 2);
  Shape out = broadcast_shapes(ba, bb, "matmul");
  struct Triple {
    std::size_t o, a, b;
  };
  std::vector<Triple> batches;
  for_each_broadcast(out, ba, bb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
    batches.push_back({o, ia, ib});
  });
  out.push_back(m);
  out.push_back(n);
  std::vector<T> y(shape_numel(out));
  for (const auto& t : batches) {
    gemm_nn(m, k, n, a.data().data() + t.a * m * k, b.data().data() + t.b * k * n,
            y.data() + t.o * m * n, false);
  }
  return make_result<T>(std::move(out), std::move(y), {a.node_ptr(), b.node_ptr()}, "matmul",
                        [batches, m, k, n](Node<T>& self) {
                          auto& na = *self.parents[0];
                          auto& nb = *self.parents[1];
                          const T* g = self.grad.data();
                          for (const auto& t : batches) {
                            if (na.requires_grad) {
                              gemm_nt_acc(m, n, k, g + t.o * m * n, nb.data.data() + t.b * k * n,
                                          na.grad_ptr() + t.a * m * k);
                            }
                            if (nb.requires_grad) {
                              gemm_tn_acc(m, k, n, na.data.data() + t.a * m * k, g + t.o * m * n,
                                          nb.grad_ptr() + t.b * k * n);
                            }
                          }
                        });
}

template <std::floating_point T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (weight.rank() != 2 || x.rank() < 1 || x.shape().back() != weight.shape()[0]) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
  }
  const std::size_t in = weight.shape()[0];
  const std::size_t outw = weight.shape()[1];
  if (bias.defined() && (bias.rank() != 1 || bias.shape()[0] != outw)) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
  }
  const std::size_t rows = x.numel() / std::max<std::size_t>(in, 1);
  Shape out = x.shape();
  out.back() = outw;
  std::vector<T> y(rows * outw);
  gemm_nn(rows, in, outw, x.data().data(), weight.data().data(), y.data(), false);
  if (bias.defined()) {
    const T* pb = bias.data().data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < outw; ++j) y[r * outw + j] += pb[j];
  }
  std::vector<NodePtr<T>> inputs{x.node_ptr(), weight.node_ptr()};
  if (bias.defined()) inputs.push_back(bias.node_ptr());
  return make_result<T>(std::move(out), std::move(y), std::move(inputs), "linear",
                        [rows, in, outw](Node<T>& self) {
                          auto& nx = *self.parents[0];
                          auto& nw = *self.parents[1];
                          const T* g = self.grad.data();
                          if (nx.requires_grad) gemm_nt_acc(rows, outw, in, g, nw.data.data(), nx.grad_ptr());
                          if (nw.requires_grad) gemm_tn_acc(rows, in, outw, nx.data.data(), g, nw.grad_ptr());
                          if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
                            T* gb = self.parents[2]->grad_ptr();
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t j = 0; j < outw; ++j) gb[j] += g[r * outw + j];
                          }
                        });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <std::floating_point T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw DimensionError("concat: axis out of range for " + shape_str(s0));
  Shape out = s0;
  out[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == s0[i];
    if (!ok) throw DimensionError("concat: shapes " + shape_str(s0) + " and " + shape_str(s) + " differ off-axis");
    out[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= out[i];
  for (std::size_t i = axis + 1; i < out.size(); ++i) inner *= out[i];
  const std::size_t row = out[axis] * inner;
  std::vector<T> y(shape_numel(out));
  std::vector<std::size_t> widths;
  std::vector<NodePtr<T>> inputs;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[axis] * inner;
    const T* src = p.data().data();
    for (std::size_t o = 0; o < outer; ++o) std::copy(src + o * w, src + (o + 1) * w, y.data() + o * row + offset);
    offset += w;
    widths.push_back(w);
    inputs.push_back(p.node_ptr());
  }
  return make_result<T>(std::move(out), std::move(y), std::move(inputs), "concat",
                        [widths, outer, row](Node<T>& self) {
                          std::size_t off = 0;
                          for (std::size_t i = 0; i < widths.size(); ++i) {
                            auto& np = *self.parents[i];
                            const std::size_t w = widths[i];
                            if (np.requires_grad) {
                              T* gp = np.grad_ptr();
                              for (std::size_t o = 0; o < outer; ++o) {
                                const T* g = self.grad.data() + o * row + off;
                                for (std::size_t j = 0; j < w; ++j) gp[o * w + j] += g[j];
                              }
                            }
                            off += w;
                          }
                        });
}

template <std::floating_point T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t length) {
  const AxisLayout l = axis_layout(a.shape(), axis, "slice");
  if (start + length > l.len) {
    throw DimensionError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") exceeds axis of shape " + shape_str(a.shape()));
  }
  Shape out = a.shape();
  out[axis] = length;
  std::vector<T> y(shape_numel(out));
  const T* src = a.data().data();
  for (std::size_t o = 0; o < l.outer; ++o) {
    std::copy(src + (o * l.len + start) * l.inner, src + (o * l.len + start + length) * l.inner,
              y.data() + o * length * l.inner);
  }
  return make_result<T>(std::move(out), std::move(y), {a.node_ptr()}, "slice", [l, start, length](Node<T>& self) {
    T* gp = self.parents[0]->grad_ptr();
    const T* g = self.grad.data();
    for (std::size_t o = 0; o < l.outer; ++o) {
      T* dst = gp + (o * l.len + start) * l.inner;
      const T* s = g + o * length * l.inner;
      for (std::size_t j = 0; j < length * l.inner; ++j) dst[j] += s[j];
    }
  });
}

template <std::floating_point T>
std::vector<Tensor<T>> split(const Tensor<T>& a, std::size_t axis, const std::vector<std::size_t>& sizes) {
  std::vector<Tensor<T>> out;
  std::size_t start = 0;
  for (auto s : sizes) {
    out.push_back(slice(a, axis, start, s));
    start += s;
  }
  if (start != a.dim(axis)) throw DimensionError("split: sizes do not cover axis of " + shape_str(a.shape()));
  return out;
}

template <std::floating_point T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& perm) {
  const Shape& s = a.shape();
  const std::size_t r = s.size();
  if (perm.size() != r) throw DimensionError("permute: permutation rank mismatch for " + shape_str(s));
  std::vector<bool> seen(r, false);
  for (auto p : perm) {
    if (p >= r || seen[p]) throw DimensionError("permute: invalid permutation for " + shape_str(s));
    seen[p] = true;
  }
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * s[i];
  Shape out(r);
  std::vector<std::size_t> step(r);
  for (std::size_t i = 0; i < r; ++i) {
    out[i] = s[perm[i]];
    step[i] = in_stride[perm[i]];
  }
  const std::size_t n = a.numel();
  std::vector<std::size_t> src_index(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < n; ++i) {
    src_index[i] = off;
    for (std::size_t d = r; d-- > 0;) {
      if (++idx[d] < out[d]) {
        off += step[d];
        break;
      }
      off -= step[d] * (out[d] - 1);
      idx[d] = 0;
    }
  }
  std::vector<T> y(n);
  const T* src = a.data().data();
  for (std::size_t i = 0; i < n; ++i) y[i] = src[src_index[i]];
  return make_result<T>(std::move(out), std::move(y), {a.node_ptr()}, "permute",
                        [src_index = std::move(src_index)](Node<T>& self) {
                          T* gp = self.parents[0]->grad_ptr();
                          const T* g = self.grad.data();
                          for (std::size_t i = 0; i < src_index.size(); ++i) gp[src_index[i]] += g[i];
                        });
}

template <std::floating_point T>
Tensor<T> transpose(const Tensor<T>& a, std::size_t axis0, std::size_t axis1) {
  std::vector<std::size_t> perm(a.rank());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  if (axis0 >= a.rank() || axis1 >= a.rank()) throw DimensionError("transpose: axis out of range for " + shape_str(a.shape()));
  std::swap(perm[axis0], perm[axis1]);
  return permute(a, perm);
}

template <std::floating_point T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<T> y(a.data().begin(), a.data().end());
  return make_result<T>(std::move(shape), std::move(y), {a.node_ptr()}, "reshape", [](Node<T>& self) {
    T* gp = self.parents[0]->grad_ptr();
    for (std::size_t i = 0; i < self.grad.size(); ++i) gp[i] += self.grad[i];
  });
}

template <std::floating_point T>
Tensor<T> gather_rows(const Tensor<T>& a, std::span<const std::int64_t> index) {
  if (a.rank() < 1) throw DimensionError("gather_rows: scalar input");
  const std::size_t rows = a.shape()[0];
  std::size_t width = 1;
  for (std::size_t i = 1; i < a.rank(); ++i) width *= a.shape()[i];
  Shape out = a.shape();
  out[0] = index.size();
  std::vector<T> y(index.size() * width, T(0));
  const T* src = a.data().data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto r = index[i];
    if (r < -1 || r >= static_cast<std::int64_t>(rows)) {
      throw DimensionError("gather_rows: index " + std::to_string(r) + " out of range for shape " +
                           shape_str(a.shape()));
    }
    if (r >= 0) std::copy(src + r * width, src + (r + 1) * width, y.data() + i * width);
  }
  std::vector<std::int64_t> idx(index.begin(), index.end());
  return make_result<T>(std::move(out), std::move(y), {a.node_ptr()}, "gather_rows",
                        [idx = std::move(idx), width](Node<T>& self) {
                          T* gp = self.parents[0]->grad_ptr();
                          const T* g = self.grad.data();
                          for (std::size_t i = 0; i < idx.size(); ++i) {
                            if (idx[i] < 0) continue;
                            T* dst = gp + idx[i] * width;
                            const T* s = g + i * width;
                            for (std::size_t j = 0; j < width; ++j) dst[j] += s[j];
                          }
                        });
}

template <std::floating_point T>
Tensor<T> masked_fill(const Tensor<T>& a, std::span<const std::uint8_t> mask, T value) {
  if (mask.size() != a.numel()) {
    throw DimensionError("masked_fill: mask of " + std::to_string(mask.size()) + " entries for shape " +
                         shape_str(a.shape()));
  }
  std::vector<T> y(a.data().begin(), a.data().end());
  for (std::size_t i = 0; i < y.size(); ++i)
    if (mask[i]) y[i] = value;
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  return make_result<T>(a.shape(), std::move(y), {a.node_ptr()}, "masked_fill", [m = std::move(m)](Node<T>& self) {
    T* gp = self.parents[0]->grad_ptr();
    for (std::size_t i = 0; i < m.size(); ++i)
      if (!m[i]) gp[i] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Normalization and nonlinearities

template <std::floating_point T>
Tensor<T> softmax(const Tensor<T>& a, std::size_t axis) {
  const AxisLayout l = axis_layout(a.shape(), axis, "softmax");
  if (l.len == 0) throw DimensionError("softmax: empty axis " + std::to_string(axis) + " in shape " + shape_str(a.shape()));
  const T* x = a.data().data();
  std::vector<T> y(a.numel());
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.len * l.inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < l.len; ++j) mx = std::max(mx, x[base + j * l.inner]);
      if (mx == -std::numeric_limits<T>::infinity()) {
        for (std::size_t j = 0; j < l.len; ++j) y[base + j * l.inner] = T(0);
        continue;
      }
      T total = 0;
      for (std::size_t j = 0; j < l.len; ++j) {
        const T e = std::exp(x[base + j * l.inner] - mx);
        y[base + j * l.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < l.len; ++j) y[base + j * l.inner] /= total;
    }
  }
  return make_result<T>(a.shape(), std::move(y), {a.node_ptr()}, "softmax", [l](Node<T>& self) {
    T* gp = self.parents[0]->grad_ptr();
    const T* g = self.grad.data();
    const T* yv = self.data.data();
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t in = 0; in < l.inner; ++in) {
        const std::size_t base = o * l.len * l.inner + in;
        T dot = 0;
        for (std::size_t j = 0; j < l.len; ++j) dot += g[base + j * l.inner] * yv[base + j * l.inner];
        for (std::size_t j = 0; j < l.len; ++j) {
          const std::size_t i = base + j * l.inner;
          gp[i] += yv[i] * (g[i] - dot);
        }
      }
    }
  });
}

template <std::floating_point T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (x.rank() < 1) throw DimensionError("layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  if (d == 0) throw DimensionError("layer_norm: empty last axis in " + shape_str(x.shape()));
  const bool affine = gamma.defined();
  if (affine && (gamma.numel() != d || !beta.defined() || beta.numel() != d)) {
    throw DimensionError("layer_norm: affine parameters do not match last axis of " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  const T* px = x.data().data();
  std::vector<T> xhat(x.numel());
  std::vector<T> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = px + r * d;
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= T(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= T(d);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::size_t j = 0; j < d; ++j) xhat[r * d + j] = (row[j] - mu) * rs;
  }
  std::vector<T> y(xhat);
  std::vector<NodePtr<T>> inputs{x.node_ptr()};
  if (affine) {
    const T* pg = gamma.data().data();
    const T* pb = beta.data().data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < d; ++j) y[r * d + j] = xhat[r * d + j] * pg[j] + pb[j];
    inputs.push_back(gamma.node_ptr());
    inputs.push_back(beta.node_ptr());
  }
  const bool keep = GradMode::enabled() &&
                    (x.requires_grad() || (affine && (gamma.requires_grad() || beta.requires_grad())));
  if (!keep) {
    xhat.clear();
    rstd.clear();
  }
  return make_result<T>(x.shape(), std::move(y), std::move(inputs), "layer_norm",
                        [xhat = std::move(xhat), rstd = std::move(rstd), rows, d, affine](Node<T>& self) {
                          const T* g = self.grad.data();
                          auto& nx = *self.parents[0];
                          const T* pg = affine ? self.parents[1]->data.data() : nullptr;
                          std::vector<T> dxhat(d);
                          T* gg = affine && self.parents[1]->requires_grad ? self.parents[1]->grad_ptr() : nullptr;
                          T* gb = affine && self.parents[2]->requires_grad ? self.parents[2]->grad_ptr() : nullptr;
                          T* gx = nx.requires_grad ? nx.grad_ptr() : nullptr;
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T* gr = g + r * d;
                            const T* xr = xhat.data() + r * d;
                            if (gg)
                              for (std::size_t j = 0; j < d; ++j) gg[j] += gr[j] * xr[j];
                            if (gb)
                              for (std::size_t j = 0; j < d; ++j) gb[j] += gr[j];
                            if (!gx) continue;
                            T m1 = 0, m2 = 0;
                            for (std::size_t j = 0; j < d; ++j) {
                              dxhat[j] = pg ? gr[j] * pg[j] : gr[j];
                              m1 += dxhat[j];
                              m2 += dxhat[j] * xr[j];
                            }
                            m1 /= T(d);
                            m2 /= T(d);
                            for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += rstd[r] * (dxhat[j] - m1 - xr[j] * m2);
                          }
                        });
}

template <std::floating_point T>
Tensor<T> gelu(const Tensor<T>& a) {
  return unary(
      a, "gelu",
      [](T x) { return T(0.5) * x * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2))); },
      [](T x, T) {
        const T cdf = T(0.5) * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
        const T pdf = std::exp(T(-0.5) * x * x) * T(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
        return cdf + x * pdf;
      });
}

template <std::floating_point T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary(
      a, "relu", [](T x) { return x > T(0) || x != x ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <std::floating_point T>
Tensor<T> softplus(const Tensor<T>& a) {
  return unary(
      a, "softplus",
      [](T x) {
        if (x > T(20)) return x;
        if (x < T(-20)) return std::exp(x);
        return std::log1p(std::exp(x));
      },
      [](T x, T) {
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      });
}

template <std::floating_point T>
Tensor<T> exp(const Tensor<T>& a) {
  return unary(
      a, "exp", [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <std::floating_point T>
Tensor<T> log(const Tensor<T>& a) {
  return unary(
      a, "log", [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <std::floating_point T>
Tensor<T> sqrt(const Tensor<T>& a) {
  return unary(
      a, "sqrt", [](T x) { return std::sqrt(x); }, [](T, T y) { return T(0.5) / y; });
}

template <std::floating_point T>
Tensor<T> square(const Tensor<T>& a) {
  return unary(
      a, "square", [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

// ---------------------------------------------------------------------------
// Reductions

template <std::floating_point T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = 0;
  for (T v : a.data()) total += v;
  return make_result<T>(Shape{1}, std::vector<T>{total}, {a.node_ptr()}, "sum", [](Node<T>& self) {
    auto& np = *self.parents[0];
    T* gp = np.grad_ptr();
    const T g = self.grad[0];
    for (std::size_t i = 0; i < np.data.size(); ++i) gp[i] += g;
  });
}

template <std::floating_point T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.numel() == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(a), T(1) / T(a.numel()));
}

template <std::floating_point T>
Tensor<T> sum_axis(const Tensor<T>& a, std::size_t axis, bool keepdim) {
  const AxisLayout l = axis_layout(a.shape(), axis, "sum_axis");
  Shape out = a.shape();
  if (keepdim)
    out[axis] = 1;
  else
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<T> y(l.outer * l.inner, T(0));
  const T* x = a.data().data();
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t j = 0; j < l.len; ++j)
      for (std::size_t in = 0; in < l.inner; ++in) y[o * l.inner + in] += x[(o * l.len + j) * l.inner + in];
  return make_result<T>(std::move(out), std::move(y), {a.node_ptr()}, "sum_axis", [l](Node<T>& self) {
    T* gp = self.parents[0]->grad_ptr();
    const T* g = self.grad.data();
    for (std::size_t o = 0; o < l.outer; ++o)
      for (std::size_t j = 0; j < l.len; ++j)
        for (std::size_t in = 0; in < l.inner; ++in) gp[(o * l.len + j) * l.inner + in] += g[o * l.inner + in];
  });
}

template <std::floating_point T>
Tensor<T> mean_axis(const Tensor<T>& a, std::size_t axis, bool keepdim) {
  const std::size_t len = a.dim(axis);
  if (len == 0) throw DimensionError("mean_axis: empty axis in " + shape_str(a.shape()));
  return scale(sum_axis(a, axis, keepdim), T(1) / T(len));
}

template <std::floating_point T>
Tensor<T> sorted_sum_rows(const Tensor<T>& a) {
  if (a.rank() != 2) throw DimensionError("sorted_sum_rows: expected rank 2, got " + shape_str(a.shape()));
  const std::size_t n = a.shape()[0];
  const std::size_t d = a.shape()[1];
  std::vector<T> y(d, T(0));
  std::vector<T> column(n);
  const T* x = a.data().data();
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < n; ++i) column[i] = x[i * d + j];
    std::sort(column.begin(), column.end());
    T total = 0;
    for (T v : column) total += v;
    y[j] = total;
  }
  return make_result<T>(Shape{d}, std::move(y), {a.node_ptr()}, "sorted_sum_rows", [n, d](Node<T>& self) {
    T* gp = self.parents[0]->grad_ptr();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) gp[i * d + j] += self.grad[j];
  });
}

// ---------------------------------------------------------------------------
// Attention

template <std::floating_point T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                    const AttentionMask* mask, T scale_factor, std::vector<T>* weights_out) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3) {
    throw DimensionError("attention: expected rank-3 q/k/v, got " + shape_str(q.shape()) + ", " +
                         shape_str(k.shape()) + ", " + shape_str(v.shape()));
  }
  const std::size_t B = q.shape()[0], nq = q.shape()[1];
  const std::size_t nk = k.shape()[1];
  if (k.shape()[0] != B || v.shape()[0] != B || v.shape()[1] != nk || k.shape()[2] != q.shape()[2] ||
      heads == 0 || q.shape()[2] % heads != 0 || v.shape()[2] % heads != 0) {
    throw DimensionError("attention: incompatible shapes " + shape_str(q.shape()) + ", " + shape_str(k.shape()) +
                         ", " + shape_str(v.shape()) + " for " + std::to_string(heads) + " heads");
  }
  if (mask && (mask->keys != nk || (mask->batch != 1 && mask->batch != B) ||
               (mask->queries != 1 && mask->queries != nq))) {
    throw DimensionError("attention: mask (" + std::to_string(mask->batch) + ", " + std::to_string(mask->queries) +
                         ", " + std::to_string(mask->keys) + ") incompatible with queries " + shape_str(q.shape()) +
                         " and keys " + shape_str(k.shape()));
  }
  const std::size_t H = heads;
  const std::size_t dk = q.shape()[2] / H;
  const std::size_t dv = v.shape()[2] / H;
  const std::size_t wq = q.shape()[2], wv = v.shape()[2];
  const bool keep = GradMode::enabled() && (q.requires_grad() || k.requires_grad() || v.requires_grad());
  const bool store = keep || weights_out != nullptr;
  std::vector<T> probs(store ? B * H * nq * nk : 0);
  std::vector<T> row(nk);
  std::vector<std::uint8_t> vis(nk);
  std::vector<T> y(B * nq * wv, T(0));
  const T* pq = q.data().data();
  const T* pk = k.data().data();
  const T* pv = v.data().data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < nq; ++i) {
      bool any = false;
      for (std::size_t j = 0; j < nk; ++j) {
        vis[j] = mask ? static_cast<std::uint8_t>(mask->allows(b, i, j)) : 1;
        any = any || vis[j];
      }
      for (std::size_t h = 0; h < H; ++h) {
        T* prow = store ? probs.data() + ((b * H + h) * nq + i) * nk : row.data();
        if (!any) {
          std::fill(prow, prow + nk, T(0));
          continue;
        }
        const T* qi = pq + (b * nq + i) * wq + h * dk;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < nk; ++j) {
          if (!vis[j]) continue;
          const T* kj = pk + (b * nk + j) * wq + h * dk;
          T s = 0;
          for (std::size_t c = 0; c < dk; ++c) s += qi[c] * kj[c];
          s *= scale_factor;
          prow[j] = s;
          mx = std::max(mx, s);
        }
        T total = 0;
        for (std::size_t j = 0; j < nk; ++j) {
          if (!vis[j]) {
            prow[j] = T(0);
            continue;
          }
          prow[j] = std::exp(prow[j] - mx);
          total += prow[j];
        }
        const T inv = T(1) / total;
        T* yi = y.data() + (b * nq + i) * wv + h * dv;
        for (std::size_t j = 0; j < nk; ++j) {
          if (!vis[j]) continue;
          prow[j] *= inv;
          const T p = prow[j];
          const T* vj = pv + (b * nk + j) * wv + h * dv;
          for (std::size_t c = 0; c < dv; ++c) yi[c] += p * vj[c];
        }
      }
    }
  }
  if (weights_out) *weights_out = probs;
  if (!keep) probs.clear();
  return make_result<T>(Shape{B, nq, wv}, std::move(y), {q.node_ptr(), k.node_ptr(), v.node_ptr()}, "attention",
                        [probs = std::move(probs), B, nq, nk, H, dk, dv, wq, wv, scale_factor](Node<T>& self) {
                          auto& nqn = *self.parents[0];
                          auto& nkn = *self.parents[1];
                          auto& nvn = *self.parents[2];
                          const T* g = self.grad.data();
                          const T* pq = nqn.data.data();
                          const T* pk = nkn.data.data();
                          const T* pv = nvn.data.data();
                          T* gq = nqn.requires_grad ? nqn.grad_ptr() : nullptr;
                          T* gk = nkn.requires_grad ? nkn.grad_ptr() : nullptr;
                          T* gv = nvn.requires_grad ? nvn.grad_ptr() : nullptr;
                          std::vector<T> ds(nk);
                          for (std::size_t b = 0; b < B; ++b) {
                            for (std::size_t h = 0; h < H; ++h) {
                              for (std::size_t i = 0; i < nq; ++i) {
                                const T* prow = probs.data() + ((b * H + h) * nq + i) * nk;
                                const T* go = g + (b * nq + i) * wv + h * dv;
                                T dot = 0;
                                for (std::size_t j = 0; j < nk; ++j) {
                                  if (prow[j] == T(0)) {
                                    ds[j] = 0;
                                    continue;
                                  }
                                  const T* vj = pv + (b * nk + j) * wv + h * dv;
                                  T dp = 0;
                                  for (std::size_t c = 0; c < dv; ++c) dp += go[c] * vj[c];
                                  ds[j] = dp;
                                  dot += prow[j] * dp;
                                  if (gv) {
                                    T* gvj = gv + (b * nk + j) * wv + h * dv;
                                    for (std::size_t c = 0; c < dv; ++c) gvj[c] += prow[j] * go[c];
                                  }
                                }
                                const T* qi = pq + (b * nq + i) * wq + h * dk;
                                T* gqi = gq ? gq + (b * nq + i) * wq + h * dk : nullptr;
                                for (std::size_t j = 0; j < nk; ++j) {
                                  if (prow[j] == T(0)) continue;
                                  const T s = prow[j] * (ds[j] - dot) * scale_factor;
                                  const T* kj = pk + (b * nk + j) * wq + h * dk;
                                  if (gqi)
                                    for (std::size_t c = 0; c < dk; ++c) gqi[c] += s * kj[c];
                                  if (gk) {
                                    T* gkj = gk + (b * nk + j) * wq + h * dk;
                                    for (std::size_t c = 0; c < dk; ++c) gkj[c] += s * qi[c];
                                  }
                                }
                              }
                            }
                          }
                        });
}

// ---------------------------------------------------------------------------
// Explicit instantiations

#define GTNP_INSTANTIATE_OPS(T)                                                                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> neg(const Tensor<T>&);                                                                \
  template Tensor<T> scale(const Tensor<T>&, T);                                                           \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                                      \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                                   \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);                       \
  template std::vector<Tensor<T>> split(const Tensor<T>&, std::size_t, const std::vector<std::size_t>&);   \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);                           \
  template Tensor<T> transpose(const Tensor<T>&, std::size_t, std::size_t);                                \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                     \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::int64_t>);                         \
  template Tensor<T> masked_fill(const Tensor<T>&, std::span<const std::uint8_t>, T);                      \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                               \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                  \
  template Tensor<T> gelu(const Tensor<T>&);                                                               \
  template Tensor<T> relu(const Tensor<T>&);                                                               \
  template Tensor<T> softplus(const Tensor<T>&);                                                           \
  template Tensor<T> exp(const Tensor<T>&);                                                                \
  template Tensor<T> log(const Tensor<T>&);                                                                \
  template Tensor<T> sqrt(const Tensor<T>&);                                                               \
  template Tensor<T> square(const Tensor<T>&);                                                             \
  template Tensor<T> sum(const Tensor<T>&);                                                                \
  template Tensor<T> mean(const Tensor<T>&);                                                               \
  template Tensor<T> sum_axis(const Tensor<T>&, std::size_t, bool);                                        \
  template Tensor<T> mean_axis(const Tensor<T>&, std::size_t, bool);                                       \
  template Tensor<T> sorted_sum_rows(const Tensor<T>&);                                                    \
  template Tensor<T> attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t,          \
                               const AttentionMask*, T, std::vector<T>*);

GTNP_INSTANTIATE_OPS(float)
GTNP_INSTANTIATE_OPS(double)

#undef GTNP_INSTANTIATE_OPS

}  // namespace gtnp
