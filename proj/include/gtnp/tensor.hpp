#pragma once

#include <concepts>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gtnp/errors.hpp"

namespace gtnp {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Thread-local switch for graph recording. Evaluation code wraps forward
/// passes in a NoGradGuard so that no backward closures are retained.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool enabled);
};

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <std::floating_point T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // lazily allocated, same size as data
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  const char* op = "leaf";

  bool is_leaf() const { return !backward_fn; }
  T* grad_ptr() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad.data();
  }
};

/// Dense row-major array with reverse-mode differentiation support.
///
/// A Tensor is a cheap handle onto a shared graph node. Data is never
/// mutated after an op has produced it; only leaf tensors may be written
/// (the optimizer does this between steps).
template <std::floating_point T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from_vector(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  /// Writable view of a leaf tensor's values.
  std::span<T> mutable_data();
  T item() const;
  T at(std::size_t flat) const { return node_->data[flat]; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool flag);
  /// Gradient accumulator; zeros when nothing has been accumulated.
  std::span<const T> grad() const { return std::span<const T>(node_->grad_ptr(), numel()); }
  std::span<T> mutable_grad() { return std::span<T>(node_->grad_ptr(), numel()); }
  void zero_grad();

  /// Reverse-mode sweep from a scalar. Leaf gradients accumulate across calls.
  void backward() const;

  /// Value copy without graph history.
  Tensor detach() const;
  const char* op() const { return node_->op; }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Pairwise key visibility for attention. `batch` and `queries` may be 1 to
/// broadcast over that axis; `allowed` is row-major (batch, queries, keys).
struct AttentionMask {
  std::size_t batch = 1;
  std::size_t queries = 1;
  std::size_t keys = 0;
  std::vector<std::uint8_t> allowed;

  AttentionMask() = default;
  AttentionMask(std::size_t b, std::size_t q, std::size_t k, std::uint8_t fill = 1)
      : batch(b), queries(q), keys(k), allowed(b * q * k, fill) {}

  bool allows(std::size_t b, std::size_t i, std::size_t j) const {
    const std::size_t bb = batch == 1 ? 0 : b;
    const std::size_t ii = queries == 1 ? 0 : i;
    return allowed[(bb * queries + ii) * keys + j] != 0;
  }
  void set(std::size_t b, std::size_t i, std::size_t j, bool v) {
    allowed[(b * queries + i) * keys + j] = v ? 1 : 0;
  }
};

// ---------------------------------------------------------------------------
// Operations. Binary elementwise ops broadcast numpy-style.

template <std::floating_point T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <std::floating_point T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <std::floating_point T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <std::floating_point T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);
template <std::floating_point T> Tensor<T> neg(const Tensor<T>& a);
template <std::floating_point T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <std::floating_point T> Tensor<T> add_scalar(const Tensor<T>& a, T value);

/// Batched matrix product over the last two axes; leading axes broadcast.
template <std::floating_point T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// x (..., in) * weight (in, out) + bias (out). `bias` may be undefined.
template <std::floating_point T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <std::floating_point T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
template <std::floating_point T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t length);
template <std::floating_point T>
std::vector<Tensor<T>> split(const Tensor<T>& a, std::size_t axis, const std::vector<std::size_t>& sizes);
template <std::floating_point T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& perm);
template <std::floating_point T>
Tensor<T> transpose(const Tensor<T>& a, std::size_t axis0, std::size_t axis1);
template <std::floating_point T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);

/// Selects slices along axis 0. An index of -1 produces a zero slice.
template <std::floating_point T>
Tensor<T> gather_rows(const Tensor<T>& a, std::span<const std::int64_t> index);
/// Replaces entries where mask != 0 with `value`. Mask has a's element count.
template <std::floating_point T>
Tensor<T> masked_fill(const Tensor<T>& a, std::span<const std::uint8_t> mask, T value);

/// Softmax along `axis`. A slice that is entirely -inf yields zeros.
template <std::floating_point T> Tensor<T> softmax(const Tensor<T>& a, std::size_t axis);
/// Normalizes over the last axis; gamma/beta may be undefined (no affine).
template <std::floating_point T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5));

template <std::floating_point T> Tensor<T> gelu(const Tensor<T>& a);
template <std::floating_point T> Tensor<T> relu(const Tensor<T>& a);
template <std::floating_point T> Tensor<T> softplus(const Tensor<T>& a);
template <std::floating_point T> Tensor<T> exp(const Tensor<T>& a);
template <std::floating_point T> Tensor<T> log(const Tensor<T>& a);
template <std::floating_point T> Tensor<T> sqrt(const Tensor<T>& a);
template <std::floating_point T> Tensor<T> square(const Tensor<T>& a);

template <std::floating_point T> Tensor<T> sum(const Tensor<T>& a);
template <std::floating_point T> Tensor<T> mean(const Tensor<T>& a);
template <std::floating_point T>
Tensor<T> sum_axis(const Tensor<T>& a, std::size_t axis, bool keepdim = false);
template <std::floating_point T>
Tensor<T> mean_axis(const Tensor<T>& a, std::size_t axis, bool keepdim = false);
/// Column sums of a (N, D) matrix, each column reduced in ascending value
/// order so the result does not depend on row order.
template <std::floating_point T> Tensor<T> sorted_sum_rows(const Tensor<T>& a);

/// Fused multi-head scaled dot-product attention.
///
/// q: (B, Nq, H*dk), k: (B, Nk, H*dk), v: (B, Nk, H*dv) -> (B, Nq, H*dv).
/// Disallowed pairs are excluded from the softmax; a query row with no
/// visible key produces zeros. When `weights_out` is given it receives the
/// normalized weights laid out as (B, H, Nq, Nk).
template <std::floating_point T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    std::size_t heads, const AttentionMask* mask, T scale,
                    std::vector<T>* weights_out = nullptr);

}  // namespace gtnp
