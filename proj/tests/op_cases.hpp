#pragma once

#include <functional>
#include <random>
#include <vector>

#include "gtnp/tensor.hpp"
#include "test_util.hpp"

namespace gtnp::testing {

/// One differentiable op with a generator for valid inputs.
struct OpCase {
  const char* name;
  std::function<Tensor<double>(const Tensor<double>&, std::mt19937_64&)> input;
  std::function<Tensor<double>(const Tensor<double>&)> f;
};

/// Random linear functional of y, so every output entry reaches the loss.
inline Tensor<double> weighted(const Tensor<double>& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(y, randn(y.shape(), rng)));
}

/// Every differentiable tensor op, with fixed side operands drawn from rng.
inline std::vector<OpCase> op_cases(std::mt19937_64& rng) {
  using T = Tensor<double>;
  const auto other = randn({3, 4}, rng);
  const auto row = randn({4}, rng);
  const auto pos = randu({3, 4}, rng, 0.5, 2.0);
  const auto mat = randn({4, 5}, rng);
  const auto bias = randn({5}, rng);
  const auto gamma = randn({4}, rng), beta = randn({4}, rng);
  const std::vector<std::int64_t> gidx{2, -1, 0, 2};
  const std::vector<std::uint8_t> fmask{0, 1, 0, 0, 1, 0, 0, 0, 0, 0, 1, 0};
  auto any = [](Shape s) { return [s](const T&, std::mt19937_64& r) { return randn(s, r); }; };
  auto positive = [](Shape s) { return [s](const T&, std::mt19937_64& r) { return randu(s, r, 0.5, 2.0); }; };
  auto kinkfree = [](Shape s) {
    return [s](const T&, std::mt19937_64& r) {
      auto x = randn(s, r);
      auto v = x.mutable_data();
      for (auto& e : v) e = e >= 0 ? e + 0.05 : e - 0.05;
      return x;
    };
  };
  AttentionMask amask(1, 3, 4);
  amask.set(0, 1, 2, false);
  for (std::size_t j = 0; j < 4; ++j) amask.set(0, 2, j, false);  // fully masked row
  const auto qq = randn({1, 3, 4}, rng), kk = randn({1, 4, 4}, rng), vv = randn({1, 4, 6}, rng);

  return {
      {"add", any({3, 4}), [=](const T& x) { return add(x, row); }},
      {"add_bcast_rhs", any({4}), [=](const T& x) { return add(other, x); }},
      {"sub", any({3, 4}), [=](const T& x) { return sub(other, x); }},
      {"mul", any({3, 4}), [=](const T& x) { return mul(x, other); }},
      {"mul_self", any({3, 4}), [=](const T& x) { return mul(x, x); }},
      {"div_num", any({3, 4}), [=](const T& x) { return div(x, pos); }},
      {"div_den", positive({3, 4}), [=](const T& x) { return div(other, x); }},
      {"neg", any({3, 4}), [=](const T& x) { return neg(x); }},
      {"scale", any({3, 4}), [=](const T& x) { return scale(x, -1.7); }},
      {"add_scalar", any({3, 4}), [=](const T& x) { return add_scalar(x, 0.3); }},
      {"matmul_lhs", any({3, 4}), [=](const T& x) { return matmul(x, mat); }},
      {"matmul_rhs", any({4, 5}), [=](const T& x) { return matmul(other, x); }},
      {"matmul_batched", any({2, 3, 4}), [=](const T& x) { return matmul(x, mat); }},
      {"linear_x", any({3, 4}), [=](const T& x) { return linear(x, mat, bias); }},
      {"linear_w", any({4, 5}), [=](const T& x) { return linear(other, x, bias); }},
      {"linear_b", any({5}), [=](const T& x) { return linear(other, mat, x); }},
      {"concat", any({3, 2}), [=](const T& x) { return concat(std::vector<T>{other, x}, 1); }},
      {"slice", any({3, 4}), [=](const T& x) { return slice(x, 1, 1, 2); }},
      {"split", any({3, 4}), [=](const T& x) { return mul(split(x, 1, {1, 3})[1], split(x, 1, {3, 1})[0]); }},
      {"permute", any({2, 3, 4}), [=](const T& x) { return permute(x, {2, 0, 1}); }},
      {"transpose", any({3, 4}), [=](const T& x) { return transpose(x, 0, 1); }},
      {"reshape", any({3, 4}), [=](const T& x) { return reshape(x, {2, 6}); }},
      {"gather_rows", any({3, 4}), [=](const T& x) { return gather_rows(x, std::span<const std::int64_t>(gidx)); }},
      {"masked_fill", any({3, 4}), [=](const T& x) { return masked_fill(x, std::span<const std::uint8_t>(fmask), -2.0); }},
      {"softmax0", any({3, 4}), [=](const T& x) { return softmax(x, 0); }},
      {"softmax1", any({3, 4}), [=](const T& x) { return softmax(x, 1); }},
      {"layer_norm", any({3, 4}), [=](const T& x) { return layer_norm(x, gamma, beta); }},
      {"layer_norm_gamma", any({4}), [=](const T& x) { return layer_norm(other, x, beta); }},
      {"layer_norm_plain", any({3, 4}), [=](const T& x) { return layer_norm(x, T(), T()); }},
      {"gelu", any({3, 4}), [=](const T& x) { return gelu(x); }},
      {"relu", kinkfree({3, 4}), [=](const T& x) { return relu(x); }},
      {"softplus", any({3, 4}), [=](const T& x) { return softplus(scale(x, 3.0)); }},
      {"exp", any({3, 4}), [=](const T& x) { return exp(x); }},
      {"log", positive({3, 4}), [=](const T& x) { return log(x); }},
      {"sqrt", positive({3, 4}), [=](const T& x) { return sqrt(x); }},
      {"square", any({3, 4}), [=](const T& x) { return square(x); }},
      {"sum", any({3, 4}), [=](const T& x) { return scale(sum(x), 1.0); }},
      {"mean", any({3, 4}), [=](const T& x) { return mean(x); }},
      {"sum_axis", any({2, 3, 4}), [=](const T& x) { return sum_axis(x, 1); }},
      {"mean_axis", any({2, 3, 4}), [=](const T& x) { return mean_axis(x, 2, true); }},
      {"sorted_sum_rows", any({5, 4}), [=](const T& x) { return sorted_sum_rows(x); }},
      {"attention_q", any({1, 3, 4}), [=](const T& x) { return attention(x, kk, vv, 2, &amask, 0.7); }},
      {"attention_k", any({1, 4, 4}), [=](const T& x) { return attention(qq, x, vv, 2, &amask, 0.7); }},
      {"attention_v", any({1, 4, 6}), [=](const T& x) { return attention(qq, kk, x, 2, &amask, 0.7); }},
  };
}

}  // namespace gtnp::testing
