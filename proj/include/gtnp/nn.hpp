#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "gtnp/tensor.hpp"

namespace gtnp {

enum class Init { xavier_uniform, normal_std, zeros, ones, constant };

std::string to_string(Init init);

template <std::floating_point T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
  Init init = Init::zeros;
};

/// Owns every trainable tensor of a model, keyed by a unique path-like name.
/// Iteration follows creation order.
template <std::floating_point T>
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : rng_(seed) {}

  /// `value` is the std for normal_std and the fill for constant.
  Tensor<T> create(const std::string& name, Shape shape, Init init, double value = 0.02);

  const std::vector<Parameter<T>>& params() const { return params_; }
  std::vector<Parameter<T>>& params() { return params_; }
  const Parameter<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t size() const { return params_.size(); }
  std::size_t count() const;
  void zero_grad();

 private:
  std::vector<Parameter<T>> params_;
  std::map<std::string, std::size_t> index_;
  std::mt19937_64 rng_;
};

enum class Activation { relu, gelu };

template <std::floating_point T>
Tensor<T> activate(const Tensor<T>& x, Activation act);

template <std::floating_point T>
class Linear {
 public:
  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out, bool bias = true);
  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight_, bias_); }
  const Tensor<T>& weight() const { return weight_; }
  const Tensor<T>& bias() const { return bias_; }
  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }

 private:
  Tensor<T> weight_, bias_;
  std::size_t in_ = 0, out_ = 0;
};

template <std::floating_point T>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamStore<T>& store, const std::string& name, std::size_t width);
  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma_, beta_, T(1e-5)); }

 private:
  Tensor<T> gamma_, beta_;
};

/// Point-wise feed-forward stack; the activation is applied between layers only.
template <std::floating_point T>
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParamStore<T>& store, const std::string& name, std::size_t in, const std::vector<std::size_t>& hidden,
      std::size_t out, Activation act = Activation::relu);
  Tensor<T> operator()(const Tensor<T>& x) const;
  std::size_t in_features() const { return layers_.front().in_features(); }
  std::size_t out_features() const { return layers_.back().out_features(); }
  const std::vector<Linear<T>>& layers() const { return layers_; }

 private:
  std::vector<Linear<T>> layers_;
  Activation act_ = Activation::relu;
};

}  // namespace gtnp
