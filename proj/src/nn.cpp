#include "gtnp/nn.hpp"

#include <cmath>

namespace gtnp {

std::string to_string(Init init) {
  switch (init) {
    case Init::xavier_uniform: return "xavier_uniform";
    case Init::normal_std: return "normal_std";
    case Init::zeros: return "zeros";
    case Init::ones: return "ones";
    case Init::constant: return "constant";
  }
  return "unknown";
}

template <std::floating_point T>
Tensor<T> ParamStore<T>::create(const std::string& name, Shape shape, Init init, double value) {
  if (index_.count(name)) throw ContractError("duplicate parameter name '" + name + "'");
  std::vector<T> values(shape_numel(shape), T(0));
  switch (init) {
    case Init::xavier_uniform: {
      // fan_in/fan_out from the last two axes; vectors use their length for both
      const double fan_in = shape.size() >= 2 ? double(shape[shape.size() - 2]) : double(values.size());
      const double fan_out = double(shape.back());
      const double a = std::sqrt(6.0 / (fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-a, a);
      for (auto& v : values) v = T(dist(rng_));
      break;
    }
    case Init::normal_std: {
      std::normal_distribution<double> dist(0.0, value);
      for (auto& v : values) v = T(dist(rng_));
      break;
    }
    case Init::zeros: break;
    case Init::ones: std::fill(values.begin(), values.end(), T(1)); break;
    case Init::constant: std::fill(values.begin(), values.end(), T(value)); break;
  }
  auto t = Tensor<T>::from_vector(std::move(shape), std::move(values), true);
  index_[name] = params_.size();
  params_.push_back({name, t, init});
  return t;
}

template <std::floating_point T>
const Parameter<T>& ParamStore<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
  return params_[it->second];
}

template <std::floating_point T>
std::size_t ParamStore<T>::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

template <std::floating_point T>
void ParamStore<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template <std::floating_point T>
Tensor<T> activate(const Tensor<T>& x, Activation act) {
  return act == Activation::gelu ? gelu(x) : relu(x);
}

template <std::floating_point T>
Linear<T>::Linear(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out, bool bias)
    : in_(in), out_(out) {
  weight_ = store.create(name + ".weight", {in, out}, Init::xavier_uniform);
  if (bias) bias_ = store.create(name + ".bias", {out}, Init::zeros);
}

template <std::floating_point T>
LayerNorm<T>::LayerNorm(ParamStore<T>& store, const std::string& name, std::size_t width) {
  gamma_ = store.create(name + ".gamma", {width}, Init::ones);
  beta_ = store.create(name + ".beta", {width}, Init::zeros);
}

template <std::floating_point T>
Mlp<T>::Mlp(ParamStore<T>& store, const std::string& name, std::size_t in, const std::vector<std::size_t>& hidden,
            std::size_t out, Activation act)
    : act_(act) {
  std::size_t prev = in;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    layers_.emplace_back(store, name + ".l" + std::to_string(i), prev, hidden[i]);
    prev = hidden[i];
  }
  layers_.emplace_back(store, name + ".l" + std::to_string(hidden.size()), prev, out);
}

template <std::floating_point T>
Tensor<T> Mlp<T>::operator()(const Tensor<T>& x) const {
  Tensor<T> h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i](h);
    if (i + 1 < layers_.size()) h = activate(h, act_);
  }
  return h;
}

template class ParamStore<float>;
template class ParamStore<double>;
template class Linear<float>;
template class Linear<double>;
template class LayerNorm<float>;
template class LayerNorm<double>;
template class Mlp<float>;
template class Mlp<double>;
template Tensor<float> activate(const Tensor<float>&, Activation);
template Tensor<double> activate(const Tensor<double>&, Activation);

}  // namespace gtnp
