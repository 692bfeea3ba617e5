#include "gtnp/optim.hpp"

#include <cmath>

namespace gtnp {

void AdamWConfig::validate() const {
  if (lr < 0) throw ConfigError("learning rate must be non-negative");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(eps > 0)) throw ConfigError("Adam eps must be positive");
  if (weight_decay < 0) throw ConfigError("weight decay must be non-negative");
  if (clip < 0) throw ConfigError("gradient clip must be non-negative");
}

template <std::floating_point T>
double global_grad_norm(const ParamStore<T>& store) {
  double s = 0;
  for (const auto& p : store.params()) {
    for (T g : p.tensor.grad()) s += double(g) * double(g);
  }
  return std::sqrt(s);
}

template <std::floating_point T>
StepReport AdamW::step(ParamStore<T>& store) {
  StepReport r;
  r.grad_norm = global_grad_norm(store);
  if (!std::isfinite(r.grad_norm)) {
    r.skipped = true;
    ++skipped_;
    return r;
  }
  auto& params = store.params();
  if (m_.size() != params.size()) {
    if (!m_.empty()) throw ContractError("optimizer state was built for a different parameter set");
    for (const auto& p : params) {
      m_.emplace_back(p.tensor.numel(), 0.0);
      v_.emplace_back(p.tensor.numel(), 0.0);
    }
  }
  const double factor = cfg_.clip > 0 && r.grad_norm > cfg_.clip ? cfg_.clip / r.grad_norm : 1.0;
  r.clipped_norm = r.grad_norm * factor;
  ++t_;
  const double bc1 = 1 - std::pow(cfg_.beta1, double(t_));
  const double bc2 = 1 - std::pow(cfg_.beta2, double(t_));
  double upd = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& tensor = params[i].tensor;
    if (m_[i].size() != tensor.numel()) throw ContractError("optimizer state shape mismatch for " + params[i].name);
    auto w = tensor.mutable_data();
    auto g = tensor.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = double(g[j]) * factor;
      m[j] = cfg_.beta1 * m[j] + (1 - cfg_.beta1) * gj;
      v[j] = cfg_.beta2 * v[j] + (1 - cfg_.beta2) * gj * gj;
      const double old = double(w[j]);
      const double step = cfg_.lr * ((m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps) + cfg_.weight_decay * old);
      w[j] = T(old - step);
      upd += step * step;
    }
  }
  r.update_norm = std::sqrt(upd);
  return r;
}

nlohmann::json AdamW::state_to_json() const {
  return {{"t", t_}, {"skipped", skipped_}, {"m", m_}, {"v", v_}};
}

void AdamW::state_from_json(const nlohmann::json& j) {
  try {
    t_ = j.at("t").get<std::size_t>();
    skipped_ = j.at("skipped").get<std::size_t>();
    m_ = j.at("m").get<std::vector<std::vector<double>>>();
    v_ = j.at("v").get<std::vector<std::vector<double>>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad optimizer state: ") + e.what());
  }
  if (m_.size() != v_.size()) throw FormatError("optimizer state moments disagree");
}

template double global_grad_norm(const ParamStore<float>&);
template double global_grad_norm(const ParamStore<double>&);
template StepReport AdamW::step(ParamStore<float>&);
template StepReport AdamW::step(ParamStore<double>&);

}  // namespace gtnp
