#pragma once

#include <cstddef>
#include <vector>

#include "gtnp/nn.hpp"
#include "json.hpp"

namespace gtnp {

struct AdamWConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double clip = 0.5;  // global gradient norm; 0 disables clipping

  void validate() const;
};

struct StepReport {
  bool skipped = false;
  double grad_norm = 0.0;     // before clipping
  double clipped_norm = 0.0;  // after clipping
  double update_norm = 0.0;
};

/// Global L2 norm over every gradient in the store.
template <std::floating_point T>
double global_grad_norm(const ParamStore<T>& store);

/// Decoupled weight decay Adam with global-norm clipping. Moments are kept in
/// double precision whatever the parameter type.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

  /// Uses the gradients currently accumulated in the store; does not zero them.
  /// A non-finite gradient skips the update and bumps skipped().
  template <std::floating_point T>
  StepReport step(ParamStore<T>& store);

  AdamWConfig& config() { return cfg_; }
  const AdamWConfig& config() const { return cfg_; }
  std::size_t steps() const { return t_; }
  std::size_t skipped() const { return skipped_; }

  nlohmann::json state_to_json() const;
  void state_from_json(const nlohmann::json& j);

 private:
  AdamWConfig cfg_;
  std::size_t t_ = 0;
  std::size_t skipped_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace gtnp
