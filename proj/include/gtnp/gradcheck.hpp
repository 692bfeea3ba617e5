#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "gtnp/nn.hpp"

namespace gtnp {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::string worst_param;  // set by the parameter-store variant
  std::size_t checked = 0;
  bool passed = true;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tol = 1e-4;
  // denominators below this magnitude are treated as absolute errors
  double floor = 1e-3;
};

/// Compares the analytic gradient of scalar f at x with central differences.
/// Relative error per entry is |a - n| / max(|a|, |n|, floor).
GradCheckReport grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                           const Tensor<double>& x, const GradCheckOptions& opts = {});

/// Same check over the parameters of a store. At most `max_entries` randomly
/// chosen entries per parameter are perturbed (0 = all).
GradCheckReport grad_check_params(const std::function<Tensor<double>()>& loss, ParamStore<double>& store,
                                  const GradCheckOptions& opts = {}, std::size_t max_entries = 0,
                                  std::uint64_t seed = 0);

}  // namespace gtnp
