#include "gtnp/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace gtnp {

namespace {

double eval_scalar(const Tensor<double>& y, std::size_t index, const char* where) {
  if (y.numel() != 1) throw ContractError("grad_check: function is not scalar-valued");
  const double v = y.item();
  if (!std::isfinite(v)) {
    throw NumericError(std::string("grad_check: non-finite value at index ") + std::to_string(index) + " (" +
                       where + ")");
  }
  return v;
}

double rel_error(double a, double n, double floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

void check_options(const GradCheckOptions& opts) {
  if (!(opts.step > 0)) throw ContractError("grad_check: step must be positive");
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                           const Tensor<double>& x, const GradCheckOptions& opts) {
  check_options(opts);
  std::vector<double> base(x.data().begin(), x.data().end());
  auto leaf = Tensor<double>::from_vector(x.shape(), base, true);
  auto y = f(leaf);
  eval_scalar(y, 0, "forward");
  y.backward();
  std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    if (!std::isfinite(analytic[i])) {
      throw NumericError("grad_check: non-finite analytic gradient at index " + std::to_string(i));
    }
  }

  GradCheckReport report;
  NoGradGuard guard;
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto plus = base;
    auto minus = base;
    plus[i] += opts.step;
    minus[i] -= opts.step;
    const double fp = eval_scalar(f(Tensor<double>::from_vector(x.shape(), plus)), i, "x + step");
    const double fm = eval_scalar(f(Tensor<double>::from_vector(x.shape(), minus)), i, "x - step");
    // divide by the step actually taken after rounding
    const double numeric = (fp - fm) / (plus[i] - minus[i]);
    const double err = rel_error(analytic[i], numeric, opts.floor);
    if (err > report.max_rel_error) {
      report.max_rel_error = err;
      report.worst_index = i;
    }
    ++report.checked;
  }
  report.passed = report.max_rel_error < opts.tol;
  return report;
}

GradCheckReport grad_check_params(const std::function<Tensor<double>()>& loss, ParamStore<double>& store,
                                  const GradCheckOptions& opts, std::size_t max_entries, std::uint64_t seed) {
  check_options(opts);
  store.zero_grad();
  auto l = loss();
  eval_scalar(l, 0, "forward");
  l.backward();

  GradCheckReport report;
  std::mt19937_64 rng(seed);
  NoGradGuard guard;
  for (auto& p : store.params()) {
    const std::vector<double> analytic(p.tensor.grad().begin(), p.tensor.grad().end());
    std::vector<std::size_t> entries(analytic.size());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (max_entries && entries.size() > max_entries) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(max_entries);
    }
    auto values = p.tensor.mutable_data();
    for (auto i : entries) {
      if (!std::isfinite(analytic[i])) {
        throw NumericError("grad_check: non-finite analytic gradient at " + p.name + "[" + std::to_string(i) + "]");
      }
      const double orig = values[i];
      const double hi = orig + opts.step, lo = orig - opts.step;
      values[i] = hi;
      const double fp = eval_scalar(loss(), i, p.name.c_str());
      values[i] = lo;
      const double fm = eval_scalar(loss(), i, p.name.c_str());
      values[i] = orig;
      const double err = rel_error(analytic[i], (fp - fm) / (hi - lo), opts.floor);
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_index = i;
        report.worst_param = p.name;
      }
      ++report.checked;
    }
  }
  report.passed = report.max_rel_error < opts.tol;
  return report;
}

}  // namespace gtnp
