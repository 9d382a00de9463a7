#include "deva/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace deva {

GradCheckReport grad_check(const std::function<Tensor<double>()>& loss_fn,
                           ParameterList<double>& params, double h, double tol) {
  if (!(h > 0.0)) throw std::invalid_argument("grad_check: step must be positive");

  zero_grads(params);
  const Tensor<double> root = loss_fn();
  const double base = root.item();
  {
    NoGradGuard guard;
    const double again = loss_fn().item();
    if (again != base) {
      throw NondeterministicLossError("grad_check: loss changed between identical evaluations (" +
                                      std::to_string(base) + " vs " + std::to_string(again) +
                                      "); disable dropout");
    }
  }
  root.backward();

  GradCheckReport report;
  report.tol = tol;
  NoGradGuard guard;
  for (auto& p : params) {
    GradCheckEntry entry;
    entry.name = p.name;
    entry.numel = p.tensor.numel();
    std::vector<double> analytic(p.tensor.numel(), 0.0);
    if (p.tensor.has_grad()) std::copy(p.tensor.grad().begin(), p.tensor.grad().end(), analytic.begin());
    auto values = p.tensor.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = loss_fn().item();
      values[i] = saved - h;
      const double down = loss_fn().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic[i] - numeric) / denom;
      if (rel > entry.max_rel_error || std::isnan(rel)) {
        entry.max_rel_error = std::isnan(rel) ? INFINITY : rel;
        entry.worst_index = i;
        entry.analytic = analytic[i];
        entry.numeric = numeric;
      }
    }
    entry.passed = entry.max_rel_error <= tol;
    report.passed = report.passed && entry.passed;
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace deva
