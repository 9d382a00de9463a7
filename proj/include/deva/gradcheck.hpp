#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "deva/parameter.hpp"

namespace deva {

class NondeterministicLossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GradCheckEntry {
  std::string name;
  std::size_t numel = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;  // values at worst_index
  double numeric = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tol = 0.0;
  double max_rel_error = 0.0;
  bool passed = true;
};

/// Compares reverse-mode gradients with central differences
/// (f(x+h) - f(x-h)) / 2h for every element of every parameter.
/// Relative error is |a - n| / max(|a|, |n|, 1e-8). The loss must be
/// deterministic: two evaluations at the same point have to agree bitwise,
/// otherwise NondeterministicLossError is thrown.
GradCheckReport grad_check(const std::function<Tensor<double>()>& loss_fn,
                           ParameterList<double>& params, double h, double tol);

}  // namespace deva
