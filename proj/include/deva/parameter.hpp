#pragma once

#include <string>
#include <vector>

#include "deva/tensor.hpp"

namespace deva {

/// A trainable tensor with its unique dotted path, e.g. "tpf.mfu.0.alpha".
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
using ParameterList = std::vector<Parameter<T>>;

template <typename T>
Tensor<T> make_parameter(Shape shape, std::vector<T> values) {
  return Tensor<T>::from(std::move(shape), std::move(values), true);
}

template <typename T>
void zero_grads(ParameterList<T>& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

template <typename T>
std::size_t count_elements(const ParameterList<T>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

}  // namespace deva
