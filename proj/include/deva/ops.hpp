#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "deva/tensor.hpp"

namespace deva {

// Differentiable operations. Every function here validates shapes and throws
// ShapeError naming the offending extents.

/// a[..., k] x b[k, n] -> [..., n]; leading dims of `a` are treated as rows.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

/// x[..., n] + bias[n]
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);

/// s * x where s is a one-element tensor (e.g. a learnable mixing weight).
template <typename T>
Tensor<T> scale_by(const Tensor<T>& x, const Tensor<T>& s);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> abs(const Tensor<T>& x);
template <typename T>
Tensor<T> square(const Tensor<T>& x);

/// Inverted dropout; identity when `training` is false or p == 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training, std::mt19937_64& rng);

/// Row-wise softmax over the last axis, stabilised by row-max subtraction.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x);

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps);

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::size_t axis);
template <typename T>
Tensor<T> concat_last(const std::vector<Tensor<T>>& xs);

/// Elements [begin, end) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end);

/// Same values under a new shape with equal element count.
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

/// [r...] -> [batch, r...], gradient summed over the new axis.
template <typename T>
Tensor<T> broadcast_leading(const Tensor<T>& x, std::size_t batch);

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& x, std::size_t axis);

/// Sum / mean of every element, returned as a one-element tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

/// Gathers rows of table[V, d]; output shape is out_leading + [d].
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int32_t> ids,
                    const Shape& out_leading);

/// Multi-head scaled dot-product attention on already-projected inputs.
/// q: [B, Lq, d], k and v: [B, Lk, d]; d is split into `heads` slices.
/// When `weights_out` is non-null it receives the attention probabilities
/// laid out as [B, heads, Lq, Lk].
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    std::size_t heads, std::vector<T>* weights_out = nullptr);

/// Mean cross-entropy of logits[N, C] against integer class labels.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

}  // namespace deva
