#pragma once

#include <random>
#include <string>
#include <vector>

#include "deva/ops.hpp"
#include "deva/parameter.hpp"

namespace deva {

enum class Activation { none, relu };

/// Whether a forward pass is a training pass, and the generator dropout draws
/// from. Evaluation and gradient checks use the default (no dropout).
struct RunMode {
  bool training = false;
  std::mt19937_64* rng = nullptr;

  static RunMode eval() { return {}; }
  static RunMode train(std::mt19937_64& rng) { return {true, &rng}; }
};

template <typename T>
Tensor<T> apply_dropout(const Tensor<T>& x, double p, const RunMode& mode);

/// y = act(x W + b), W is [in x out].
template <typename T>
class LinearLayer {
 public:
  LinearLayer() = default;
  LinearLayer(std::size_t in, std::size_t out, Activation act, std::mt19937_64& init_rng);

  Tensor<T> forward(const Tensor<T>& x) const;
  void collect(const std::string& prefix, ParameterList<T>& out) const;

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }

  // Overwrites the weight with the identity (in == out) plus N(0, noise) entries.
  void set_identity(double noise, std::mt19937_64& rng);

  Tensor<T> weight;
  Tensor<T> bias;
  Activation activation = Activation::none;
};

/// Multi-head attention with bias-free projections W_Q, W_K, W_V, W_O (d x d).
template <typename T>
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t d, std::size_t heads, double dropout, std::mt19937_64& init_rng);

  /// q_in: [B, Lq, d] or [Lq, d]; kv_in: [B, Lk, d] or [Lk, d] (same rank as q_in).
  /// `weights_out`, when given, receives [B, heads, Lq, Lk] attention probabilities.
  Tensor<T> forward(const Tensor<T>& q_in, const Tensor<T>& kv_in, const RunMode& mode,
                    std::vector<T>* weights_out = nullptr) const;
  void collect(const std::string& prefix, ParameterList<T>& out) const;

  std::size_t width() const { return w_q.dim(0); }

  std::size_t heads = 1;
  double dropout = 0.0;
  Tensor<T> w_q, w_k, w_v, w_o;
};

/// Pre-norm encoder layer: h = x + attn(ln1(x)); y = h + ffn(ln2(h)).
template <typename T>
class TransformerEncoderLayer {
 public:
  TransformerEncoderLayer() = default;
  TransformerEncoderLayer(std::size_t d, std::size_t heads, std::size_t ffn_factor, double dropout,
                          std::mt19937_64& init_rng);

  Tensor<T> forward(const Tensor<T>& x, const RunMode& mode) const;
  void collect(const std::string& prefix, ParameterList<T>& out) const;

  /// Zeroes the attention output projection and the second FFN layer so the
  /// layer reduces to the identity.
  void zero_residual_branches();

  MultiHeadAttention<T> attn;
  LinearLayer<T> ff1, ff2;
  Tensor<T> ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
  double dropout = 0.0;
  static constexpr double kLayerNormEps = 1e-5;
};

}  // namespace deva
