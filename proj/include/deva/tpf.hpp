#pragma once

#include <random>
#include <span>
#include <utility>
#include <vector>

#include "deva/config.hpp"
#include "deva/encoder.hpp"

namespace deva {

/// One minor-modality fusion unit:
///   out = post_fc(h_m_prev + alpha * CMA(h_t, h0_a) + beta * CMA(h_t, h0_v))
template <typename T>
class MFULayer {
 public:
  MFULayer(std::size_t d, std::size_t heads, double dropout, double post_fc_noise,
           std::mt19937_64& init_rng);

  Tensor<T> forward(const Tensor<T>& h_t, const Tensor<T>& h0_a, const Tensor<T>& h0_v,
                    const Tensor<T>& h_m_prev, const RunMode& mode) const;
  void collect(const std::string& prefix, ParameterList<T>& out) const;

  MultiHeadAttention<T> text_to_audio, text_to_visual;
  Tensor<T> alpha, beta;  // one element each, initialised to 1
  LinearLayer<T> post_fc;
};

/// J core-enhancement encoder layers interleaved with K = J + 1 minor fusion
/// units. MFU k is guided by the core feature after k - 1 CEU layers.
template <typename T>
class TPFStack {
 public:
  /// Throws ConfigError unless mfu_layers == ceu_layers + 1.
  TPFStack(const ModelConfig& cfg, std::mt19937_64& init_rng);

  /// Layer j (1-based) applied to the previous core feature.
  UnifiedFeature<T> ceu_forward(const UnifiedFeature<T>& h_t_prev, std::size_t j,
                                const RunMode& mode) const;
  UnifiedFeature<T> mfu_forward(const UnifiedFeature<T>& h_t, const UnifiedFeature<T>& h0_a,
                                const UnifiedFeature<T>& h0_v, const UnifiedFeature<T>& h_m_prev,
                                std::size_t k, const RunMode& mode) const;

  /// Returns (H^J_t, H^K_m).
  std::pair<UnifiedFeature<T>, UnifiedFeature<T>> forward(const UnifiedFeature<T>& h0_t,
                                                          const UnifiedFeature<T>& h0_a,
                                                          const UnifiedFeature<T>& h0_v,
                                                          const RunMode& mode) const;

  /// Initial minor state broadcast to the batch of `like`.
  UnifiedFeature<T> initial_minor(const Tensor<T>& like) const;

  void collect(const std::string& prefix, ParameterList<T>& out) const;

  std::size_t seq_len = 0;
  std::size_t width = 0;
  bool progressive = true;  // false: every MFU is guided by H0_t (no_ceu ablation)
  bool use_mfu = true;      // false: minor = H0_a + H0_v (no_mfu ablation)
  std::vector<TransformerEncoderLayer<T>> ceu;
  std::vector<MFULayer<T>> mfu;
  Tensor<T> h0_m;  // [T, d]
};

/// Cross-modal attention with the core as query and the minor state as key/value.
template <typename T>
UnifiedFeature<T> ultimate_fusion(const MultiHeadAttention<T>& block, const UnifiedFeature<T>& h_t,
                                  const UnifiedFeature<T>& h_m, const RunMode& mode);

/// Mean over T, then a linear map to one score (regression) or C logits.
template <typename T>
class PredictionHead {
 public:
  PredictionHead(std::size_t d, TaskMode task, std::size_t num_classes, std::mt19937_64& init_rng);

  /// h: [B, T, d] -> [B, out]
  Tensor<T> forward(const Tensor<T>& h) const;
  void collect(const std::string& prefix, ParameterList<T>& out) const;

  TaskMode task = TaskMode::regression;
  LinearLayer<T> fc;
};

/// Mean loss over the batch. preds: [N, 1] for mae/mse, [N, C] logits for
/// cross_entropy, whose labels must be integral class ids in [0, C).
template <typename T>
Tensor<T> compute_loss(const Tensor<T>& preds, std::span<const double> labels, LossMode mode);

}  // namespace deva
