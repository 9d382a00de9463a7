#pragma once

#include <optional>
#include <random>

#include "deva/encoder.hpp"
#include "deva/tpf.hpp"

namespace deva {

template <typename T>
struct ForwardTrace {
  EncodedModalities<T> encoded;
  UnifiedFeature<T> core;   // H^J_t
  UnifiedFeature<T> minor;  // H^K_m
  UnifiedFeature<T> fused;
  Tensor<T> preds;          // [B, 1] or [B, C]
};

/// Encoder, progressive fusion stack, final fusion and prediction head.
template <typename T>
class DevaModel {
 public:
  /// `cfg` must have audio_dim / visual_dim resolved when raw A/V is enabled.
  DevaModel(const ModelConfig& cfg, std::mt19937_64& init_rng);

  Tensor<T> forward(const ModelInput& in, const RunMode& mode) const;
  ForwardTrace<T> trace(const ModelInput& in, const RunMode& mode) const;

  /// Every trainable tensor with a stable dotted name, in a fixed order.
  ParameterList<T> parameters() const;

  ModelConfig cfg;
  ModalityEncoder<T> encoder;
  TPFStack<T> tpf;
  MultiHeadAttention<T> fusion;     // used when ablation.use_fusion_layer
  LinearLayer<T> fusion_fallback;   // [2d -> d] otherwise
  PredictionHead<T> head;
};

}  // namespace deva
