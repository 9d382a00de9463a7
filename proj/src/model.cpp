#include "deva/model.hpp"

namespace deva {

namespace {

template <typename T>
MultiHeadAttention<T> make_fusion(const ModelConfig& c, std::mt19937_64& rng) {
  if (!c.ablation.use_fusion_layer) return {};
  return MultiHeadAttention<T>(c.d, c.heads, c.dropout, rng);
}

template <typename T>
LinearLayer<T> make_fallback(const ModelConfig& c, std::mt19937_64& rng) {
  if (c.ablation.use_fusion_layer) return {};
  return LinearLayer<T>(2 * c.d, c.d, Activation::none, rng);
}

}  // namespace

template <typename T>
DevaModel<T>::DevaModel(const ModelConfig& c, std::mt19937_64& init_rng)
    : cfg(c),
      encoder(c, init_rng),
      tpf(c, init_rng),
      fusion(make_fusion<T>(c, init_rng)),
      fusion_fallback(make_fallback<T>(c, init_rng)),
      head(c.d, c.task, c.num_classes, init_rng) {}

template <typename T>
ForwardTrace<T> DevaModel<T>::trace(const ModelInput& in, const RunMode& mode) const {
  auto encoded = encoder.forward(in, mode);
  auto [core, minor] = tpf.forward(encoded.h0_text, encoded.h0_audio, encoded.h0_visual, mode);
  UnifiedFeature<T> fused =
      cfg.ablation.use_fusion_layer
          ? ultimate_fusion(fusion, core, minor, mode)
          : UnifiedFeature<T>(fusion_fallback.forward(concat_last<T>({core.data(), minor.data()})),
                              Modality::text, Stage::fused, cfg.seq_len, cfg.d);
  auto preds = head.forward(fused.data());
  return ForwardTrace<T>{std::move(encoded), core, minor, fused, preds};
}

template <typename T>
Tensor<T> DevaModel<T>::forward(const ModelInput& in, const RunMode& mode) const {
  return trace(in, mode).preds;
}

template <typename T>
ParameterList<T> DevaModel<T>::parameters() const {
  ParameterList<T> out;
  encoder.collect("encoder", out);
  tpf.collect("tpf", out);
  if (cfg.ablation.use_fusion_layer) {
    fusion.collect("fusion.cma", out);
  } else {
    fusion_fallback.collect("fusion.concat_fc", out);
  }
  head.collect("head", out);
  return out;
}

template class DevaModel<float>;
template class DevaModel<double>;

}  // namespace deva
