#include "deva/tpf.hpp"

#include <cmath>

#include "deva/errors.hpp"

namespace deva {

namespace {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace

template <typename T>
MFULayer<T>::MFULayer(std::size_t d, std::size_t heads, double dropout, double post_fc_noise,
                      std::mt19937_64& init_rng)
    : text_to_audio(d, heads, dropout, init_rng),
      text_to_visual(d, heads, dropout, init_rng),
      alpha(make_parameter<T>({1}, {T(1)})),
      beta(make_parameter<T>({1}, {T(1)})),
      post_fc(d, d, Activation::none, init_rng) {
  post_fc.set_identity(post_fc_noise, init_rng);
}

template <typename T>
Tensor<T> MFULayer<T>::forward(const Tensor<T>& h_t, const Tensor<T>& h0_a, const Tensor<T>& h0_v,
                               const Tensor<T>& h_m_prev, const RunMode& mode) const {
  require_same_shape(h_t, h_m_prev, "mfu: core and minor state");
  const auto h_ta = text_to_audio.forward(h_t, h0_a, mode);
  const auto h_tv = text_to_visual.forward(h_t, h0_v, mode);
  const auto sum = add(add(h_m_prev, scale_by(h_ta, alpha)), scale_by(h_tv, beta));
  return post_fc.forward(sum);
}

template <typename T>
void MFULayer<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  text_to_audio.collect(prefix + ".cma_audio", out);
  text_to_visual.collect(prefix + ".cma_visual", out);
  out.push_back({prefix + ".alpha", alpha});
  out.push_back({prefix + ".beta", beta});
  post_fc.collect(prefix + ".post_fc", out);
}

// ---------------------------------------------------------------------------

template <typename T>
TPFStack<T>::TPFStack(const ModelConfig& cfg, std::mt19937_64& init_rng)
    : seq_len(cfg.seq_len),
      width(cfg.d),
      progressive(cfg.ablation.use_ceu),
      use_mfu(cfg.ablation.use_mfu) {
  if (cfg.mfu_layers != cfg.ceu_layers + 1) {
    throw ConfigError("tpf: MFU count K=" + std::to_string(cfg.mfu_layers) +
                      " must equal CEU count J=" + std::to_string(cfg.ceu_layers) + " plus one");
  }
  for (std::size_t j = 0; j < cfg.ceu_layers; ++j)
    ceu.emplace_back(cfg.d, cfg.heads, cfg.ffn_factor, cfg.dropout, init_rng);
  if (use_mfu) {
    for (std::size_t k = 0; k < cfg.mfu_layers; ++k)
      mfu.emplace_back(cfg.d, cfg.heads, cfg.dropout, cfg.post_fc_noise, init_rng);
    std::normal_distribution<double> dist(0.0, cfg.minor_init_std);
    std::vector<T> v(cfg.seq_len * cfg.d);
    for (auto& x : v) x = static_cast<T>(dist(init_rng));
    h0_m = make_parameter<T>({cfg.seq_len, cfg.d}, std::move(v));
  }
}

template <typename T>
UnifiedFeature<T> TPFStack<T>::ceu_forward(const UnifiedFeature<T>& h_t_prev, std::size_t j,
                                           const RunMode& mode) const {
  if (j == 0 || j > ceu.size()) {
    throw std::out_of_range("tpf: CEU layer " + std::to_string(j) + " outside 1.." +
                            std::to_string(ceu.size()));
  }
  return UnifiedFeature<T>(ceu[j - 1].forward(h_t_prev.data(), mode), Modality::text, Stage::core,
                           seq_len, width);
}

template <typename T>
UnifiedFeature<T> TPFStack<T>::mfu_forward(const UnifiedFeature<T>& h_t, const UnifiedFeature<T>& h0_a,
                                           const UnifiedFeature<T>& h0_v,
                                           const UnifiedFeature<T>& h_m_prev, std::size_t k,
                                           const RunMode& mode) const {
  if (k == 0 || k > mfu.size()) {
    throw std::out_of_range("tpf: MFU layer " + std::to_string(k) + " outside 1.." +
                            std::to_string(mfu.size()));
  }
  auto out = mfu[k - 1].forward(h_t.data(), h0_a.data(), h0_v.data(), h_m_prev.data(), mode);
  return UnifiedFeature<T>(out, Modality::audio, Stage::minor, seq_len, width);
}

template <typename T>
UnifiedFeature<T> TPFStack<T>::initial_minor(const Tensor<T>& like) const {
  const auto m = like.rank() == 3 ? broadcast_leading(h0_m, like.dim(0)) : h0_m;
  return UnifiedFeature<T>(m, Modality::audio, Stage::minor, seq_len, width);
}

template <typename T>
std::pair<UnifiedFeature<T>, UnifiedFeature<T>> TPFStack<T>::forward(const UnifiedFeature<T>& h0_t,
                                                                     const UnifiedFeature<T>& h0_a,
                                                                     const UnifiedFeature<T>& h0_v,
                                                                     const RunMode& mode) const {
  require_same_shape(h0_t.data(), h0_a.data(), "tpf: text and audio");
  require_same_shape(h0_t.data(), h0_v.data(), "tpf: text and visual");

  // Core path: H^j_t for j = 0..J.
  std::vector<UnifiedFeature<T>> core{UnifiedFeature<T>(h0_t.data(), Modality::text, Stage::core,
                                                        seq_len, width)};
  for (std::size_t j = 1; j <= ceu.size(); ++j) core.push_back(ceu_forward(core.back(), j, mode));

  if (!use_mfu) {
    UnifiedFeature<T> minor(add(h0_a.data(), h0_v.data()), Modality::audio, Stage::minor, seq_len,
                            width);
    return {core.back(), minor};
  }
  auto minor = initial_minor(h0_t.data());
  for (std::size_t k = 1; k <= mfu.size(); ++k) {
    const auto& guide = progressive ? core[k - 1] : core.front();
    minor = mfu_forward(guide, h0_a, h0_v, minor, k, mode);
  }
  return {core.back(), minor};
}

template <typename T>
void TPFStack<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  for (std::size_t j = 0; j < ceu.size(); ++j) ceu[j].collect(prefix + ".ceu." + std::to_string(j), out);
  for (std::size_t k = 0; k < mfu.size(); ++k) mfu[k].collect(prefix + ".mfu." + std::to_string(k), out);
  if (h0_m.defined()) out.push_back({prefix + ".h0_m", h0_m});
}

// ---------------------------------------------------------------------------

template <typename T>
UnifiedFeature<T> ultimate_fusion(const MultiHeadAttention<T>& block, const UnifiedFeature<T>& h_t,
                                  const UnifiedFeature<T>& h_m, const RunMode& mode) {
  const auto& d = h_t.data();
  const std::size_t r = d.rank();
  return UnifiedFeature<T>(block.forward(d, h_m.data(), mode), Modality::text, Stage::fused,
                           d.dim(r - 2), d.dim(r - 1));
}

template <typename T>
PredictionHead<T>::PredictionHead(std::size_t d, TaskMode task_, std::size_t num_classes,
                                  std::mt19937_64& init_rng)
    : task(task_),
      fc(d, task_ == TaskMode::regression ? 1 : num_classes, Activation::none, init_rng) {}

template <typename T>
Tensor<T> PredictionHead<T>::forward(const Tensor<T>& h) const {
  if (h.rank() != 3) throw ShapeError("predict: expected [B, T, d], got " + shape_str(h.shape()));
  return fc.forward(reduce_mean(h, 1));
}

template <typename T>
void PredictionHead<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  fc.collect(prefix + ".fc", out);
}

template <typename T>
Tensor<T> compute_loss(const Tensor<T>& preds, std::span<const double> labels, LossMode mode) {
  if (labels.empty()) throw std::invalid_argument("loss: empty batch");
  if (preds.rank() != 2 || preds.dim(0) != labels.size()) {
    throw ShapeError("loss: predictions " + shape_str(preds.shape()) + " for " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = labels.size();
  if (mode == LossMode::cross_entropy) {
    const std::size_t c = preds.dim(1);
    if (c < 2) throw std::invalid_argument("loss: cross_entropy needs class logits, got a single score");
    std::vector<int> ids(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double y = labels[i];
      if (y != std::floor(y) || y < 0 || y >= static_cast<double>(c))
        throw std::invalid_argument("loss: label " + std::to_string(y) + " is not a class id below " +
                                    std::to_string(c));
      ids[i] = static_cast<int>(y);
    }
    return cross_entropy(preds, std::span<const int>(ids));
  }
  if (preds.dim(1) != 1) {
    throw std::invalid_argument("loss: regression loss needs one score per sample, got " +
                                std::to_string(preds.dim(1)));
  }
  const auto target = Tensor<T>::from({n, 1}, std::vector<T>(labels.begin(), labels.end()));
  const auto diff = sub(preds, target);
  return mode == LossMode::mae ? mean(abs(diff)) : mean(square(diff));
}

template class MFULayer<float>;
template class MFULayer<double>;
template class TPFStack<float>;
template class TPFStack<double>;
template class PredictionHead<float>;
template class PredictionHead<double>;
template UnifiedFeature<float> ultimate_fusion(const MultiHeadAttention<float>&,
                                               const UnifiedFeature<float>&,
                                               const UnifiedFeature<float>&, const RunMode&);
template UnifiedFeature<double> ultimate_fusion(const MultiHeadAttention<double>&,
                                                const UnifiedFeature<double>&,
                                                const UnifiedFeature<double>&, const RunMode&);
template Tensor<float> compute_loss(const Tensor<float>&, std::span<const double>, LossMode);
template Tensor<double> compute_loss(const Tensor<double>&, std::span<const double>, LossMode);

}  // namespace deva
