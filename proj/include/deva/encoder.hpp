#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "deva/config.hpp"
#include "deva/nn.hpp"

namespace deva {

enum class Modality { text, audio, visual, description };
enum class Stage { unimodal, description, enhanced, core, minor, fused };

/// A [B, T, d] (or unbatched [T, d]) feature tagged with where it came from.
/// Construction enforces the T x d trailing extents.
template <typename T>
class UnifiedFeature {
 public:
  UnifiedFeature(Tensor<T> data, Modality modality, Stage stage, std::size_t seq_len,
                 std::size_t width);

  const Tensor<T>& data() const { return data_; }
  Modality modality() const { return modality_; }
  Stage stage() const { return stage_; }

 private:
  Tensor<T> data_;
  Modality modality_;
  Stage stage_;
};

// ---------------------------------------------------------------------------
// Text

/// Lowercased tokens split on whitespace and punctuation.
std::vector<std::string> tokenize(std::string_view text);

class Vocabulary {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnk = 1;

  Vocabulary();

  /// Most frequent tokens first (ties alphabetical) until `max_size` ids.
  static Vocabulary build(std::span<const std::string> texts, std::size_t max_size);
  static Vocabulary load(const std::filesystem::path& path);
  /// Tokens in id order; the first two must be the reserved ones.
  static Vocabulary from_tokens(std::span<const std::string> tokens);
  void save(const std::filesystem::path& path) const;

  std::int32_t id(const std::string& token) const;
  const std::string& token(std::int32_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// Truncated / padded to `max_len` ids; empty text becomes one unknown token.
  std::vector<std::int32_t> encode(std::string_view text, std::size_t max_len) const;

 private:
  void add(const std::string& token);
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
};

/// Sinusoidal position table [len, d].
std::vector<double> sinusoidal_positions(std::size_t len, std::size_t d);

/// Embeds B x L ids and adds sinusoidal positions: [B, L, d].
template <typename T>
Tensor<T> embed_ids(std::span<const std::int32_t> ids, std::size_t batch, std::size_t len,
                    const Tensor<T>& table);

/// Single-utterance convenience: [max_len, d].
template <typename T>
Tensor<T> tokenize_embed(std::string_view text, const Vocabulary& vocab, const Tensor<T>& table,
                         std::size_t max_len);

// ---------------------------------------------------------------------------
// Unimodal coding and enhancement

/// raw [B, T_m, d_m] -> [B, T_m, d].
template <typename T>
Tensor<T> project(const Tensor<T>& raw, const LinearLayer<T>& proj);

/// Appends the T learnable bank rows after the sequence, encodes the joint
/// sequence, and keeps the first T output rows.
template <typename T>
UnifiedFeature<T> unify(const Tensor<T>& seq, const Tensor<T>& bank,
                        const TransformerEncoderLayer<T>& layer, Modality modality, Stage stage,
                        const RunMode& mode);

/// FC over the last-axis concatenation of `parts`; `expected_parts` is the
/// count the caller's modality path requires.
template <typename T>
UnifiedFeature<T> feature_enhance(const std::vector<UnifiedFeature<T>>& parts,
                                  const LinearLayer<T>& fc, std::size_t expected_parts,
                                  Modality modality);

/// Per-batch inputs, already tokenized / padded. Row-major, batch first.
struct ModelInput {
  std::size_t batch = 0;
  std::vector<std::int32_t> text_ids;  // B x max_text_len
  std::vector<std::int32_t> aed_ids;   // B x max_desc_len
  std::vector<std::int32_t> ved_ids;   // B x max_desc_len
  std::vector<double> audio;           // B x audio_len x audio_dim
  std::vector<double> visual;          // B x visual_len x visual_dim
};

template <typename T>
struct EncodedModalities {
  std::vector<UnifiedFeature<T>> unimodal;  // X_t, X_a, X_v (absent ones skipped)
  std::vector<UnifiedFeature<T>> described; // D_a, D_v when enabled
  UnifiedFeature<T> h0_text;
  UnifiedFeature<T> h0_audio;
  UnifiedFeature<T> h0_visual;
};

/// Unimodal coding, description encoding, and feature enhancement.
template <typename T>
class ModalityEncoder {
 public:
  ModalityEncoder(const ModelConfig& cfg, std::mt19937_64& init_rng);

  EncodedModalities<T> forward(const ModelInput& in, const RunMode& mode) const;

  UnifiedFeature<T> encode_text(std::span<const std::int32_t> ids, std::size_t batch,
                                const RunMode& mode) const;
  UnifiedFeature<T> encode_description(std::span<const std::int32_t> ids, std::size_t batch,
                                       const RunMode& mode) const;

  void collect(const std::string& prefix, ParameterList<T>& out) const;

  std::size_t text_parts() const;
  std::size_t audio_parts() const;
  std::size_t visual_parts() const;

  ModelConfig cfg;
  Tensor<T> embedding;  // [V, d], shared by text and descriptions
  TransformerEncoderLayer<T> text_layer, audio_layer, visual_layer;
  LinearLayer<T> audio_proj, visual_proj;
  Tensor<T> text_bank, audio_bank, visual_bank, description_bank;  // [T, d] each
  LinearLayer<T> fc_text, fc_audio, fc_visual;
};

}  // namespace deva
