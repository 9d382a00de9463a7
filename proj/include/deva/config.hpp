#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"

namespace deva {

enum class LossMode { mae, mse, cross_entropy };
enum class TaskMode { regression, classification };
enum class TertileScope { train, all };
enum class Precision { f32, f64 };

std::string to_string(LossMode m);
std::string to_string(TaskMode m);
std::string to_string(TertileScope s);
std::string to_string(Precision p);

/// Architecture switches. Every flag on is the full model; each ablation
/// clears one.
struct AblationToggles {
  bool use_aed = true;           // audio description feeds enhancement
  bool use_ved = true;           // visual description feeds enhancement
  bool use_raw_av = true;        // raw audio/visual features feed enhancement
  bool use_ceu = true;           // progressive core guidance (else plain encoder stack)
  bool use_mfu = true;           // minor fusion units (else H0_a + H0_v)
  bool use_fusion_layer = true;  // final cross-modal attention (else concat + linear)

  bool operator==(const AblationToggles&) const = default;
};

struct ModelConfig {
  std::size_t d = 32;
  std::size_t seq_len = 8;  // T
  std::size_t ceu_layers = 2;  // J
  std::size_t mfu_layers = 3;  // K
  std::size_t heads = 4;
  std::size_t ffn_factor = 4;
  double dropout = 0.1;
  std::size_t vocab_size = 512;
  std::size_t max_text_len = 12;
  std::size_t max_desc_len = 20;
  std::size_t audio_len = 16;   // frames kept per utterance (pad/truncate)
  std::size_t visual_len = 16;
  std::size_t audio_dim = 0;    // 0: taken from the dataset
  std::size_t visual_dim = 0;
  TaskMode task = TaskMode::regression;
  std::size_t num_classes = 2;
  double embedding_std = 0.1;
  double minor_init_std = 0.02;
  double post_fc_noise = 0.01;
  AblationToggles ablation;
};

struct OptimConfig {
  std::size_t batch_size = 32;
  double lr = 1e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t epochs = 30;
  double warmup_fraction = 0.1;
  LossMode loss = LossMode::mae;
};

struct EdgConfig {
  std::size_t k = 4;
  double au_threshold = 0.5;
  TertileScope tertile_scope = TertileScope::train;
  std::string ved_template;  // empty: lexicon default
  std::string lexicon_file;  // empty: built-in phrases
};

struct TrainConfig {
  ModelConfig model;
  OptimConfig optim;
  EdgConfig edg;
  std::uint64_t seed = 1;
  Precision precision = Precision::f32;
  double label_range = 3.0;  // labels lie in [-label_range, label_range]; 3 or 1

  /// Desk-scale defaults.
  static TrainConfig desk();
  /// d = 128, batch 64, 80 epochs.
  static TrainConfig paper_scale();

  /// Throws ConfigError when an invariant is broken (K != J + 1, d % heads, ...).
  void validate() const;

  nlohmann::json to_json() const;
  /// Sections: "model", "optim", "edg", "ablation", plus top-level "profile",
  /// "seed", "precision", "label_range". Unknown keys are errors.
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig load(const std::filesystem::path& path);
};

nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace deva
