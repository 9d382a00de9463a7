#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "deva/config.hpp"
#include "deva/edg.hpp"
#include "deva/encoder.hpp"
#include "json.hpp"

namespace deva {

// ---------------------------------------------------------------------------
// Synthetic data

/// Parameters of the separable synthetic sentiment task.
struct SyntheticSpec {
  std::size_t train = 2000;
  std::size_t valid = 250;
  std::size_t test = 500;
  double label_range = 3.0;  // labels uniform in [-range, range], 0.1 steps
  std::size_t audio_dim = 8;
  std::size_t visual_dim = 8;
  std::size_t audio_frames = 16;
  std::size_t visual_frames = 16;
  std::size_t au_frames = 60;
  std::size_t prosody_frames = 30;
  std::size_t max_au_run = 40;   // AU run length at |label| == range
  double audio_noise = 0.8;
  double visual_noise = 0.8;
  double text_noise = 0.1;       // chance a sentiment word drifts one intensity level
  double au_flicker = 0.03;      // per-frame chance of a stray activation
  double prosody_noise = 1.0;    // multiplies the per-frame prosody spread
  std::uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  /// Unknown keys are errors.
  static SyntheticSpec from_json(const nlohmann::json& j);
};

struct SyntheticReport {
  std::size_t samples = 0;
  double probe_acc2 = 0.0;  // linear probe on emitted features, zero labels excluded
};

// ---------------------------------------------------------------------------
// Utterances and ingestion

struct Utterance {
  std::string id;
  std::string text;
  double label = 0.0;
  std::size_t audio_frames = 0;
  std::size_t visual_frames = 0;
  std::vector<double> audio;   // audio_frames x audio_dim
  std::vector<double> visual;  // visual_frames x visual_dim
  edg::AUTrack au;
  edg::ProsodySeries prosody;
};

struct Dataset {
  std::vector<Utterance> train, valid, test;
  std::size_t audio_dim = 0;
  std::size_t visual_dim = 0;
  std::vector<edg::ParseWarning> warnings;
  std::size_t skipped = 0;

  std::size_t size() const { return train.size() + valid.size() + test.size(); }
};

/// Builds the synthetic dataset in memory. With `self_test`, runs the
/// linear probe and throws DataError if it falls below 95%.
Dataset make_synthetic(const SyntheticSpec& spec, SyntheticReport* report = nullptr,
                       bool self_test = true);

/// Writes train/valid/test.jsonl plus au/<id>.csv and prosody/<id>.csv.
SyntheticReport generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out);

/// Reads a dataset directory. Utterances with malformed lines or missing
/// feature files are skipped with a warning; more than 10% skipped in any
/// split, a missing split file, or an empty train split is a DataError.
Dataset ingest(const std::filesystem::path& dir, double au_threshold = edg::kDefaultAuThreshold);

// ---------------------------------------------------------------------------
// Preparation

struct PreparedSample {
  std::string id;
  double label = 0.0;
  std::vector<std::int32_t> text_ids;  // max_text_len
  std::vector<std::int32_t> aed_ids;   // max_desc_len
  std::vector<std::int32_t> ved_ids;   // max_desc_len
  std::vector<double> audio;           // audio_len x audio_dim, zero padded
  std::vector<double> visual;          // visual_len x visual_dim
};

using PreparedSplit = std::vector<PreparedSample>;

struct PreparedData {
  PreparedSplit train, valid, test;
};

/// Everything fitted on data that a model needs to turn utterances into ids:
/// the vocabulary, prosody tertiles and description lexicon.
class Preprocessor {
 public:
  /// Tertiles follow cfg.edg.tertile_scope; the vocabulary covers training
  /// text and the training descriptions.
  static Preprocessor fit(const Dataset& data, const TrainConfig& cfg);
  static Preprocessor from_json(const nlohmann::json& j, const TrainConfig& cfg);
  nlohmann::json to_json() const;

  std::string aed(const Utterance& u) const;
  std::string ved(const Utterance& u) const;
  PreparedSample prepare(const Utterance& u) const;
  PreparedData prepare(const Dataset& data) const;

  const Vocabulary& vocabulary() const { return vocab_; }
  const edg::TertileTable& tertiles() const { return tertiles_; }

 private:
  Preprocessor(const TrainConfig& cfg);
  ModelConfig model_;
  EdgConfig edg_;
  edg::DescriptionLexicon lexicon_;
  Vocabulary vocab_;
  edg::TertileTable tertiles_;
};

/// Lexicon from cfg.edg.lexicon_file, or the built-in one.
edg::DescriptionLexicon load_lexicon(const EdgConfig& cfg);

/// Fills audio_dim / visual_dim from the data when zero; throws ConfigError
/// when a configured width disagrees with the data.
void resolve_feature_dims(ModelConfig& model, const Dataset& data);

/// Gathers samples `rows` into one batch.
ModelInput make_batch(const PreparedSplit& split, std::span<const std::size_t> rows,
                      const ModelConfig& model);

/// Class id used as the target of the classification task.
int class_of(double label, std::size_t num_classes, double label_range);
/// Score on the label scale represented by a class id.
double score_of_class(int cls, std::size_t num_classes, double label_range);

}  // namespace deva
