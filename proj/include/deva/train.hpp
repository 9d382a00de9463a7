#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "deva/checkpoint.hpp"
#include "deva/data.hpp"
#include "deva/gradcheck.hpp"
#include "deva/metrics.hpp"
#include "deva/model.hpp"

namespace deva {

/// Decoupled weight decay Adam.
template <typename T>
class AdamW {
 public:
  AdamW(const OptimConfig& cfg, const ParameterList<T>& params);

  /// One update with learning rate `lr` from the accumulated grads.
  void step(ParameterList<T>& params, double lr);

  OptimConfig cfg;
  std::uint64_t steps = 0;
  std::vector<std::vector<T>> m, v;
};

/// Linear warmup over the first warmup_fraction of `total_steps`, then flat.
/// `step` is zero-based.
double scheduled_lr(const OptimConfig& cfg, std::size_t step, std::size_t total_steps);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double lr = 0.0;        // rate of the last step in the epoch
  std::optional<MetricsReport> valid;

  nlohmann::json to_json() const;
  static EpochRecord from_json(const nlohmann::json& j);
};

/// A model being trained on one prepared dataset. The dataset must outlive
/// the session.
class TrainingSession {
 public:
  virtual ~TrainingSession() = default;

  /// One shuffled pass over the training split followed by validation.
  virtual EpochRecord run_epoch() = 0;
  /// Runs epochs until `epoch()` reaches the configured count, or `stop_at`
  /// when it is smaller.
  void run(std::size_t stop_at = 0);

  /// Predictions on the label scale; `best` uses the best-validation weights.
  virtual std::vector<double> predict(const PreparedSplit& split, bool best) const = 0;

  virtual std::size_t epoch() const = 0;
  virtual const std::vector<EpochRecord>& history() const = 0;
  virtual std::size_t best_epoch() const = 0;
  virtual std::size_t parameter_count() const = 0;
  virtual Checkpoint checkpoint() const = 0;

  const TrainConfig& config() const { return cfg_; }
  void set_log(std::ostream* log) { log_ = log; }

 protected:
  TrainingSession(TrainConfig cfg, nlohmann::json preprocessor)
      : cfg_(std::move(cfg)), preprocessor_(std::move(preprocessor)) {}
  TrainConfig cfg_;
  nlohmann::json preprocessor_;
  std::ostream* log_ = nullptr;
};

/// `cfg` must have feature widths resolved (see resolve_feature_dims).
std::unique_ptr<TrainingSession> make_session(const TrainConfig& cfg, const Preprocessor& pre,
                                              const PreparedData& data);
/// Restores model, best weights, optimizer, RNG streams and history.
std::unique_ptr<TrainingSession> resume_session(const Checkpoint& ckpt, const PreparedData& data);

TrainConfig config_from_checkpoint(const Checkpoint& ckpt);
Preprocessor preprocessor_from_checkpoint(const Checkpoint& ckpt);

struct RunResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  std::size_t parameters = 0;
  MetricsReport test;
  double seconds = 0.0;

  nlohmann::json to_json() const;
};

/// Fits the preprocessor, trains for the configured epochs, and scores the
/// best-validation weights on the test split. Writes the final checkpoint
/// when `checkpoint_out` is non-empty.
RunResult train_and_evaluate(TrainConfig cfg, const Dataset& data, std::ostream* log = nullptr,
                             const std::filesystem::path& checkpoint_out = {});

/// Predictions of a saved model on `data.test` with its stored preprocessing.
std::vector<double> predict_checkpoint(const Checkpoint& ckpt, const Dataset& data,
                                       PreparedSplit* prepared_test = nullptr);

inline const std::vector<std::string> kAblationToggles = {
    "no_aed", "no_ved", "no_raw_av", "no_ceu", "no_mfu", "no_edg", "no_fusion_layer"};

/// Applies named toggles; throws ConfigError for an unknown one.
TrainConfig apply_toggles(TrainConfig cfg, const std::vector<std::string>& toggles);

struct AblationRow {
  std::string name;  // "full" or the toggle
  RunResult result;
};

/// The base model plus one variant per toggle, all with the base seed.
std::vector<AblationRow> ablate(const TrainConfig& base, const Dataset& data,
                                const std::vector<std::string>& toggles, std::ostream* log = nullptr);

std::string ablation_csv(const std::vector<AblationRow>& rows);

/// Finite-difference check of every model parameter on a 2-sample synthetic
/// batch, in double precision with dropout disabled.
GradCheckReport model_grad_check(TrainConfig cfg, double h = 1e-4, double tol = 1e-3);

}  // namespace deva
