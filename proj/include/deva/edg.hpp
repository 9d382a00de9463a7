#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace deva::edg {

// ---------------------------------------------------------------------------
// Prosody
// ---------------------------------------------------------------------------

/// Fixed description order: pitch, loudness, jitter, shimmer.
enum class ProsodyFeature : std::uint8_t { pitch = 0, loudness, jitter, shimmer };
inline constexpr std::size_t kProsodyFeatures = 4;
inline constexpr std::array<std::string_view, kProsodyFeatures> kProsodyNames = {
    "pitch", "loudness", "jitter", "shimmer"};

enum class Level : std::uint8_t { low = 0, normal, high };
std::string_view level_name(Level level);

/// Per-frame prosodic measurements of one utterance.
struct ProsodySeries {
  std::vector<double> pitch;     // Hz
  std::vector<double> loudness;  // energy units
  std::vector<double> jitter;    // ratio
  std::vector<double> shimmer;   // ratio

  std::size_t frames() const { return pitch.size(); }
  const std::vector<double>& feature(ProsodyFeature f) const;
  /// Throws std::invalid_argument on unequal lengths, no frames, non-finite
  /// values, or negative jitter/shimmer.
  void validate() const;
};

using ProsodyAggregate = std::array<double, kProsodyFeatures>;

/// Per-feature arithmetic mean over frames.
ProsodyAggregate aggregate_prosody(const ProsodySeries& series);

struct Tertiles {
  double lower = 0.0;
  double upper = 0.0;
};

struct TertileTable {
  std::array<Tertiles, kProsodyFeatures> bounds{};

  const Tertiles& operator[](ProsodyFeature f) const { return bounds[static_cast<std::size_t>(f)]; }
  nlohmann::json to_json() const;
  static TertileTable from_json(const nlohmann::json& j);
};

/// Linear-interpolation empirical quantile (order-statistic position
/// (n - 1) * q) of an ascending-sorted sample.
double interpolated_quantile(std::span<const double> sorted, double q);

/// Boundaries at the 1/3 and 2/3 quantiles of each feature over the corpus.
/// Needs at least three utterance aggregates.
TertileTable fit_tertiles(std::span<const ProsodyAggregate> corpus);

/// value < lower -> low, lower <= value <= upper -> normal, value > upper -> high.
Level bin_level(double value, ProsodyFeature feature, const TertileTable& table);

// ---------------------------------------------------------------------------
// Facial action units
// ---------------------------------------------------------------------------

/// The sixteen tracked action units, in ascending identifier order.
enum class ActionUnit : std::uint8_t {
  AU01 = 0, AU02, AU04, AU05, AU06, AU07, AU09, AU10,
  AU12, AU15, AU20, AU23, AU25, AU26, AU28, AU45
};
inline constexpr std::size_t kActionUnits = 16;
inline constexpr std::array<std::string_view, kActionUnits> kActionUnitNames = {
    "AU01", "AU02", "AU04", "AU05", "AU06", "AU07", "AU09", "AU10",
    "AU12", "AU15", "AU20", "AU23", "AU25", "AU26", "AU28", "AU45"};

std::string_view au_name(ActionUnit au);
ActionUnit parse_action_unit(std::string_view name);

/// Boolean activation per frame for each action unit.
struct AUTrack {
  std::size_t frames = 0;
  double frame_rate = 30.0;
  std::vector<std::uint8_t> active;  // frames x kActionUnits, row-major

  AUTrack() = default;
  explicit AUTrack(std::size_t n_frames, double rate = 30.0)
      : frames(n_frames), frame_rate(rate), active(n_frames * kActionUnits, 0) {}

  bool is_active(std::size_t frame, ActionUnit au) const {
    return active[frame * kActionUnits + static_cast<std::size_t>(au)] != 0;
  }
  void set(std::size_t frame, ActionUnit au, bool on) {
    active[frame * kActionUnits + static_cast<std::size_t>(au)] = on ? 1 : 0;
  }
};

struct AUCandidate {
  ActionUnit au;
  std::size_t duration = 0;     // total active frames over the whole track
  std::size_t first_onset = 0;  // start of the earliest run of >= 3 frames

  bool operator==(const AUCandidate&) const = default;
};

inline constexpr std::size_t kMinCandidateRun = 3;

/// AUs with at least one run of three or more consecutive active frames,
/// in ascending identifier order.
std::vector<AUCandidate> detect_candidates(const AUTrack& track);

/// Longest total duration first, ties to the lower identifier; at most k.
std::vector<ActionUnit> select_top_k(std::vector<AUCandidate> candidates, std::size_t k);

// ---------------------------------------------------------------------------
// Descriptions
// ---------------------------------------------------------------------------

struct DescriptionLexicon {
  std::array<std::string, kActionUnits> au_phrases;
  // [feature][level], e.g. prosody_phrases[pitch][high] == "high pitch"
  std::array<std::array<std::string, 3>, kProsodyFeatures> prosody_phrases;
  // Slots: {pitch} {loudness} {jitter} {shimmer}
  std::string aed_template;
  // Slot: {phrases}
  std::string ved_template;
  std::string ved_neutral;

  static DescriptionLexicon defaults();
  /// Defaults with any keys of `j` applied on top; unknown keys are errors.
  static DescriptionLexicon from_json(const nlohmann::json& j);

  const std::string& phrase(ActionUnit au) const;
  const std::string& phrase(ProsodyFeature f, Level level) const;
};

std::string generate_aed(const ProsodySeries& series, const TertileTable& table,
                         const DescriptionLexicon& lex);

/// Uses lex.ved_template when `template_text` is empty. An empty AU list
/// yields lex.ved_neutral.
std::string generate_ved(std::span<const ActionUnit> aus, const DescriptionLexicon& lex,
                         std::string_view template_text = {});

// ---------------------------------------------------------------------------
// Feature files
// ---------------------------------------------------------------------------

struct ParseWarning {
  std::string file;
  std::size_t line = 0;
  std::string message;
};

struct AUFile {
  AUTrack track;
  std::vector<ParseWarning> warnings;
};

struct ProsodyFile {
  ProsodySeries series;
  std::vector<ParseWarning> warnings;
};

inline constexpr double kDefaultAuThreshold = 0.5;

/// CSV with header `frame,AU01,...,AU45`; intensities above `threshold` count
/// as active. Malformed rows are skipped and reported.
AUFile read_au_csv(const std::filesystem::path& path, double threshold = kDefaultAuThreshold);
void write_au_csv(const std::filesystem::path& path, const AUTrack& track);

/// CSV with header `frame,pitch,loudness,jitter,shimmer`.
ProsodyFile read_prosody_csv(const std::filesystem::path& path);
void write_prosody_csv(const std::filesystem::path& path, const ProsodySeries& series);

}  // namespace deva::edg
