#include "deva/edg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "deva/errors.hpp"

namespace deva::edg {

std::string_view level_name(Level level) {
  switch (level) {
    case Level::low:
      return "low";
    case Level::normal:
      return "normal";
    case Level::high:
      return "high";
  }
  return "normal";
}

const std::vector<double>& ProsodySeries::feature(ProsodyFeature f) const {
  switch (f) {
    case ProsodyFeature::pitch:
      return pitch;
    case ProsodyFeature::loudness:
      return loudness;
    case ProsodyFeature::jitter:
      return jitter;
    case ProsodyFeature::shimmer:
      return shimmer;
  }
  return pitch;
}

void ProsodySeries::validate() const {
  if (pitch.empty()) throw std::invalid_argument("prosody series has no frames");
  if (loudness.size() != pitch.size() || jitter.size() != pitch.size() ||
      shimmer.size() != pitch.size()) {
    throw std::invalid_argument("prosody feature arrays differ in length");
  }
  for (std::size_t f = 0; f < kProsodyFeatures; ++f) {
    const auto& values = feature(static_cast<ProsodyFeature>(f));
    for (double v : values) {
      if (!std::isfinite(v))
        throw std::invalid_argument(std::string("non-finite ") + std::string(kProsodyNames[f]));
    }
  }
  for (std::size_t i = 0; i < pitch.size(); ++i) {
    if (jitter[i] < 0.0 || shimmer[i] < 0.0)
      throw std::invalid_argument("jitter and shimmer must be non-negative");
  }
}

ProsodyAggregate aggregate_prosody(const ProsodySeries& series) {
  series.validate();
  ProsodyAggregate agg{};
  for (std::size_t f = 0; f < kProsodyFeatures; ++f) {
    const auto& values = series.feature(static_cast<ProsodyFeature>(f));
    double total = 0.0;
    for (double v : values) total += v;
    agg[f] = total / static_cast<double>(values.size());
  }
  return agg;
}

nlohmann::json TertileTable::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t f = 0; f < kProsodyFeatures; ++f)
    j[std::string(kProsodyNames[f])] = {bounds[f].lower, bounds[f].upper};
  return j;
}

TertileTable TertileTable::from_json(const nlohmann::json& j) {
  TertileTable table;
  if (!j.is_object()) throw DataError("tertile table must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    auto it = std::find(kProsodyNames.begin(), kProsodyNames.end(), key);
    if (it == kProsodyNames.end()) throw DataError("tertile table: unknown feature '" + key + "'");
    if (!value.is_array() || value.size() != 2)
      throw DataError("tertile table: '" + key + "' needs [lower, upper]");
    auto& b = table.bounds[static_cast<std::size_t>(it - kProsodyNames.begin())];
    b.lower = value[0].get<double>();
    b.upper = value[1].get<double>();
    if (b.lower > b.upper) throw DataError("tertile table: '" + key + "' has lower > upper");
  }
  for (auto name : kProsodyNames) {
    if (!j.contains(std::string(name)))
      throw DataError("tertile table: missing feature '" + std::string(name) + "'");
  }
  return table;
}

double interpolated_quantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile of an empty sample");
  const double pos = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

TertileTable fit_tertiles(std::span<const ProsodyAggregate> corpus) {
  if (corpus.size() < 3) {
    throw std::invalid_argument("fit_tertiles: need at least 3 utterances, got " +
                                std::to_string(corpus.size()));
  }
  TertileTable table;
  std::vector<double> column(corpus.size());
  for (std::size_t f = 0; f < kProsodyFeatures; ++f) {
    for (std::size_t i = 0; i < corpus.size(); ++i) column[i] = corpus[i][f];
    std::sort(column.begin(), column.end());
    table.bounds[f].lower = interpolated_quantile(column, 1.0 / 3.0);
    table.bounds[f].upper = interpolated_quantile(column, 2.0 / 3.0);
  }
  return table;
}

Level bin_level(double value, ProsodyFeature feature, const TertileTable& table) {
  if (std::isnan(value)) throw std::invalid_argument("bin_level: NaN value");
  const auto& b = table[feature];
  if (value < b.lower) return Level::low;
  if (value > b.upper) return Level::high;
  return Level::normal;
}

std::string_view au_name(ActionUnit au) { return kActionUnitNames[static_cast<std::size_t>(au)]; }

ActionUnit parse_action_unit(std::string_view name) {
  auto it = std::find(kActionUnitNames.begin(), kActionUnitNames.end(), name);
  if (it == kActionUnitNames.end())
    throw std::invalid_argument("unknown action unit '" + std::string(name) + "'");
  return static_cast<ActionUnit>(it - kActionUnitNames.begin());
}

std::vector<AUCandidate> detect_candidates(const AUTrack& track) {
  std::vector<AUCandidate> out;
  for (std::size_t a = 0; a < kActionUnits; ++a) {
    const auto au = static_cast<ActionUnit>(a);
    std::size_t total = 0, run = 0;
    bool qualified = false;
    std::size_t onset = 0;
    for (std::size_t f = 0; f < track.frames; ++f) {
      if (track.is_active(f, au)) {
        ++total;
        ++run;
        if (run == kMinCandidateRun && !qualified) {
          qualified = true;
          onset = f + 1 - kMinCandidateRun;
        }
      } else {
        run = 0;
      }
    }
    if (qualified) out.push_back({au, total, onset});
  }
  return out;
}

std::vector<ActionUnit> select_top_k(std::vector<AUCandidate> candidates, std::size_t k) {
  if (k == 0) throw std::invalid_argument("select_top_k: k must be positive");
  std::sort(candidates.begin(), candidates.end(), [](const AUCandidate& a, const AUCandidate& b) {
    if (a.duration != b.duration) return a.duration > b.duration;
    return a.au < b.au;
  });
  std::vector<ActionUnit> out;
  for (std::size_t i = 0; i < candidates.size() && i < k; ++i) out.push_back(candidates[i].au);
  return out;
}

// ---------------------------------------------------------------------------

DescriptionLexicon DescriptionLexicon::defaults() {
  DescriptionLexicon lex;
  lex.au_phrases = {"raise inner brow",  "raise outer brow", "lower brow",      "raise upper lid",
                    "raise cheek",       "tighten lid",      "wrinkle nose",    "raise upper lip",
                    "pull lip corner",   "depress lip corner", "stretch lip",   "tighten lip",
                    "part lip",          "drop jaw",         "suck lip",        "blink"};
  for (std::size_t f = 0; f < kProsodyFeatures; ++f) {
    for (std::size_t l = 0; l < 3; ++l) {
      lex.prosody_phrases[f][l] =
          std::string(level_name(static_cast<Level>(l))) + " " + std::string(kProsodyNames[f]);
    }
  }
  lex.aed_template = "The Speaker made such an tone: {pitch}, {loudness}, {jitter}, and {shimmer}.";
  lex.ved_template = "The speaker made such an expression: {phrases}.";
  lex.ved_neutral = "The speaker made a neutral expression.";
  return lex;
}

DescriptionLexicon DescriptionLexicon::from_json(const nlohmann::json& j) {
  DescriptionLexicon lex = defaults();
  if (!j.is_object()) throw ConfigError("lexicon must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "au_phrases") {
      for (const auto& [au, phrase] : value.items()) {
        lex.au_phrases[static_cast<std::size_t>(parse_action_unit(au))] = phrase.get<std::string>();
      }
    } else if (key == "prosody") {
      for (const auto& [feat, phrases] : value.items()) {
        auto it = std::find(kProsodyNames.begin(), kProsodyNames.end(), feat);
        if (it == kProsodyNames.end()) throw ConfigError("lexicon: unknown prosodic feature '" + feat + "'");
        if (!phrases.is_array() || phrases.size() != 3)
          throw ConfigError("lexicon: '" + feat + "' needs [low, normal, high] phrases");
        auto& row = lex.prosody_phrases[static_cast<std::size_t>(it - kProsodyNames.begin())];
        for (std::size_t l = 0; l < 3; ++l) row[l] = phrases[l].get<std::string>();
      }
    } else if (key == "aed_template") {
      lex.aed_template = value.get<std::string>();
    } else if (key == "ved_template") {
      lex.ved_template = value.get<std::string>();
    } else if (key == "ved_neutral") {
      lex.ved_neutral = value.get<std::string>();
    } else {
      throw ConfigError("lexicon: unknown key '" + key + "'");
    }
  }
  return lex;
}

const std::string& DescriptionLexicon::phrase(ActionUnit au) const {
  const auto& p = au_phrases[static_cast<std::size_t>(au)];
  if (p.empty()) throw std::invalid_argument("lexicon has no phrase for " + std::string(au_name(au)));
  return p;
}

const std::string& DescriptionLexicon::phrase(ProsodyFeature f, Level level) const {
  return prosody_phrases[static_cast<std::size_t>(f)][static_cast<std::size_t>(level)];
}

namespace {

std::size_t count_occurrences(std::string_view text, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string_view::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

void replace_slot(std::string& text, std::string_view slot, std::string_view value) {
  for (auto pos = text.find(slot); pos != std::string::npos; pos = text.find(slot, pos + value.size()))
    text.replace(pos, slot.size(), value);
}

}  // namespace

std::string generate_aed(const ProsodySeries& series, const TertileTable& table,
                         const DescriptionLexicon& lex) {
  const auto agg = aggregate_prosody(series);
  std::string text = lex.aed_template;
  for (std::size_t f = 0; f < kProsodyFeatures; ++f) {
    const auto feat = static_cast<ProsodyFeature>(f);
    const Level level = bin_level(agg[f], feat, table);
    replace_slot(text, "{" + std::string(kProsodyNames[f]) + "}", lex.phrase(feat, level));
  }
  return text;
}

std::string generate_ved(std::span<const ActionUnit> aus, const DescriptionLexicon& lex,
                         std::string_view template_text) {
  const std::string_view tmpl = template_text.empty() ? std::string_view(lex.ved_template) : template_text;
  if (count_occurrences(tmpl, "{phrases}") != 1)
    throw std::invalid_argument("VED template must contain exactly one {phrases} slot");
  std::string joined;
  for (std::size_t i = 0; i < aus.size(); ++i) {
    if (i) joined += ", ";
    joined += lex.phrase(aus[i]);
  }
  if (aus.empty()) return lex.ved_neutral;
  std::string text(tmpl);
  replace_slot(text, "{phrases}", joined);
  return text;
}

// ---------------------------------------------------------------------------
// CSV files

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) {
    auto b = field.find_first_not_of(" \t\r");
    auto e = field.find_last_not_of(" \t\r");
    fields.push_back(b == std::string::npos ? std::string() : field.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && std::isfinite(out);
}

std::ifstream open_or_throw(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

AUFile read_au_csv(const std::filesystem::path& path, double threshold) {
  auto in = open_or_throw(path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty AU file");
  const auto header = split_csv(line);
  if (header.empty() || header[0] != "frame") throw DataError(path.string() + ": header must start with 'frame'");
  std::array<std::size_t, kActionUnits> column{};
  std::array<bool, kActionUnits> seen{};
  for (std::size_t c = 1; c < header.size(); ++c) {
    auto it = std::find(kActionUnitNames.begin(), kActionUnitNames.end(), header[c]);
    if (it == kActionUnitNames.end()) throw DataError(path.string() + ": unexpected column '" + header[c] + "'");
    const auto a = static_cast<std::size_t>(it - kActionUnitNames.begin());
    column[a] = c;
    seen[a] = true;
  }
  for (std::size_t a = 0; a < kActionUnits; ++a) {
    if (!seen[a]) throw DataError(path.string() + ": missing column " + std::string(kActionUnitNames[a]));
  }

  AUFile result;
  std::vector<std::uint8_t> active;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = split_csv(line);
    if (fields.size() != header.size()) {
      result.warnings.push_back({path.string(), line_no,
                                 "expected " + std::to_string(header.size()) + " fields, got " +
                                     std::to_string(fields.size())});
      continue;
    }
    std::array<std::uint8_t, kActionUnits> row{};
    bool ok = true;
    for (std::size_t a = 0; a < kActionUnits && ok; ++a) {
      double v = 0.0;
      ok = parse_double(fields[column[a]], v) && v >= 0.0 && v <= 5.0;
      row[a] = v > threshold ? 1 : 0;
    }
    if (!ok) {
      result.warnings.push_back({path.string(), line_no, "non-numeric or out-of-range intensity"});
      continue;
    }
    active.insert(active.end(), row.begin(), row.end());
  }
  if (active.empty()) throw DataError(path.string() + ": no valid frames");
  result.track.frames = active.size() / kActionUnits;
  result.track.active = std::move(active);
  return result;
}

void write_au_csv(const std::filesystem::path& path, const AUTrack& track) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "frame";
  for (auto name : kActionUnitNames) out << ',' << name;
  out << '\n';
  for (std::size_t f = 0; f < track.frames; ++f) {
    out << f;
    for (std::size_t a = 0; a < kActionUnits; ++a)
      out << ',' << (track.is_active(f, static_cast<ActionUnit>(a)) ? 1 : 0);
    out << '\n';
  }
}

ProsodyFile read_prosody_csv(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty prosody file");
  const auto header = split_csv(line);
  const std::vector<std::string> expected{"frame", "pitch", "loudness", "jitter", "shimmer"};
  if (header != expected)
    throw DataError(path.string() + ": header must be frame,pitch,loudness,jitter,shimmer");

  ProsodyFile result;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = split_csv(line);
    if (fields.size() != expected.size()) {
      result.warnings.push_back({path.string(), line_no,
                                 "expected 5 fields, got " + std::to_string(fields.size())});
      continue;
    }
    std::array<double, kProsodyFeatures> v{};
    bool ok = true;
    for (std::size_t f = 0; f < kProsodyFeatures && ok; ++f) ok = parse_double(fields[f + 1], v[f]);
    ok = ok && v[2] >= 0.0 && v[3] >= 0.0;
    if (!ok) {
      result.warnings.push_back({path.string(), line_no, "non-numeric or invalid prosodic value"});
      continue;
    }
    result.series.pitch.push_back(v[0]);
    result.series.loudness.push_back(v[1]);
    result.series.jitter.push_back(v[2]);
    result.series.shimmer.push_back(v[3]);
  }
  if (result.series.frames() == 0) throw DataError(path.string() + ": no valid frames");
  return result;
}

void write_prosody_csv(const std::filesystem::path& path, const ProsodySeries& series) {
  series.validate();
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "frame,pitch,loudness,jitter,shimmer\n";
  for (std::size_t f = 0; f < series.frames(); ++f) {
    out << f << ',' << format_number(series.pitch[f]) << ',' << format_number(series.loudness[f]) << ','
        << format_number(series.jitter[f]) << ',' << format_number(series.shimmer[f]) << '\n';
  }
}

}  // namespace deva::edg
