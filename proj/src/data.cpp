#include "deva/data.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "deva/errors.hpp"

namespace deva {

namespace fs = std::filesystem;
using edg::ActionUnit;

// ---------------------------------------------------------------------------
// SyntheticSpec

void SyntheticSpec::validate() const {
  if (train == 0 || valid == 0 || test == 0) throw ConfigError("synthetic: every split needs samples");
  if (label_range != 3.0 && label_range != 1.0) throw ConfigError("synthetic: label_range must be 3 or 1");
  if (audio_dim == 0 || visual_dim == 0 || audio_frames == 0 || visual_frames == 0)
    throw ConfigError("synthetic: feature sizes must be positive");
  if (au_frames < edg::kMinCandidateRun || prosody_frames == 0)
    throw ConfigError("synthetic: AU and prosody tracks need frames");
  if (max_au_run == 0 || max_au_run > au_frames) throw ConfigError("synthetic: max_au_run must lie in [1, au_frames]");
  for (double p : {text_noise, au_flicker})
    if (p < 0.0 || p > 1.0) throw ConfigError("synthetic: probabilities must lie in [0, 1]");
  if (audio_noise < 0.0 || visual_noise < 0.0 || prosody_noise < 0.0)
    throw ConfigError("synthetic: noise scales must be non-negative");
}

nlohmann::json SyntheticSpec::to_json() const {
  return {{"train", train},
          {"valid", valid},
          {"test", test},
          {"label_range", label_range},
          {"audio_dim", audio_dim},
          {"visual_dim", visual_dim},
          {"audio_frames", audio_frames},
          {"visual_frames", visual_frames},
          {"au_frames", au_frames},
          {"prosody_frames", prosody_frames},
          {"max_au_run", max_au_run},
          {"audio_noise", audio_noise},
          {"visual_noise", visual_noise},
          {"text_noise", text_noise},
          {"au_flicker", au_flicker},
          {"prosody_noise", prosody_noise},
          {"seed", seed}};
}

SyntheticSpec SyntheticSpec::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("synthetic spec must be an object");
  SyntheticSpec s;
  const auto defaults = s.to_json();
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError("synthetic spec: unknown key '" + key + "'");
  }
  auto merged = defaults;
  merged.update(j);
  try {
    s.train = merged.at("train").get<std::size_t>();
    s.valid = merged.at("valid").get<std::size_t>();
    s.test = merged.at("test").get<std::size_t>();
    s.label_range = merged.at("label_range").get<double>();
    s.audio_dim = merged.at("audio_dim").get<std::size_t>();
    s.visual_dim = merged.at("visual_dim").get<std::size_t>();
    s.audio_frames = merged.at("audio_frames").get<std::size_t>();
    s.visual_frames = merged.at("visual_frames").get<std::size_t>();
    s.au_frames = merged.at("au_frames").get<std::size_t>();
    s.prosody_frames = merged.at("prosody_frames").get<std::size_t>();
    s.max_au_run = merged.at("max_au_run").get<std::size_t>();
    s.audio_noise = merged.at("audio_noise").get<double>();
    s.visual_noise = merged.at("visual_noise").get<double>();
    s.text_noise = merged.at("text_noise").get<double>();
    s.au_flicker = merged.at("au_flicker").get<double>();
    s.prosody_noise = merged.at("prosody_noise").get<double>();
    s.seed = merged.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synthetic spec: ") + e.what());
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Generator

namespace {

const std::vector<std::string> kNeutralWords = {
    "the", "movie", "i",     "it",   "was",   "this",  "film", "and",  "story", "really",
    "just", "a",    "plot",  "actor", "scene", "think", "of",  "to",   "very",  "quite",
    "about", "watch", "there", "music"};

// Intensity tiers 1..3, weakest first.
const std::array<std::vector<std::string>, 3> kPositiveWords = {{
    {"fine", "okay", "decent"},
    {"good", "nice", "pleasant"},
    {"great", "excellent", "wonderful", "amazing", "love"},
}};
const std::array<std::vector<std::string>, 3> kNegativeWords = {{
    {"meh", "mediocre", "flat"},
    {"bad", "poor", "dull"},
    {"terrible", "awful", "horrible", "hate", "worst"},
}};

constexpr std::array<ActionUnit, 2> kPositiveAUs = {ActionUnit::AU06, ActionUnit::AU12};
constexpr std::array<ActionUnit, 3> kNegativeAUs = {ActionUnit::AU01, ActionUnit::AU04, ActionUnit::AU15};

// Signed tier of a sentiment word, 0 for anything else.
int word_polarity(const std::string& w) {
  for (int tier = 0; tier < 3; ++tier) {
    const auto& pos = kPositiveWords[static_cast<std::size_t>(tier)];
    const auto& neg = kNegativeWords[static_cast<std::size_t>(tier)];
    if (std::find(pos.begin(), pos.end(), w) != pos.end()) return tier + 1;
    if (std::find(neg.begin(), neg.end(), w) != neg.end()) return -(tier + 1);
  }
  return 0;
}

template <typename V>
const auto& pick(const V& v, std::mt19937_64& rng) {
  return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
}

// Nearest multiple of `step` (a power-of-ten fraction), printed without noise.
double quantize(double v, double step) {
  const double inv = std::round(1.0 / step);
  return std::round(v * inv) / inv + 0.0;
}

std::string make_text(double s, double text_noise, std::mt19937_64& rng) {
  const std::size_t length = 6 + std::uniform_int_distribution<std::size_t>(0, 4)(rng);
  std::vector<std::string> words;
  for (std::size_t i = 0; i < length; ++i) words.push_back(pick(kNeutralWords, rng));
  if (s != 0.0) {
    const std::size_t count = std::abs(s) > 0.5 ? 2 : 1;
    for (std::size_t c = 0; c < count; ++c) {
      int tier = std::min(2, static_cast<int>(std::abs(s) * 3.0));
      if (std::bernoulli_distribution(text_noise)(rng)) {
        tier = std::clamp(tier + (std::bernoulli_distribution(0.5)(rng) ? 1 : -1), 0, 2);
      }
      const auto& bank = s > 0 ? kPositiveWords : kNegativeWords;
      const auto pos = std::uniform_int_distribution<std::size_t>(0, words.size())(rng);
      words.insert(words.begin() + static_cast<std::ptrdiff_t>(pos),
                   pick(bank[static_cast<std::size_t>(tier)], rng));
    }
  }
  std::string text;
  for (const auto& w : words) text += (text.empty() ? "" : " ") + w;
  return text;
}

std::vector<double> make_frames(double s, const std::vector<double>& direction, std::size_t frames,
                                double noise, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> out(frames * direction.size());
  for (std::size_t f = 0; f < frames; ++f)
    for (std::size_t j = 0; j < direction.size(); ++j)
      out[f * direction.size() + j] = quantize(s * direction[j] + noise * n(rng), 1e-4);
  return out;
}

edg::AUTrack make_au_track(double s, const SyntheticSpec& spec, std::mt19937_64& rng) {
  edg::AUTrack track(spec.au_frames);
  std::bernoulli_distribution flicker(spec.au_flicker);
  for (std::size_t f = 0; f < spec.au_frames; ++f)
    for (std::size_t a = 0; a < edg::kActionUnits; ++a)
      if (flicker(rng)) track.set(f, static_cast<ActionUnit>(a), true);
  const auto run = static_cast<std::size_t>(std::lround(std::abs(s) * static_cast<double>(spec.max_au_run)));
  if (run > 0) {
    auto emit = [&](ActionUnit au) {
      const auto start = std::uniform_int_distribution<std::size_t>(0, spec.au_frames - run)(rng);
      for (std::size_t f = start; f < start + run; ++f) track.set(f, au, true);
    };
    if (s > 0) {
      for (auto au : kPositiveAUs) emit(au);
    } else {
      for (auto au : kNegativeAUs) emit(au);
    }
  }
  return track;
}

edg::ProsodySeries make_prosody(double s, const SyntheticSpec& spec, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  const double k = spec.prosody_noise;
  const double spread = 0.25 + std::abs(s);
  edg::ProsodySeries p;
  for (std::size_t f = 0; f < spec.prosody_frames; ++f) {
    p.pitch.push_back(quantize(180.0 + 40.0 * s + 15.0 * k * n(rng), 1e-4));
    p.loudness.push_back(quantize(60.0 + 10.0 * s + 4.0 * k * n(rng), 1e-4));
    p.jitter.push_back(quantize(std::abs(0.01 + 0.004 * k * spread * n(rng)), 1e-6));
    p.shimmer.push_back(quantize(std::abs(0.05 + 0.02 * k * spread * n(rng)), 1e-6));
  }
  return p;
}

std::vector<double> random_direction(std::size_t dim, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.5, 1.0);
  std::vector<double> d(dim);
  for (auto& v : d) v = (std::bernoulli_distribution(0.5)(rng) ? 1.0 : -1.0) * mag(rng);
  return d;
}

// Observable per-utterance features the generator emits, for the probe.
std::vector<double> probe_features(const Utterance& u, std::size_t audio_dim, std::size_t visual_dim) {
  std::vector<double> f{1.0};
  auto means = [&](const std::vector<double>& v, std::size_t frames, std::size_t dim) {
    for (std::size_t j = 0; j < dim; ++j) {
      double m = 0.0;
      for (std::size_t t = 0; t < frames; ++t) m += v[t * dim + j];
      f.push_back(m / static_cast<double>(frames));
    }
  };
  means(u.audio, u.audio_frames, audio_dim);
  means(u.visual, u.visual_frames, visual_dim);
  double polarity = 0.0;
  for (const auto& tok : tokenize(u.text)) polarity += word_polarity(tok);
  f.push_back(polarity);
  std::array<double, edg::kActionUnits> active{};
  for (std::size_t t = 0; t < u.au.frames; ++t)
    for (std::size_t a = 0; a < edg::kActionUnits; ++a) active[a] += u.au.is_active(t, static_cast<ActionUnit>(a));
  for (double v : active) f.push_back(v / static_cast<double>(u.au.frames));
  const auto agg = edg::aggregate_prosody(u.prosody);
  f.push_back((agg[0] - 180.0) / 40.0);
  f.push_back((agg[1] - 60.0) / 10.0);
  f.push_back(agg[2] * 100.0);
  f.push_back(agg[3] * 20.0);
  return f;
}

double run_probe(const Dataset& d) {
  const auto dim = probe_features(d.train.front(), d.audio_dim, d.visual_dim).size();
  Eigen::MatrixXd x(static_cast<Eigen::Index>(d.train.size()), static_cast<Eigen::Index>(dim));
  Eigen::VectorXd y(static_cast<Eigen::Index>(d.train.size()));
  for (std::size_t i = 0; i < d.train.size(); ++i) {
    const auto f = probe_features(d.train[i], d.audio_dim, d.visual_dim);
    for (std::size_t j = 0; j < dim; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = f[j];
    y(static_cast<Eigen::Index>(i)) = d.train[i].label;
  }
  const Eigen::VectorXd w = x.colPivHouseholderQr().solve(y);
  std::size_t hits = 0, total = 0;
  for (const auto* split : {&d.train, &d.valid, &d.test}) {
    for (const auto& u : *split) {
      if (u.label == 0.0) continue;
      const auto f = probe_features(u, d.audio_dim, d.visual_dim);
      const double pred = Eigen::Map<const Eigen::VectorXd>(f.data(), static_cast<Eigen::Index>(dim)).dot(w);
      hits += (pred > 0.0) == (u.label > 0.0);
      ++total;
    }
  }
  return total == 0 ? 1.0 : static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace

Dataset make_synthetic(const SyntheticSpec& spec, SyntheticReport* report, bool self_test) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const auto audio_dir = random_direction(spec.audio_dim, rng);
  const auto visual_dir = random_direction(spec.visual_dim, rng);
  const double range = spec.label_range;
  std::uniform_real_distribution<double> label_dist(-range, range);

  Dataset d;
  d.audio_dim = spec.audio_dim;
  d.visual_dim = spec.visual_dim;
  auto fill = [&](std::vector<Utterance>& split, const char* prefix, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      Utterance u;
      char id[64];
      std::snprintf(id, sizeof id, "%s_%05zu", prefix, i);
      u.id = id;
      u.label = quantize(label_dist(rng), 0.1);
      const double s = u.label / range;
      u.text = make_text(s, spec.text_noise, rng);
      u.audio_frames = spec.audio_frames;
      u.visual_frames = spec.visual_frames;
      u.audio = make_frames(s, audio_dir, spec.audio_frames, spec.audio_noise, rng);
      u.visual = make_frames(s, visual_dir, spec.visual_frames, spec.visual_noise, rng);
      u.au = make_au_track(s, spec, rng);
      u.prosody = make_prosody(s, spec, rng);
      split.push_back(std::move(u));
    }
  };
  fill(d.train, "train", spec.train);
  fill(d.valid, "valid", spec.valid);
  fill(d.test, "test", spec.test);

  if (!self_test) {
    if (report) *report = SyntheticReport{d.size(), 0.0};
    return d;
  }
  const double probe = run_probe(d);
  if (report) *report = SyntheticReport{d.size(), probe};
  if (probe < 0.95) {
    throw DataError("synthetic self-test: linear probe reaches only " + std::to_string(probe) +
                    " binary accuracy (needs 0.95); lower the noise settings");
  }
  return d;
}

SyntheticReport generate_synthetic(const SyntheticSpec& spec, const fs::path& out) {
  SyntheticReport report;
  const Dataset d = make_synthetic(spec, &report);
  fs::create_directories(out / "au");
  fs::create_directories(out / "prosody");
  auto rows = [](const std::vector<double>& v, std::size_t frames, std::size_t dim) {
    nlohmann::json m = nlohmann::json::array();
    for (std::size_t t = 0; t < frames; ++t)
      m.push_back(std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(t * dim),
                                      v.begin() + static_cast<std::ptrdiff_t>((t + 1) * dim)));
    return m;
  };
  auto write_split = [&](const std::vector<Utterance>& split, const char* name) {
    std::ofstream jsonl(out / (std::string(name) + ".jsonl"));
    if (!jsonl) throw DataError("cannot write " + (out / name).string());
    for (const auto& u : split) {
      const std::string au_rel = "au/" + u.id + ".csv";
      const std::string prosody_rel = "prosody/" + u.id + ".csv";
      nlohmann::json j{{"id", u.id},
                       {"text", u.text},
                       {"audio", rows(u.audio, u.audio_frames, d.audio_dim)},
                       {"visual", rows(u.visual, u.visual_frames, d.visual_dim)},
                       {"au_file", au_rel},
                       {"prosody_file", prosody_rel},
                       {"label", u.label}};
      jsonl << j.dump() << '\n';
      edg::write_au_csv(out / au_rel, u.au);
      edg::write_prosody_csv(out / prosody_rel, u.prosody);
    }
  };
  write_split(d.train, "train");
  write_split(d.valid, "valid");
  write_split(d.test, "test");
  return report;
}

// ---------------------------------------------------------------------------
// Ingestion

namespace {

// Parses a [frames][dim] numeric array; returns false with a reason on failure.
bool read_matrix(const nlohmann::json& j, std::vector<double>& out, std::size_t& frames,
                 std::size_t& dim, std::string& why) {
  if (!j.is_array() || j.empty()) {
    why = "must be a non-empty array of frames";
    return false;
  }
  frames = j.size();
  dim = 0;
  out.clear();
  for (const auto& row : j) {
    if (!row.is_array() || row.empty()) {
      why = "frames must be non-empty numeric arrays";
      return false;
    }
    if (dim == 0) dim = row.size();
    if (row.size() != dim) {
      why = "frames have unequal widths";
      return false;
    }
    for (const auto& v : row) {
      if (!v.is_number() || !std::isfinite(v.get<double>())) {
        why = "non-numeric or non-finite value";
        return false;
      }
      out.push_back(v.get<double>());
    }
  }
  return true;
}

}  // namespace

Dataset ingest(const fs::path& dir, double au_threshold) {
  if (!fs::is_directory(dir)) throw DataError("dataset directory " + dir.string() + " does not exist");
  Dataset d;
  std::set<std::string> seen_ids;
  auto load_split = [&](std::vector<Utterance>& split, const std::string& name) {
    const auto path = dir / (name + ".jsonl");
    std::ifstream in(path);
    if (!in) throw DataError("missing split file " + path.string());
    std::string line;
    std::size_t line_no = 0, total = 0, skipped = 0;
    auto skip = [&](const std::string& file, std::size_t at, const std::string& why) {
      d.warnings.push_back({file, at, why});
      ++skipped;
    };
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      ++total;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& e) {
        skip(path.string(), line_no, std::string("malformed JSON: ") + e.what());
        continue;
      }
      Utterance u;
      try {
        u.id = j.at("id").get<std::string>();
        u.text = j.at("text").get<std::string>();
        u.label = j.at("label").get<double>();
        const auto au_rel = j.at("au_file").get<std::string>();
        const auto prosody_rel = j.at("prosody_file").get<std::string>();
        std::string why;
        std::size_t a_dim = 0, v_dim = 0;
        if (!read_matrix(j.at("audio"), u.audio, u.audio_frames, a_dim, why)) {
          skip(path.string(), line_no, "audio " + why);
          continue;
        }
        if (!read_matrix(j.at("visual"), u.visual, u.visual_frames, v_dim, why)) {
          skip(path.string(), line_no, "visual " + why);
          continue;
        }
        if (d.audio_dim == 0) d.audio_dim = a_dim;
        if (d.visual_dim == 0) d.visual_dim = v_dim;
        if (a_dim != d.audio_dim || v_dim != d.visual_dim) {
          skip(path.string(), line_no, "feature width differs from earlier utterances");
          continue;
        }
        if (!std::isfinite(u.label)) {
          skip(path.string(), line_no, "label is not finite");
          continue;
        }
        if (seen_ids.count(u.id)) throw DataError(path.string() + ":" + std::to_string(line_no) +
                                                  ": duplicate utterance id '" + u.id + "'");
        const auto au_path = dir / au_rel;
        const auto prosody_path = dir / prosody_rel;
        if (!fs::exists(au_path)) {
          skip(path.string(), line_no, "missing AU file " + au_path.string());
          continue;
        }
        if (!fs::exists(prosody_path)) {
          skip(path.string(), line_no, "missing prosody file " + prosody_path.string());
          continue;
        }
        auto au = edg::read_au_csv(au_path, au_threshold);
        auto prosody = edg::read_prosody_csv(prosody_path);
        if (au.track.frames == 0) {
          skip(au_path.string(), 0, "AU file has no valid frames");
          continue;
        }
        prosody.series.validate();
        d.warnings.insert(d.warnings.end(), au.warnings.begin(), au.warnings.end());
        d.warnings.insert(d.warnings.end(), prosody.warnings.begin(), prosody.warnings.end());
        u.au = std::move(au.track);
        u.prosody = std::move(prosody.series);
      } catch (const nlohmann::json::exception& e) {
        skip(path.string(), line_no, std::string("bad field: ") + e.what());
        continue;
      } catch (const DataError& e) {
        if (std::string(e.what()).find("duplicate utterance id") != std::string::npos) throw;
        skip(path.string(), line_no, e.what());
        continue;
      } catch (const std::invalid_argument& e) {
        skip(path.string(), line_no, e.what());
        continue;
      }
      seen_ids.insert(u.id);
      split.push_back(std::move(u));
    }
    d.skipped += skipped;
    if (total > 0 && static_cast<double>(skipped) > 0.1 * static_cast<double>(total)) {
      throw DataError(path.string() + ": skipped " + std::to_string(skipped) + " of " +
                      std::to_string(total) + " utterances (more than 10%)");
    }
  };
  load_split(d.train, "train");
  load_split(d.valid, "valid");
  load_split(d.test, "test");
  if (d.train.empty()) throw DataError(dir.string() + ": training split is empty");
  return d;
}

// ---------------------------------------------------------------------------
// Preparation

edg::DescriptionLexicon load_lexicon(const EdgConfig& cfg) {
  if (cfg.lexicon_file.empty()) return edg::DescriptionLexicon::defaults();
  return edg::DescriptionLexicon::from_json(read_json_file(cfg.lexicon_file));
}

void resolve_feature_dims(ModelConfig& model, const Dataset& data) {
  auto resolve = [](std::size_t& configured, std::size_t found, const char* what) {
    if (configured == 0) {
      configured = found;
    } else if (found != 0 && configured != found) {
      throw ConfigError(std::string("config: ") + what + " is " + std::to_string(configured) +
                        " but the data has width " + std::to_string(found));
    }
  };
  resolve(model.audio_dim, data.audio_dim, "audio_dim");
  resolve(model.visual_dim, data.visual_dim, "visual_dim");
}

Preprocessor::Preprocessor(const TrainConfig& cfg)
    : model_(cfg.model), edg_(cfg.edg), lexicon_(load_lexicon(cfg.edg)) {}

Preprocessor Preprocessor::fit(const Dataset& data, const TrainConfig& cfg) {
  Preprocessor p(cfg);
  std::vector<edg::ProsodyAggregate> corpus;
  auto add = [&](const std::vector<Utterance>& split) {
    for (const auto& u : split) corpus.push_back(edg::aggregate_prosody(u.prosody));
  };
  add(data.train);
  if (cfg.edg.tertile_scope == TertileScope::all) {
    add(data.valid);
    add(data.test);
  }
  p.tertiles_ = edg::fit_tertiles(corpus);

  std::vector<std::string> texts;
  for (const auto& u : data.train) {
    texts.push_back(u.text);
    texts.push_back(p.aed(u));
    texts.push_back(p.ved(u));
  }
  // Every description word, so unseen AU phrases still get their own ids.
  for (const auto& ph : p.lexicon_.au_phrases) texts.push_back(ph);
  for (const auto& levels : p.lexicon_.prosody_phrases)
    for (const auto& ph : levels) texts.push_back(ph);
  texts.push_back(p.lexicon_.aed_template);
  texts.push_back(cfg.edg.ved_template.empty() ? p.lexicon_.ved_template : cfg.edg.ved_template);
  texts.push_back(p.lexicon_.ved_neutral);
  p.vocab_ = Vocabulary::build(texts, cfg.model.vocab_size);
  return p;
}

nlohmann::json Preprocessor::to_json() const {
  return {{"vocabulary", vocab_.tokens()}, {"tertiles", tertiles_.to_json()}};
}

Preprocessor Preprocessor::from_json(const nlohmann::json& j, const TrainConfig& cfg) {
  Preprocessor p(cfg);
  try {
    const auto tokens = j.at("vocabulary").get<std::vector<std::string>>();
    p.vocab_ = Vocabulary::from_tokens(tokens);
    p.tertiles_ = edg::TertileTable::from_json(j.at("tertiles"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("preprocessor state: ") + e.what());
  }
  if (p.vocab_.size() > cfg.model.vocab_size)
    throw DataError("preprocessor state: vocabulary larger than the configured vocab_size");
  return p;
}

std::string Preprocessor::aed(const Utterance& u) const {
  return edg::generate_aed(u.prosody, tertiles_, lexicon_);
}

std::string Preprocessor::ved(const Utterance& u) const {
  const auto top = edg::select_top_k(edg::detect_candidates(u.au), edg_.k);
  return edg::generate_ved(top, lexicon_, edg_.ved_template);
}

PreparedSample Preprocessor::prepare(const Utterance& u) const {
  PreparedSample s;
  s.id = u.id;
  s.label = u.label;
  s.text_ids = vocab_.encode(u.text, model_.max_text_len);
  s.aed_ids = vocab_.encode(aed(u), model_.max_desc_len);
  s.ved_ids = vocab_.encode(ved(u), model_.max_desc_len);
  auto fit_frames = [](const std::vector<double>& v, std::size_t frames, std::size_t dim, std::size_t len) {
    std::vector<double> out(len * dim, 0.0);
    const std::size_t keep = std::min(frames, len) * dim;
    std::copy(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(keep), out.begin());
    return out;
  };
  const std::size_t a_dim = u.audio_frames ? u.audio.size() / u.audio_frames : 0;
  const std::size_t v_dim = u.visual_frames ? u.visual.size() / u.visual_frames : 0;
  if (a_dim != model_.audio_dim || v_dim != model_.visual_dim) {
    throw ConfigError("utterance " + u.id + " has feature widths " + std::to_string(a_dim) + "/" +
                      std::to_string(v_dim) + ", model expects " + std::to_string(model_.audio_dim) +
                      "/" + std::to_string(model_.visual_dim));
  }
  s.audio = fit_frames(u.audio, u.audio_frames, a_dim, model_.audio_len);
  s.visual = fit_frames(u.visual, u.visual_frames, v_dim, model_.visual_len);
  return s;
}

PreparedData Preprocessor::prepare(const Dataset& data) const {
  PreparedData out;
  for (const auto& u : data.train) out.train.push_back(prepare(u));
  for (const auto& u : data.valid) out.valid.push_back(prepare(u));
  for (const auto& u : data.test) out.test.push_back(prepare(u));
  return out;
}

ModelInput make_batch(const PreparedSplit& split, std::span<const std::size_t> rows,
                      const ModelConfig& model) {
  ModelInput in;
  in.batch = rows.size();
  for (auto r : rows) {
    const auto& s = split.at(r);
    in.text_ids.insert(in.text_ids.end(), s.text_ids.begin(), s.text_ids.end());
    in.aed_ids.insert(in.aed_ids.end(), s.aed_ids.begin(), s.aed_ids.end());
    in.ved_ids.insert(in.ved_ids.end(), s.ved_ids.begin(), s.ved_ids.end());
    if (model.ablation.use_raw_av) {
      in.audio.insert(in.audio.end(), s.audio.begin(), s.audio.end());
      in.visual.insert(in.visual.end(), s.visual.begin(), s.visual.end());
    }
  }
  return in;
}

int class_of(double label, std::size_t num_classes, double label_range) {
  if (num_classes == 2) return label >= 0.0 ? 1 : 0;
  if (num_classes == 3) return label < 0.0 ? 0 : (label == 0.0 ? 1 : 2);
  if (num_classes == 7 && label_range == 3.0) return static_cast<int>(std::nearbyint(std::clamp(label, -3.0, 3.0))) + 3;
  const double u = (std::clamp(label, -label_range, label_range) + label_range) / (2.0 * label_range);
  return std::min(static_cast<int>(num_classes) - 1, static_cast<int>(u * static_cast<double>(num_classes)));
}

double score_of_class(int cls, std::size_t num_classes, double label_range) {
  const double unit = label_range / 3.0;
  if (num_classes == 2) return cls == 1 ? unit : -unit;
  if (num_classes == 3) return static_cast<double>(cls - 1) * unit;
  if (num_classes == 7 && label_range == 3.0) return static_cast<double>(cls - 3);
  const double width = 2.0 * label_range / static_cast<double>(num_classes);
  return -label_range + (static_cast<double>(cls) + 0.5) * width;
}

}  // namespace deva
