#include "deva/encoder.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>

#include "deva/errors.hpp"

namespace deva {

template <typename T>
UnifiedFeature<T>::UnifiedFeature(Tensor<T> data, Modality modality, Stage stage,
                                  std::size_t seq_len, std::size_t width)
    : data_(std::move(data)), modality_(modality), stage_(stage) {
  const auto r = data_.rank();
  if ((r != 2 && r != 3) || data_.dim(r - 2) != seq_len || data_.dim(r - 1) != width) {
    throw ShapeError("unified feature must be " + std::to_string(seq_len) + "x" +
                     std::to_string(width) + " per sample, got " + shape_str(data_.shape()));
  }
}

// ---------------------------------------------------------------------------

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c) || std::ispunct(c)) {
      if (!cur.empty()) tokens.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

Vocabulary::Vocabulary() {
  add("<pad>");
  add("<unk>");
}

void Vocabulary::add(const std::string& token) {
  if (index_.count(token)) throw DataError("vocabulary: duplicate token '" + token + "'");
  index_.emplace(token, static_cast<std::int32_t>(tokens_.size()));
  tokens_.push_back(token);
}

Vocabulary Vocabulary::build(std::span<const std::string> texts, std::size_t max_size) {
  std::map<std::string, std::size_t> counts;
  for (const auto& t : texts)
    for (auto& tok : tokenize(t)) ++counts[tok];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary vocab;
  for (const auto& [tok, n] : ranked) {
    if (vocab.size() >= max_size) break;
    if (tok == "<pad>" || tok == "<unk>") continue;
    vocab.add(tok);
  }
  return vocab;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  try {
    return from_tokens(lines);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

Vocabulary Vocabulary::from_tokens(std::span<const std::string> tokens) {
  if (tokens.size() < 2 || tokens[0] != "<pad>" || tokens[1] != "<unk>")
    throw DataError("vocabulary must start with <pad> and <unk>");
  Vocabulary vocab;
  for (std::size_t i = 2; i < tokens.size(); ++i) vocab.add(tokens[i]);
  return vocab;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vocabulary " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

std::int32_t Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

std::vector<std::int32_t> Vocabulary::encode(std::string_view text, std::size_t max_len) const {
  if (max_len == 0) throw std::invalid_argument("encode: max_len must be positive");
  std::vector<std::int32_t> ids;
  for (const auto& tok : tokenize(text)) {
    if (ids.size() == max_len) break;
    ids.push_back(id(tok));
  }
  if (ids.empty()) ids.push_back(kUnk);
  ids.resize(max_len, kPad);
  return ids;
}

std::vector<double> sinusoidal_positions(std::size_t len, std::size_t d) {
  std::vector<double> pe(len * d);
  for (std::size_t pos = 0; pos < len; ++pos) {
    for (std::size_t i = 0; i < d; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(d));
      const double angle = static_cast<double>(pos) * rate;
      pe[pos * d + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

namespace {

template <typename T>
Tensor<T> add_positions(const Tensor<T>& x) {
  const std::size_t batch = x.dim(0), len = x.dim(1), d = x.dim(2);
  const auto pe = sinusoidal_positions(len, d);
  std::vector<T> tiled(batch * len * d);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < len * d; ++i) tiled[b * len * d + i] = static_cast<T>(pe[i]);
  return add(x, Tensor<T>::from(x.shape(), std::move(tiled)));
}

template <typename T>
Tensor<T> random_bank(std::size_t rows, std::size_t d, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<T> v(rows * d);
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return make_parameter<T>({rows, d}, std::move(v));
}

}  // namespace

template <typename T>
Tensor<T> embed_ids(std::span<const std::int32_t> ids, std::size_t batch, std::size_t len,
                    const Tensor<T>& table) {
  return add_positions(embedding(table, ids, {batch, len}));
}

template <typename T>
Tensor<T> tokenize_embed(std::string_view text, const Vocabulary& vocab, const Tensor<T>& table,
                         std::size_t max_len) {
  const auto ids = vocab.encode(text, max_len);
  const auto x = embed_ids<T>(ids, 1, max_len, table);
  return reshape(x, {max_len, table.dim(1)});
}

template <typename T>
Tensor<T> project(const Tensor<T>& raw, const LinearLayer<T>& proj) {
  if (raw.shape().back() != proj.in_features()) {
    throw ShapeError("project: feature width " + std::to_string(raw.shape().back()) +
                     " does not match configured " + std::to_string(proj.in_features()));
  }
  return proj.forward(raw);
}

template <typename T>
UnifiedFeature<T> unify(const Tensor<T>& seq, const Tensor<T>& bank,
                        const TransformerEncoderLayer<T>& layer, Modality modality, Stage stage,
                        const RunMode& mode) {
  const bool unbatched = seq.rank() == 2;
  const Tensor<T> seq3 = unbatched ? reshape(seq, {1, seq.dim(0), seq.dim(1)}) : seq;
  if (seq3.rank() != 3 || bank.rank() != 2 || seq3.dim(2) != bank.dim(1)) {
    throw ShapeError("unify: sequence " + shape_str(seq.shape()) + " and token bank " +
                     shape_str(bank.shape()) + " disagree");
  }
  const std::size_t t = bank.dim(0), d = bank.dim(1);
  auto joined = concat<T>({seq3, broadcast_leading(bank, seq3.dim(0))}, 1);
  auto encoded = layer.forward(joined, mode);
  auto prefix = slice(encoded, 1, 0, t);
  if (unbatched) prefix = reshape(prefix, {t, d});
  return UnifiedFeature<T>(prefix, modality, stage, t, d);
}

template <typename T>
UnifiedFeature<T> feature_enhance(const std::vector<UnifiedFeature<T>>& parts,
                                  const LinearLayer<T>& fc, std::size_t expected_parts,
                                  Modality modality) {
  if (parts.size() != expected_parts || parts.empty()) {
    throw std::invalid_argument("feature_enhance: modality path takes " + std::to_string(expected_parts) +
                                " parts, got " + std::to_string(parts.size()));
  }
  std::vector<Tensor<T>> xs;
  for (const auto& p : parts) xs.push_back(p.data());
  const auto& first = parts.front().data();
  const std::size_t r = first.rank();
  return UnifiedFeature<T>(fc.forward(concat_last(xs)), modality, Stage::enhanced, first.dim(r - 2),
                           fc.out_features());
}

// ---------------------------------------------------------------------------

template <typename T>
ModalityEncoder<T>::ModalityEncoder(const ModelConfig& c, std::mt19937_64& rng) : cfg(c) {
  const auto d = cfg.d;
  const auto& ab = cfg.ablation;
  embedding = random_bank<T>(cfg.vocab_size, d, cfg.embedding_std, rng);
  text_layer = TransformerEncoderLayer<T>(d, cfg.heads, cfg.ffn_factor, cfg.dropout, rng);
  text_bank = random_bank<T>(cfg.seq_len, d, 0.02, rng);
  if (ab.use_raw_av) {
    if (cfg.audio_dim == 0 || cfg.visual_dim == 0)
      throw ConfigError("encoder: audio_dim and visual_dim must be resolved before construction");
    audio_proj = LinearLayer<T>(cfg.audio_dim, d, Activation::none, rng);
    visual_proj = LinearLayer<T>(cfg.visual_dim, d, Activation::none, rng);
    audio_layer = TransformerEncoderLayer<T>(d, cfg.heads, cfg.ffn_factor, cfg.dropout, rng);
    visual_layer = TransformerEncoderLayer<T>(d, cfg.heads, cfg.ffn_factor, cfg.dropout, rng);
    audio_bank = random_bank<T>(cfg.seq_len, d, 0.02, rng);
    visual_bank = random_bank<T>(cfg.seq_len, d, 0.02, rng);
  }
  if (ab.use_aed || ab.use_ved) description_bank = random_bank<T>(cfg.seq_len, d, 0.02, rng);
  fc_text = LinearLayer<T>(text_parts() * d, d, Activation::none, rng);
  fc_audio = LinearLayer<T>(audio_parts() * d, d, Activation::none, rng);
  fc_visual = LinearLayer<T>(visual_parts() * d, d, Activation::none, rng);
}

template <typename T>
std::size_t ModalityEncoder<T>::text_parts() const {
  return 1 + (cfg.ablation.use_aed ? 1 : 0) + (cfg.ablation.use_ved ? 1 : 0);
}
template <typename T>
std::size_t ModalityEncoder<T>::audio_parts() const {
  return (cfg.ablation.use_raw_av ? 1 : 0) + (cfg.ablation.use_aed ? 1 : 0);
}
template <typename T>
std::size_t ModalityEncoder<T>::visual_parts() const {
  return (cfg.ablation.use_raw_av ? 1 : 0) + (cfg.ablation.use_ved ? 1 : 0);
}

template <typename T>
UnifiedFeature<T> ModalityEncoder<T>::encode_text(std::span<const std::int32_t> ids,
                                                  std::size_t batch, const RunMode& mode) const {
  const auto x = embed_ids<T>(ids, batch, cfg.max_text_len, embedding);
  return unify(x, text_bank, text_layer, Modality::text, Stage::unimodal, mode);
}

template <typename T>
UnifiedFeature<T> ModalityEncoder<T>::encode_description(std::span<const std::int32_t> ids,
                                                         std::size_t batch,
                                                         const RunMode& mode) const {
  const auto x = embed_ids<T>(ids, batch, cfg.max_desc_len, embedding);
  return unify(x, description_bank, text_layer, Modality::description, Stage::description, mode);
}

template <typename T>
EncodedModalities<T> ModalityEncoder<T>::forward(const ModelInput& in, const RunMode& mode) const {
  const auto& ab = cfg.ablation;
  const std::size_t B = in.batch;
  if (in.text_ids.size() != B * cfg.max_text_len || in.aed_ids.size() != B * cfg.max_desc_len ||
      in.ved_ids.size() != B * cfg.max_desc_len) {
    throw ShapeError("encoder: token id buffers do not match batch size " + std::to_string(B));
  }

  std::vector<UnifiedFeature<T>> text_parts_v, audio_parts_v, visual_parts_v;
  std::vector<UnifiedFeature<T>> unimodal, described;

  auto x_t = encode_text(in.text_ids, B, mode);
  unimodal.push_back(x_t);
  text_parts_v.push_back(x_t);

  if (ab.use_raw_av) {
    auto raw_tensor = [&](const std::vector<double>& v, std::size_t len, std::size_t dim, const char* what) {
      if (v.size() != B * len * dim)
        throw ShapeError(std::string("encoder: ") + what + " buffer does not hold " + std::to_string(B) +
                         "x" + std::to_string(len) + "x" + std::to_string(dim));
      return Tensor<T>::from({B, len, dim}, std::vector<T>(v.begin(), v.end()));
    };
    auto a = add_positions(project(raw_tensor(in.audio, cfg.audio_len, cfg.audio_dim, "audio"), audio_proj));
    auto v = add_positions(project(raw_tensor(in.visual, cfg.visual_len, cfg.visual_dim, "visual"), visual_proj));
    auto x_a = unify(a, audio_bank, audio_layer, Modality::audio, Stage::unimodal, mode);
    auto x_v = unify(v, visual_bank, visual_layer, Modality::visual, Stage::unimodal, mode);
    unimodal.push_back(x_a);
    unimodal.push_back(x_v);
    audio_parts_v.push_back(x_a);
    visual_parts_v.push_back(x_v);
  }
  if (ab.use_aed) {
    auto d_a = encode_description(in.aed_ids, B, mode);
    described.push_back(d_a);
    text_parts_v.push_back(d_a);
    audio_parts_v.push_back(d_a);
  }
  if (ab.use_ved) {
    auto d_v = encode_description(in.ved_ids, B, mode);
    described.push_back(d_v);
    text_parts_v.push_back(d_v);
    visual_parts_v.push_back(d_v);
  }

  return EncodedModalities<T>{
      std::move(unimodal), std::move(described),
      feature_enhance(text_parts_v, fc_text, text_parts(), Modality::text),
      feature_enhance(audio_parts_v, fc_audio, audio_parts(), Modality::audio),
      feature_enhance(visual_parts_v, fc_visual, visual_parts(), Modality::visual)};
}

template <typename T>
void ModalityEncoder<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  out.push_back({prefix + ".embedding", embedding});
  text_layer.collect(prefix + ".text.layer", out);
  out.push_back({prefix + ".text.bank", text_bank});
  if (cfg.ablation.use_raw_av) {
    audio_proj.collect(prefix + ".audio.proj", out);
    audio_layer.collect(prefix + ".audio.layer", out);
    out.push_back({prefix + ".audio.bank", audio_bank});
    visual_proj.collect(prefix + ".visual.proj", out);
    visual_layer.collect(prefix + ".visual.layer", out);
    out.push_back({prefix + ".visual.bank", visual_bank});
  }
  if (description_bank.defined()) out.push_back({prefix + ".description.bank", description_bank});
  fc_text.collect(prefix + ".enhance.text", out);
  fc_audio.collect(prefix + ".enhance.audio", out);
  fc_visual.collect(prefix + ".enhance.visual", out);
}

template class UnifiedFeature<float>;
template class UnifiedFeature<double>;
template class ModalityEncoder<float>;
template class ModalityEncoder<double>;

#define DEVA_INSTANTIATE_ENCODER(T)                                                                \
  template Tensor<T> embed_ids(std::span<const std::int32_t>, std::size_t, std::size_t,            \
                               const Tensor<T>&);                                                  \
  template Tensor<T> tokenize_embed(std::string_view, const Vocabulary&, const Tensor<T>&,         \
                                    std::size_t);                                                  \
  template Tensor<T> project(const Tensor<T>&, const LinearLayer<T>&);                             \
  template UnifiedFeature<T> unify(const Tensor<T>&, const Tensor<T>&,                             \
                                   const TransformerEncoderLayer<T>&, Modality, Stage,             \
                                   const RunMode&);                                                \
  template UnifiedFeature<T> feature_enhance(const std::vector<UnifiedFeature<T>>&,                \
                                             const LinearLayer<T>&, std::size_t, Modality);

DEVA_INSTANTIATE_ENCODER(float)
DEVA_INSTANTIATE_ENCODER(double)

}  // namespace deva
