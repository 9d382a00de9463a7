#include "deva/config.hpp"

#include <fstream>
#include <functional>
#include <map>

#include "deva/errors.hpp"

namespace deva {

std::string to_string(LossMode m) {
  switch (m) {
    case LossMode::mae:
      return "mae";
    case LossMode::mse:
      return "mse";
    case LossMode::cross_entropy:
      return "cross_entropy";
  }
  return "mae";
}

std::string to_string(TaskMode m) { return m == TaskMode::regression ? "regression" : "classification"; }
std::string to_string(TertileScope s) { return s == TertileScope::train ? "train" : "all"; }
std::string to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

namespace {

template <typename E>
E parse_enum(const nlohmann::json& v, const std::string& key, std::initializer_list<E> options) {
  const auto s = v.get<std::string>();
  for (E e : options) {
    if (to_string(e) == s) return e;
  }
  throw ConfigError("config: invalid value '" + s + "' for " + key);
}

using Setter = std::function<void(const nlohmann::json&)>;

void apply_section(const nlohmann::json& section, const std::string& name,
                   const std::map<std::string, Setter>& setters) {
  if (!section.is_object()) throw ConfigError("config: section '" + name + "' must be an object");
  for (const auto& [key, value] : section.items()) {
    auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("config: unknown key '" + name + "." + key + "'");
    try {
      it->second(value);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config: bad value for '" + name + "." + key + "': " + e.what());
    }
  }
}

template <typename V>
Setter set(V& field) {
  return [&field](const nlohmann::json& v) { field = v.get<V>(); };
}

}  // namespace

TrainConfig TrainConfig::desk() { return TrainConfig{}; }

TrainConfig TrainConfig::paper_scale() {
  TrainConfig c;
  c.model.d = 128;
  c.optim.batch_size = 64;
  c.optim.epochs = 80;
  return c;
}

void TrainConfig::validate() const {
  const auto& m = model;
  if (m.mfu_layers != m.ceu_layers + 1)
    throw ConfigError("config: MFU count K must equal CEU count J + 1 (J=" + std::to_string(m.ceu_layers) +
                      ", K=" + std::to_string(m.mfu_layers) + ")");
  if (m.heads == 0 || m.d % m.heads != 0)
    throw ConfigError("config: d=" + std::to_string(m.d) + " is not divisible by heads=" + std::to_string(m.heads));
  if (m.d == 0 || m.seq_len == 0 || m.ffn_factor == 0) throw ConfigError("config: d, T and ffn_factor must be positive");
  if (m.vocab_size < 3) throw ConfigError("config: vocab_size must be at least 3");
  if (m.max_text_len == 0 || m.max_desc_len == 0 || m.audio_len == 0 || m.visual_len == 0)
    throw ConfigError("config: sequence lengths must be positive");
  if (m.dropout < 0.0 || m.dropout >= 1.0) throw ConfigError("config: dropout must lie in [0, 1)");
  if (m.task == TaskMode::classification && m.num_classes < 2)
    throw ConfigError("config: classification needs at least 2 classes");
  if ((m.task == TaskMode::classification) != (optim.loss == LossMode::cross_entropy))
    throw ConfigError("config: cross_entropy loss pairs with the classification task only");
  if (optim.batch_size == 0 || optim.epochs == 0) throw ConfigError("config: batch_size and epochs must be positive");
  if (optim.lr < 0.0) throw ConfigError("config: lr must be non-negative");
  if (optim.warmup_fraction < 0.0 || optim.warmup_fraction > 1.0)
    throw ConfigError("config: warmup_fraction must lie in [0, 1]");
  if (edg.k == 0) throw ConfigError("config: edg.k must be positive");
  if (label_range != 3.0 && label_range != 1.0) throw ConfigError("config: label_range must be 3 or 1");
  const auto& a = model.ablation;
  if (!a.use_raw_av && (!a.use_aed || !a.use_ved))
    throw ConfigError("config: audio and visual paths each need raw features or their description");
}

nlohmann::json TrainConfig::to_json() const {
  const auto& m = model;
  const auto& a = m.ablation;
  return {
      {"seed", seed},
      {"precision", to_string(precision)},
      {"label_range", label_range},
      {"model",
       {{"d", m.d},
        {"T", m.seq_len},
        {"J", m.ceu_layers},
        {"K", m.mfu_layers},
        {"heads", m.heads},
        {"ffn_factor", m.ffn_factor},
        {"dropout", m.dropout},
        {"vocab_size", m.vocab_size},
        {"max_text_len", m.max_text_len},
        {"max_desc_len", m.max_desc_len},
        {"audio_len", m.audio_len},
        {"visual_len", m.visual_len},
        {"audio_dim", m.audio_dim},
        {"visual_dim", m.visual_dim},
        {"task", to_string(m.task)},
        {"num_classes", m.num_classes},
        {"embedding_std", m.embedding_std},
        {"minor_init_std", m.minor_init_std},
        {"post_fc_noise", m.post_fc_noise}}},
      {"optim",
       {{"batch_size", optim.batch_size},
        {"lr", optim.lr},
        {"weight_decay", optim.weight_decay},
        {"beta1", optim.beta1},
        {"beta2", optim.beta2},
        {"adam_eps", optim.adam_eps},
        {"epochs", optim.epochs},
        {"warmup_fraction", optim.warmup_fraction},
        {"loss", to_string(optim.loss)}}},
      {"edg",
       {{"k", edg.k},
        {"au_threshold", edg.au_threshold},
        {"tertile_scope", to_string(edg.tertile_scope)},
        {"ved_template", edg.ved_template},
        {"lexicon_file", edg.lexicon_file}}},
      {"ablation",
       {{"use_aed", a.use_aed},
        {"use_ved", a.use_ved},
        {"use_raw_av", a.use_raw_av},
        {"use_ceu", a.use_ceu},
        {"use_mfu", a.use_mfu},
        {"use_fusion_layer", a.use_fusion_layer}}},
  };
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  TrainConfig c = desk();
  if (j.contains("profile")) {
    const auto p = j.at("profile").get<std::string>();
    if (p == "paper") {
      c = paper_scale();
    } else if (p != "desk") {
      throw ConfigError("config: unknown profile '" + p + "'");
    }
  }
  auto& m = c.model;
  auto& o = c.optim;
  auto& a = m.ablation;
  const std::map<std::string, Setter> model_keys{
      {"d", set(m.d)},
      {"T", set(m.seq_len)},
      {"J", set(m.ceu_layers)},
      {"K", set(m.mfu_layers)},
      {"heads", set(m.heads)},
      {"ffn_factor", set(m.ffn_factor)},
      {"dropout", set(m.dropout)},
      {"vocab_size", set(m.vocab_size)},
      {"max_text_len", set(m.max_text_len)},
      {"max_desc_len", set(m.max_desc_len)},
      {"audio_len", set(m.audio_len)},
      {"visual_len", set(m.visual_len)},
      {"audio_dim", set(m.audio_dim)},
      {"visual_dim", set(m.visual_dim)},
      {"task", [&](const nlohmann::json& v) {
         m.task = parse_enum(v, "model.task", {TaskMode::regression, TaskMode::classification});
       }},
      {"num_classes", set(m.num_classes)},
      {"embedding_std", set(m.embedding_std)},
      {"minor_init_std", set(m.minor_init_std)},
      {"post_fc_noise", set(m.post_fc_noise)},
  };
  const std::map<std::string, Setter> optim_keys{
      {"batch_size", set(o.batch_size)},
      {"lr", set(o.lr)},
      {"weight_decay", set(o.weight_decay)},
      {"beta1", set(o.beta1)},
      {"beta2", set(o.beta2)},
      {"adam_eps", set(o.adam_eps)},
      {"epochs", set(o.epochs)},
      {"warmup_fraction", set(o.warmup_fraction)},
      {"loss", [&](const nlohmann::json& v) {
         o.loss = parse_enum(v, "optim.loss", {LossMode::mae, LossMode::mse, LossMode::cross_entropy});
       }},
  };
  const std::map<std::string, Setter> edg_keys{
      {"k", set(c.edg.k)},
      {"au_threshold", set(c.edg.au_threshold)},
      {"tertile_scope", [&](const nlohmann::json& v) {
         c.edg.tertile_scope = parse_enum(v, "edg.tertile_scope", {TertileScope::train, TertileScope::all});
       }},
      {"ved_template", set(c.edg.ved_template)},
      {"lexicon_file", set(c.edg.lexicon_file)},
  };
  const std::map<std::string, Setter> ablation_keys{
      {"use_aed", set(a.use_aed)},
      {"use_ved", set(a.use_ved)},
      {"use_raw_av", set(a.use_raw_av)},
      {"use_ceu", set(a.use_ceu)},
      {"use_mfu", set(a.use_mfu)},
      {"use_fusion_layer", set(a.use_fusion_layer)},
  };
  const std::map<std::string, Setter> top_keys{
      {"profile", [](const nlohmann::json&) {}},
      {"seed", set(c.seed)},
      {"precision", [&](const nlohmann::json& v) {
         c.precision = parse_enum(v, "precision", {Precision::f32, Precision::f64});
       }},
      {"label_range", set(c.label_range)},
      {"model", [&](const nlohmann::json& v) { apply_section(v, "model", model_keys); }},
      {"optim", [&](const nlohmann::json& v) { apply_section(v, "optim", optim_keys); }},
      {"edg", [&](const nlohmann::json& v) { apply_section(v, "edg", edg_keys); }},
      {"ablation", [&](const nlohmann::json& v) { apply_section(v, "ablation", ablation_keys); }},
  };
  apply_section(j, "config", top_keys);
  c.validate();
  return c;
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  return from_json(read_json_file(path));
}

}  // namespace deva
