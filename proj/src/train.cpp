#include "deva/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "deva/errors.hpp"

namespace deva {

// ---------------------------------------------------------------------------
// Optimizer and schedule

template <typename T>
AdamW<T>::AdamW(const OptimConfig& c, const ParameterList<T>& params) : cfg(c) {
  for (const auto& p : params) {
    m.emplace_back(p.tensor.numel(), T(0));
    v.emplace_back(p.tensor.numel(), T(0));
  }
}

template <typename T>
void AdamW<T>::step(ParameterList<T>& params, double lr) {
  if (params.size() != m.size()) throw std::logic_error("AdamW: parameter list changed size");
  ++steps;
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps));
  const double decay = 1.0 - lr * cfg.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& t = params[i].tensor;
    if (!t.has_grad()) continue;
    auto w = t.mutable_data();
    auto g = t.grad();
    auto& mi = m[i];
    auto& vi = v[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g[k];
      const double mk = b1 * mi[k] + (1.0 - b1) * gk;
      const double vk = b2 * vi[k] + (1.0 - b2) * gk * gk;
      mi[k] = static_cast<T>(mk);
      vi[k] = static_cast<T>(vk);
      const double update = (mk / c1) / (std::sqrt(vk / c2) + cfg.adam_eps);
      w[k] = static_cast<T>(decay * w[k] - lr * update);
    }
  }
}

template class AdamW<float>;
template class AdamW<double>;

double scheduled_lr(const OptimConfig& cfg, std::size_t step, std::size_t total_steps) {
  const auto warm = static_cast<std::size_t>(std::ceil(cfg.warmup_fraction * static_cast<double>(total_steps)));
  if (warm == 0 || step >= warm) return cfg.lr;
  return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(warm);
}

// ---------------------------------------------------------------------------
// History

nlohmann::json EpochRecord::to_json() const {
  return {{"epoch", epoch},
          {"train_loss", train_loss},
          {"lr", lr},
          {"valid", valid ? valid->to_json() : nlohmann::json(nullptr)}};
}

namespace {

MetricsReport metrics_from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.count = j.at("count").get<std::size_t>();
  r.nonzero_count = j.at("nonzero_count").get<std::size_t>();
  r.acc2_incl = j.at("acc2_incl_zero").get<double>();
  r.acc2_excl = j.at("acc2_excl_zero").get<double>();
  r.f1_incl = j.at("f1_incl_zero").get<double>();
  r.f1_excl = j.at("f1_excl_zero").get<double>();
  if (!j.at("acc3").is_null()) r.acc3 = j.at("acc3").get<double>();
  r.acc5 = j.at("acc5").get<double>();
  if (!j.at("acc7").is_null()) r.acc7 = j.at("acc7").get<double>();
  r.mae = j.at("mae").get<double>();
  r.corr = j.at("corr").get<double>();
  return r;
}

std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void restore_rng(std::mt19937_64& rng, const std::string& state) {
  std::istringstream is(state);
  is >> rng;
  if (!is) throw DataError("checkpoint: corrupt generator state");
}

}  // namespace

EpochRecord EpochRecord::from_json(const nlohmann::json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch").get<std::size_t>();
  r.train_loss = j.at("train_loss").get<double>();
  r.lr = j.at("lr").get<double>();
  if (!j.at("valid").is_null()) r.valid = metrics_from_json(j.at("valid"));
  return r;
}

// ---------------------------------------------------------------------------
// Session

void TrainingSession::run(std::size_t stop_at) {
  const std::size_t target = stop_at == 0 ? cfg_.optim.epochs : std::min(stop_at, cfg_.optim.epochs);
  while (epoch() < target) run_epoch();
}

namespace {

constexpr std::uint64_t kShuffleSalt = 0x5DEECE66DULL;
constexpr std::uint64_t kDropoutSalt = 0x9E3779B97F4A7C15ULL;

template <typename T>
class Session final : public TrainingSession {
 public:
  Session(const TrainConfig& cfg, nlohmann::json pre, const PreparedData& data)
      : TrainingSession(cfg, std::move(pre)),
        data_(data),
        init_rng_(cfg.seed),
        model_(cfg.model, init_rng_),
        best_(cfg.model, init_rng_),
        params_(model_.parameters()),
        best_params_(best_.parameters()),
        opt_(cfg.optim, params_),
        shuffle_rng_(cfg.seed ^ kShuffleSalt),
        dropout_rng_(cfg.seed ^ kDropoutSalt) {
    if (data_.train.empty()) throw DataError("training split is empty");
    copy_params(params_, best_params_);
  }

  EpochRecord run_epoch() override {
    const auto started = std::chrono::steady_clock::now();
    const std::size_t n = data_.train.size();
    const std::size_t bs = cfg_.optim.batch_size;
    const std::size_t batches = (n + bs - 1) / bs;
    const std::size_t total_steps = batches * cfg_.optim.epochs;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = n - 1; i > 0; --i) {
      const auto j = static_cast<std::size_t>(shuffle_rng_() % (i + 1));
      std::swap(order[i], order[j]);
    }

    double loss_sum = 0.0;
    double lr = 0.0;
    const auto mode = RunMode::train(dropout_rng_);
    for (std::size_t b = 0; b < batches; ++b) {
      const std::span<const std::size_t> rows(order.data() + b * bs, std::min(bs, n - b * bs));
      const auto input = make_batch(data_.train, rows, cfg_.model);
      const auto labels = targets(data_.train, rows);
      zero_grads(params_);
      const auto loss = compute_loss(model_.forward(input, mode), labels, cfg_.optim.loss);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        std::string ids;
        for (auto r : rows) ids += (ids.empty() ? "" : ",") + data_.train[r].id;
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch_ + 1) + ", batch " +
                           std::to_string(b) + " (samples " + ids + ")");
      }
      loss.backward();
      lr = scheduled_lr(cfg_.optim, step_, total_steps);
      opt_.step(params_, lr);
      ++step_;
      loss_sum += value * static_cast<double>(rows.size());
    }
    zero_grads(params_);

    ++epoch_;
    EpochRecord rec;
    rec.epoch = epoch_;
    rec.train_loss = loss_sum / static_cast<double>(n);
    rec.lr = lr;
    if (!data_.valid.empty()) {
      const auto preds = predict_with(model_, data_.valid);
      rec.valid = compute_metrics(preds, labels_of(data_.valid), cfg_.label_range);
    }
    if (!rec.valid || best_epoch_ == 0 || rec.valid->mae < best_valid_mae_) {
      best_valid_mae_ = rec.valid ? rec.valid->mae : 0.0;
      best_epoch_ = epoch_;
      copy_params(params_, best_params_);
    }
    history_.push_back(rec);
    if (log_) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      char line[256];
      if (rec.valid) {
        std::snprintf(line, sizeof line,
                      "epoch %zu/%zu loss %.4f lr %.2e valid_mae %.4f valid_acc2 %.4f (%.1fs)\n", epoch_,
                      cfg_.optim.epochs, rec.train_loss, lr, rec.valid->mae, rec.valid->acc2_excl, secs);
      } else {
        std::snprintf(line, sizeof line, "epoch %zu/%zu loss %.4f lr %.2e (%.1fs)\n", epoch_,
                      cfg_.optim.epochs, rec.train_loss, lr, secs);
      }
      *log_ << line << std::flush;
    }
    return rec;
  }

  std::vector<double> predict(const PreparedSplit& split, bool best) const override {
    return predict_with(best ? best_ : model_, split);
  }

  std::size_t epoch() const override { return epoch_; }
  const std::vector<EpochRecord>& history() const override { return history_; }
  std::size_t best_epoch() const override { return best_epoch_; }
  std::size_t parameter_count() const override { return count_elements(params_); }

  Checkpoint checkpoint() const override {
    Checkpoint c;
    c.config = cfg_.to_json();
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& h : history_) hist.push_back(h.to_json());
    c.meta = {{"epoch", epoch_},
              {"step", step_},
              {"adam_steps", opt_.steps},
              {"best_epoch", best_epoch_},
              {"best_valid_mae", best_valid_mae_},
              {"shuffle_rng", rng_state(shuffle_rng_)},
              {"dropout_rng", rng_state(dropout_rng_)},
              {"history", hist},
              {"preprocessor", preprocessor_}};
    store_parameters(params_, "model.", c.tensors);
    store_parameters(best_params_, "best.", c.tensors);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const auto& shape = params_[i].tensor.shape();
      c.tensors.push_back(store_tensor("adam.m." + params_[i].name, Tensor<T>::from(shape, opt_.m[i])));
      c.tensors.push_back(store_tensor("adam.v." + params_[i].name, Tensor<T>::from(shape, opt_.v[i])));
    }
    return c;
  }

  void restore(const Checkpoint& c) {
    restore_parameters(c, "model.", params_);
    restore_parameters(c, "best.", best_params_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      for (auto [prefix, buf] : {std::pair{"adam.m.", &opt_.m[i]}, std::pair{"adam.v.", &opt_.v[i]}}) {
        const auto name = prefix + params_[i].name;
        const auto* s = c.find(name);
        if (!s || s->values.size() != buf->size()) throw DataError("checkpoint is missing or misshapes " + name);
        for (std::size_t k = 0; k < buf->size(); ++k) (*buf)[k] = static_cast<T>(s->values[k]);
      }
    }
    try {
      const auto& m = c.meta;
      epoch_ = m.at("epoch").get<std::size_t>();
      step_ = m.at("step").get<std::size_t>();
      opt_.steps = m.at("adam_steps").get<std::uint64_t>();
      best_epoch_ = m.at("best_epoch").get<std::size_t>();
      best_valid_mae_ = m.at("best_valid_mae").get<double>();
      restore_rng(shuffle_rng_, m.at("shuffle_rng").get<std::string>());
      restore_rng(dropout_rng_, m.at("dropout_rng").get<std::string>());
      history_.clear();
      for (const auto& h : m.at("history")) history_.push_back(EpochRecord::from_json(h));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("checkpoint metadata: ") + e.what());
    }
  }

 private:
  static void copy_params(const ParameterList<T>& from, ParameterList<T>& to) {
    for (std::size_t i = 0; i < from.size(); ++i) {
      auto src = from[i].tensor.data();
      auto dst = to[i].tensor.mutable_data();
      std::copy(src.begin(), src.end(), dst.begin());
    }
  }

  std::vector<double> targets(const PreparedSplit& split, std::span<const std::size_t> rows) const {
    std::vector<double> out;
    for (auto r : rows) {
      const double y = split[r].label;
      out.push_back(cfg_.model.task == TaskMode::regression
                        ? y
                        : class_of(y, cfg_.model.num_classes, cfg_.label_range));
    }
    return out;
  }

  static std::vector<double> labels_of(const PreparedSplit& split) {
    std::vector<double> out;
    for (const auto& s : split) out.push_back(s.label);
    return out;
  }

  std::vector<double> predict_with(const DevaModel<T>& model, const PreparedSplit& split) const {
    NoGradGuard guard;
    std::vector<double> out;
    const std::size_t bs = cfg_.optim.batch_size;
    std::vector<std::size_t> rows;
    for (std::size_t start = 0; start < split.size(); start += bs) {
      rows.clear();
      for (std::size_t r = start; r < std::min(split.size(), start + bs); ++r) rows.push_back(r);
      const auto preds = model.forward(make_batch(split, rows, cfg_.model), RunMode::eval());
      const std::size_t width = preds.dim(1);
      auto values = preds.data();
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (width == 1) {
          out.push_back(static_cast<double>(values[i]));
        } else {
          const auto row = values.subspan(i * width, width);
          const auto cls = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
          out.push_back(score_of_class(cls, cfg_.model.num_classes, cfg_.label_range));
        }
      }
    }
    return out;
  }

  const PreparedData& data_;
  std::mt19937_64 init_rng_;
  DevaModel<T> model_;
  DevaModel<T> best_;
  ParameterList<T> params_;
  ParameterList<T> best_params_;
  AdamW<T> opt_;
  std::mt19937_64 shuffle_rng_;
  std::mt19937_64 dropout_rng_;
  std::size_t epoch_ = 0;
  std::size_t step_ = 0;
  std::size_t best_epoch_ = 0;
  double best_valid_mae_ = 0.0;
  std::vector<EpochRecord> history_;
};

template <typename T>
std::unique_ptr<TrainingSession> build_session(const TrainConfig& cfg, nlohmann::json pre,
                                               const PreparedData& data, const Checkpoint* ckpt) {
  auto s = std::make_unique<Session<T>>(cfg, std::move(pre), data);
  if (ckpt) s->restore(*ckpt);
  return s;
}

std::unique_ptr<TrainingSession> dispatch(const TrainConfig& cfg, nlohmann::json pre,
                                          const PreparedData& data, const Checkpoint* ckpt) {
  cfg.validate();
  if (cfg.precision == Precision::f32) return build_session<float>(cfg, std::move(pre), data, ckpt);
  return build_session<double>(cfg, std::move(pre), data, ckpt);
}

}  // namespace

std::unique_ptr<TrainingSession> make_session(const TrainConfig& cfg, const Preprocessor& pre,
                                              const PreparedData& data) {
  return dispatch(cfg, pre.to_json(), data, nullptr);
}

TrainConfig config_from_checkpoint(const Checkpoint& ckpt) { return TrainConfig::from_json(ckpt.config); }

Preprocessor preprocessor_from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.meta.contains("preprocessor")) throw DataError("checkpoint has no preprocessing state");
  return Preprocessor::from_json(ckpt.meta.at("preprocessor"), config_from_checkpoint(ckpt));
}

std::unique_ptr<TrainingSession> resume_session(const Checkpoint& ckpt, const PreparedData& data) {
  const auto cfg = config_from_checkpoint(ckpt);
  return dispatch(cfg, ckpt.meta.at("preprocessor"), data, &ckpt);
}

// ---------------------------------------------------------------------------
// Runs

nlohmann::json RunResult::to_json() const {
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& h : history) hist.push_back(h.to_json());
  return {{"history", hist},
          {"best_epoch", best_epoch},
          {"parameters", parameters},
          {"test", test.to_json()},
          {"seconds", seconds}};
}

RunResult train_and_evaluate(TrainConfig cfg, const Dataset& data, std::ostream* log,
                             const std::filesystem::path& checkpoint_out) {
  const auto started = std::chrono::steady_clock::now();
  resolve_feature_dims(cfg.model, data);
  cfg.validate();
  if (data.test.empty()) throw DataError("test split is empty");
  const auto pre = Preprocessor::fit(data, cfg);
  const auto prepared = pre.prepare(data);
  auto session = make_session(cfg, pre, prepared);
  session->set_log(log);
  session->run();
  if (!checkpoint_out.empty()) save_checkpoint(session->checkpoint(), checkpoint_out);

  RunResult r;
  r.history = session->history();
  r.best_epoch = session->best_epoch();
  r.parameters = session->parameter_count();
  std::vector<double> labels;
  for (const auto& s : prepared.test) labels.push_back(s.label);
  r.test = compute_metrics(session->predict(prepared.test, true), labels, cfg.label_range);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return r;
}

std::vector<double> predict_checkpoint(const Checkpoint& ckpt, const Dataset& data,
                                       PreparedSplit* prepared_test) {
  auto cfg = config_from_checkpoint(ckpt);
  const auto pre = Preprocessor::from_json(ckpt.meta.at("preprocessor"), cfg);
  PreparedData prepared;
  for (const auto& u : data.test) prepared.test.push_back(pre.prepare(u));
  // The session only reads the training split when stepping.
  prepared.train = prepared.test;
  auto session = resume_session(ckpt, prepared);
  auto preds = session->predict(prepared.test, true);
  if (prepared_test) *prepared_test = std::move(prepared.test);
  return preds;
}

// ---------------------------------------------------------------------------
// Ablation

TrainConfig apply_toggles(TrainConfig cfg, const std::vector<std::string>& toggles) {
  auto& a = cfg.model.ablation;
  for (const auto& t : toggles) {
    if (t == "no_aed") {
      a.use_aed = false;
    } else if (t == "no_ved") {
      a.use_ved = false;
    } else if (t == "no_raw_av") {
      a.use_raw_av = false;
    } else if (t == "no_ceu") {
      a.use_ceu = false;
    } else if (t == "no_mfu") {
      a.use_mfu = false;
    } else if (t == "no_edg") {
      a.use_aed = false;
      a.use_ved = false;
    } else if (t == "no_fusion_layer") {
      a.use_fusion_layer = false;
    } else {
      throw ConfigError("unknown ablation toggle '" + t + "'");
    }
  }
  cfg.validate();
  return cfg;
}

std::vector<AblationRow> ablate(const TrainConfig& base, const Dataset& data,
                                const std::vector<std::string>& toggles, std::ostream* log) {
  for (const auto& t : toggles) apply_toggles(base, {t});
  std::vector<AblationRow> rows;
  if (log) *log << "== full\n";
  rows.push_back({"full", train_and_evaluate(base, data, log)});
  for (const auto& t : toggles) {
    if (log) *log << "== " << t << '\n';
    rows.push_back({t, train_and_evaluate(apply_toggles(base, {t}), data, log)});
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "variant,parameters,acc2_incl_zero,acc2_excl_zero,f1_incl_zero,f1_excl_zero,acc5,acc7,mae,corr\n";
  char buf[512];
  for (const auto& r : rows) {
    const auto& m = r.result.test;
    std::snprintf(buf, sizeof buf, "%s,%zu,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", r.name.c_str(),
                  r.result.parameters, m.acc2_incl, m.acc2_excl, m.f1_incl, m.f1_excl, m.acc5,
                  m.acc7.value_or(m.acc3.value_or(0.0)), m.mae, m.corr);
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gradient check

GradCheckReport model_grad_check(TrainConfig cfg, double h, double tol) {
  cfg.precision = Precision::f64;
  cfg.model.dropout = 0.0;
  SyntheticSpec spec;
  spec.train = 4;
  spec.valid = 1;
  spec.test = 1;
  spec.seed = cfg.seed;
  spec.label_range = cfg.label_range;
  const auto data = make_synthetic(spec, nullptr, false);
  resolve_feature_dims(cfg.model, data);
  cfg.validate();
  const auto pre = Preprocessor::fit(data, cfg);
  const PreparedSplit batch{pre.prepare(data.train[0]), pre.prepare(data.train[1])};
  const std::vector<std::size_t> rows{0, 1};
  const auto input = make_batch(batch, rows, cfg.model);
  std::vector<double> labels;
  for (const auto& s : batch)
    labels.push_back(cfg.model.task == TaskMode::regression
                         ? s.label
                         : class_of(s.label, cfg.model.num_classes, cfg.label_range));

  std::mt19937_64 init_rng(cfg.seed);
  DevaModel<double> model(cfg.model, init_rng);
  auto params = model.parameters();
  const auto loss_fn = [&] {
    return compute_loss(model.forward(input, RunMode::eval()), labels, cfg.optim.loss);
  };
  return grad_check(loss_fn, params, h, tol);
}

}  // namespace deva
