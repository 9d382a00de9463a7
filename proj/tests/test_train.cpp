#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "deva/errors.hpp"
#include "deva/train.hpp"
#include "test_support.hpp"

namespace deva {
namespace {

namespace fs = std::filesystem;

const Dataset& small_data() {
  static const Dataset d = [] {
    SyntheticSpec s;
    s.train = 240;
    s.valid = 40;
    s.test = 40;
    return make_synthetic(s, nullptr, false);
  }();
  return d;
}

struct Fixture {
  TrainConfig cfg;
  Preprocessor pre;
  PreparedData data;
};

Fixture prepare(TrainConfig cfg, const Dataset& d = small_data()) {
  resolve_feature_dims(cfg.model, d);
  cfg.validate();
  auto pre = Preprocessor::fit(d, cfg);
  auto data = pre.prepare(d);
  return {cfg, std::move(pre), std::move(data)};
}

TrainConfig quick(std::size_t epochs = 2) {
  auto c = TrainConfig::desk();
  c.optim.epochs = epochs;
  c.optim.lr = 1e-3;
  return c;
}

std::vector<double> model_values(const TrainingSession& s) {
  std::vector<double> out;
  for (const auto& t : s.checkpoint().tensors)
    if (t.name.starts_with("model.")) out.insert(out.end(), t.values.begin(), t.values.end());
  return out;
}

TEST(Schedule, WarmupThenFlat) {
  OptimConfig o;
  o.lr = 1e-4;
  o.warmup_fraction = 0.1;
  EXPECT_DOUBLE_EQ(scheduled_lr(o, 0, 100), 1e-5);
  EXPECT_DOUBLE_EQ(scheduled_lr(o, 4, 100), 5e-5);
  EXPECT_DOUBLE_EQ(scheduled_lr(o, 9, 100), 1e-4);
  EXPECT_DOUBLE_EQ(scheduled_lr(o, 60, 100), 1e-4);
  EXPECT_DOUBLE_EQ(scheduled_lr(o, 0, 5), 1e-4);  // ceil(0.5) = 1 warmup step
  o.warmup_fraction = 0.0;
  EXPECT_DOUBLE_EQ(scheduled_lr(o, 0, 100), 1e-4);
}

TEST(AdamW, SingleStepMatchesHandComputation) {
  OptimConfig o;
  o.weight_decay = 0.01;
  ParameterList<double> params{{"w", make_parameter<double>({2}, {1.0, -2.0})}};
  params[0].tensor.mutable_grad()[0] = 0.5;
  params[0].tensor.mutable_grad()[1] = -0.1;
  AdamW<double> opt(o, params);
  opt.step(params, 0.1);
  // First step: mhat = g, vhat = g^2, so the update is lr * g / (|g| + eps).
  EXPECT_NEAR(params[0].tensor.at(0), (1 - 0.1 * 0.01) * 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_NEAR(params[0].tensor.at(1), (1 - 0.1 * 0.01) * -2.0 + 0.1 * 0.1 / (0.1 + 1e-8), 1e-15);
  EXPECT_EQ(opt.steps, 1u);

  // Second step with the same gradient, by the bias-corrected recurrences.
  const double g = 0.5, b1 = 0.9, b2 = 0.999;
  const double m = b1 * (1 - b1) * g + (1 - b1) * g, v = b2 * (1 - b2) * g * g + (1 - b2) * g * g;
  const double mhat = m / (1 - b1 * b1), vhat = v / (1 - b2 * b2);
  const double w1 = params[0].tensor.at(0);
  params[0].tensor.mutable_grad()[0] = 0.5;
  params[0].tensor.mutable_grad()[1] = -0.1;
  opt.step(params, 0.1);
  EXPECT_NEAR(params[0].tensor.at(0), (1 - 0.1 * 0.01) * w1 - 0.1 * mhat / (std::sqrt(vhat) + 1e-8), 1e-15);
}

TEST(Training, ZeroLearningRateLeavesParameters) {
  auto c = quick(1);
  c.optim.lr = 0.0;
  const auto f = prepare(c);
  auto s = make_session(f.cfg, f.pre, f.data);
  const auto before = model_values(*s);
  s->run();
  EXPECT_EQ(s->epoch(), 1u);
  EXPECT_EQ(model_values(*s), before);
}

TEST(Training, FixedSeedGivesIdenticalHistory) {
  for (auto precision : {Precision::f32, Precision::f64}) {
    auto c = quick(2);
    c.precision = precision;
    const auto f = prepare(c);
    auto a = make_session(f.cfg, f.pre, f.data);
    auto b = make_session(f.cfg, f.pre, f.data);
    a->run();
    b->run();
    ASSERT_EQ(a->history().size(), 2u);
    for (std::size_t e = 0; e < 2; ++e) {
      EXPECT_EQ(a->history()[e].train_loss, b->history()[e].train_loss);
      EXPECT_EQ(a->history()[e].valid->mae, b->history()[e].valid->mae);
    }
    EXPECT_EQ(a->predict(f.data.test, true), b->predict(f.data.test, true));

    auto other = c;
    other.seed = 99;
    const auto g = prepare(other);
    auto d = make_session(g.cfg, g.pre, g.data);
    d->run(1);
    EXPECT_NE(d->history()[0].train_loss, a->history()[0].train_loss);
  }
}

TEST(Training, DeskLossDecreasesOverFirstFiveEpochs) {
  static const Dataset full = make_synthetic(SyntheticSpec{}, nullptr, false);
  auto c = TrainConfig::desk();
  const auto f = prepare(c, full);
  auto s = make_session(f.cfg, f.pre, f.data);
  s->run(5);
  const auto& h = s->history();
  ASSERT_EQ(h.size(), 5u);
  for (std::size_t e = 1; e < 5; ++e) EXPECT_LT(h[e].train_loss, h[e - 1].train_loss) << "epoch " << e + 1;
}

class Resume : public ::testing::Test {
 protected:
  void SetUp() override { path_ = fs::temp_directory_path() / "deva_resume_test.ckpt"; }
  void TearDown() override { fs::remove(path_); }
  fs::path path_;
};

TEST_F(Resume, MatchesUninterruptedRun) {
  for (auto precision : {Precision::f32, Precision::f64}) {
    auto c = quick(4);
    c.precision = precision;
    const auto f = prepare(c);
    auto straight = make_session(f.cfg, f.pre, f.data);
    straight->run();

    auto first = make_session(f.cfg, f.pre, f.data);
    first->run(2);
    save_checkpoint(first->checkpoint(), path_);
    auto resumed = resume_session(load_checkpoint(path_), f.data);
    EXPECT_EQ(resumed->epoch(), 2u);
    resumed->run();

    ASSERT_EQ(resumed->history().size(), 4u);
    const double tol = precision == Precision::f64 ? 0.0 : 1e-6;
    for (std::size_t e = 0; e < 4; ++e) {
      EXPECT_NEAR(resumed->history()[e].train_loss, straight->history()[e].train_loss, tol);
      EXPECT_NEAR(resumed->history()[e].valid->mae, straight->history()[e].valid->mae, tol);
    }
    EXPECT_EQ(resumed->best_epoch(), straight->best_epoch());
  }
}

TEST(Training, NonFiniteLossNamesTheBatch) {
  const auto f = prepare(quick(1));
  auto data = f.data;
  data.train[17].label = NAN;
  auto s = make_session(f.cfg, f.pre, data);
  try {
    s->run_epoch();
    FAIL() << "NaN loss did not abort";
  } catch (const NumericError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("batch"), std::string::npos) << what;
    EXPECT_NE(what.find(data.train[17].id), std::string::npos) << what;
  }
}

TEST(Training, ClassificationTask) {
  auto c = quick(1);
  c.model.task = TaskMode::classification;
  c.model.num_classes = 2;
  c.optim.loss = LossMode::cross_entropy;
  const auto f = prepare(c);
  auto s = make_session(f.cfg, f.pre, f.data);
  s->run();
  for (double p : s->predict(f.data.test, true)) EXPECT_TRUE(p == 1.0 || p == -1.0) << p;
}

TEST(Runs, TrainEvaluateAndPredictFromCheckpoint) {
  const auto path = fs::temp_directory_path() / "deva_run_test.ckpt";
  const auto r = train_and_evaluate(quick(2), small_data(), nullptr, path);
  EXPECT_EQ(r.history.size(), 2u);
  EXPECT_GE(r.best_epoch, 1u);
  EXPECT_EQ(r.test.count, 40u);
  EXPECT_TRUE(r.to_json().contains("test"));

  const auto ckpt = load_checkpoint(path);
  const auto preds = predict_checkpoint(ckpt, small_data());
  std::vector<double> labels;
  for (const auto& u : small_data().test) labels.push_back(u.label);
  EXPECT_EQ(compute_metrics(preds, labels, 3.0).mae, r.test.mae);
  EXPECT_EQ(config_from_checkpoint(ckpt).to_json(), [] {
    auto c = quick(2);
    resolve_feature_dims(c.model, small_data());
    return c.to_json();
  }());
  fs::remove(path);
}

TEST(Ablation, Toggles) {
  const auto base = TrainConfig::desk();
  EXPECT_EQ(apply_toggles(base, {}).to_json(), base.to_json());
  const auto no_edg = apply_toggles(base, {"no_edg"});
  EXPECT_FALSE(no_edg.model.ablation.use_aed);
  EXPECT_FALSE(no_edg.model.ablation.use_ved);
  EXPECT_TRUE(no_edg.model.ablation.use_raw_av);
  EXPECT_FALSE(apply_toggles(base, {"no_fusion_layer"}).model.ablation.use_fusion_layer);
  EXPECT_THROW(apply_toggles(base, {"no_text"}), ConfigError);
  for (const auto& t : kAblationToggles) EXPECT_NO_THROW(apply_toggles(base, {t}).validate()) << t;
}

TEST(Ablation, RowsAndCsv) {
  auto c = quick(1);
  const auto rows = ablate(c, small_data(), {"no_mfu", "no_raw_av"});
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].name, "full");
  EXPECT_LT(rows[1].result.parameters, rows[0].result.parameters);
  const auto csv = ablation_csv(rows);
  EXPECT_TRUE(csv.starts_with("variant,")) << csv;
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}

}  // namespace
}  // namespace deva
