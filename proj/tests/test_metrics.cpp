#include <gtest/gtest.h>

#include <cmath>

#include "deva/metrics.hpp"
#include "metric_fixture.hpp"
#include "test_support.hpp"

namespace deva {
namespace {

using testing::Gen;

TEST(Metrics, TenSampleFixture) {
  const testing::MetricFixture fx;
  const auto m = compute_metrics(fx.preds, fx.labels, 3.0);
  EXPECT_EQ(m.count, 10u);
  EXPECT_EQ(m.nonzero_count, 8u);
  EXPECT_EQ(m.acc2_incl, fx.acc2_incl);
  EXPECT_EQ(m.acc2_excl, fx.acc2_excl);
  EXPECT_NEAR(m.f1_incl, fx.f1_incl, 1e-15);
  EXPECT_NEAR(m.f1_excl, fx.f1_excl, 1e-15);
  ASSERT_TRUE(m.acc7.has_value());
  EXPECT_EQ(*m.acc7, fx.acc7);
  EXPECT_EQ(m.acc5, fx.acc5);
  EXPECT_FALSE(m.acc3.has_value());
  EXPECT_NEAR(m.mae, fx.mae, 1e-9);
  EXPECT_NEAR(m.corr, fx.corr, 1e-9);
}

TEST(Metrics, Examples) {
  const std::vector<double> y{-2, 0, 1};
  auto m = compute_metrics(y, y, 3.0);
  EXPECT_EQ(m.acc2_incl, 1.0);
  EXPECT_EQ(m.acc2_excl, 1.0);
  EXPECT_EQ(m.nonzero_count, 2u);
  EXPECT_EQ(m.mae, 0.0);
  EXPECT_NEAR(m.corr, 1.0, 1e-12);

  const std::vector<double> p{-1, 0.5, 2}, l{-2, 1, 2};
  EXPECT_NEAR(compute_metrics(p, l, 3.0).mae, 0.5, 1e-15);

  const std::vector<double> flat{1, 1, 1};
  EXPECT_EQ(compute_metrics(p, flat, 3.0).corr, 0.0);
  EXPECT_EQ(pearson(flat, p), 0.0);

  const std::vector<double> two{1, 2};
  EXPECT_THROW(compute_metrics(p, two, 3.0), std::invalid_argument);
  EXPECT_THROW(compute_metrics({}, {}, 3.0), std::invalid_argument);
  EXPECT_THROW(compute_metrics(p, l, 2.0), std::invalid_argument);
}

TEST(Metrics, AllZeroLabelsLeaveExclusiveScoresEmpty) {
  const std::vector<double> p{0.3, -0.1}, l{0, 0};
  const auto m = compute_metrics(p, l, 3.0);
  EXPECT_EQ(m.nonzero_count, 0u);
  EXPECT_EQ(m.acc2_excl, 0.0);
  EXPECT_EQ(m.acc2_incl, 0.5);
}

TEST(Metrics, UnitRangeBins) {
  // Three bins split at +-0.1, five at +-0.1 and +-0.7; labels on the closed-right side.
  const std::vector<double> l{-1.0, -0.7, -0.1, 0.0, 0.1, 0.5, 0.9};
  const std::vector<double> p{-0.8, -0.6, -0.2, 0.05, 0.15, 0.75, 1.4};
  const auto m = compute_metrics(p, l, 1.0);
  ASSERT_TRUE(m.acc3.has_value());
  EXPECT_FALSE(m.acc7.has_value());
  // acc3 classes: l -> 0,0,0,1,1,2,2 ; p -> 0,0,0,1,2,2,2
  EXPECT_NEAR(*m.acc3, 6.0 / 7.0, 1e-15);
  // acc5 classes: l -> 0,0,1,2,2,3,4 ; p -> 0,1,1,2,3,4,4
  EXPECT_NEAR(m.acc5, 4.0 / 7.0, 1e-15);
}

TEST(Metrics, WeightedF1MatchesDefinition) {
  Gen gen(61);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = gen.index(1, 30);
    std::vector<int> t(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = gen.coin() ? 1 : 0;
      p[i] = gen.coin() ? 1 : 0;
    }
    double weighted = 0;
    for (int c : {0, 1}) {
      double tp = 0, fp = 0, fn = 0, support = 0;
      for (std::size_t i = 0; i < n; ++i) {
        tp += t[i] == c && p[i] == c;
        fp += t[i] != c && p[i] == c;
        fn += t[i] == c && p[i] != c;
        support += t[i] == c;
      }
      const double f1 = tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn);
      weighted += support * f1;
    }
    EXPECT_NEAR(weighted_f1(t, p), weighted / n, 1e-12);
  }
}

TEST(Metrics, RangesOfRandomReports) {
  Gen gen(62);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = gen.index(2, 40);
    std::vector<double> p, l;
    for (std::size_t i = 0; i < n; ++i) {
      p.push_back(gen.uniform(-4, 4));
      l.push_back(std::round(gen.uniform(-3, 3) * 10) / 10);
    }
    const auto m = compute_metrics(p, l, 3.0);
    for (double a : {m.acc2_incl, m.acc2_excl, m.f1_incl, m.f1_excl, m.acc5, *m.acc7}) {
      EXPECT_GE(a, 0.0);
      EXPECT_LE(a, 1.0);
    }
    EXPECT_GE(m.mae, 0.0);
    EXPECT_LE(std::abs(m.corr), 1.0 + 1e-12);
  }
}

TEST(Metrics, JsonKeys) {
  const testing::MetricFixture fx;
  const auto j = compute_metrics(fx.preds, fx.labels, 3.0).to_json();
  for (const char* key : {"acc2_incl_zero", "acc2_excl_zero", "f1_incl_zero", "f1_excl_zero", "acc5",
                          "acc7", "mae", "corr", "count"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_TRUE(j.at("acc3").is_null());
}

TEST(FineGrained, IntervalsPartitionTheTestSet) {
  const testing::MetricFixture fx;
  const auto reports = fine_grained_eval(fx.preds, fx.labels, 3.0);
  std::vector<std::string> names;
  std::size_t total = 0;
  for (const auto& r : reports) {
    names.push_back(r.name);
    total += r.count;
    EXPECT_EQ(r.metrics.has_value(), r.count > 0) << r.name;
  }
  EXPECT_EQ(names, (std::vector<std::string>{"[-3,-2)", "[-2,-1)", "[-1,0)", "(0,+1]", "(+1,+2]",
                                             "(+2,+3]", "0"}));
  EXPECT_EQ(total, fx.labels.size());
  // -3, -2.2 | none | -1, -0.4 | 0.6 | 1.4 | 2.5, 3 | 0, 0
  std::vector<std::size_t> counts;
  for (const auto& r : reports) counts.push_back(r.count);
  EXPECT_EQ(counts, (std::vector<std::size_t>{2, 0, 2, 1, 1, 2, 2}));

  Gen gen(63);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = gen.index(1, 60);
    std::vector<double> p, l;
    for (std::size_t i = 0; i < n; ++i) {
      p.push_back(gen.uniform(-3, 3));
      l.push_back(gen.coin(0.1) ? 0.0 : std::round(gen.uniform(-3, 3) * 10) / 10);
    }
    std::size_t sum = 0;
    for (const auto& r : fine_grained_eval(p, l, 3.0)) sum += r.count;
    EXPECT_EQ(sum, n);
  }
}

TEST(FineGrained, SingleInterval) {
  const std::vector<double> p{0.5, 0.7}, l{0.4, 0.9};
  std::size_t populated = 0;
  for (const auto& r : fine_grained_eval(p, l, 3.0)) populated += r.metrics.has_value();
  EXPECT_EQ(populated, 1u);
}

}  // namespace
}  // namespace deva
