#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "deva/edg.hpp"
#include "deva/errors.hpp"
#include "edg_oracle.hpp"
#include "test_support.hpp"

namespace deva::edg {
namespace {

using deva::testing::Gen;
using deva::testing::oracle_candidates;
using deva::testing::oracle_top_k;
using deva::testing::random_track;

// Independent quantile oracle: position q * (n - 1) on the sorted sample.
double oracle_quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] + (pos - static_cast<double>(lo)) * (v[lo + 1] - v[lo]);
}

std::vector<ProsodyAggregate> corpus_of(const std::vector<double>& pitch) {
  std::vector<ProsodyAggregate> out;
  for (double p : pitch) out.push_back({p, p, p, p});
  return out;
}

TEST(Tertiles, OneToNine) {
  const auto table = fit_tertiles(corpus_of({9, 3, 1, 7, 5, 2, 8, 4, 6}));
  const auto& b = table[ProsodyFeature::pitch];
  EXPECT_NEAR(b.lower, 11.0 / 3.0, 1e-12);
  EXPECT_NEAR(b.upper, 19.0 / 3.0, 1e-12);
  EXPECT_NEAR(b.lower, 3.67, 5e-3);
  EXPECT_NEAR(b.upper, 6.33, 5e-3);
}

TEST(Tertiles, DegenerateAndTooSmall) {
  const auto table = fit_tertiles(corpus_of({5, 5, 5, 5}));
  EXPECT_EQ(table[ProsodyFeature::loudness].lower, 5.0);
  EXPECT_EQ(table[ProsodyFeature::loudness].upper, 5.0);
  EXPECT_THROW(fit_tertiles(corpus_of({1, 2})), std::invalid_argument);
  EXPECT_THROW(fit_tertiles(corpus_of({})), std::invalid_argument);
}

TEST(Tertiles, MatchQuantileOracle) {
  Gen gen(31);
  for (int trial = 0; trial < 100; ++trial) {
    const auto v = gen.values(gen.index(3, 60), 100.0);
    const auto table = fit_tertiles(corpus_of(v));
    EXPECT_NEAR(table[ProsodyFeature::jitter].lower, oracle_quantile(v, 1.0 / 3.0), 1e-9);
    EXPECT_NEAR(table[ProsodyFeature::jitter].upper, oracle_quantile(v, 2.0 / 3.0), 1e-9);
  }
}

TEST(Tertiles, JsonRoundTrip) {
  const auto table = fit_tertiles(corpus_of({1, 2, 3, 4, 5}));
  const auto back = TertileTable::from_json(table.to_json());
  for (std::size_t f = 0; f < kProsodyFeatures; ++f) {
    EXPECT_EQ(back.bounds[f].lower, table.bounds[f].lower);
    EXPECT_EQ(back.bounds[f].upper, table.bounds[f].upper);
  }
  EXPECT_THROW(TertileTable::from_json(nlohmann::json::object()), DataError);
}

TEST(BinLevel, Boundaries) {
  const auto table = fit_tertiles(corpus_of({1, 2, 3, 4, 5, 6, 7, 8, 9}));
  const auto f = ProsodyFeature::pitch;
  EXPECT_EQ(bin_level(2, f, table), Level::low);
  EXPECT_EQ(bin_level(table[f].lower, f, table), Level::normal);
  EXPECT_EQ(bin_level(table[f].upper, f, table), Level::normal);
  EXPECT_EQ(bin_level(7, f, table), Level::high);
  EXPECT_THROW(bin_level(NAN, f, table), std::invalid_argument);
}

TEST(Prosody, Aggregate) {
  ProsodySeries s{{100, 100}, {1, 3}, {0.1, 0.3}, {0.2, 0.2}};
  auto agg = aggregate_prosody(s);
  EXPECT_EQ(agg[0], 100.0);
  s.pitch = {100, 200};
  EXPECT_EQ(aggregate_prosody(s)[0], 150.0);

  Gen gen(32);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = gen.index(1, 50);
    ProsodySeries r;
    for (std::size_t i = 0; i < n; ++i) {
      r.pitch.push_back(gen.uniform(80, 300));
      r.loudness.push_back(gen.uniform(40, 80));
      r.jitter.push_back(gen.uniform(0, 0.05));
      r.shimmer.push_back(gen.uniform(0, 0.2));
    }
    agg = aggregate_prosody(r);
    for (std::size_t f = 0; f < kProsodyFeatures; ++f) {
      double total = 0;
      for (double v : r.feature(static_cast<ProsodyFeature>(f))) total += v;
      EXPECT_NEAR(agg[f], total / n, 1e-9);
    }
  }
}

TEST(Prosody, ValidateRejectsBadSeries) {
  EXPECT_THROW(aggregate_prosody(ProsodySeries{}), std::invalid_argument);
  EXPECT_THROW(aggregate_prosody(ProsodySeries{{1, 2}, {1}, {0}, {0}}), std::invalid_argument);
  EXPECT_THROW(aggregate_prosody(ProsodySeries{{1}, {1}, {-0.1}, {0}}), std::invalid_argument);
}

TEST(Aed, DescribesLevels) {
  const auto table = fit_tertiles(corpus_of({1, 2, 3, 4, 5, 6, 7, 8, 9}));
  const auto lex = DescriptionLexicon::defaults();
  ProsodySeries s{{5}, {5}, {5}, {5}};
  EXPECT_EQ(generate_aed(s, table, lex),
            "The Speaker made such an tone: normal pitch, normal loudness, normal jitter, and "
            "normal shimmer.");
  s = ProsodySeries{{9}, {1}, {1}, {1}};
  EXPECT_EQ(generate_aed(s, table, lex),
            "The Speaker made such an tone: high pitch, low loudness, low jitter, and low shimmer.");
  EXPECT_EQ(generate_aed(s, table, lex), generate_aed(s, table, lex));
}

TEST(Candidates, Examples) {
  AUTrack t(10);
  for (std::size_t f = 0; f <= 4; ++f) t.set(f, ActionUnit::AU12, true);
  t.set(2, ActionUnit::AU04, true);
  t.set(3, ActionUnit::AU04, true);
  EXPECT_EQ(detect_candidates(t), (std::vector<AUCandidate>{{ActionUnit::AU12, 5, 0}}));

  EXPECT_TRUE(detect_candidates(AUTrack(30)).empty());

  AUTrack two(12);
  for (std::size_t f : {1u, 2u, 3u, 7u, 8u}) two.set(f, ActionUnit::AU06, true);
  EXPECT_EQ(detect_candidates(two), (std::vector<AUCandidate>{{ActionUnit::AU06, 5, 1}}));
}

TEST(Candidates, MatchBruteForceOracle) {
  Gen gen(33);
  for (int trial = 0; trial < 300; ++trial) {
    const auto t = random_track(gen);
    const auto got = detect_candidates(t);
    ASSERT_EQ(got, oracle_candidates(t)) << "trial " << trial;
    const std::size_t k = gen.index(1, 6);
    ASSERT_EQ(select_top_k(got, k), oracle_top_k(got, k));
  }
}

TEST(TopK, Examples) {
  using AU = ActionUnit;
  std::vector<AUCandidate> c{{AU::AU01, 3, 0}, {AU::AU06, 4, 0}, {AU::AU12, 5, 0}};
  EXPECT_EQ(select_top_k(c, 2), (std::vector<AU>{AU::AU12, AU::AU06}));
  c = {{AU::AU12, 5, 0}, {AU::AU06, 5, 3}};
  EXPECT_EQ(select_top_k(c, 1), (std::vector<AU>{AU::AU06}));
  EXPECT_TRUE(select_top_k({}, 4).empty());
  EXPECT_THROW(select_top_k(c, 0), std::invalid_argument);
}

TEST(Ved, Sentences) {
  using AU = ActionUnit;
  const auto lex = DescriptionLexicon::defaults();
  const std::vector<AU> smile{AU::AU06, AU::AU12};
  EXPECT_EQ(generate_ved(smile, lex), "The speaker made such an expression: raise cheek, pull lip corner.");
  const std::vector<AU> brow{AU::AU01};
  EXPECT_EQ(generate_ved(brow, lex), "The speaker made such an expression: raise inner brow.");
  EXPECT_EQ(generate_ved({}, lex), "The speaker made a neutral expression.");
  EXPECT_EQ(generate_ved(smile, lex, "Face: {phrases}!"), "Face: raise cheek, pull lip corner!");
  EXPECT_THROW(generate_ved(smile, lex, "no slot"), std::invalid_argument);

  auto partial = lex;
  partial.au_phrases[static_cast<std::size_t>(AU::AU45)].clear();
  const std::vector<AU> blink{AU::AU45};
  EXPECT_THROW(generate_ved(blink, partial), std::invalid_argument);
}

TEST(Lexicon, JsonOverridesAndUnknownKeys) {
  const auto lex = DescriptionLexicon::from_json(
      {{"au_phrases", {{"AU04", "frown"}}}, {"prosody", {{"pitch", {"deep", "even", "shrill"}}}}});
  EXPECT_EQ(lex.phrase(ActionUnit::AU04), "frown");
  EXPECT_EQ(lex.phrase(ActionUnit::AU01), "raise inner brow");
  EXPECT_EQ(lex.phrase(ProsodyFeature::pitch, Level::high), "shrill");
  EXPECT_THROW(DescriptionLexicon::from_json({{"colour", 1}}), ConfigError);
  EXPECT_THROW(parse_action_unit("AU99"), std::invalid_argument);
}

class FeatureFiles : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("deva_edg_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  std::filesystem::path dir_;
};

TEST_F(FeatureFiles, AuRoundTrip) {
  Gen gen(34);
  const auto track = random_track(gen);
  write_au_csv(dir_ / "au.csv", track);
  const auto back = read_au_csv(dir_ / "au.csv");
  EXPECT_TRUE(back.warnings.empty());
  EXPECT_EQ(back.track.frames, track.frames);
  EXPECT_EQ(back.track.active, track.active);
}

TEST_F(FeatureFiles, AuThresholdAndBadRows) {
  std::ofstream out(dir_ / "au.csv");
  out << "frame";
  for (auto n : kActionUnitNames) out << ',' << n;
  out << "\n0";
  for (std::size_t a = 0; a < kActionUnits; ++a) out << (a == 0 ? ",0.9" : ",0.2");
  out << "\n1,0.5\n2";  // truncated row
  for (std::size_t a = 0; a < kActionUnits; ++a) out << (a == 0 ? ",7.0" : ",0.0");
  out << "\n3";
  for (std::size_t a = 0; a < kActionUnits; ++a) out << ",0.6";
  out << "\n";
  out.close();
  const auto f = read_au_csv(dir_ / "au.csv", 0.5);
  EXPECT_EQ(f.track.frames, 2u);
  ASSERT_EQ(f.warnings.size(), 2u);
  EXPECT_EQ(f.warnings[0].line, 3u);
  EXPECT_TRUE(f.track.is_active(0, ActionUnit::AU01));
  EXPECT_FALSE(f.track.is_active(0, ActionUnit::AU02));
  EXPECT_TRUE(f.track.is_active(1, ActionUnit::AU45));
}

TEST_F(FeatureFiles, AuHeaderErrors) {
  std::ofstream(dir_ / "bad.csv") << "time,AU01\n0,1\n";
  EXPECT_THROW(read_au_csv(dir_ / "bad.csv"), DataError);
  std::ofstream(dir_ / "short.csv") << "frame,AU01\n0,1\n";
  EXPECT_THROW(read_au_csv(dir_ / "short.csv"), DataError);
  EXPECT_THROW(read_au_csv(dir_ / "missing.csv"), DataError);
}

TEST_F(FeatureFiles, ProsodyRoundTripAndWarnings) {
  ProsodySeries s{{180.5, 190.25}, {60, 61}, {0.01, 0.02}, {0.05, 0.06}};
  write_prosody_csv(dir_ / "p.csv", s);
  const auto back = read_prosody_csv(dir_ / "p.csv");
  EXPECT_EQ(back.series.pitch, s.pitch);
  EXPECT_EQ(back.series.shimmer, s.shimmer);

  std::ofstream(dir_ / "q.csv") << "frame,pitch,loudness,jitter,shimmer\n0,100,50,0.1,0.1\n1,100\n"
                                   "2,abc,50,0.1,0.1\n3,110,52,0.1,0.1\n";
  const auto q = read_prosody_csv(dir_ / "q.csv");
  EXPECT_EQ(q.series.frames(), 2u);
  EXPECT_EQ(q.warnings.size(), 2u);
  std::ofstream(dir_ / "h.csv") << "frame,pitch\n";
  EXPECT_THROW(read_prosody_csv(dir_ / "h.csv"), DataError);
}

}  // namespace
}  // namespace deva::edg
