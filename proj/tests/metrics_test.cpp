// Copyright (c) 2026 The sepspot Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <gtest/gtest.h>

#include <random>

#include "sepspot/metrics.hpp"
#include "support/search_oracles.hpp"

namespace sepspot {
namespace {

using testing::BruteForceMatch;
using testing::BruteReport;
using testing::MakeMatchSet;
using testing::RandomSet;

LabelSpan L(std::size_t s, std::size_t e, int w = 1, std::string a = "a") {
  return {std::move(a), w, s, e};
}
Detection D(std::size_t s, std::size_t e, int w = 1, std::string a = "a",
            float score = 1.0f) {
  return {std::move(a), w, s, e, score};
}

TEST(OverlapTest, CenterDistance) {
  EvalConfig t50;
  t50.t = 50.0;
  EXPECT_TRUE(Overlap(L(10, 30), D(10, 30), EvalConfig{.t = 0.0}));
  EXPECT_FALSE(Overlap(L(50, 150), D(150, 250), t50));  // centers 100 vs 200
  EXPECT_TRUE(Overlap(L(50, 150), D(100, 200), t50));   // exactly t
  EXPECT_TRUE(Overlap(L(0, 100), D(50, 150), EvalConfig{}));   // default t = 50
  EXPECT_FALSE(Overlap(L(0, 100), D(51, 151), EvalConfig{}));
}

TEST(OverlapTest, Ratio) {
  EXPECT_DOUBLE_EQ(OverlapRatio(L(100, 200), D(150, 250)), 0.5);
  EXPECT_DOUBLE_EQ(OverlapRatio(L(100, 200), D(100, 200)), 1.0);
  EXPECT_DOUBLE_EQ(OverlapRatio(L(100, 200), D(200, 300)), 0.0);
  EXPECT_DOUBLE_EQ(OverlapRatio(L(100, 200), D(0, 1000)), 1.0);
}

TEST(MatchTest, OneLabelTwoPredictions) {
  // Ratios 0.9 and 0.6 against a 100-frame label.
  const EvalReport r = Match({L(100, 200)}, {D(110, 210), D(140, 240)});
  EXPECT_EQ(r.tp, 1u);
  EXPECT_EQ(r.fp, 1u);
  EXPECT_EQ(r.fn, 0u);
  EXPECT_DOUBLE_EQ(r.mao, 0.9);
  EXPECT_DOUBLE_EQ(r.precision, 0.5);
  EXPECT_DOUBLE_EQ(r.recall, 1.0);
  EXPECT_DOUBLE_EQ(r.f1, 2.0 / 3.0);
}

TEST(MatchTest, NoPredictions) {
  const EvalReport r = Match({L(0, 10), L(20, 30, 2)}, {});
  EXPECT_EQ(r.tp, 0u);
  EXPECT_EQ(r.fp, 0u);
  EXPECT_EQ(r.fn, 2u);
  EXPECT_EQ(r.mao, 0.0);
  EXPECT_EQ(r.recall, 0.0);
  EXPECT_EQ(r.precision, 0.0);
  EXPECT_EQ(r.f1, 0.0);
  EXPECT_EQ(r.per_word.at(2).fn, 1u);
}

TEST(MatchTest, WordAndAudioMustAgree) {
  const EvalReport r =
      Match({L(0, 100, 1, "a")}, {D(0, 100, 2, "a"), D(0, 100, 1, "b")});
  EXPECT_EQ(r.tp, 0u);
  EXPECT_EQ(r.fp, 2u);
  EXPECT_EQ(r.fn, 1u);
}

TEST(MatchTest, DuplicateDetectionIsAnError) {
  EXPECT_THROW(Match({L(0, 10)}, {D(0, 10), D(0, 10)}), Error);
  EXPECT_THROW(Match({L(0, 10)}, {}, EvalConfig{.t = -1.0}), Error);
}

TEST(MatchTest, TiesGoToEarlierDetection) {
  // Both detections cover the label fully; the earlier start wins.
  const std::vector<LabelSpan> labels = {L(100, 150)};
  const EvalReport r = Match(labels, {D(90, 160), D(80, 170)});
  EXPECT_EQ(r.tp, 1u);
  EXPECT_EQ(r.fp, 1u);
  EXPECT_DOUBLE_EQ(r.mao, 1.0);
}

TEST(MatchTest, AgreesWithBruteForce) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const bool big = trial < 20;
    const RandomSet s =
        MakeMatchSet(rng, big ? 50 : 1 + rng() % 12, big ? 80 : rng() % 16);
    EvalConfig cfg;
    if (trial % 3 == 0) cfg.t = double(rng() % 40);
    const EvalReport r = Match(s.labels, s.dets, cfg);
    const BruteReport b = BruteForceMatch(s.labels, s.dets, cfg);
    ASSERT_EQ(r.tp, b.tp) << "trial " << trial;
    ASSERT_EQ(r.fp, b.fp);
    ASSERT_EQ(r.fn, b.fn);
    ASSERT_NEAR(r.mao, b.ratio_sum / s.labels.size(), 1e-12);
  }
}

TEST(MatchTest, Invariants) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 300; ++trial) {
    RandomSet s = MakeMatchSet(rng, 1 + rng() % 15, rng() % 20);
    EvalConfig cfg;
    cfg.t = 1.0 + double(rng() % 30);
    const EvalReport r = Match(s.labels, s.dets, cfg);
    EXPECT_EQ(r.tp + r.fn, s.labels.size());
    EXPECT_LE(r.tp, std::min(s.labels.size(), s.dets.size()));
    EXPECT_GE(r.mao, 0.0);
    EXPECT_LE(r.mao, 1.0);

    EvalConfig wide = cfg;
    wide.t = 2.0 * *cfg.t;
    EXPECT_GE(Match(s.labels, s.dets, wide).tp, r.tp);

    std::shuffle(s.labels.begin(), s.labels.end(), rng);
    std::shuffle(s.dets.begin(), s.dets.end(), rng);
    const EvalReport shuffled = Match(s.labels, s.dets, cfg);
    EXPECT_EQ(shuffled.tp, r.tp);
    EXPECT_EQ(shuffled.fp, r.fp);
    EXPECT_DOUBLE_EQ(shuffled.mao, r.mao);
  }
}

TEST(MatchTest, MaoIsOneOnlyWithFullCover) {
  EXPECT_DOUBLE_EQ(Match({L(0, 50), L(100, 120)}, {D(0, 60), D(95, 125)}).mao, 1.0);
  EXPECT_LT(Match({L(0, 50), L(100, 120)}, {D(0, 60), D(101, 125)}).mao, 1.0);
}

TEST(SweepTest, ThresholdsFilterByScore) {
  const std::vector<LabelSpan> labels = {L(0, 100), L(200, 300)};
  const std::vector<Detection> dets = {D(0, 100, 1, "a", 0.9f), D(200, 300, 1, "a", 0.4f),
                                       D(500, 600, 1, "a", 0.7f)};
  const std::vector<double> th = {0.0, 0.5, 0.8, 0.95};
  const auto reports = SweepThresholds(labels, dets, th);
  ASSERT_EQ(reports.size(), 4u);
  EXPECT_EQ(reports[0].tp, 2u);
  EXPECT_EQ(reports[0].fp, 1u);
  EXPECT_EQ(reports[1].tp, 1u);
  EXPECT_EQ(reports[2].fp, 0u);
  EXPECT_EQ(reports[3].tp, 0u);
  const EvalReport best = BestByF1(reports);
  EXPECT_EQ(*best.threshold, 0.0);  // F1 0.8 vs 0.5, 0.667
  EXPECT_THROW(BestByF1({}), Error);
}

TEST(ReportTest, JsonAndTable) {
  EvalReport r = Match({L(0, 100)}, {D(0, 100)});
  r.threshold = 0.5;
  const nlohmann::json j = ToJson(r);
  EXPECT_EQ(j.at("tp"), 1);
  EXPECT_EQ(j.at("f1"), 1.0);
  EXPECT_EQ(j.at("threshold"), 0.5);
  const std::string table = FormatTable({{"basic", r}});
  EXPECT_NE(table.find("basic"), std::string::npos);
  EXPECT_NE(table.find("100.0"), std::string::npos);
}

}  // namespace
}  // namespace sepspot
