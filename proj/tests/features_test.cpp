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

#include <filesystem>
#include <numbers>

#include "sepspot/features.hpp"

namespace sepspot {
namespace {

Waveform Sine(double hz, double seconds, int rate = 16000, float amp = 0.5f) {
  Waveform w;
  w.sample_rate = rate;
  w.samples.resize(static_cast<std::size_t>(seconds * rate));
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    w.samples[i] = amp * static_cast<float>(
                             std::sin(2.0 * std::numbers::pi * hz * i / rate));
  }
  return w;
}

FeatureMatrix Ramp(std::size_t rows, std::size_t cols) {
  FeatureMatrix m(rows, cols);
  for (std::size_t t = 0; t < rows; ++t)
    for (std::size_t d = 0; d < cols; ++d) m(t, d) = static_cast<float>(t * 100 + d);
  return m;
}

TEST(FbankTest, FrameCount) {
  Waveform w;
  w.samples.assign(16000, 0.1f);
  FeatureMatrix f = ComputeFbank(w);
  EXPECT_EQ(f.rows, 98u);
  EXPECT_EQ(f.cols, 60u);
}

TEST(FbankTest, SilenceHitsTheLogFloor) {
  Waveform w;
  w.samples.assign(8000, 0.0f);
  FeatureMatrix f = ComputeFbank(w);
  const float floor_log = std::log(1e-10f);
  for (float v : f.data) EXPECT_EQ(v, floor_log);
}

TEST(FbankTest, TooShortWaveform) {
  Waveform w;
  w.samples.assign(399, 0.1f);
  try {
    ComputeFbank(w);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("insufficient samples"), std::string::npos);
  }
}

TEST(FbankTest, SineLandsInItsMelBin) {
  const FbankOptions opts;
  const auto centers = MelCenterFrequencies(opts);
  // Mel spacing is ~45 mel, so the low filters are narrower than one FFT
  // bin (31.25 Hz); test where filters span several bins.
  for (std::size_t j : {12u, 25u, 40u, 55u}) {
    FeatureMatrix f = ComputeFbank(Sine(centers[j], 0.5), opts);
    std::vector<double> mean(f.cols, 0.0);
    for (std::size_t t = 0; t < f.rows; ++t)
      for (std::size_t d = 0; d < f.cols; ++d) mean[d] += f(t, d);
    const auto best = std::max_element(mean.begin(), mean.end()) - mean.begin();
    EXPECT_EQ(static_cast<std::size_t>(best), j) << "center " << centers[j] << " Hz";
  }
}

TEST(FbankTest, MelCentersFollowTheMelScale) {
  const FbankOptions opts;
  const auto centers = MelCenterFrequencies(opts);
  ASSERT_EQ(centers.size(), 60u);
  const double lo = 1127.0 * std::log(1.0 + 20.0 / 700.0);
  const double hi = 1127.0 * std::log(1.0 + 7600.0 / 700.0);
  const double mel0 = lo + (hi - lo) / 61.0;
  EXPECT_NEAR(centers[0], 700.0 * (std::exp(mel0 / 1127.0) - 1.0), 1e-9);
  EXPECT_TRUE(std::is_sorted(centers.begin(), centers.end()));
  EXPECT_LT(centers.back(), 7600.0);
}

TEST(FbankTest, Deterministic) {
  Waveform w = Sine(440.0, 0.3);
  EXPECT_EQ(ComputeFbank(w), ComputeFbank(w));
}

TEST(ContextPadTest, ExactLengthIsUnchanged) {
  FeatureMatrix src = Ramp(200, 4);
  FeatureMatrix out = TemporalContextPad(SegmentRef{&src, 30, 90}, 60);
  EXPECT_EQ(out, src.Slice(30, 90));
}

TEST(ContextPadTest, CentersWithRealContext) {
  FeatureMatrix src = Ramp(200, 4);
  FeatureMatrix out = TemporalContextPad(SegmentRef{&src, 40, 60}, 60);
  EXPECT_EQ(out, src.Slice(20, 80));
}

TEST(ContextPadTest, ReplicatesEdgesWithoutContext) {
  FeatureMatrix src = Ramp(10, 3);
  FeatureMatrix out = TemporalContextPad(SegmentRef{&src, 0, 10}, 20);
  ASSERT_EQ(out.rows, 20u);
  for (std::size_t i = 0; i < 20; ++i) {
    const std::size_t want = i < 5 ? 0 : (i < 15 ? i - 5 : 9);
    for (std::size_t d = 0; d < 3; ++d) EXPECT_EQ(out(i, d), src(want, d)) << i;
  }
}

TEST(ContextPadTest, LeftTakesTheOddFrame) {
  FeatureMatrix src = Ramp(100, 2);
  FeatureMatrix out = TemporalContextPad(SegmentRef{&src, 50, 53}, 8);
  // 5 context frames: 3 left, 2 right.
  EXPECT_EQ(out, src.Slice(47, 55));
}

TEST(ContextPadTest, LongSegmentsAreCenterCropped) {
  FeatureMatrix src = Ramp(100, 2);
  FeatureMatrix out = TemporalContextPad(SegmentRef{&src, 10, 31}, 10);
  EXPECT_EQ(out, src.Slice(15, 25));
}

TEST(ContextPadTest, AlwaysProducesTargetRows) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t rows = 1 + rng() % 120;
    FeatureMatrix src = Ramp(rows, 2);
    const std::size_t a = rng() % rows;
    const std::size_t b = a + 1 + rng() % (rows - a);
    const std::size_t target = 1 + rng() % 90;
    FeatureMatrix out = TemporalContextPad(SegmentRef{&src, a, b}, target);
    ASSERT_EQ(out.rows, target);
    // Every output row is some source row.
    for (std::size_t i = 0; i < target; ++i) {
      const auto t = static_cast<std::size_t>(out(i, 0)) / 100;
      ASSERT_LT(t, rows);
    }
  }
}

TEST(ContextPadTest, EmptySegmentIsAnError) {
  FeatureMatrix src = Ramp(10, 2);
  EXPECT_THROW(TemporalContextPad(SegmentRef{&src, 4, 4}, 8), Error);
}

TEST(FeatureIoTest, BlobAndSidecarRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "sepspot_features_test";
  std::filesystem::create_directories(dir);
  FeatureMatrix m = Ramp(7, 5);
  m.frame_shift_ms = 10.0f;
  WriteFeatures(dir / "ramp", m);
  EXPECT_EQ(std::filesystem::file_size(dir / "ramp.f32"), 7u * 5u * 4u);
  const auto side = ReadJsonFile(dir / "ramp.json");
  EXPECT_EQ(side.at("rows"), 7);
  EXPECT_EQ(side.at("cols"), 5);
  EXPECT_EQ(ReadFeatures(dir / "ramp"), m);
}

TEST(FeatureIoTest, WavRoundTripThroughFbank) {
  const auto dir = std::filesystem::temp_directory_path() / "sepspot_features_test";
  std::filesystem::create_directories(dir);
  Waveform w = Sine(1000.0, 0.25);
  WriteWav(dir / "tone.wav", w);
  Waveform back = ReadWav(dir / "tone.wav");
  ASSERT_EQ(back.samples.size(), w.samples.size());
  EXPECT_EQ(back.sample_rate, 16000);
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    EXPECT_NEAR(back.samples[i], w.samples[i], 1.0 / 16384.0);
  }
}

TEST(FeatureIoTest, RejectsNonWav) {
  const auto path = std::filesystem::temp_directory_path() / "sepspot_not_a.wav";
  std::ofstream(path) << "hello";
  EXPECT_THROW(ReadWav(path), Error);
}

}  // namespace
}  // namespace sepspot
