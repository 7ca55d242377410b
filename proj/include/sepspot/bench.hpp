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

// Basic vs. separable scoring speed over a grid of audio lengths and strides.

#pragma once

#include <chrono>
#include <iomanip>
#include <sstream>

#include "sepspot/search.hpp"

namespace sepspot {

struct BenchConfig {
  std::vector<std::size_t> lengths = {500, 3000, 12000};  // F_H
  std::vector<std::size_t> strides;  // empty: {1, 2, 4, 8} * C_r
  std::size_t reps = 3;
  double min_rep_ms = 0.0;  // a repetition loops until it has run this long
  std::size_t workers = 1;
  SearchConfig search;  // post-processing used for the detection check
  std::uint64_t seed = 5;
};

struct BenchCell {
  std::size_t frames = 0;  // F_H
  std::size_t stride = 0;  // s_t
  std::size_t windows = 0;
  double basic_ms = 0.0, fast_ms = 0.0;  // medians
  double speedup = 0.0;                  // basic / fast

  double basic_windows_per_sec() const { return windows / (basic_ms / 1e3); }
  double fast_windows_per_sec() const { return windows / (fast_ms / 1e3); }
};

struct BenchReport {
  std::vector<BenchCell> cells;
  std::size_t workers = 1;
  std::size_t reps = 0;
};

namespace detail {
inline double MedianOf(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Mean wall time of one call over as many calls as fit in `min_ms` (at
/// least one).
template <typename F>
double TimeMs(F&& f, double min_ms = 0.0) {
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t calls = 0;
  double elapsed = 0.0;
  do {
    f();
    ++calls;
    elapsed = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                  .count();
  } while (elapsed < min_ms);
  return elapsed / double(calls);
}
}  // namespace detail

/// Times both schemes on random audio. Before a cell is timed, the two
/// schemes must emit identical detections. Repetitions are interleaved: round
/// r times every cell once, so slow drift in machine load spreads evenly.
inline BenchReport RunBench(const Model& model, const QueryEmbeddingSet& v,
                            BenchConfig cfg) {
  if (cfg.reps < 1) Fail(ErrorKind::kConfig, "bench needs at least one repetition");
  const std::size_t cr = model.encoder.config().DownsampleRatio();
  if (cfg.strides.empty()) cfg.strides = {cr, 2 * cr, 4 * cr, 8 * cr};
  ScopedWorkers pin(cfg.workers);
  BenchReport report;
  report.workers = WorkerCount();
  report.reps = cfg.reps;
  std::mt19937_64 rng(cfg.seed);
  std::vector<FeatureMatrix> audios;
  for (std::size_t frames : cfg.lengths) {
    FeatureMatrix audio(frames, model.encoder.config().input_bins);
    std::normal_distribution<float> dist(0.0f, 1.0f);
    for (float& x : audio.data) x = dist(rng);
    for (std::size_t stride : cfg.strides) {
      BenchCell cell;
      cell.frames = frames;
      cell.stride = stride;
      cell.windows = WindowCount(frames, model.frames, stride);

      const ScoreMatrix basic = ScoreBasic(audio, v, model, stride);
      const ScoreMatrix fast = ScoreFast(audio, v, model, stride);
      float diff = 0.0f;
      for (std::size_t i = 0; i < basic.values.size(); ++i) {
        diff = std::max(diff, std::fabs(basic.values[i] - fast.values[i]));
      }
      const auto post = [&](const ScoreMatrix& c) {
        return Detect(PostProcess(c, v, cr, cfg.search), cfg.search.threshold,
                      cfg.search.competition);
      };
      if (diff > 1e-4f || post(basic) != post(fast)) {
        Fail(ErrorKind::kNumeric, "basic and fast schemes disagree at F_H=", frames,
             ", s_t=", stride, " (max score diff ", diff,
             "); refusing to report timings");
      }
      report.cells.push_back(cell);
    }
    audios.push_back(std::move(audio));
  }

  const std::size_t per_length = cfg.strides.size();
  std::vector<std::vector<double>> tb(report.cells.size()), tf(report.cells.size());
  for (std::size_t r = 0; r < cfg.reps; ++r) {
    for (std::size_t i = 0; i < report.cells.size(); ++i) {
      const FeatureMatrix& audio = audios[i / per_length];
      const std::size_t stride = report.cells[i].stride;
      tb[i].push_back(
          detail::TimeMs([&] { ScoreBasic(audio, v, model, stride); }, cfg.min_rep_ms));
      tf[i].push_back(
          detail::TimeMs([&] { ScoreFast(audio, v, model, stride); }, cfg.min_rep_ms));
    }
  }
  for (std::size_t i = 0; i < report.cells.size(); ++i) {
    BenchCell& cell = report.cells[i];
    cell.basic_ms = detail::MedianOf(tb[i]);
    cell.fast_ms = detail::MedianOf(tf[i]);
    cell.speedup = cell.basic_ms / cell.fast_ms;
  }
  return report;
}

inline nlohmann::json ToJson(const BenchReport& r) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells) {
    cells.push_back({{"frames", c.frames},
                     {"stride", c.stride},
                     {"windows", c.windows},
                     {"basic_ms", c.basic_ms},
                     {"fast_ms", c.fast_ms},
                     {"basic_windows_per_sec", c.basic_windows_per_sec()},
                     {"fast_windows_per_sec", c.fast_windows_per_sec()},
                     {"speedup", c.speedup}});
  }
  return {{"workers", r.workers}, {"reps", r.reps}, {"cells", cells}};
}

inline std::string FormatBench(const BenchReport& r) {
  std::ostringstream os;
  os << "workers " << r.workers << ", median of " << r.reps << " runs\n";
  os << std::setw(8) << "F_H" << std::setw(6) << "s_t" << std::setw(9) << "windows"
     << std::setw(12) << "basic ms" << std::setw(11) << "fast ms" << std::setw(9)
     << "speedup" << '\n'
     << std::fixed;
  for (const auto& c : r.cells) {
    os << std::setw(8) << c.frames << std::setw(6) << c.stride << std::setw(9)
       << c.windows << std::setprecision(1) << std::setw(12) << c.basic_ms
       << std::setw(11) << c.fast_ms << std::setprecision(2) << std::setw(9)
       << c.speedup << '\n';
  }
  return os.str();
}

}  // namespace sepspot
