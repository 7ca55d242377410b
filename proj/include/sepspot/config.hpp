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

// The declarative run configuration. Every section is optional; unknown keys
// anywhere are rejected before any work starts.
//
//   {
//     "seed": 1,
//     "paths": {"work_dir": "run"},
//     "corpus": {"classes": 10, "samples_per_class": 50, ...},
//     "encoder": "tiny",
//     "train": {"epochs": 20, "batch_size": 32, ...},
//     "retrain": {"method": "same_input", "epochs": 10},
//     "search": {"scheme": "fast", "stride": 4, "threshold": 0.95,
//                "tnorm": false, "nms": true, "competition": true},
//     "eval": {"t": null, "thresholds": [...]},
//     "bench": {"lengths": [500, 3000, 12000], "strides": [], "reps": 3,
//               "min_rep_ms": 0}
//   }

#pragma once

#include "sepspot/bench.hpp"
#include "sepspot/metrics.hpp"
#include "sepspot/training.hpp"

namespace sepspot {

struct RetrainConfig {
  RetrainMethod method = RetrainMethod::kSameInput;
  std::optional<std::size_t> heads;
  std::optional<std::size_t> epochs;  // defaults to train.epochs
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::filesystem::path work_dir = "run";
  SynthCorpusSpec corpus;
  EncoderConfig encoder = EncoderConfig::Tiny();
  TrainConfig train;
  RetrainConfig retrain;
  SearchConfig search;
  EvalConfig eval;
  std::vector<double> eval_thresholds;  // empty: a default sweep
  BenchConfig bench;

  /// Pushes the top-level seed into every section.
  void ApplySeed() {
    corpus.seed = seed;
    train.seed = seed;
    bench.seed = seed;
  }
};

inline SynthCorpusSpec SynthSpecFromJson(const nlohmann::json& j) {
  constexpr const char* w = "corpus";
  CheckKeys(j,
            {"classes", "samples_per_class", "enroll_per_class", "test_audios",
             "keywords_per_audio", "distractors", "bins", "min_frames", "max_frames",
             "noise"},
            w);
  SynthCorpusSpec s;
  ReadKey(j, "classes", &s.classes, w);
  ReadKey(j, "samples_per_class", &s.samples_per_class, w);
  ReadKey(j, "enroll_per_class", &s.enroll_per_class, w);
  ReadKey(j, "test_audios", &s.test_audios, w);
  ReadKey(j, "keywords_per_audio", &s.keywords_per_audio, w);
  ReadKey(j, "distractors", &s.distractors, w);
  ReadKey(j, "bins", &s.bins, w);
  ReadKey(j, "min_frames", &s.min_frames, w);
  ReadKey(j, "max_frames", &s.max_frames, w);
  ReadKey(j, "noise", &s.noise, w);
  s.Validate();
  return s;
}

inline SearchConfig SearchConfigFromJson(const nlohmann::json& j) {
  constexpr const char* w = "search";
  CheckKeys(j, {"scheme", "stride", "threshold", "tnorm", "nms", "competition"}, w);
  SearchConfig c;
  if (j.contains("scheme")) {
    std::string s;
    ReadKey(j, "scheme", &s, w);
    c.scheme = ParseScheme(s);
  }
  ReadKey(j, "stride", &c.stride, w);
  ReadKey(j, "threshold", &c.threshold, w);
  ReadKey(j, "tnorm", &c.tnorm, w);
  ReadKey(j, "nms", &c.nms, w);
  ReadKey(j, "competition", &c.competition, w);
  c.Validate();
  return c;
}

inline RetrainConfig RetrainConfigFromJson(const nlohmann::json& j) {
  constexpr const char* w = "retrain";
  CheckKeys(j, {"method", "heads", "epochs"}, w);
  RetrainConfig c;
  if (j.contains("method")) {
    std::string m;
    ReadKey(j, "method", &m, w);
    if (m == "same_input") {
      c.method = RetrainMethod::kSameInput;
    } else if (m == "longer_input") {
      c.method = RetrainMethod::kLongerInput;
    } else {
      Fail(ErrorKind::kConfig, "retrain method must be same_input or longer_input, got '",
           m, "'");
    }
  }
  if (j.contains("heads")) {
    std::size_t h = 0;
    ReadKey(j, "heads", &h, w);
    c.heads = h;
  }
  if (j.contains("epochs")) {
    std::size_t e = 0;
    ReadKey(j, "epochs", &e, w);
    c.epochs = e;
  }
  return c;
}

inline RunConfig RunConfigFromJson(const nlohmann::json& j) {
  CheckKeys(j,
            {"seed", "paths", "corpus", "encoder", "train", "retrain", "search", "eval",
             "bench"},
            "config");
  RunConfig c;
  ReadKey(j, "seed", &c.seed, "config");
  if (j.contains("paths")) {
    CheckKeys(j.at("paths"), {"work_dir"}, "paths");
    std::string dir = c.work_dir.string();
    ReadKey(j.at("paths"), "work_dir", &dir, "paths");
    c.work_dir = dir;
  }
  if (j.contains("corpus")) c.corpus = SynthSpecFromJson(j.at("corpus"));
  if (j.contains("encoder")) c.encoder = EncoderConfigFromJson(j.at("encoder"));
  if (j.contains("train")) c.train = TrainConfigFromJson(j.at("train"));
  if (j.contains("retrain")) c.retrain = RetrainConfigFromJson(j.at("retrain"));
  if (j.contains("search")) c.search = SearchConfigFromJson(j.at("search"));
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    CheckKeys(e, {"t", "thresholds"}, "eval");
    if (e.contains("t") && !e.at("t").is_null()) {
      double t = 0.0;
      ReadKey(e, "t", &t, "eval");
      if (!(t >= 0.0)) Fail(ErrorKind::kConfig, "eval.t must be >= 0");
      c.eval.t = t;
    }
    ReadKey(e, "thresholds", &c.eval_thresholds, "eval");
  }
  if (j.contains("bench")) {
    const auto& b = j.at("bench");
    CheckKeys(b, {"lengths", "strides", "reps", "min_rep_ms"}, "bench");
    ReadKey(b, "lengths", &c.bench.lengths, "bench");
    ReadKey(b, "strides", &c.bench.strides, "bench");
    ReadKey(b, "reps", &c.bench.reps, "bench");
    ReadKey(b, "min_rep_ms", &c.bench.min_rep_ms, "bench");
    if (!(c.bench.min_rep_ms >= 0.0)) Fail(ErrorKind::kConfig, "bench.min_rep_ms must be >= 0");
  }
  if (c.corpus.bins != c.encoder.input_bins) {
    Fail(ErrorKind::kConfig, "corpus.bins (", c.corpus.bins,
         ") must equal encoder.input_bins (", c.encoder.input_bins, ")");
  }
  c.ApplySeed();
  return c;
}

inline RunConfig LoadRunConfig(const std::filesystem::path& path) {
  return RunConfigFromJson(ReadJsonFile(path));
}

/// Thresholds to sweep: 0..1 in steps of 0.01 on raw scores, -1..10 in steps
/// of 0.05 on z-scores.
inline std::vector<double> DefaultThresholds(bool tnorm) {
  std::vector<double> t;
  if (tnorm) {
    for (int i = -20; i <= 200; ++i) t.push_back(i * 0.05);
  } else {
    for (int i = 0; i <= 100; ++i) t.push_back(i * 0.01);
  }
  return t;
}

}  // namespace sepspot
