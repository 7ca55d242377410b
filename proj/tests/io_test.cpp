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

#include <cstdlib>
#include <unistd.h>

#include <fstream>

#include "sepspot/config.hpp"
#include "sepspot/parallel.hpp"
#include "sepspot/records.hpp"
#include "sepspot/synth.hpp"
#include "support/random_models.hpp"

namespace sepspot {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("sepspot_io_" + std::to_string(::getpid()) + "_" + std::to_string(counter_++));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  static inline int counter_ = 0;
  fs::path path_;
};

TEST(RecordsTest, LabelsRoundTrip) {
  TempDir dir;
  const std::vector<LabelSpan> labels = {{"a", 1, 0, 10}, {"b", 3, 5, 9}};
  WriteLabels(dir.path() / "l.json", labels);
  EXPECT_EQ(ReadLabels(dir.path() / "l.json"), labels);
  EXPECT_THROW(LabelFromJson({{"audio_id", "a"}, {"word_id", 1}, {"start_frame", 4},
                              {"end_frame", 4}}),
               Error);
  EXPECT_THROW(LabelFromJson({{"audio_id", "a"}}), Error);
}

TEST(RecordsTest, DetectionsRoundTripAsJsonLines) {
  TempDir dir;
  const std::vector<Detection> dets = {{"a", 1, 0, 160, 0.75f}, {"a", 2, 4, 164, 0.5f}};
  const fs::path p = dir.path() / "d.jsonl";
  WriteDetections(p, dets);
  EXPECT_EQ(ReadDetections(p), dets);
  std::ifstream in(p);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    EXPECT_TRUE(nlohmann::json::parse(line).is_object());
    ++lines;
  }
  EXPECT_EQ(lines, 2u);

  std::ofstream(dir.path() / "bad.jsonl") << "{\"audio_id\": \"a\"}\nnot json\n";
  EXPECT_THROW(ReadDetections(dir.path() / "bad.jsonl"), Error);
  std::ofstream(dir.path() / "empty.jsonl") << "\n";
  EXPECT_TRUE(ReadDetections(dir.path() / "empty.jsonl").empty());
  EXPECT_THROW(ReadDetections(dir.path() / "missing.jsonl"), Error);
}

TEST(RecordsTest, CorpusRoundTripAndValidation) {
  TempDir dir;
  Corpus c;
  FeatureMatrix m(20, 3);
  for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = float(i) * 0.5f;
  c.audios["u1"] = m;
  c.labels = {{"u1", 4, 2, 12}};
  WriteCorpus(dir.path() / "corpus", c);
  const Corpus back = ReadCorpus(dir.path() / "corpus");
  EXPECT_EQ(back.labels, c.labels);
  EXPECT_EQ(back.audio("u1").data, m.data);
  EXPECT_EQ(back.words(), std::vector<int>{4});

  c.labels.push_back({"u1", 4, 15, 25});
  EXPECT_THROW(c.Validate(), Error);
  c.labels.back() = {"u2", 4, 1, 2};
  EXPECT_THROW(c.Validate(), Error);
  EXPECT_THROW(ReadCorpus(dir.path() / "nope"), Error);
}

std::vector<Tensor> AllTensors(Model m) {
  std::vector<Tensor> out;
  m.VisitTensors([&](const std::string&, Tensor& t) { out.push_back(t); });
  return out;
}

Model SmallModel(std::mt19937_64& rng) {
  EncoderConfig cfg = EncoderConfig::Tiny();
  cfg.input_bins = 12;
  Model m;
  m.encoder = testing::RandomTrainEncoder(cfg, rng);
  m.frames = 48;
  m.head = testing::RandomHead(cfg, 2, 8, rng);
  m.classifier = ClassifierWeights::Init(8, 3, rng);
  return m;
}

TEST(CheckpointTest, RoundTripBothForms) {
  TempDir dir;
  std::mt19937_64 rng(1);
  Model m = SmallModel(rng);
  SaveModel(dir.path() / "train", m);
  const Model t = LoadModel(dir.path() / "train");
  EXPECT_EQ(t.encoder.form(), EncoderForm::kTrain);
  EXPECT_EQ(t.frames, 48u);
  EXPECT_EQ(AllTensors(t), AllTensors(m));

  Model fused = m;
  fused.encoder = m.encoder.Fused().WithTimePadding(Padding::kNone);
  fused.classifier = {};
  SaveModel(dir.path() / "deploy", fused);
  const Model d = LoadModel(dir.path() / "deploy");
  EXPECT_EQ(d.encoder.form(), EncoderForm::kDeploy);
  EXPECT_EQ(d.encoder.pad_time(), Padding::kNone);
  EXPECT_EQ(d.encoder.Hash(), fused.encoder.Hash());
  EXPECT_TRUE(d.classifier.weight.empty());
  EXPECT_EQ(AllTensors(d), AllTensors(fused));
}

TEST(CheckpointTest, RejectsDamagedManifests) {
  TempDir dir;
  std::mt19937_64 rng(2);
  Model m = SmallModel(rng);
  const fs::path stem = dir.path() / "m";
  SaveModel(stem, m);
  const nlohmann::json good = ReadJsonFile(dir.path() / "m.json");

  auto expect_reject = [&](nlohmann::json j, const std::string& needle) {
    WriteJsonFile(dir.path() / "m.json", j);
    try {
      LoadModel(stem);
      ADD_FAILURE() << "accepted a manifest that should fail with " << needle;
    } catch (const Error& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  nlohmann::json j = good;
  j["format"] = "other";
  expect_reject(j, "manifest");
  j = good;
  j["extra"] = 1;
  expect_reject(j, "extra");
  j = good;
  j["tensors"].erase(0);
  expect_reject(j, "lacks tensor");
  j = good;
  j["tensors"].push_back({{"name", "ghost"}, {"shape", {1}}, {"offset", 0}});
  expect_reject(j, "unexpected tensor ghost");
  j = good;
  j["tensors"][0]["shape"] = {1, 2, 3};
  expect_reject(j, "has shape");
  j = good;
  j["tensors"].back()["offset"] = 1u << 30;
  expect_reject(j, "runs past");
  EXPECT_THROW(LoadModel(dir.path() / "absent"), Error);
}

TEST(ConfigTest, EncoderPresetsAndObjects) {
  EXPECT_EQ(EncoderConfigFromJson("tiny").stages.size(), 4u);
  EXPECT_THROW(EncoderConfigFromJson("huge"), Error);
  const EncoderConfig c = EncoderConfigFromJson(
      {{"preset", "tiny"}, {"input_bins", 12}, {"pad_time", "none"}});
  EXPECT_EQ(c.input_bins, 12u);
  EXPECT_EQ(c.pad_time, Padding::kNone);
  EXPECT_EQ(c.stages[0].channels, EncoderConfig::Tiny().stages[0].channels);
  const EncoderConfig back = EncoderConfigFromJson(ToJson(c));
  EXPECT_EQ(back.stages.size(), c.stages.size());
  EXPECT_EQ(back.pad_time, Padding::kNone);
  EXPECT_THROW(EncoderConfigFromJson({{"stages", {{{"blocks", 1}, {"width", 3}}}}}), Error);
}

TEST(ConfigTest, RunConfigDefaultsAndSeed) {
  const RunConfig c = RunConfigFromJson(
      {{"seed", 42}, {"paths", {{"work_dir", "out"}}}, {"search", {{"stride", 8}}}});
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.corpus.seed, 42u);
  EXPECT_EQ(c.train.seed, 42u);
  EXPECT_EQ(c.work_dir, fs::path("out"));
  EXPECT_EQ(c.search.stride, 8u);
  EXPECT_FALSE(c.search.tnorm);
  EXPECT_EQ(c.encoder.stages.size(), EncoderConfig::Tiny().stages.size());
}

TEST(ConfigTest, UnknownKeysAreRejectedEverywhere) {
  const nlohmann::json bad[] = {
      {{"sed", 1}},
      {{"paths", {{"workdir", "x"}}}},
      {{"corpus", {{"clases", 3}}}},
      {{"train", {{"seed", 3}}}},
      {{"retrain", {{"mode", "same_input"}}}},
      {{"retrain", {{"method", "sideways"}}}},
      {{"search", {{"sheme", "fast"}}}},
      {{"eval", {{"tt", 3}}}},
      {{"bench", {{"repeats", 3}}}},
      {{"bench", {{"min_rep_ms", -1.0}}}},
      {{"encoder", {{"preset", "tiny"}, {"bins", 3}}}},
      {{"corpus", {{"bins", 40}}}},  // disagrees with encoder.input_bins
      {{"eval", {{"t", -1.0}}}},
      {{"search", {{"threshold", 2.0}}}},
  };
  for (const auto& j : bad) EXPECT_THROW(RunConfigFromJson(j), Error) << j.dump();
}

TEST(ConfigTest, LoadFromFile) {
  TempDir dir;
  std::ofstream(dir.path() / "c.json") << R"({"retrain": {"method": "longer_input",
      "heads": 8, "epochs": 3}, "eval": {"t": 20, "thresholds": [0.5, 0.9]},
      "bench": {"lengths": [100], "strides": [4, 8], "reps": 5, "min_rep_ms": 250}})";
  const RunConfig c = LoadRunConfig(dir.path() / "c.json");
  EXPECT_EQ(c.retrain.method, RetrainMethod::kLongerInput);
  EXPECT_EQ(*c.retrain.heads, 8u);
  EXPECT_EQ(*c.retrain.epochs, 3u);
  EXPECT_EQ(*c.eval.t, 20.0);
  EXPECT_EQ(c.eval_thresholds, (std::vector<double>{0.5, 0.9}));
  EXPECT_EQ(c.bench.lengths, std::vector<std::size_t>{100});
  EXPECT_EQ(c.bench.strides, (std::vector<std::size_t>{4, 8}));
  EXPECT_EQ(c.bench.reps, 5u);
  EXPECT_EQ(c.bench.min_rep_ms, 250.0);
  std::ofstream(dir.path() / "broken.json") << "{";
  EXPECT_THROW(LoadRunConfig(dir.path() / "broken.json"), Error);
}

TEST(ConfigTest, DefaultThresholdGrids) {
  const auto raw = DefaultThresholds(false);
  EXPECT_EQ(raw.front(), 0.0);
  EXPECT_DOUBLE_EQ(raw.back(), 1.0);
  const auto z = DefaultThresholds(true);
  EXPECT_DOUBLE_EQ(z.front(), -1.0);
  EXPECT_DOUBLE_EQ(z.back(), 10.0);
}

SynthCorpusSpec SmallSpec() {
  SynthCorpusSpec s;
  s.classes = 3;
  s.samples_per_class = 4;
  s.enroll_per_class = 2;
  s.test_audios = 2;
  s.keywords_per_audio = 3;
  s.distractors = 2;
  s.bins = 8;
  s.min_frames = 10;
  s.max_frames = 20;
  return s;
}

TEST(SynthTest, DeterministicInSeedAndWellFormed) {
  const SynthCorpus a = Synthesize(SmallSpec());
  SynthCorpus b;
  {
    ScopedWorkers one(1);
    b = Synthesize(SmallSpec());
  }
  EXPECT_EQ(a.train.labels, b.train.labels);
  EXPECT_EQ(a.test.audio("test00001").data, b.test.audio("test00001").data);

  SynthCorpusSpec other = SmallSpec();
  other.seed = 8;
  EXPECT_NE(Synthesize(other).train.audio("train00000").data,
            a.train.audio("train00000").data);

  EXPECT_EQ(a.train.audios.size(), 12u);
  EXPECT_EQ(a.train.labels.size(), 12u);
  EXPECT_EQ(a.enroll.labels.size(), 6u);
  EXPECT_EQ(a.test.labels.size(), 6u);
  EXPECT_EQ(a.train.words(), (std::vector<int>{0, 1, 2}));
  for (const Corpus* c : {&a.train, &a.enroll, &a.test}) {
    EXPECT_NO_THROW(c->Validate());
    for (const auto& l : c->labels) {
      EXPECT_GE(l.length(), 10u);
      EXPECT_LE(l.length(), 20u);
      EXPECT_EQ(c->audio(l.audio_id).cols, 8u);
    }
  }
}

TEST(SynthTest, RejectsBadSpecs) {
  SynthCorpusSpec s = SmallSpec();
  s.classes = 1;
  EXPECT_THROW(Synthesize(s), Error);
  s = SmallSpec();
  s.samples_per_class = 1;
  EXPECT_THROW(Synthesize(s), Error);
  s = SmallSpec();
  s.min_frames = 30;
  EXPECT_THROW(Synthesize(s), Error);
}

TEST(ParallelTest, VisitsEveryIndexOnce) {
  for (std::size_t workers : {1u, 3u}) {
    ScopedWorkers pin(workers);
    EXPECT_EQ(WorkerCount(), workers);
    std::vector<std::atomic<int>> hits(257);
    ParallelFor(hits.size(), [&](std::size_t i) { ++hits[i]; });
    for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
  }
}

TEST(ParallelTest, RethrowsLowestIndexError) {
  ScopedWorkers pin(4);
  try {
    ParallelFor(100, [](std::size_t i) {
      if (i == 17 || i == 63) Fail(ErrorKind::kValue, "boom ", i);
    });
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "boom 17");
  }
}

TEST(ParallelTest, EnvironmentCapsWorkers) {
  ::setenv("SEPSPOT_THREADS", "1", 1);
  EXPECT_EQ(WorkerCount(), 1u);
  ::setenv("SEPSPOT_THREADS", "junk", 1);
  EXPECT_GE(WorkerCount(), 1u);
  ::unsetenv("SEPSPOT_THREADS");
}

}  // namespace
}  // namespace sepspot
