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
#include <unistd.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "sepspot/sepspot.hpp"

namespace sepspot {
namespace {

namespace fs = std::filesystem;

struct RunResult {
  int code = 0;
  std::string out, err;
};

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("sepspot_cli_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()
                                            ->current_test_info()
                                            ->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  static std::string Slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  RunResult Run(const std::string& args) {
    const fs::path out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
    const std::string cmd = std::string("\"") + SEPSPOT_CLI + "\" " + args + " >\"" +
                            out.string() + "\" 2>\"" + err.string() + "\"";
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = Slurp(out);
    r.err = Slurp(err);
    return r;
  }

  fs::path WriteConfig(const std::string& extra = "") {
    const fs::path p = dir_ / "run.json";
    std::ofstream(p) << R"({"seed": 3, "paths": {"work_dir": ")" << (dir_ / "w").string()
                     << R"("},
      "corpus": {"classes": 3, "samples_per_class": 12, "enroll_per_class": 3,
                 "test_audios": 2, "keywords_per_audio": 3},
      "train": {"epochs": 2, "batch_size": 16},
      "search": {"stride": 8},
      "bench": {"lengths": [300], "strides": [8], "reps": 1})"
                     << extra << "}";
    return p;
  }

  fs::path dir_;
};

TEST_F(CliTest, HelpListsSubcommands) {
  const RunResult r = Run("--help");
  EXPECT_EQ(r.code, 0);
  for (const char* s : {"synth", "train", "fuse", "retrain", "enroll", "search", "eval",
                        "bench", "fbank"}) {
    EXPECT_NE(r.out.find(s), std::string::npos) << s;
  }
}

TEST_F(CliTest, UnknownConfigKeyFailsBeforeWork) {
  const fs::path cfg = WriteConfig(R"(, "serch": {})");
  const RunResult r = Run("synth --config " + cfg.string());
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("serch"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir_ / "w"));
}

TEST_F(CliTest, EvalOfEmptyDetectionsReportsZeroes) {
  std::vector<LabelSpan> labels = {{"a", 1, 10, 40}, {"a", 2, 60, 90}};
  WriteLabels(dir_ / "labels.json", labels);
  std::ofstream(dir_ / "dets.jsonl").close();
  const RunResult r = Run("eval --labels " + (dir_ / "labels.json").string() +
                          " --detections " + (dir_ / "dets.jsonl").string() + " --out " +
                          (dir_ / "eval.json").string());
  ASSERT_EQ(r.code, 0) << r.err;
  const nlohmann::json j = ReadJsonFile(dir_ / "eval.json");
  EXPECT_EQ(j.at("all").at("precision").get<double>(), 0.0);
  EXPECT_EQ(j.at("all").at("recall").get<double>(), 0.0);
  EXPECT_EQ(j.at("all").at("fn").get<int>(), 2);
}

TEST_F(CliTest, FbankWritesFeatures) {
  Waveform w;
  for (int i = 0; i < 16000; ++i) w.samples.push_back(0.3f * std::sin(0.05f * i));
  WriteWav(dir_ / "tone.wav", w);
  const RunResult r = Run("fbank --wav " + (dir_ / "tone.wav").string() + " --out " +
                          (dir_ / "tone").string());
  ASSERT_EQ(r.code, 0) << r.err;
  const FeatureMatrix m = ReadFeatures(dir_ / "tone");
  EXPECT_EQ(m.cols, 60u);
  EXPECT_GT(m.rows, 90u);
}

TEST_F(CliTest, FullPipeline) {
  const std::string cfg = " --config " + WriteConfig().string();
  for (const char* step : {"synth", "train", "fuse", "retrain"}) {
    const RunResult r = Run(std::string(step) + cfg);
    ASSERT_EQ(r.code, 0) << step << ": " << r.err;
  }
  for (const char* scheme : {"basic", "fast"}) {
    const std::string s = cfg + " --scheme " + scheme;
    for (const char* step : {"enroll", "search", "eval"}) {
      const RunResult r = Run(std::string(step) + s);
      ASSERT_EQ(r.code, 0) << step << " " << scheme << ": " << r.err;
    }
    const nlohmann::json j =
        ReadJsonFile(dir_ / "w" / (std::string("eval_") + scheme + ".json"));
    EXPECT_EQ(j.at("scheme"), scheme);
    for (const char* k : {"precision", "recall", "f1", "mao"}) {
      const double v = j.at("best").at(k).get<double>();
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
  const RunResult b = Run("bench" + cfg);
  ASSERT_EQ(b.code, 0) << b.err;
  const nlohmann::json bj = ReadJsonFile(dir_ / "w" / "bench.json");
  ASSERT_EQ(bj.at("cells").size(), 1u);
  EXPECT_GT(bj.at("cells")[0].at("speedup").get<double>(), 0.0);

  // The pad-same deploy model cannot drive the fast scheme.
  const RunResult bad = Run("search" + cfg + " --scheme fast --model " +
                            (dir_ / "w" / "model_deploy").string());
  EXPECT_NE(bad.code, 0);
  EXPECT_NE(bad.err.find("fast scheme requires pad-free encoder"), std::string::npos)
      << bad.err;
}

TEST_F(CliTest, FlagsOverrideConfig) {
  const std::string cfg = " --config " + WriteConfig().string();
  const RunResult r = Run("synth" + cfg + " --stride 0");
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("stride"), std::string::npos) << r.err;
}

}  // namespace
}  // namespace sepspot
