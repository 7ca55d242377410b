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


// sepspot command-line driver.
//
//   sepspot synth   --config run.json
//   sepspot train   --config run.json
//   sepspot fuse    --config run.json
//   sepspot retrain --config run.json
//   sepspot enroll  --config run.json --scheme fast
//   sepspot search  --config run.json --scheme fast --threshold 0.95
//   sepspot eval    --config run.json --scheme fast
//   sepspot bench   --config run.json
//   sepspot fbank   --wav in.wav --out feats
//
// Every artifact lives under paths.work_dir unless --in/--out/--model say
// otherwise.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "sepspot/sepspot.hpp"

namespace fs = std::filesystem;
using namespace sepspot;

namespace {

struct Flags {
  std::string config;
  std::optional<std::string> scheme;
  std::optional<std::size_t> stride;
  std::optional<float> threshold;
  std::optional<std::string> tnorm, nms, competition;
  std::optional<std::uint64_t> seed;
  std::string out, in, model, queries, labels;
  std::size_t workers = 1;
};

bool OnOff(const std::string& v) { return v == "on"; }

RunConfig Resolve(const Flags& f) {
  RunConfig c = f.config.empty() ? RunConfig{} : LoadRunConfig(f.config);
  if (f.seed) {
    c.seed = *f.seed;
    c.ApplySeed();
  }
  if (f.scheme) c.search.scheme = ParseScheme(*f.scheme);
  if (f.stride) c.search.stride = *f.stride;
  if (f.threshold) c.search.threshold = *f.threshold;
  if (f.tnorm) c.search.tnorm = OnOff(*f.tnorm);
  if (f.nms) c.search.nms = OnOff(*f.nms);
  if (f.competition) c.search.competition = OnOff(*f.competition);
  c.search.Validate();
  return c;
}

fs::path Or(const std::string& flag, const fs::path& fallback) {
  return flag.empty() ? fallback : fs::path(flag);
}

const char* SchemeName(const RunConfig& c) { return ToString(c.search.scheme); }

fs::path ModelFor(const RunConfig& c) {
  return c.work_dir / (c.search.scheme == Scheme::kFast ? "model_padfree" : "model_deploy");
}

void Log(const std::string& s) { std::cerr << s << '\n'; }

nlohmann::json EpochsJson(const std::vector<EpochStats>& epochs) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : epochs) {
    arr.push_back({{"epoch", e.epoch},
                   {"loss", e.loss},
                   {"train_accuracy", e.train_accuracy},
                   {"valid_accuracy", e.valid_accuracy}});
  }
  return arr;
}

void PrintEpoch(const char* what, const EpochStats& s) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s epoch %zu  loss %.5f  train acc %.3f  valid acc %.3f",
                what, s.epoch, s.loss, s.train_accuracy, s.valid_accuracy);
  Log(buf);
}

// All `<id>.f32` feature files of a directory, keyed by id.
std::map<std::string, FeatureMatrix> ReadFeatureDir(const fs::path& dir) {
  if (!fs::is_directory(dir)) {
    Fail(ErrorKind::kIo, "feature directory ", dir.string(), " does not exist");
  }
  std::map<std::string, FeatureMatrix> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() != ".f32") continue;
    auto stem = e.path();
    stem.replace_extension();
    out.emplace(stem.filename().string(), ReadFeatures(stem));
  }
  if (out.empty()) Fail(ErrorKind::kIo, "no .f32 features in ", dir.string());
  return out;
}

void WriteReport(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  WriteJsonFile(path, j);
  Log("wrote " + path.string());
}

// ---------------------------------------------------------------------------

void CmdSynth(const Flags& f) {
  const RunConfig c = Resolve(f);
  const fs::path dir = Or(f.out, c.work_dir / "corpus");
  const SynthCorpus s = Synthesize(c.corpus);
  WriteCorpus(dir / "train", s.train);
  WriteCorpus(dir / "enroll", s.enroll);
  WriteCorpus(dir / "test", s.test);
  std::cout << "train " << s.train.labels.size() << " segments, enroll "
            << s.enroll.labels.size() << " templates, test " << s.test.audios.size()
            << " audios with " << s.test.labels.size() << " keywords -> " << dir.string()
            << '\n';
}

void CmdTrain(const Flags& f) {
  const RunConfig c = Resolve(f);
  const Corpus corpus = ReadCorpus(Or(f.in, c.work_dir / "corpus" / "train"));
  const Model init = InitModel(c.encoder, c.train, corpus.words().size());
  const TrainResult r = Train(corpus, init, c.train,
                              [](const EpochStats& s) { PrintEpoch("train", s); });
  Model m = r.model;
  const fs::path out = Or(f.out, c.work_dir / "model_train");
  SaveModel(out, m);
  WriteReport(c.work_dir / "train_log.json", {{"epochs", EpochsJson(r.epochs)}});
  std::cout << "saved " << out.string() << '\n';
}

void CmdFuse(const Flags& f) {
  const RunConfig c = Resolve(f);
  Model m = LoadModel(Or(f.model, c.work_dir / "model_train"));
  m.encoder = m.encoder.Fused();
  const fs::path out = Or(f.out, c.work_dir / "model_deploy");
  SaveModel(out, m);
  std::cout << "saved " << out.string() << " (encoder hash " << std::hex
            << m.encoder.Hash() << std::dec << ")\n";
}

void CmdRetrain(const Flags& f) {
  const RunConfig c = Resolve(f);
  const Model pre = LoadModel(Or(f.model, c.work_dir / "model_deploy"));
  const Corpus corpus = ReadCorpus(Or(f.in, c.work_dir / "corpus" / "train"));
  TrainConfig tc = c.train;
  if (c.retrain.epochs) tc.epochs = *c.retrain.epochs;
  RetrainOptions opts;
  opts.method = c.retrain.method;
  opts.heads = c.retrain.heads;
  const TrainResult r = RetrainEmbedding(pre, corpus, tc, opts,
                                         [](const EpochStats& s) { PrintEpoch("retrain", s); });
  Model m = r.model;
  const fs::path out = Or(f.out, c.work_dir / "model_padfree");
  SaveModel(out, m);
  WriteReport(c.work_dir / "retrain_log.json",
              {{"epochs", EpochsJson(r.epochs)},
               {"frames", m.frames},
               {"pretrained_valid_accuracy", ValidAccuracy(pre, corpus, tc.valid_fraction)}});
  std::cout << "saved " << out.string() << '\n';
}

void CmdEnroll(const Flags& f) {
  const RunConfig c = Resolve(f);
  const Model m = LoadModel(Or(f.model, ModelFor(c)));
  const Corpus corpus = ReadCorpus(Or(f.in, c.work_dir / "corpus" / "enroll"));
  const QueryEmbeddingSet v = Enroll(TemplatesFromCorpus(corpus), m);
  const fs::path out =
      Or(f.out, c.work_dir / (std::string("queries_") + SchemeName(c) + ".json"));
  WriteReport(out, ToJson(v));
  std::cout << "enrolled " << v.size() << " words\n";
}

void CmdSearch(const Flags& f) {
  const RunConfig c = Resolve(f);
  const Model m = LoadModel(Or(f.model, ModelFor(c)));
  const QueryEmbeddingSet v = QueriesFromJson(ReadJsonFile(
      Or(f.queries, c.work_dir / (std::string("queries_") + SchemeName(c) + ".json"))));
  const fs::path in = Or(f.in, c.work_dir / "corpus" / "test");
  std::map<std::string, FeatureMatrix> audios;
  if (fs::is_directory(in)) {
    audios = ReadFeatureDir(in);
  } else {
    audios.emplace(in.stem().string(), ReadFeatures(fs::path(in).replace_extension()));
  }
  std::vector<Detection> all;
  for (const auto& [id, a] : audios) {
    const auto dets = Search(a, id, v, m, c.search);
    const std::size_t w = WindowCount(a.rows, m.frames, c.search.stride);
    const std::size_t tail = a.rows - ((w - 1) * c.search.stride + m.frames);
    if (tail > 0) Log(id + ": " + std::to_string(tail) + " trailing frames not covered");
    all.insert(all.end(), dets.begin(), dets.end());
  }
  const fs::path out =
      Or(f.out, c.work_dir / (std::string("detections_") + SchemeName(c) + ".jsonl"));
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  WriteDetections(out, all);
  std::cout << all.size() << " detections over " << audios.size() << " audios ("
            << SchemeName(c) << ") -> " << out.string() << '\n';
}

void CmdEval(const Flags& f) {
  const RunConfig c = Resolve(f);
  const auto labels = ReadLabels(Or(f.labels, c.work_dir / "corpus" / "test" / "labels.json"));
  const auto dets = ReadDetections(
      Or(f.in, c.work_dir / (std::string("detections_") + SchemeName(c) + ".jsonl")));
  const EvalReport all = Match(labels, dets, c.eval);
  const std::vector<double> th =
      c.eval_thresholds.empty() ? DefaultThresholds(c.search.tnorm) : c.eval_thresholds;
  const auto sweep = SweepThresholds(labels, dets, th, c.eval);
  const EvalReport best = BestByF1(sweep);
  nlohmann::json sj = nlohmann::json::array();
  for (const auto& r : sweep) sj.push_back(ToJson(r));
  const std::string name = SchemeName(c);
  WriteReport(Or(f.out, c.work_dir / ("eval_" + name + ".json")),
              {{"scheme", name}, {"all", ToJson(all)}, {"best", ToJson(best)}, {"sweep", sj}});
  std::cout << FormatTable({{name, all}, {name + " best", best}});
}

void CmdBench(const Flags& f) {
  const RunConfig c = Resolve(f);
  const Model m = LoadModel(Or(f.model, c.work_dir / "model_padfree"));
  const fs::path qpath = Or(f.queries, c.work_dir / "queries_fast.json");
  QueryEmbeddingSet v;
  if (fs::exists(qpath)) {
    v = QueriesFromJson(ReadJsonFile(qpath));
  } else {
    Log("no query set at " + qpath.string() + "; using random queries");
    std::mt19937_64 rng(c.seed);
    for (int w = 0; w < 10; ++w) {
      const Tensor e = RandomNormal({m.embedding_dim()}, rng);
      v.entries.push_back({w, e.data, 1, 120.0});
    }
  }
  BenchConfig b = c.bench;
  b.workers = f.workers;
  b.search = c.search;
  const BenchReport r = RunBench(m, v, b);
  WriteReport(Or(f.out, c.work_dir / "bench.json"), ToJson(r));
  std::cout << FormatBench(r);
}

void CmdFbank(const Flags& f) {
  const RunConfig c = Resolve(f);
  if (f.in.empty() || f.out.empty()) Fail(ErrorKind::kConfig, "fbank needs --wav and --out");
  FbankOptions opts;
  opts.num_bins = c.encoder.input_bins;
  const FeatureMatrix m = ComputeFbank(ReadWav(f.in), opts);
  WriteFeatures(f.out, m);
  std::cout << m.rows << " frames x " << m.cols << " bins -> " << f.out << ".f32\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sepspot: query-by-example keyword search with a separable encoder"};
  app.require_subcommand(1);
  app.fallthrough();
  Flags f;
  app.add_option("--config", f.config, "run configuration (JSON)")->check(CLI::ExistingFile);
  app.add_option("--scheme", f.scheme, "basic or fast")
      ->check(CLI::IsMember({"basic", "fast"}));
  app.add_option("--stride", f.stride, "window stride s_t in frames");
  app.add_option("--threshold", f.threshold, "detection threshold");
  app.add_option("--tnorm", f.tnorm, "on or off")->check(CLI::IsMember({"on", "off"}));
  app.add_option("--nms", f.nms, "on or off")->check(CLI::IsMember({"on", "off"}));
  app.add_option("--competition", f.competition, "on or off")
      ->check(CLI::IsMember({"on", "off"}));
  app.add_option("--seed", f.seed, "overrides the config seed");
  app.add_option("--out", f.out, "output path");

  struct Sub {
    const char* name;
    const char* help;
    void (*run)(const Flags&);
  };
  const Sub subs[] = {
      {"synth", "write the synthetic train/enroll/test corpus", CmdSynth},
      {"train", "train encoder, head and classifier", CmdTrain},
      {"fuse", "fold branches into single 3x3 convolutions", CmdFuse},
      {"retrain", "retrain the head on a pad-free copy of a fused encoder", CmdRetrain},
      {"enroll", "average template embeddings into a query set", CmdEnroll},
      {"search", "score test audio and emit detections", CmdSearch},
      {"eval", "score detections against labels", CmdEval},
      {"bench", "time basic against fast scoring", CmdBench},
      {"fbank", "compute log-mel features from a WAV file", CmdFbank},
  };
  const Sub* chosen = nullptr;
  for (const Sub& s : subs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    sub->callback([&chosen, &s] { chosen = &s; });
    const std::string name = s.name;
    if (name == "train" || name == "retrain" || name == "enroll" || name == "search") {
      sub->add_option("--in", f.in, "input corpus or features");
    }
    if (name == "eval") {
      sub->add_option("--detections", f.in, "detections (JSON lines)");
      sub->add_option("--labels", f.labels, "labels (JSON)");
    }
    if (name == "fbank") sub->add_option("--wav", f.in, "input WAV")->required();
    if (name != "synth" && name != "train" && name != "eval" && name != "fbank") {
      sub->add_option("--model", f.model, "model stem (<stem>.json + <stem>.bin)");
    }
    if (name == "search" || name == "bench") {
      sub->add_option("--queries", f.queries, "query set (JSON)");
    }
    if (name == "bench") sub->add_option("--workers", f.workers, "worker threads");
  }
  CLI11_PARSE(app, argc, argv);
  try {
    chosen->run(f);
  } catch (const Error& e) {
    std::cerr << "sepspot " << chosen->name << ": " << ToString(e.kind()) << " error: "
              << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "sepspot " << chosen->name << ": " << e.what() << '\n';
    return 1;
  }
  return 0;
}
