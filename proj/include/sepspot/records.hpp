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

// Labelled spans, detections, and corpora on disk.
//
// A corpus directory holds one `<audio_id>.f32` / `<audio_id>.json` pair per
// utterance plus `labels.json`, a list of
// {audio_id, word_id, start_frame, end_frame}.

#pragma once

#include <map>

#include "sepspot/features.hpp"

namespace sepspot {

struct LabelSpan {
  std::string audio_id;
  int word_id = 0;
  std::size_t start_frame = 0;
  std::size_t end_frame = 0;  // exclusive

  std::size_t length() const { return end_frame - start_frame; }
  bool operator==(const LabelSpan&) const = default;
};

struct Detection {
  std::string audio_id;
  int word_id = 0;
  std::size_t start_frame = 0;
  std::size_t end_frame = 0;  // exclusive
  float score = 0.0f;

  bool operator==(const Detection&) const = default;
};

inline void ValidateSpan(std::size_t start, std::size_t end, const char* what) {
  if (start >= end) {
    Fail(ErrorKind::kValue, what, " span [", start, ",", end, ") is empty");
  }
}

inline nlohmann::json ToJson(const LabelSpan& l) {
  return {{"audio_id", l.audio_id},
          {"word_id", l.word_id},
          {"start_frame", l.start_frame},
          {"end_frame", l.end_frame}};
}

inline nlohmann::json ToJson(const Detection& d) {
  return {{"audio_id", d.audio_id},   {"word_id", d.word_id},
          {"start_frame", d.start_frame}, {"end_frame", d.end_frame},
          {"score", d.score}};
}

inline LabelSpan LabelFromJson(const nlohmann::json& j) {
  LabelSpan l;
  try {
    l.audio_id = j.at("audio_id").get<std::string>();
    l.word_id = j.at("word_id").get<int>();
    l.start_frame = j.at("start_frame").get<std::size_t>();
    l.end_frame = j.at("end_frame").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorKind::kIo, "bad label record ", j.dump(), ": ", e.what());
  }
  ValidateSpan(l.start_frame, l.end_frame, "label");
  return l;
}

inline Detection DetectionFromJson(const nlohmann::json& j) {
  Detection d;
  try {
    d.audio_id = j.at("audio_id").get<std::string>();
    d.word_id = j.at("word_id").get<int>();
    d.start_frame = j.at("start_frame").get<std::size_t>();
    d.end_frame = j.at("end_frame").get<std::size_t>();
    d.score = j.at("score").get<float>();
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorKind::kIo, "bad detection record ", j.dump(), ": ", e.what());
  }
  ValidateSpan(d.start_frame, d.end_frame, "detection");
  return d;
}

inline void WriteLabels(const std::filesystem::path& path,
                        const std::vector<LabelSpan>& labels) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& l : labels) arr.push_back(ToJson(l));
  WriteJsonFile(path, arr);
}

inline std::vector<LabelSpan> ReadLabels(const std::filesystem::path& path) {
  const auto j = ReadJsonFile(path);
  if (!j.is_array()) Fail(ErrorKind::kIo, path.string(), " is not a JSON array");
  std::vector<LabelSpan> out;
  for (const auto& e : j) out.push_back(LabelFromJson(e));
  return out;
}

/// One JSON object per line.
inline void WriteDetections(std::ostream& out,
                            const std::vector<Detection>& dets) {
  for (const auto& d : dets) out << ToJson(d).dump() << '\n';
}

inline void WriteDetections(const std::filesystem::path& path,
                            const std::vector<Detection>& dets) {
  std::ofstream out(path);
  if (!out) Fail(ErrorKind::kIo, "cannot write ", path.string());
  WriteDetections(out, dets);
}

inline std::vector<Detection> ReadDetections(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) Fail(ErrorKind::kIo, "cannot open ", path.string());
  std::vector<Detection> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      Fail(ErrorKind::kIo, path.string(), ":", lineno, ": ", e.what());
    }
    out.push_back(DetectionFromJson(j));
  }
  return out;
}

/// Utterances keyed by id, with their labels.
struct Corpus {
  std::map<std::string, FeatureMatrix> audios;
  std::vector<LabelSpan> labels;

  const FeatureMatrix& audio(const std::string& id) const {
    auto it = audios.find(id);
    if (it == audios.end()) Fail(ErrorKind::kValue, "unknown audio id ", id);
    return it->second;
  }

  /// Distinct word ids, ascending.
  std::vector<int> words() const {
    std::vector<int> w;
    for (const auto& l : labels) w.push_back(l.word_id);
    std::sort(w.begin(), w.end());
    w.erase(std::unique(w.begin(), w.end()), w.end());
    return w;
  }

  void Validate() const {
    for (const auto& l : labels) {
      const FeatureMatrix& a = audio(l.audio_id);
      ValidateSpan(l.start_frame, l.end_frame, "label");
      if (l.end_frame > a.rows) {
        Fail(ErrorKind::kValue, "label [", l.start_frame, ",", l.end_frame,
             ") runs past the ", a.rows, " frames of ", l.audio_id);
      }
    }
  }
};

inline void WriteCorpus(const std::filesystem::path& dir, const Corpus& c) {
  std::filesystem::create_directories(dir);
  for (const auto& [id, feats] : c.audios) WriteFeatures(dir / id, feats);
  WriteLabels(dir / "labels.json", c.labels);
}

inline Corpus ReadCorpus(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    Fail(ErrorKind::kIo, "corpus directory ", dir.string(), " does not exist");
  }
  Corpus c;
  c.labels = ReadLabels(dir / "labels.json");
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() != ".f32") continue;
    auto stem = entry.path();
    stem.replace_extension();
    c.audios.emplace(stem.filename().string(), ReadFeatures(stem));
  }
  c.Validate();
  return c;
}

}  // namespace sepspot
