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

// Encoder + embedding head + classifier bundle and its weight manifest.
//
// A checkpoint is `<stem>.json`, the manifest
//   {format, form, frames, encoder, head, classes,
//    tensors: [{name, shape, offset}]}
// and `<stem>.bin`, every tensor as raw little-endian f32 at its offset
// (counted in floats).

#pragma once

#include <initializer_list>
#include <set>

#include "sepspot/encoder.hpp"
#include "sepspot/features.hpp"
#include "sepspot/head.hpp"

namespace sepspot {

inline constexpr const char* kWeightsFormat = "sepspot-weights-1";

/// One column per class, w_j = weight[:, j]; [D_0, N].
struct ClassifierWeights {
  Tensor weight;

  static ClassifierWeights Init(std::size_t dim, std::size_t classes,
                                std::mt19937_64& rng) {
    if (classes < 2) Fail(ErrorKind::kConfig, "need at least 2 classes");
    return {RandomNormal({dim, classes}, rng, 1.0f / std::sqrt(float(dim)))};
  }

  std::size_t dim() const { return weight.rank() ? weight.dim(0) : 0; }
  std::size_t classes() const { return weight.rank() ? weight.dim(1) : 0; }
};

struct Model {
  Encoder encoder;
  EmbeddingHead head;
  ClassifierWeights classifier;  // may be empty for search-only models
  std::size_t frames = 160;      // F_0

  std::size_t hidden() const { return head.hidden(); }
  std::size_t embedding_dim() const { return head.out_dim(); }

  template <typename F>
  void VisitTensors(F&& f) {
    encoder.VisitTensors(f);
    f(std::string("head.attention"), head.pool.attention);
    f(std::string("head.proj.weight"), head.proj.weight);
    f(std::string("head.proj.bias"), head.proj.bias);
    if (!classifier.weight.empty()) {
      f(std::string("classifier.weight"), classifier.weight);
    }
  }
};

// ---------------------------------------------------------------------------
// JSON helpers

/// Rejects any key outside `allowed`.
inline void CheckKeys(const nlohmann::json& j,
                      std::initializer_list<std::string_view> allowed,
                      std::string_view where) {
  if (!j.is_object()) Fail(ErrorKind::kConfig, where, " must be an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) Fail(ErrorKind::kConfig, "unknown key '", key, "' in ", where);
  }
}

template <typename T>
void ReadKey(const nlohmann::json& j, const char* key, T* out,
             std::string_view where) {
  if (!j.contains(key)) return;
  try {
    *out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    Fail(ErrorKind::kConfig, "bad value for '", key, "' in ", where, ": ",
         j.at(key).dump());
  }
}

inline nlohmann::json ToJson(const EncoderConfig& c) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : c.stages) {
    stages.push_back({{"blocks", s.blocks},
                      {"channels", s.channels},
                      {"stride_time", s.stride_time},
                      {"stride_freq", s.stride_freq}});
  }
  return {{"stages", stages},
          {"input_bins", c.input_bins},
          {"pad_time", ToString(c.pad_time)}};
}

/// Accepts "default", "tiny", or a full object.
inline EncoderConfig EncoderConfigFromJson(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto name = j.get<std::string>();
    if (name == "default") return EncoderConfig::Default();
    if (name == "tiny") return EncoderConfig::Tiny();
    Fail(ErrorKind::kConfig, "unknown encoder preset '", name, "'");
  }
  CheckKeys(j, {"preset", "stages", "input_bins", "pad_time"}, "encoder");
  EncoderConfig c = EncoderConfig::Default();
  if (j.contains("preset")) c = EncoderConfigFromJson(j.at("preset"));
  if (j.contains("stages")) {
    c.stages.clear();
    for (const auto& s : j.at("stages")) {
      CheckKeys(s, {"blocks", "channels", "stride_time", "stride_freq"},
                "encoder stage");
      StageConfig st;
      ReadKey(s, "blocks", &st.blocks, "encoder stage");
      ReadKey(s, "channels", &st.channels, "encoder stage");
      ReadKey(s, "stride_time", &st.stride_time, "encoder stage");
      ReadKey(s, "stride_freq", &st.stride_freq, "encoder stage");
      c.stages.push_back(st);
    }
  }
  ReadKey(j, "input_bins", &c.input_bins, "encoder");
  if (j.contains("pad_time")) {
    std::string p;
    ReadKey(j, "pad_time", &p, "encoder");
    c.pad_time = ParsePadding(p);
  }
  c.Validate();
  return c;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline void SaveModel(const std::filesystem::path& stem, Model& m) {
  nlohmann::json tensors = nlohmann::json::array();
  std::vector<float> blob;
  m.VisitTensors([&](const std::string& name, const Tensor& t) {
    tensors.push_back({{"name", name}, {"shape", t.shape}, {"offset", blob.size()}});
    blob.insert(blob.end(), t.data.begin(), t.data.end());
  });
  nlohmann::json manifest = {
      {"format", kWeightsFormat},
      {"form", m.encoder.form() == EncoderForm::kTrain ? "train" : "deploy"},
      {"frames", m.frames},
      {"encoder", ToJson(m.encoder.config())},
      {"head",
       {{"heads", m.head.pool.heads()},
        {"hidden", m.hidden()},
        {"dim", m.embedding_dim()}}},
      {"classes", m.classifier.classes()},
      {"tensors", tensors}};
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  auto json_path = stem, bin_path = stem;
  json_path += ".json";
  bin_path += ".bin";
  WriteF32Blob(bin_path, blob);
  WriteJsonFile(json_path, manifest);
}

inline Model LoadModel(const std::filesystem::path& stem) {
  auto json_path = stem, bin_path = stem;
  json_path += ".json";
  bin_path += ".bin";
  const auto j = ReadJsonFile(json_path);
  const std::string where = json_path.string();
  CheckKeys(j, {"format", "form", "frames", "encoder", "head", "classes", "tensors"},
            where);
  if (j.value("format", "") != kWeightsFormat) {
    Fail(ErrorKind::kIo, where, " is not a ", kWeightsFormat, " manifest");
  }
  Model m;
  std::string form;
  std::size_t heads = 0, hidden = 0, dim = 0, classes = 0;
  ReadKey(j, "form", &form, where);
  ReadKey(j, "frames", &m.frames, where);
  ReadKey(j, "classes", &classes, where);
  const auto& h = j.at("head");
  ReadKey(h, "heads", &heads, where);
  ReadKey(h, "hidden", &hidden, where);
  ReadKey(h, "dim", &dim, where);
  if (form != "train" && form != "deploy") {
    Fail(ErrorKind::kIo, where, ": form must be train or deploy, got '", form, "'");
  }

  // Build a skeleton with the right shapes, then fill it by name.
  std::mt19937_64 rng(0);
  const EncoderConfig cfg = EncoderConfigFromJson(j.at("encoder"));
  m.encoder = Encoder::InitTrain(cfg, rng);
  if (form == "deploy") m.encoder = m.encoder.Fused();
  m.head = EmbeddingHead::Init(hidden, heads, dim, rng);
  if (classes > 0) m.classifier = ClassifierWeights::Init(dim, classes, rng);

  const std::vector<float> blob = ReadF32Blob(bin_path);
  std::map<std::string, nlohmann::json> entries;
  for (const auto& t : j.at("tensors")) {
    entries[t.at("name").get<std::string>()] = t;
  }
  std::set<std::string> used;
  m.VisitTensors([&](const std::string& name, Tensor& t) {
    auto it = entries.find(name);
    if (it == entries.end()) Fail(ErrorKind::kIo, where, " lacks tensor ", name);
    const Shape shape = it->second.at("shape").get<Shape>();
    const std::size_t offset = it->second.at("offset").get<std::size_t>();
    if (shape != t.shape) {
      Fail(ErrorKind::kShape, "tensor ", name, " has shape ", ShapeString(shape),
           ", expected ", ShapeString(t.shape));
    }
    if (offset + t.size() > blob.size()) {
      Fail(ErrorKind::kIo, "tensor ", name, " runs past the end of ",
           bin_path.string());
    }
    std::copy_n(blob.begin() + static_cast<std::ptrdiff_t>(offset), t.size(),
                t.data.begin());
    used.insert(name);
  });
  for (const auto& [name, e] : entries) {
    if (!used.count(name)) Fail(ErrorKind::kIo, where, ": unexpected tensor ", name);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Inference helpers

/// Stacks equally sized matrices into [B, 1, T, D].
inline Tensor StackImages(std::span<const FeatureMatrix> mats) {
  if (mats.empty()) Fail(ErrorKind::kShape, "no feature matrices to stack");
  const std::size_t T = mats[0].rows, D = mats[0].cols;
  Tensor x({mats.size(), 1, T, D});
  for (std::size_t b = 0; b < mats.size(); ++b) {
    if (mats[b].rows != T || mats[b].cols != D) {
      Fail(ErrorKind::kShape, "cannot stack ", mats[b].rows, "x", mats[b].cols,
           " with ", T, "x", D);
    }
    std::copy(mats[b].data.begin(), mats[b].data.end(),
              x.data.begin() + static_cast<std::ptrdiff_t>(b * T * D));
  }
  return x;
}

/// Raw embeddings [B, D_0] of a [B, 1, T, D] batch.
inline Tensor EmbedBatch(const Model& m, const Tensor& x) {
  return Embed(m.encoder.Forward(x), m.head);
}

/// Cosine classification: argmax_j of f . w_j / |w_j|.
inline std::vector<int> Classify(const Tensor& embeddings,
                                 const ClassifierWeights& cw) {
  const std::size_t B = embeddings.dim(0), D = cw.dim(), N = cw.classes();
  if (embeddings.dim(1) != D) {
    Fail(ErrorKind::kShape, "embedding dim ", embeddings.dim(1),
         " != classifier dim ", D);
  }
  std::vector<double> inv(N, 0.0);
  for (std::size_t j = 0; j < N; ++j) {
    double s = 0.0;
    for (std::size_t k = 0; k < D; ++k) s += double(cw.weight[k * N + j]) * cw.weight[k * N + j];
    inv[j] = s > 0.0 ? 1.0 / std::sqrt(s) : 0.0;
  }
  std::vector<int> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    double best = -1e300;
    for (std::size_t j = 0; j < N; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < D; ++k) s += double(embeddings[b * D + k]) * cw.weight[k * N + j];
      s *= inv[j];
      if (s > best) {
        best = s;
        out[b] = static_cast<int>(j);
      }
    }
  }
  return out;
}

}  // namespace sepspot
