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

// Query-by-example search: enrollment, sliding-window scoring (basic and
// separable), score normalization, NMS and competitive detection.

#pragma once

#include "sepspot/model.hpp"
#include "sepspot/parallel.hpp"
#include "sepspot/records.hpp"

namespace sepspot {

struct QueryEntry {
  int word_id = 0;
  std::vector<float> embedding;  // E_avg, not renormalized
  std::size_t samples = 0;       // s_i
  double avg_frames = 0.0;       // mean pre-padding template length
};

struct QueryEmbeddingSet {
  std::vector<QueryEntry> entries;

  std::size_t size() const { return entries.size(); }
  std::size_t dim() const {
    return entries.empty() ? 0 : entries[0].embedding.size();
  }
};

struct QueryTemplate {
  int word_id = 0;
  SegmentRef segment;
  std::string name;  // for diagnostics
};

enum class Scheme { kBasic, kFast };

inline const char* ToString(Scheme s) { return s == Scheme::kBasic ? "basic" : "fast"; }
inline Scheme ParseScheme(const std::string& s) {
  if (s == "basic") return Scheme::kBasic;
  if (s == "fast") return Scheme::kFast;
  Fail(ErrorKind::kConfig, "scheme must be basic or fast, got '", s, "'");
}

struct SearchConfig {
  Scheme scheme = Scheme::kBasic;
  std::size_t stride = 4;  // s_t, fbank frames
  float threshold = 0.95f;  // z-units when tnorm is on
  bool tnorm = false;
  bool nms = true;
  bool competition = true;

  void Validate() const {
    if (stride == 0) Fail(ErrorKind::kConfig, "stride must be > 0");
    if (!std::isfinite(threshold)) Fail(ErrorKind::kConfig, "threshold must be finite");
    if (!tnorm && (threshold < 0.0f || threshold > 1.0f)) {
      Fail(ErrorKind::kConfig, "threshold must lie in [0,1] without tnorm, got ",
           threshold);
    }
  }
};

/// M x W scores; column i covers frames [i*stride, i*stride + frames).
struct ScoreMatrix {
  std::size_t rows = 0, cols = 0;
  std::vector<float> values;
  std::vector<int> word_ids;  // per row
  std::size_t stride = 1;     // s_t
  std::size_t frames = 0;     // F_0

  float& at(std::size_t m, std::size_t i) { return values[m * cols + i]; }
  float at(std::size_t m, std::size_t i) const { return values[m * cols + i]; }
  std::size_t start_frame(std::size_t i) const { return i * stride; }
};

/// W = floor((F_H - F_0) / s_t) + 1.
inline std::size_t WindowCount(std::size_t total, std::size_t frames,
                               std::size_t stride) {
  if (total < frames) {
    Fail(ErrorKind::kWindowUnderflow, "audio shorter than window: ", total,
         " frames < F_0 = ", frames);
  }
  return (total - frames) / stride + 1;
}

/// 0.5 * cos(a, b) + 0.5, clamped to [0, 1].
inline float SimilarityScore(std::span<const float> a, std::span<const float> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dot += double(a[k]) * b[k];
    na += double(a[k]) * a[k];
    nb += double(b[k]) * b[k];
  }
  if (na == 0.0 || nb == 0.0) return 0.5f;
  const double c = std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
  return static_cast<float>(0.5 * c + 0.5);
}

namespace detail {
inline std::vector<float> UnitRow(const Tensor& e, std::size_t b) {
  const std::size_t D = e.dim(1);
  double s = 0.0;
  for (std::size_t k = 0; k < D; ++k) s += double(e[b * D + k]) * e[b * D + k];
  std::vector<float> out(D, 0.0f);
  if (s == 0.0) return out;
  const double inv = 1.0 / std::sqrt(s);
  for (std::size_t k = 0; k < D; ++k) out[k] = static_cast<float>(e[b * D + k] * inv);
  return out;
}
}  // namespace detail

/// Averages unit embeddings of each word's templates.
inline QueryEmbeddingSet Enroll(const std::vector<QueryTemplate>& templates,
                                const Model& model) {
  std::map<int, std::vector<const QueryTemplate*>> by_word;
  for (const auto& t : templates) by_word[t.word_id].push_back(&t);
  QueryEmbeddingSet set;
  for (const auto& [word, list] : by_word) {
    QueryEntry q;
    q.word_id = word;
    q.samples = list.size();
    std::vector<double> acc(model.embedding_dim(), 0.0);
    double frames = 0.0;
    for (const QueryTemplate* t : list) {
      if (t->segment.length() == 0) {
        Fail(ErrorKind::kValue, "template ", t->name, " is empty");
      }
      const Tensor e = EmbedBatch(
          model, TemporalContextPad(t->segment, model.frames).AsImage());
      double s = 0.0;
      for (float v : e.data) s += double(v) * v;
      if (s == 0.0) {
        Fail(ErrorKind::kNumeric, "template ", t->name, " of word ", word,
             " has a zero-norm embedding");
      }
      const double inv = 1.0 / std::sqrt(s);
      for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += e[k] * inv;
      frames += double(t->segment.length());
    }
    double norm = 0.0;
    q.embedding.resize(acc.size());
    for (std::size_t k = 0; k < acc.size(); ++k) {
      acc[k] /= double(list.size());
      q.embedding[k] = static_cast<float>(acc[k]);
      norm += acc[k] * acc[k];
    }
    if (norm < 1e-24) {
      Fail(ErrorKind::kNumeric, "word ", word,
           " has a zero-norm average embedding; its templates cancel out");
    }
    q.avg_frames = frames / double(list.size());
    set.entries.push_back(std::move(q));
  }
  return set;
}

/// Templates for every label of a corpus.
inline std::vector<QueryTemplate> TemplatesFromCorpus(const Corpus& c) {
  std::vector<QueryTemplate> out;
  for (const auto& l : c.labels) {
    out.push_back({l.word_id, SegmentRef{&c.audio(l.audio_id), l.start_frame, l.end_frame},
                   l.audio_id + ":" + std::to_string(l.start_frame)});
  }
  return out;
}

inline nlohmann::json ToJson(const QueryEmbeddingSet& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& q : v.entries) {
    arr.push_back({{"word_id", q.word_id},
                   {"samples", q.samples},
                   {"avg_frames", q.avg_frames},
                   {"embedding", q.embedding}});
  }
  return {{"queries", arr}};
}

inline QueryEmbeddingSet QueriesFromJson(const nlohmann::json& j) {
  QueryEmbeddingSet v;
  try {
    for (const auto& e : j.at("queries")) {
      QueryEntry q;
      q.word_id = e.at("word_id").get<int>();
      q.samples = e.at("samples").get<std::size_t>();
      q.avg_frames = e.at("avg_frames").get<double>();
      q.embedding = e.at("embedding").get<std::vector<float>>();
      if (!(q.avg_frames > 0.0)) Fail(ErrorKind::kValue, "avg_frames must be > 0");
      if (!v.entries.empty() && q.embedding.size() != v.dim()) {
        Fail(ErrorKind::kShape, "query embeddings differ in size");
      }
      v.entries.push_back(std::move(q));
    }
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorKind::kIo, "bad query set: ", e.what());
  }
  return v;
}

namespace detail {

inline ScoreMatrix EmptyScores(const QueryEmbeddingSet& v, std::size_t cols,
                               std::size_t stride, std::size_t frames) {
  ScoreMatrix c;
  c.rows = v.size();
  c.cols = cols;
  c.stride = stride;
  c.frames = frames;
  c.values.assign(c.rows * c.cols, 0.0f);
  for (const auto& q : v.entries) c.word_ids.push_back(q.word_id);
  return c;
}

inline void CheckQueries(const QueryEmbeddingSet& v, const Model& model) {
  if (v.size() == 0) Fail(ErrorKind::kValue, "no enrolled queries");
  if (v.dim() != model.embedding_dim()) {
    Fail(ErrorKind::kShape, "query embeddings have dim ", v.dim(),
         ", model produces ", model.embedding_dim());
  }
}

inline void ScoreColumns(ScoreMatrix& c, const QueryEmbeddingSet& v,
                         std::size_t first, const Tensor& emb) {
  for (std::size_t b = 0; b < emb.dim(0); ++b) {
    const auto e = UnitRow(emb, b);
    for (std::size_t m = 0; m < v.size(); ++m) {
      c.at(m, first + b) = SimilarityScore(e, v.entries[m].embedding);
    }
  }
}

constexpr std::size_t kWindowBatch = 16;

}  // namespace detail

/// Embeds every F_0-frame window independently.
inline ScoreMatrix ScoreBasic(const FeatureMatrix& audio, const QueryEmbeddingSet& v,
                              const Model& model, std::size_t stride) {
  detail::CheckQueries(v, model);
  if (stride == 0) Fail(ErrorKind::kConfig, "stride must be > 0");
  const std::size_t F0 = model.frames;
  const std::size_t W = WindowCount(audio.rows, F0, stride);
  ScoreMatrix c = detail::EmptyScores(v, W, stride, F0);
  const std::size_t batches = (W + detail::kWindowBatch - 1) / detail::kWindowBatch;
  ParallelFor(batches, [&](std::size_t bi) {
    const std::size_t first = bi * detail::kWindowBatch;
    const std::size_t n = std::min(detail::kWindowBatch, W - first);
    Tensor x({n, 1, F0, audio.cols});
    for (std::size_t k = 0; k < n; ++k) {
      const float* src = audio.row((first + k) * stride);
      std::copy(src, src + F0 * audio.cols, x.ptr() + k * F0 * audio.cols);
    }
    detail::ScoreColumns(c, v, first, EmbedBatch(model, x));
  });
  return c;
}

/// Runs the encoder once over the whole audio and slides T_0^m-frame windows
/// over the hidden map with stride s_t / C_r. `allow_padded` lets a pad-same
/// encoder through for diagnostics; its scores do not match ScoreBasic.
inline ScoreMatrix ScoreFast(const FeatureMatrix& audio, const QueryEmbeddingSet& v,
                             const Model& model, std::size_t stride,
                             bool allow_padded = false) {
  detail::CheckQueries(v, model);
  if (model.encoder.form() != EncoderForm::kDeploy) {
    Fail(ErrorKind::kConfig, "fast scheme requires a fused encoder");
  }
  if (model.encoder.pad_time() != Padding::kNone && !allow_padded) {
    Fail(ErrorKind::kConfig, "fast scheme requires pad-free encoder");
  }
  const std::size_t cr = model.encoder.config().DownsampleRatio();
  if (stride == 0 || stride % cr != 0) {
    Fail(ErrorKind::kConfig, "stride ", stride,
         " must be a positive multiple of the downsampling ratio ", cr);
  }
  const std::size_t F0 = model.frames;
  const std::size_t W = WindowCount(audio.rows, F0, stride);
  const std::size_t hop = stride / cr;
  const std::size_t t0 = model.encoder.OutputShape(F0).time;  // T_0^m

  const Tensor hidden = model.encoder.pad_time() == Padding::kNone
                            ? model.encoder.ForwardChunked(audio.AsImage())
                            : model.encoder.Forward(audio.AsImage());
  const std::size_t C = hidden.dim(1), TH = hidden.dim(2), F = hidden.dim(3);
  if ((W - 1) * hop + t0 > TH) {
    Fail(ErrorKind::kShape, "hidden map of ", TH, " frames cannot hold ", W,
         " windows of ", t0, " frames at hop ", hop);
  }
  // Frame-major hidden map: every window is a contiguous block of rows.
  const std::size_t H = C * F;
  std::vector<float> frames(TH * H);
  for (std::size_t ch = 0; ch < C; ++ch) {
    for (std::size_t t = 0; t < TH; ++t) {
      std::copy_n(&hidden.data[(ch * TH + t) * F], F, &frames[t * H + ch * F]);
    }
  }
  const PoolingParams& pool = model.head.pool;
  if (pool.attention.rank() != 2 || pool.attention.dim(1) * pool.heads() != H) {
    Fail(ErrorKind::kShape, "head expects ", pool.attention.dim(1) * pool.heads(),
         " hidden features, encoder gives ", H);
  }
  ScoreMatrix c = detail::EmptyScores(v, W, stride, F0);
  const std::size_t batches = (W + detail::kWindowBatch - 1) / detail::kWindowBatch;
  ParallelFor(batches, [&](std::size_t bi) {
    const std::size_t first = bi * detail::kWindowBatch;
    const std::size_t n = std::min(detail::kWindowBatch, W - first);
    Tensor pooled({n, 2 * H});
    for (std::size_t k = 0; k < n; ++k) {
      PoolFrames(&frames[(first + k) * hop * H], t0, H, pool, pooled.ptr() + k * 2 * H);
    }
    detail::ScoreColumns(c, v, first,
                         Linear(pooled, model.head.proj.weight, model.head.proj.bias));
  });
  return c;
}

inline ScoreMatrix Score(const FeatureMatrix& audio, const QueryEmbeddingSet& v,
                         const Model& model, const SearchConfig& cfg) {
  return cfg.scheme == Scheme::kBasic ? ScoreBasic(audio, v, model, cfg.stride)
                                      : ScoreFast(audio, v, model, cfg.stride);
}

/// Per-row z-score over the window axis; std floored at 1e-6.
inline ScoreMatrix TnormRows(ScoreMatrix c) {
  for (std::size_t m = 0; m < c.rows; ++m) {
    double mean = 0.0;
    for (std::size_t i = 0; i < c.cols; ++i) mean += c.at(m, i);
    mean /= double(c.cols);
    double var = 0.0;
    for (std::size_t i = 0; i < c.cols; ++i) {
      const double d = c.at(m, i) - mean;
      var += d * d;
    }
    const double sd = std::max(std::sqrt(var / double(c.cols)), 1e-6);
    for (std::size_t i = 0; i < c.cols; ++i) {
      c.at(m, i) = static_cast<float>((c.at(m, i) - mean) / sd);
    }
  }
  return c;
}

/// round-half-up(avg_frames / C_r), at least 1.
inline std::size_t NmsWidth(double avg_frames, std::size_t downsample) {
  const double r = std::floor(avg_frames / double(downsample) + 0.5);
  return std::max<std::size_t>(1, static_cast<std::size_t>(r));
}

/// Greedy 1-D NMS on one row: the largest remaining value survives and every
/// other value within index distance < width is suppressed. Ties go to the
/// smaller index. Suppressed cells become min(0, row minimum).
inline void NmsRow(std::span<float> row, std::size_t width) {
  if (row.empty()) return;
  const float floor_value = std::min(0.0f, *std::min_element(row.begin(), row.end()));
  std::vector<std::size_t> order(row.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
  std::vector<char> suppressed(row.size(), 0);
  for (std::size_t i : order) {
    if (suppressed[i]) continue;
    const std::size_t lo = i >= width - 1 ? i - (width - 1) : 0;
    const std::size_t hi = std::min(row.size() - 1, i + width - 1);
    for (std::size_t k = lo; k <= hi; ++k) {
      if (k != i && !suppressed[k]) {
        suppressed[k] = 1;
        row[k] = floor_value;
      }
    }
  }
}

/// NMS on every row with F_nms from the query's average template length.
inline ScoreMatrix Nms(ScoreMatrix c, const QueryEmbeddingSet& v,
                       std::size_t downsample) {
  if (v.size() != c.rows) {
    Fail(ErrorKind::kShape, "score matrix has ", c.rows, " rows, query set ", v.size());
  }
  for (std::size_t m = 0; m < c.rows; ++m) {
    NmsRow(std::span<float>(&c.values[m * c.cols], c.cols),
           NmsWidth(v.entries[m].avg_frames, downsample));
  }
  return c;
}

/// Cells above threshold become detections. With competition only each
/// column's best row is kept.
inline std::vector<Detection> Detect(const ScoreMatrix& c, float threshold,
                                     bool competition,
                                     const std::string& audio_id = {}) {
  std::vector<Detection> out;
  for (std::size_t i = 0; i < c.cols; ++i) {
    std::optional<std::size_t> best;
    for (std::size_t m = 0; m < c.rows; ++m) {
      if (!(c.at(m, i) > threshold)) continue;
      if (!competition) {
        out.push_back({audio_id, c.word_ids[m], c.start_frame(i),
                       c.start_frame(i) + c.frames, c.at(m, i)});
      } else if (!best || c.at(m, i) > c.at(*best, i)) {
        best = m;
      }
    }
    if (best) {
      out.push_back({audio_id, c.word_ids[*best], c.start_frame(i),
                     c.start_frame(i) + c.frames, c.at(*best, i)});
    }
  }
  return out;
}

/// tnorm -> nms -> threshold/competition, each stage switchable.
inline ScoreMatrix PostProcess(ScoreMatrix c, const QueryEmbeddingSet& v,
                               std::size_t downsample, const SearchConfig& cfg) {
  if (cfg.tnorm) c = TnormRows(std::move(c));
  if (cfg.nms) c = Nms(std::move(c), v, downsample);
  return c;
}

inline std::vector<Detection> Search(const FeatureMatrix& audio,
                                     const std::string& audio_id,
                                     const QueryEmbeddingSet& v, const Model& model,
                                     const SearchConfig& cfg) {
  cfg.Validate();
  const ScoreMatrix c = PostProcess(Score(audio, v, model, cfg), v,
                                    model.encoder.config().DownsampleRatio(), cfg);
  return Detect(c, cfg.threshold, cfg.competition, audio_id);
}

/// Writes `<stem>.f32` and a `<stem>.json` header.
inline void WriteScoreMatrix(const std::filesystem::path& stem, const ScoreMatrix& c) {
  auto blob = stem, side = stem;
  blob += ".f32";
  side += ".json";
  WriteF32Blob(blob, c.values);
  WriteJsonFile(side, {{"rows", c.rows},
                       {"cols", c.cols},
                       {"stride", c.stride},
                       {"frames", c.frames},
                       {"word_ids", c.word_ids}});
}

}  // namespace sepspot
