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

// Additive-margin softmax + attention penalization, the classifier training
// loop, and embedding-head retraining on top of a frozen pad-free encoder.

#pragma once

#include <functional>

#include "sepspot/model.hpp"
#include "sepspot/records.hpp"
#include "sepspot/synth.hpp"

namespace sepspot {

struct TrainConfig {
  double margin = 0.2;  // m
  double scale = 30.0;  // s
  double lambda_pen = 1.0;
  double learning_rate = 1e-3;
  double clip_norm = 5.0;
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  std::size_t frames = 160;          // F_0
  std::size_t retrain_frames = 296;  // F_0 for the longer-input retrain
  std::size_t heads = 4;
  std::size_t embedding_dim = 128;
  double valid_fraction = 0.2;
  std::uint64_t seed = 1;

  void Validate() const {
    if (!(margin >= 0.0 && margin < 1.0)) {
      Fail(ErrorKind::kConfig, "margin m must lie in [0,1), got ", margin);
    }
    if (!(scale > 0.0)) Fail(ErrorKind::kConfig, "scale s must be > 0, got ", scale);
    if (!(lambda_pen >= 0.0)) {
      Fail(ErrorKind::kConfig, "lambda_pen must be >= 0, got ", lambda_pen);
    }
    if (!(learning_rate > 0.0)) Fail(ErrorKind::kConfig, "learning rate must be > 0");
    if (!(clip_norm > 0.0)) Fail(ErrorKind::kConfig, "clip_norm must be > 0");
    if (batch_size == 0) Fail(ErrorKind::kConfig, "batch size must be > 0");
    if (frames == 0 || retrain_frames == 0) Fail(ErrorKind::kConfig, "frames must be > 0");
    if (!(valid_fraction >= 0.0 && valid_fraction < 1.0)) {
      Fail(ErrorKind::kConfig, "valid_fraction must lie in [0,1)");
    }
  }
};

inline nlohmann::json ToJson(const TrainConfig& c) {
  return {{"margin", c.margin},       {"scale", c.scale},
          {"lambda_pen", c.lambda_pen}, {"learning_rate", c.learning_rate},
          {"clip_norm", c.clip_norm}, {"epochs", c.epochs},
          {"batch_size", c.batch_size}, {"frames", c.frames},
          {"retrain_frames", c.retrain_frames}, {"heads", c.heads},
          {"embedding_dim", c.embedding_dim},
          {"valid_fraction", c.valid_fraction}};
}

inline TrainConfig TrainConfigFromJson(const nlohmann::json& j) {
  CheckKeys(j,
            {"margin", "scale", "lambda_pen", "learning_rate", "clip_norm",
             "epochs", "batch_size", "frames", "retrain_frames", "heads",
             "embedding_dim", "valid_fraction"},
            "train");
  TrainConfig c;
  ReadKey(j, "margin", &c.margin, "train");
  ReadKey(j, "scale", &c.scale, "train");
  ReadKey(j, "lambda_pen", &c.lambda_pen, "train");
  ReadKey(j, "learning_rate", &c.learning_rate, "train");
  ReadKey(j, "clip_norm", &c.clip_norm, "train");
  ReadKey(j, "epochs", &c.epochs, "train");
  ReadKey(j, "batch_size", &c.batch_size, "train");
  ReadKey(j, "frames", &c.frames, "train");
  ReadKey(j, "retrain_frames", &c.retrain_frames, "train");
  ReadKey(j, "heads", &c.heads, "train");
  ReadKey(j, "embedding_dim", &c.embedding_dim, "train");
  ReadKey(j, "valid_fraction", &c.valid_fraction, "train");
  c.Validate();
  return c;
}

// ---------------------------------------------------------------------------
// Loss

struct AmSoftmaxGrads {
  Tensor f;  // [n, D]
  Tensor w;  // [D, N]
};

/// Mean additive-margin softmax over cosine logits. Rows of f and columns of
/// w are L2-normalized inside. Evaluated in double with log-sum-exp.
inline double AmSoftmaxLoss(const Tensor& f, std::span<const int> labels,
                            const Tensor& w, double margin, double scale,
                            AmSoftmaxGrads* grads = nullptr) {
  if (f.rank() != 2 || w.rank() != 2 || f.dim(1) != w.dim(0)) {
    Fail(ErrorKind::kShape, "am-softmax needs f [n,D] and w [D,N], got ",
         ShapeString(f.shape), " and ", ShapeString(w.shape));
  }
  const std::size_t n = f.dim(0), D = f.dim(1), N = w.dim(1);
  if (labels.size() != n) {
    Fail(ErrorKind::kShape, labels.size(), " labels for ", n, " embeddings");
  }
  if (n == 0) Fail(ErrorKind::kShape, "am-softmax over an empty batch");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= N) {
      Fail(ErrorKind::kValue, "label ", y, " out of range for ", N, " classes");
    }
  }

  std::vector<double> fn(n * D), fnorm(n), wn(D * N), wnorm(N);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < D; ++k) s += double(f[i * D + k]) * f[i * D + k];
    fnorm[i] = std::sqrt(s);
    if (fnorm[i] == 0.0) Fail(ErrorKind::kNumeric, "zero-norm embedding in row ", i);
    for (std::size_t k = 0; k < D; ++k) fn[i * D + k] = f[i * D + k] / fnorm[i];
  }
  for (std::size_t j = 0; j < N; ++j) {
    double s = 0.0;
    for (std::size_t k = 0; k < D; ++k) s += double(w[k * N + j]) * w[k * N + j];
    wnorm[j] = std::sqrt(s);
    if (wnorm[j] == 0.0) Fail(ErrorKind::kNumeric, "zero-norm class weight ", j);
    for (std::size_t k = 0; k < D; ++k) wn[k * N + j] = w[k * N + j] / wnorm[j];
  }

  double total = 0.0;
  std::vector<double> z(N), dcos(n * N);
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    for (std::size_t j = 0; j < N; ++j) {
      double c = 0.0;
      for (std::size_t k = 0; k < D; ++k) c += fn[i * D + k] * wn[k * N + j];
      z[j] = scale * (c - (j == y ? margin : 0.0));
    }
    const double mx = *std::max_element(z.begin(), z.end());
    double loss;
    if (z[y] == mx) {
      double others = 0.0;
      for (std::size_t j = 0; j < N; ++j) {
        if (j != y) others += std::exp(z[j] - z[y]);
      }
      loss = std::log1p(others);
    } else {
      double sum = 0.0;
      for (std::size_t j = 0; j < N; ++j) sum += std::exp(z[j] - mx);
      loss = mx - z[y] + std::log(sum);
    }
    total += loss;
    if (grads) {
      const double lse = z[y] + loss;
      for (std::size_t j = 0; j < N; ++j) {
        const double p = std::exp(z[j] - lse);
        dcos[i * N + j] = scale * (p - (j == y ? 1.0 : 0.0)) / double(n);
      }
    }
  }

  if (grads) {
    grads->f = Tensor(f.shape);
    std::vector<double> dwn(D * N, 0.0), dfn(D);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t k = 0; k < D; ++k) {
        double s = 0.0;
        for (std::size_t j = 0; j < N; ++j) {
          s += dcos[i * N + j] * wn[k * N + j];
          dwn[k * N + j] += dcos[i * N + j] * fn[i * D + k];
        }
        dfn[k] = s;
        dot += s * fn[i * D + k];
      }
      for (std::size_t k = 0; k < D; ++k) {
        grads->f[i * D + k] =
            static_cast<float>((dfn[k] - fn[i * D + k] * dot) / fnorm[i]);
      }
    }
    grads->w = Tensor(w.shape);
    for (std::size_t j = 0; j < N; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < D; ++k) dot += dwn[k * N + j] * wn[k * N + j];
      for (std::size_t k = 0; k < D; ++k) {
        grads->w[k * N + j] =
            static_cast<float>((dwn[k * N + j] - wn[k * N + j] * dot) / wnorm[j]);
      }
    }
  }
  return total / double(n);
}

/// L_AMS + lambda_pen * P.
inline double TotalLoss(const Tensor& f, std::span<const int> labels,
                        const ClassifierWeights& cw, const PoolingParams& pool,
                        const TrainConfig& cfg) {
  return AmSoftmaxLoss(f, labels, cw.weight, cfg.margin, cfg.scale) +
         cfg.lambda_pen * Penalization(pool);
}

namespace ag {

inline VarId AmSoftmax(Tape& tape, VarId f, VarId w, std::vector<int> labels,
                       double margin, double scale) {
  auto grads = std::make_shared<AmSoftmaxGrads>();
  const double loss = AmSoftmaxLoss(tape.value(f), labels, tape.value(w), margin,
                                    scale, grads.get());
  const VarId inputs[] = {f, w};
  return tape.Record(Tensor({1}, static_cast<float>(loss)), inputs,
                     [f, w, grads](Tape& t, const Tensor& g) {
                       Tensor gf = grads->f, gw = grads->w;
                       for (float& v : gf.data) v *= g[0];
                       for (float& v : gw.data) v *= g[0];
                       t.AccumulateGrad(f, gf);
                       t.AccumulateGrad(w, gw);
                     });
}

inline VarId TotalLoss(Tape& tape, VarId f, VarId w, VarId attention,
                       std::vector<int> labels, const TrainConfig& cfg) {
  VarId ams = AmSoftmax(tape, f, w, std::move(labels), cfg.margin, cfg.scale);
  return AddScaled(tape, ams, Penalization(tape, attention),
                   static_cast<float>(cfg.lambda_pen));
}

}  // namespace ag

// ---------------------------------------------------------------------------
// Optimizer

struct ParamRef {
  std::string name;
  Tensor* value;
  VarId var;
};

/// Adam with global gradient-norm clipping.
class Adam {
 public:
  Adam(double lr, double clip_norm) : lr_(lr), clip_(clip_norm) {}

  /// Applies one update; returns the pre-clip global gradient norm.
  double Step(const Tape& tape, std::span<const ParamRef> params) {
    double sq = 0.0;
    for (const auto& p : params) {
      for (float g : tape.grad(p.var).data) sq += double(g) * g;
    }
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) {
      Fail(ErrorKind::kNumeric, "non-finite gradient norm at step ", t_ + 1);
    }
    const double clip = norm > clip_ ? clip_ / norm : 1.0;
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, double(t_));
    const double c2 = 1.0 - std::pow(kBeta2, double(t_));
    for (const auto& p : params) {
      const Tensor& g = tape.grad(p.var);
      if (g.empty()) continue;
      auto& [m, v] = state_[p.name];
      if (m.size() != g.size()) {
        m.assign(g.size(), 0.0f);
        v.assign(g.size(), 0.0f);
      }
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double gi = g[i] * clip;
        m[i] = static_cast<float>(kBeta1 * m[i] + (1.0 - kBeta1) * gi);
        v[i] = static_cast<float>(kBeta2 * v[i] + (1.0 - kBeta2) * gi * gi);
        const double step = lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + kEps);
        (*p.value)[i] = static_cast<float>((*p.value)[i] - step);
      }
    }
    return norm;
  }

 private:
  static constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  double lr_, clip_;
  std::size_t t_ = 0;
  std::map<std::string, std::pair<std::vector<float>, std::vector<float>>> state_;
};

// ---------------------------------------------------------------------------
// Data

struct Example {
  const FeatureMatrix* audio = nullptr;
  std::size_t start = 0, end = 0;
  int label = 0;  // class index
};

struct ExampleSplit {
  std::vector<Example> train, valid;
  std::vector<int> word_of_class;
};

/// Per class, the last round(fraction * count) labels (by audio id, start)
/// are held out.
inline ExampleSplit SplitExamples(const Corpus& corpus, double valid_fraction) {
  ExampleSplit s;
  s.word_of_class = corpus.words();
  if (s.word_of_class.size() < 2) {
    Fail(ErrorKind::kConfig, "training needs at least 2 classes, corpus has ",
         s.word_of_class.size());
  }
  std::vector<LabelSpan> labels = corpus.labels;
  std::sort(labels.begin(), labels.end(), [](const LabelSpan& a, const LabelSpan& b) {
    return std::tie(a.word_id, a.audio_id, a.start_frame) <
           std::tie(b.word_id, b.audio_id, b.start_frame);
  });
  for (std::size_t c = 0; c < s.word_of_class.size(); ++c) {
    std::vector<Example> ex;
    for (const auto& l : labels) {
      if (l.word_id != s.word_of_class[c]) continue;
      ex.push_back({&corpus.audio(l.audio_id), l.start_frame, l.end_frame,
                    static_cast<int>(c)});
    }
    auto held = static_cast<std::size_t>(std::lround(valid_fraction * ex.size()));
    held = std::min(held, ex.size() - 1);
    s.train.insert(s.train.end(), ex.begin(), ex.end() - held);
    s.valid.insert(s.valid.end(), ex.end() - held, ex.end());
  }
  return s;
}

/// The example's span, optionally with boundaries jittered by up to 10% of
/// its length, context-padded to `frames`.
inline FeatureMatrix MakeInput(const Example& e, std::size_t frames,
                               std::mt19937_64* jitter) {
  std::size_t a = e.start, b = e.end;
  if (jitter) {
    const auto j = static_cast<long>((b - a) / 10);
    std::uniform_int_distribution<long> d(-j, j);
    const long rows = static_cast<long>(e.audio->rows);
    const long na = std::clamp<long>(long(a) + d(*jitter), 0, rows - 1);
    const long nb = std::clamp<long>(long(b) + d(*jitter), na + 1, rows);
    a = static_cast<std::size_t>(na);
    b = static_cast<std::size_t>(nb);
  }
  return TemporalContextPad(SegmentRef{e.audio, a, b}, frames);
}

// ---------------------------------------------------------------------------
// Loops

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // mean over steps
  double train_accuracy = 0.0;
  double valid_accuracy = 0.0;
};

struct TrainResult {
  Model model;
  std::vector<EpochStats> epochs;
};

using EpochCallback = std::function<void(const EpochStats&)>;

namespace detail {

struct StepOutput {
  double loss;
  std::size_t correct;
};

inline double Accuracy(const std::vector<Example>& examples, std::size_t frames,
                       std::size_t batch,
                       const std::function<std::vector<int>(const Tensor&)>& predict) {
  if (examples.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < examples.size(); i += batch) {
    std::vector<FeatureMatrix> mats;
    for (std::size_t k = i; k < std::min(i + batch, examples.size()); ++k) {
      mats.push_back(MakeInput(examples[k], frames, nullptr));
    }
    const auto pred = predict(StackImages(mats));
    for (std::size_t k = 0; k < pred.size(); ++k) {
      correct += pred[k] == examples[i + k].label;
    }
  }
  return double(correct) / double(examples.size());
}

inline std::vector<EpochStats> RunEpochs(
    const ExampleSplit& split, const TrainConfig& cfg, std::size_t frames,
    const std::function<StepOutput(const Tensor&, const std::vector<int>&)>& step,
    const std::function<std::vector<int>(const Tensor&)>& predict,
    const EpochCallback& on_epoch) {
  std::vector<EpochStats> stats;
  std::vector<std::size_t> order(split.train.size());
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    std::iota(order.begin(), order.end(), 0);
    auto rng = SubRng(cfg.seed, 100, e);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t steps = 0, correct = 0;
    for (std::size_t i = 0; i < order.size(); i += cfg.batch_size) {
      std::vector<FeatureMatrix> mats;
      std::vector<int> labels;
      for (std::size_t k = i; k < std::min(i + cfg.batch_size, order.size()); ++k) {
        const Example& ex = split.train[order[k]];
        mats.push_back(MakeInput(ex, frames, &rng));
        labels.push_back(ex.label);
      }
      const StepOutput out = step(StackImages(mats), labels);
      if (!std::isfinite(out.loss)) {
        Fail(ErrorKind::kNumeric, "training diverged: loss is ", out.loss,
             " at epoch ", e, " step ", steps + 1);
      }
      loss_sum += out.loss;
      correct += out.correct;
      ++steps;
    }
    EpochStats s;
    s.epoch = e;
    s.loss = steps ? loss_sum / double(steps) : 0.0;
    s.train_accuracy = order.empty() ? 0.0 : double(correct) / double(order.size());
    s.valid_accuracy = Accuracy(split.valid, frames, 64, predict);
    stats.push_back(s);
    if (on_epoch) on_epoch(s);
  }
  return stats;
}

inline std::size_t CountCorrect(const Tensor& f, const ClassifierWeights& cw,
                                const std::vector<int>& labels) {
  const auto pred = Classify(f, cw);
  std::size_t c = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) c += pred[i] == labels[i];
  return c;
}

}  // namespace detail

/// Fresh train-form model sized for `classes` words.
inline Model InitModel(const EncoderConfig& enc, const TrainConfig& cfg,
                       std::size_t classes) {
  cfg.Validate();
  std::mt19937_64 rng(cfg.seed);
  Model m;
  m.frames = cfg.frames;
  m.encoder = Encoder::InitTrain(enc, rng);
  const HiddenShape hs = OutputShape(enc, cfg.frames);
  m.head = EmbeddingHead::Init(enc.OutputChannels() * hs.freq, cfg.heads,
                               cfg.embedding_dim, rng);
  m.classifier = ClassifierWeights::Init(cfg.embedding_dim, classes, rng);
  return m;
}

/// Trains encoder, head and classifier jointly on the corpus labels.
inline TrainResult Train(const Corpus& corpus, Model model, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  cfg.Validate();
  if (model.encoder.form() != EncoderForm::kTrain) {
    Fail(ErrorKind::kConfig, "training needs a train-form encoder");
  }
  const ExampleSplit split = SplitExamples(corpus, cfg.valid_fraction);
  if (model.classifier.classes() != split.word_of_class.size()) {
    Fail(ErrorKind::kConfig, "model has ", model.classifier.classes(),
         " classes, corpus has ", split.word_of_class.size());
  }
  model.frames = cfg.frames;
  Adam adam(cfg.learning_rate, cfg.clip_norm);

  auto step = [&](const Tensor& x, const std::vector<int>& labels) {
    Tape tape;
    std::vector<BlockVars> vars;
    const VarId y = ForwardTrain(tape, model.encoder, tape.Constant(x), &vars, true);
    const VarId a = tape.Variable(model.head.pool.attention);
    const VarId pw = tape.Variable(model.head.proj.weight);
    const VarId pb = tape.Variable(model.head.proj.bias);
    const VarId cw = tape.Variable(model.classifier.weight);
    const VarId f = ag::Linear(tape, ag::AttentionPool(tape, y, a), pw, pb);
    const VarId loss = ag::TotalLoss(tape, f, cw, a, labels, cfg);
    const double value = tape.value(loss)[0];
    if (!std::isfinite(value)) return detail::StepOutput{value, 0};
    tape.Backward(loss);

    std::vector<ParamRef> params;
    auto& blocks = model.encoder.train_blocks();
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const std::string p = "block" + std::to_string(i) + ".";
      auto& b = blocks[i];
      const BlockVars& v = vars[i];
      params.push_back({p + "conv3", &b.conv3, v.conv3});
      params.push_back({p + "gamma3", &b.bn3.gamma, v.gamma3});
      params.push_back({p + "beta3", &b.bn3.beta, v.beta3});
      params.push_back({p + "conv1", &b.conv1, v.conv1});
      params.push_back({p + "gamma1", &b.bn1.gamma, v.gamma1});
      params.push_back({p + "beta1", &b.bn1.beta, v.beta1});
      if (b.bn_id) {
        params.push_back({p + "gamma_id", &b.bn_id->gamma, *v.gamma_id});
        params.push_back({p + "beta_id", &b.bn_id->beta, *v.beta_id});
      }
    }
    params.push_back({"attention", &model.head.pool.attention, a});
    params.push_back({"proj.weight", &model.head.proj.weight, pw});
    params.push_back({"proj.bias", &model.head.proj.bias, pb});
    params.push_back({"classifier", &model.classifier.weight, cw});
    const std::size_t correct =
        detail::CountCorrect(tape.value(f), model.classifier, labels);
    adam.Step(tape, params);
    return detail::StepOutput{value, correct};
  };
  auto predict = [&](const Tensor& x) {
    return Classify(EmbedBatch(model, x), model.classifier);
  };
  TrainResult r;
  r.epochs = detail::RunEpochs(split, cfg, cfg.frames, step, predict, on_epoch);
  r.model = std::move(model);
  return r;
}

enum class RetrainMethod {
  kLongerInput,  // F_0 becomes cfg.retrain_frames
  kSameInput,    // F_0 unchanged
};

struct RetrainOptions {
  RetrainMethod method = RetrainMethod::kSameInput;
  std::optional<std::size_t> heads;  // a different count re-initializes the head
};

/// Reloads a fused encoder with zero time padding and retrains only the
/// embedding head and classifier. The head warm-starts from the pretrained
/// one unless the head count changes.
inline TrainResult RetrainEmbedding(const Model& pretrained, const Corpus& corpus,
                                    const TrainConfig& cfg,
                                    const RetrainOptions& opts = {},
                                    const EpochCallback& on_epoch = {}) {
  cfg.Validate();
  if (pretrained.encoder.form() != EncoderForm::kDeploy) {
    Fail(ErrorKind::kConfig,
         "embedding retrain needs a fused (deploy-form) encoder; fuse the model first");
  }
  Model model;
  model.encoder = pretrained.encoder.WithTimePadding(Padding::kNone);
  model.frames = opts.method == RetrainMethod::kLongerInput ? cfg.retrain_frames
                                                            : pretrained.frames;
  const HiddenShape hs = model.encoder.OutputShape(model.frames);
  const std::size_t hidden = model.encoder.config().OutputChannels() * hs.freq;
  const ExampleSplit split = SplitExamples(corpus, cfg.valid_fraction);
  std::mt19937_64 rng(detail::SplitMix(cfg.seed + 17));
  if (!opts.heads || *opts.heads == pretrained.head.pool.heads()) {
    model.head = pretrained.head;
  } else {
    model.head = EmbeddingHead::Init(hidden, *opts.heads, pretrained.embedding_dim(), rng);
  }
  model.classifier = pretrained.classifier;
  if (model.classifier.classes() != split.word_of_class.size()) {
    model.classifier = ClassifierWeights::Init(model.embedding_dim(),
                                               split.word_of_class.size(), rng);
  }
  const std::uint64_t frozen = model.encoder.Hash();

  Adam adam(cfg.learning_rate, cfg.clip_norm);
  auto step = [&](const Tensor& x, const std::vector<int>& labels) {
    Tape tape;
    const VarId y = tape.Constant(model.encoder.Forward(x));
    const VarId a = tape.Variable(model.head.pool.attention);
    const VarId pw = tape.Variable(model.head.proj.weight);
    const VarId pb = tape.Variable(model.head.proj.bias);
    const VarId cw = tape.Variable(model.classifier.weight);
    const VarId f = ag::Linear(tape, ag::AttentionPool(tape, y, a), pw, pb);
    const VarId loss = ag::TotalLoss(tape, f, cw, a, labels, cfg);
    const double value = tape.value(loss)[0];
    if (!std::isfinite(value)) return detail::StepOutput{value, 0};
    tape.Backward(loss);
    const ParamRef params[] = {
        {"attention", &model.head.pool.attention, a},
        {"proj.weight", &model.head.proj.weight, pw},
        {"proj.bias", &model.head.proj.bias, pb},
        {"classifier", &model.classifier.weight, cw}};
    const std::size_t correct =
        detail::CountCorrect(tape.value(f), model.classifier, labels);
    adam.Step(tape, params);
    return detail::StepOutput{value, correct};
  };
  auto predict = [&](const Tensor& x) {
    return Classify(EmbedBatch(model, x), model.classifier);
  };
  TrainResult r;
  r.epochs = detail::RunEpochs(split, cfg, model.frames, step, predict, on_epoch);
  if (model.encoder.Hash() != frozen) {
    Fail(ErrorKind::kNumeric, "encoder weights changed during embedding retrain");
  }
  r.model = std::move(model);
  return r;
}

/// Held-out classification accuracy of a model on a corpus split.
inline double ValidAccuracy(const Model& model, const Corpus& corpus,
                            double valid_fraction) {
  const ExampleSplit split = SplitExamples(corpus, valid_fraction);
  return detail::Accuracy(split.valid, model.frames, 64, [&](const Tensor& x) {
    return Classify(EmbedBatch(model, x), model.classifier);
  });
}

}  // namespace sepspot
