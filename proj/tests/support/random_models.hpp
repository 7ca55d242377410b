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

// Random model generators shared by unit and acceptance tests.

#pragma once

#include <random>

#include "sepspot/model.hpp"
#include "sepspot/head.hpp"
#include "support/oracles.hpp"

namespace sepspot::testing {

inline BatchNormParams RandomBatchNorm(std::size_t c, std::mt19937_64& rng) {
  BatchNormParams p;
  p.gamma = RandomNormal({c}, rng, 0.3f, 1.0f);
  p.beta = RandomNormal({c}, rng, 0.3f);
  p.running_mean = RandomNormal({c}, rng, 0.3f);
  p.running_var = RandomUniform({c}, rng, 0.5f, 2.0f);
  return p;
}

inline RepVGGBlockTrain RandomBlock(const ConvSpec& spec, std::mt19937_64& rng,
                                    bool identity) {
  RepVGGBlockTrain b;
  b.spec = spec;
  const float s3 = std::sqrt(2.0f / (spec.in_channels * 9.0f));
  b.conv3 = RandomNormal(spec.WeightShape(), rng, s3);
  b.conv1 = RandomNormal({spec.out_channels, spec.in_channels, 1, 1}, rng,
                         std::sqrt(2.0f / spec.in_channels));
  b.bn3 = RandomBatchNorm(spec.out_channels, rng);
  b.bn1 = RandomBatchNorm(spec.out_channels, rng);
  if (identity) b.bn_id = RandomBatchNorm(spec.out_channels, rng);
  return b;
}

/// Random stage layout with C_r in {1, 2, 4} and one or two blocks per stage.
inline EncoderConfig RandomConfig(std::mt19937_64& rng, Padding pad,
                                  std::size_t bins = 12) {
  EncoderConfig cfg;
  cfg.input_bins = bins;
  cfg.pad_time = pad;
  const std::size_t stages = 2 + rng() % 2;
  for (std::size_t s = 0; s < stages; ++s) {
    StageConfig st;
    st.blocks = 1 + rng() % 2;
    st.channels = 2 + rng() % 4;
    st.stride_time = (s > 0 && rng() % 2 == 0) ? 2 : 1;
    st.stride_freq = (s > 0 && rng() % 2 == 0) ? 2 : 1;
    cfg.stages.push_back(st);
  }
  return cfg;
}

/// Train-form encoder with randomized batchnorm statistics everywhere.
inline Encoder RandomTrainEncoder(const EncoderConfig& cfg,
                                  std::mt19937_64& rng) {
  std::vector<RepVGGBlockTrain> blocks;
  for (const ConvSpec& spec : cfg.BlockSpecs()) {
    const bool id = spec.in_channels == spec.out_channels &&
                    spec.stride_time == 1 && spec.stride_freq == 1;
    blocks.push_back(RandomBlock(spec, rng, id));
  }
  return Encoder::FromTrainBlocks(cfg, std::move(blocks));
}

/// Sets running mean and variance to the batch statistics of `z`.
inline void MatchStatistics(const Tensor& z, BatchNormParams& bn) {
  const std::size_t B = z.dim(0), C = z.dim(1), S = z.size() / (B * C);
  for (std::size_t c = 0; c < C; ++c) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < S; ++i) {
        const double v = z[(b * C + c) * S + i];
        sum += v;
        sq += v * v;
      }
    const double n = double(B * S), mean = sum / n;
    bn.running_mean[c] = static_cast<float>(mean);
    bn.running_var[c] = static_cast<float>(std::max(sq / n - mean * mean, 1e-3));
  }
}

/// Random train-form encoder whose running statistics are those of the
/// branch outputs on `x`, block by block, as after training.
inline Encoder CalibratedTrainEncoder(const EncoderConfig& cfg, std::mt19937_64& rng,
                                      const Tensor& x) {
  std::vector<RepVGGBlockTrain> blocks;
  Tensor h = x;
  const Tensor none;
  for (const ConvSpec& spec : cfg.BlockSpecs()) {
    const bool id = spec.in_channels == spec.out_channels &&
                    spec.stride_time == 1 && spec.stride_freq == 1;
    RepVGGBlockTrain b = RandomBlock(spec, rng, id);
    const std::size_t T = h.dim(2);
    const Tensor side = spec.pad_time == Padding::kNone ? SliceTime(h, 1, T - 2) : h;
    MatchStatistics(Conv2d(h, spec, b.conv3, none), b.bn3);
    MatchStatistics(Conv2d(side, b.PointwiseSpec(), b.conv1, none), b.bn1);
    if (b.bn_id) MatchStatistics(side, *b.bn_id);
    h = ForwardBlock(b, h);
    blocks.push_back(std::move(b));
  }
  return Encoder::FromTrainBlocks(cfg, std::move(blocks));
}

inline EmbeddingHead RandomHead(const EncoderConfig& cfg, std::size_t heads,
                                std::size_t dim, std::mt19937_64& rng) {
  const std::size_t hidden =
      cfg.OutputChannels() * OutputShape(cfg, MinInputFrames(cfg) + 64).freq;
  EmbeddingHead h = EmbeddingHead::Init(hidden, heads, dim, rng);
  h.proj.bias = RandomNormal({dim}, rng, 0.1f);
  return h;
}

/// Fused model with random weights; `frames` defaults to the smallest window
/// that leaves 8 hidden frames.
inline Model RandomFusedModel(std::mt19937_64& rng, Padding pad, std::size_t frames = 0,
                              std::size_t bins = 12) {
  EncoderConfig cfg = RandomConfig(rng, pad, bins);
  Model m;
  m.encoder = RandomTrainEncoder(cfg, rng).Fused();
  const std::size_t cr = cfg.DownsampleRatio();
  m.frames = frames ? frames : MinInputFrames(cfg) + 8 * cr;
  m.head = RandomHead(cfg, 1, 6, rng);
  return m;
}

}  // namespace sepspot::testing
