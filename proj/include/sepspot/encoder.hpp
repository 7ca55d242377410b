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

// RepVGG-style convolutional encoder.
//
// Train form: every block sums a 3x3 conv+bn branch, a 1x1 conv+bn branch
// and (when shapes allow) an identity bn branch, then applies one ReLU.
// Deploy form: every block is a single 3x3 conv with bias followed by ReLU.
// FuseBlock turns the former into the latter.
//
// The encoder consumes features as a one-channel image [B, 1, T, D_f] and
// emits [B, C, T^m, D_f^m]. Frequency is always "same"-padded; the time
// padding mode is a property of the encoder. With time padding off the
// whole stack is shift-equivariant in steps of C_r input frames.

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sepspot/autograd.hpp"

namespace sepspot {

struct StageConfig {
  std::size_t blocks = 1;
  std::size_t channels = 16;
  std::size_t stride_time = 1;
  std::size_t stride_freq = 1;

  bool operator==(const StageConfig&) const = default;
};

struct EncoderConfig {
  std::vector<StageConfig> stages;
  std::size_t input_bins = 60;
  Padding pad_time = Padding::kSame;

  /// Desk-scale default: blocks [1,2,2,1], channels [16,32,64,128],
  /// time strides [1,2,2,1], freq strides [1,2,2,2].
  static EncoderConfig Default() {
    EncoderConfig c;
    c.stages = {{1, 16, 1, 1}, {2, 32, 2, 2}, {2, 64, 2, 2}, {1, 128, 1, 2}};
    return c;
  }
  /// Same stride layout with one block per stage and narrow channels.
  static EncoderConfig Tiny() {
    EncoderConfig c;
    c.stages = {{1, 8, 1, 1}, {1, 16, 2, 2}, {1, 16, 2, 2}, {1, 32, 1, 2}};
    return c;
  }

  /// C_r: product of the time strides.
  std::size_t DownsampleRatio() const {
    std::size_t r = 1;
    for (const auto& s : stages) r *= s.stride_time;
    return r;
  }
  std::size_t OutputChannels() const {
    return stages.empty() ? 1 : stages.back().channels;
  }

  /// One ConvSpec (3x3 main branch) per block, in order.
  std::vector<ConvSpec> BlockSpecs() const {
    std::vector<ConvSpec> specs;
    std::size_t in = 1;
    for (const auto& st : stages) {
      for (std::size_t b = 0; b < st.blocks; ++b) {
        ConvSpec s;
        s.in_channels = in;
        s.out_channels = st.channels;
        s.kernel_time = s.kernel_freq = 3;
        s.stride_time = b == 0 ? st.stride_time : 1;
        s.stride_freq = b == 0 ? st.stride_freq : 1;
        s.pad_time = pad_time;
        s.pad_freq = Padding::kSame;
        specs.push_back(s);
        in = st.channels;
      }
    }
    return specs;
  }

  void Validate() const {
    if (stages.empty()) Fail(ErrorKind::kConfig, "encoder has no stages");
    if (input_bins == 0) Fail(ErrorKind::kConfig, "input_bins must be > 0");
    for (const auto& s : stages) {
      if (s.blocks == 0 || s.channels == 0 || s.stride_time == 0 ||
          s.stride_freq == 0) {
        Fail(ErrorKind::kConfig,
             "stage blocks, channels and strides must all be >= 1");
      }
    }
  }

  bool operator==(const EncoderConfig&) const = default;
};

/// Hidden-map length along one axis after every block.
struct HiddenShape {
  std::size_t time = 0;
  std::size_t freq = 0;
};

/// Minimum input length accepted by a pad-free encoder.
inline std::size_t MinInputFrames(const EncoderConfig& cfg) {
  if (cfg.pad_time == Padding::kSame) return 1;
  const auto specs = cfg.BlockSpecs();
  std::size_t need = 1;
  for (std::size_t i = specs.size(); i-- > 0;) {
    need = (need - 1) * specs[i].stride_time + specs[i].kernel_time;
  }
  return need;
}

/// Exact composition of the per-block shape rules.
inline HiddenShape OutputShape(const EncoderConfig& cfg, std::size_t frames) {
  cfg.Validate();
  HiddenShape s{frames, cfg.input_bins};
  if (cfg.pad_time == Padding::kNone && frames < MinInputFrames(cfg)) {
    Fail(ErrorKind::kWindowUnderflow,
         "input too short for pad-free encoder: ", frames,
         " frames, minimum T = ", MinInputFrames(cfg));
  }
  for (const auto& spec : cfg.BlockSpecs()) {
    s.time = ConvOutputLength(s.time, spec.kernel_time, spec.stride_time,
                              spec.pad_time, "time");
    s.freq = ConvOutputLength(s.freq, spec.kernel_freq, spec.stride_freq,
                              spec.pad_freq, "freq");
  }
  return s;
}

inline std::size_t OutputFrames(const EncoderConfig& cfg, std::size_t frames) {
  return OutputShape(cfg, frames).time;
}

struct RepVGGBlockTrain {
  ConvSpec spec;  // 3x3 branch; the 1x1 branch shares channels and stride
  Tensor conv3;   // [Co, Ci, 3, 3]
  BatchNormParams bn3;
  Tensor conv1;   // [Co, Ci, 1, 1]
  BatchNormParams bn1;
  std::optional<BatchNormParams> bn_id;

  ConvSpec PointwiseSpec() const {
    ConvSpec s = spec;
    s.kernel_time = s.kernel_freq = 1;
    return s;
  }
  bool HasIdentity() const { return bn_id.has_value(); }
};

struct RepVGGBlockDeploy {
  ConvSpec spec;
  Tensor weight;  // [Co, Ci, 3, 3]
  Tensor bias;    // [Co]
};

enum class EncoderForm { kTrain, kDeploy };

inline const char* ToString(EncoderForm f) {
  return f == EncoderForm::kTrain ? "train" : "deploy";
}

/// W' = W * gamma / sqrt(var + eps), b' = beta - mean * gamma / sqrt(var + eps).
inline void FoldBatchNorm(const Tensor& kernel, const BatchNormParams& bn,
                          Tensor* folded, Tensor* bias) {
  const std::size_t co = kernel.dim(0);
  const std::size_t per = kernel.size() / co;
  *folded = Tensor(kernel.shape);
  *bias = Tensor({co});
  for (std::size_t o = 0; o < co; ++o) {
    const double scale =
        double(bn.gamma[o]) / std::sqrt(double(bn.running_var[o]) + bn.epsilon);
    for (std::size_t i = 0; i < per; ++i) {
      (*folded)[o * per + i] = static_cast<float>(kernel[o * per + i] * scale);
    }
    (*bias)[o] = static_cast<float>(bn.beta[o] - bn.running_mean[o] * scale);
  }
}

inline RepVGGBlockDeploy FuseBlock(const RepVGGBlockTrain& b) {
  const std::size_t co = b.spec.out_channels, ci = b.spec.in_channels;
  const auto scale = [](const BatchNormParams& bn, std::size_t o) {
    return double(bn.gamma[o]) / std::sqrt(double(bn.running_var[o]) + bn.epsilon);
  };
  const auto shift = [&](const BatchNormParams& bn, std::size_t o) {
    return double(bn.beta[o]) - double(bn.running_mean[o]) * scale(bn, o);
  };
  // Summed in double and rounded once.
  std::vector<double> w(co * ci * 9), bias(co);
  for (std::size_t o = 0; o < co; ++o) {
    const double s3 = scale(b.bn3, o), s1 = scale(b.bn1, o);
    bias[o] = shift(b.bn3, o) + shift(b.bn1, o);
    for (std::size_t i = 0; i < ci; ++i) {
      for (std::size_t k = 0; k < 9; ++k) {
        w[(o * ci + i) * 9 + k] = double(b.conv3[(o * ci + i) * 9 + k]) * s3;
      }
      w[(o * ci + i) * 9 + 4] += double(b.conv1[o * ci + i]) * s1;
    }
    if (b.bn_id) {
      w[(o * ci + o) * 9 + 4] += scale(*b.bn_id, o);
      bias[o] += shift(*b.bn_id, o);
    }
  }
  RepVGGBlockDeploy d;
  d.spec = b.spec;
  d.weight = Tensor(b.conv3.shape);
  d.bias = Tensor({co});
  for (std::size_t k = 0; k < w.size(); ++k) d.weight[k] = static_cast<float>(w[k]);
  for (std::size_t o = 0; o < co; ++o) d.bias[o] = static_cast<float>(bias[o]);
  return d;
}

/// Inference-mode forward of one train-form block (batchnorm running stats).
inline Tensor ForwardBlock(const RepVGGBlockTrain& b, const Tensor& x) {
  const Tensor none;
  Tensor y = BatchNormInfer(Conv2d(x, b.spec, b.conv3, none), b.bn3);
  // Pad-free 3x3 outputs are centered one frame in, so the 1x1 and identity
  // branches see the time axis cropped by one frame on each side.
  const bool crop = b.spec.pad_time == Padding::kNone;
  const std::size_t T = x.dim(2);
  if (crop && T < 3) {
    Fail(ErrorKind::kWindowUnderflow, "window underflow on time axis: length ",
         T, " < kernel 3");
  }
  const Tensor inner = crop ? SliceTime(x, 1, T - 2) : Tensor();
  const Tensor& side = crop ? inner : x;
  y = Add(y, BatchNormInfer(Conv2d(side, b.PointwiseSpec(), b.conv1, none),
                            b.bn1));
  if (b.bn_id) y = Add(y, BatchNormInfer(side, *b.bn_id));
  return Relu(y);
}

inline Tensor ForwardBlock(const RepVGGBlockDeploy& b, const Tensor& x) {
  return Relu(Conv2d(x, b.spec, b.weight, b.bias));
}

/// Names a trainable tensor for checkpoints and optimizers.
struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

class Encoder {
 public:
  Encoder() = default;

  /// Randomly initialized train-form encoder (Kaiming-normal convs,
  /// identity batchnorm).
  static Encoder InitTrain(const EncoderConfig& cfg, std::mt19937_64& rng) {
    cfg.Validate();
    Encoder e;
    e.config_ = cfg;
    e.form_ = EncoderForm::kTrain;
    for (const ConvSpec& spec : cfg.BlockSpecs()) {
      RepVGGBlockTrain b;
      b.spec = spec;
      const float std3 = std::sqrt(2.0f / (spec.in_channels * 9.0f));
      const float std1 = std::sqrt(2.0f / spec.in_channels);
      b.conv3 = RandomNormal(spec.WeightShape(), rng, std3);
      b.conv1 = RandomNormal({spec.out_channels, spec.in_channels, 1, 1}, rng,
                             std1);
      b.bn3 = BatchNormParams::Identity(spec.out_channels);
      b.bn1 = BatchNormParams::Identity(spec.out_channels);
      if (spec.in_channels == spec.out_channels && spec.stride_time == 1 &&
          spec.stride_freq == 1) {
        b.bn_id = BatchNormParams::Identity(spec.out_channels);
      }
      e.train_blocks_.push_back(std::move(b));
    }
    return e;
  }

  static Encoder FromTrainBlocks(const EncoderConfig& cfg,
                                 std::vector<RepVGGBlockTrain> blocks) {
    Encoder e;
    e.config_ = cfg;
    e.form_ = EncoderForm::kTrain;
    e.train_blocks_ = std::move(blocks);
    e.CheckBlocks();
    return e;
  }
  static Encoder FromDeployBlocks(const EncoderConfig& cfg,
                                  std::vector<RepVGGBlockDeploy> blocks) {
    Encoder e;
    e.config_ = cfg;
    e.form_ = EncoderForm::kDeploy;
    e.deploy_blocks_ = std::move(blocks);
    e.CheckBlocks();
    return e;
  }

  const EncoderConfig& config() const { return config_; }
  EncoderForm form() const { return form_; }
  Padding pad_time() const { return config_.pad_time; }
  std::size_t num_blocks() const {
    return form_ == EncoderForm::kTrain ? train_blocks_.size()
                                        : deploy_blocks_.size();
  }
  const std::vector<RepVGGBlockTrain>& train_blocks() const {
    return train_blocks_;
  }
  std::vector<RepVGGBlockTrain>& train_blocks() { return train_blocks_; }
  const std::vector<RepVGGBlockDeploy>& deploy_blocks() const {
    return deploy_blocks_;
  }
  std::vector<RepVGGBlockDeploy>& deploy_blocks() { return deploy_blocks_; }

  /// Fuses every block. Padding mode is kept.
  Encoder Fused() const {
    if (form_ == EncoderForm::kDeploy) return *this;
    std::vector<RepVGGBlockDeploy> blocks;
    blocks.reserve(train_blocks_.size());
    for (const auto& b : train_blocks_) blocks.push_back(FuseBlock(b));
    return FromDeployBlocks(config_, std::move(blocks));
  }

  /// The same parameters in a structure with a different time padding.
  Encoder WithTimePadding(Padding pad) const {
    Encoder e = *this;
    e.config_.pad_time = pad;
    for (auto& b : e.train_blocks_) b.spec.pad_time = pad;
    for (auto& b : e.deploy_blocks_) b.spec.pad_time = pad;
    return e;
  }

  HiddenShape OutputShape(std::size_t frames) const {
    return sepspot::OutputShape(config_, frames);
  }

  /// Inference forward: [B, 1, T, D_f] -> [B, C, T^m, D_f^m].
  Tensor Forward(const Tensor& x) const {
    if (x.rank() != 4 || x.dim(1) != 1 || x.dim(3) != config_.input_bins) {
      Fail(ErrorKind::kShape, "encoder expects [B,1,T,", config_.input_bins,
           "], got ", ShapeString(x.shape));
    }
    OutputShape(x.dim(2));  // underflow check with the minimum length
    Tensor h = x;
    if (form_ == EncoderForm::kTrain) {
      for (const auto& b : train_blocks_) h = ForwardBlock(b, h);
    } else {
      for (const auto& b : deploy_blocks_) h = ForwardBlock(b, h);
    }
    return h;
  }

  /// Forward in overlapping time chunks of `chunk` hidden frames. Pad-free
  /// only; the result equals Forward(x) element for element.
  Tensor ForwardChunked(const Tensor& x, std::size_t chunk = 128) const {
    if (config_.pad_time != Padding::kNone) {
      Fail(ErrorKind::kConfig, "chunked forward requires pad-free encoder");
    }
    if (chunk == 0) Fail(ErrorKind::kConfig, "chunk must be > 0");
    if (x.rank() != 4) return Forward(x);  // reports the shape error
    const std::size_t B = x.dim(0), T = x.dim(2);
    const HiddenShape full = OutputShape(T);
    const std::size_t cr = config_.DownsampleRatio();
    const std::size_t span = (chunk - 1) * cr + MinInputFrames(config_);
    if (full.time <= chunk) return Forward(x);

    Tensor out;
    for (std::size_t h0 = 0; h0 < full.time; h0 += chunk) {
      const std::size_t t0 = h0 * cr, len = std::min(span, T - t0);
      const Tensor part = Forward(SliceTime(x, t0, len));
      const std::size_t C = part.dim(1), n = part.dim(2), F = part.dim(3);
      if (out.empty()) out = Tensor({B, C, full.time, F});
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t c = 0; c < C; ++c) {
          std::copy_n(&part.data[((b * C + c) * n) * F], n * F,
                      &out.data[((b * C + c) * full.time + h0) * F]);
        }
      }
    }
    return out;
  }

  /// Calls f(name, tensor) for every tensor, in a stable order.
  template <typename F>
  void VisitTensors(F&& f) const {
    Visit(*this, f);
  }
  template <typename F>
  void VisitTensors(F&& f) {
    Visit(*this, f);
  }

  std::vector<NamedTensor> Tensors() {
    std::vector<NamedTensor> out;
    VisitTensors([&out](const std::string& name, Tensor& t) {
      out.push_back({name, &t});
    });
    return out;
  }

  /// FNV-1a over every tensor's bytes; used to prove weights were frozen.
  std::uint64_t Hash() const {
    std::uint64_t h = 1469598103934665603ull;
    VisitTensors([&h](const std::string&, const Tensor& t) {
      const auto* p = reinterpret_cast<const unsigned char*>(t.ptr());
      for (std::size_t i = 0; i < t.size() * sizeof(float); ++i) {
        h = (h ^ p[i]) * 1099511628211ull;
      }
    });
    return h;
  }

 private:
  template <typename Self, typename F>
  static void Visit(Self& self, F& f) {
    auto bn = [&f](const std::string& p, auto& b) {
      f(p + "gamma", b.gamma);
      f(p + "beta", b.beta);
      f(p + "running_mean", b.running_mean);
      f(p + "running_var", b.running_var);
    };
    for (std::size_t i = 0; i < self.train_blocks_.size(); ++i) {
      auto& b = self.train_blocks_[i];
      const std::string p = "encoder.block" + std::to_string(i) + ".";
      f(p + "conv3.weight", b.conv3);
      bn(p + "bn3.", b.bn3);
      f(p + "conv1.weight", b.conv1);
      bn(p + "bn1.", b.bn1);
      if (b.bn_id) bn(p + "bn_id.", *b.bn_id);
    }
    for (std::size_t i = 0; i < self.deploy_blocks_.size(); ++i) {
      auto& b = self.deploy_blocks_[i];
      const std::string p = "encoder.block" + std::to_string(i) + ".";
      f(p + "conv.weight", b.weight);
      f(p + "conv.bias", b.bias);
    }
  }

  void CheckBlocks() const {
    config_.Validate();
    const auto specs = config_.BlockSpecs();
    const std::size_t n = form_ == EncoderForm::kTrain ? train_blocks_.size()
                                                       : deploy_blocks_.size();
    if (n != specs.size()) {
      Fail(ErrorKind::kConfig, "encoder config expects ", specs.size(),
           " blocks, got ", n);
    }
    for (std::size_t i = 0; i < n; ++i) {
      const Shape want = specs[i].WeightShape();
      const Shape got = form_ == EncoderForm::kTrain
                            ? train_blocks_[i].conv3.shape
                            : deploy_blocks_[i].weight.shape;
      if (want != got) {
        Fail(ErrorKind::kShape, "block ", i, " kernel shape ",
             ShapeString(got), " != ", ShapeString(want));
      }
    }
  }

  EncoderConfig config_;
  EncoderForm form_ = EncoderForm::kTrain;
  std::vector<RepVGGBlockTrain> train_blocks_;
  std::vector<RepVGGBlockDeploy> deploy_blocks_;
};

/// Tape handles for one train-form block's trainable tensors.
struct BlockVars {
  VarId conv3, gamma3, beta3, conv1, gamma1, beta1;
  std::optional<VarId> gamma_id, beta_id;
};

/// Training forward of a train-form encoder on a tape. Batchnorm uses batch
/// statistics and, when `update_running` is set, refreshes running stats.
inline VarId ForwardTrain(Tape& tape, Encoder& enc, VarId x,
                          std::vector<BlockVars>* vars, bool update_running) {
  if (enc.form() != EncoderForm::kTrain) {
    Fail(ErrorKind::kConfig, "training forward needs a train-form encoder");
  }
  vars->clear();
  VarId h = x;
  for (auto& b : enc.train_blocks()) {
    BlockVars v;
    v.conv3 = tape.Variable(b.conv3);
    v.gamma3 = tape.Variable(b.bn3.gamma);
    v.beta3 = tape.Variable(b.bn3.beta);
    v.conv1 = tape.Variable(b.conv1);
    v.gamma1 = tape.Variable(b.bn1.gamma);
    v.beta1 = tape.Variable(b.bn1.beta);
    VarId y = ag::BatchNorm(tape, ag::Conv2d(tape, h, b.spec, v.conv3, {}),
                            v.gamma3, v.beta3, b.bn3.epsilon,
                            update_running ? &b.bn3 : nullptr);
    VarId side = h;
    if (b.spec.pad_time == Padding::kNone) {
      side = ag::SliceTime(tape, h, 1, tape.value(h).dim(2) - 2);
    }
    VarId y1 = ag::BatchNorm(
        tape, ag::Conv2d(tape, side, b.PointwiseSpec(), v.conv1, {}), v.gamma1,
        v.beta1, b.bn1.epsilon, update_running ? &b.bn1 : nullptr);
    y = ag::Add(tape, y, y1);
    if (b.bn_id) {
      v.gamma_id = tape.Variable(b.bn_id->gamma);
      v.beta_id = tape.Variable(b.bn_id->beta);
      VarId yi = ag::BatchNorm(tape, side, *v.gamma_id, *v.beta_id,
                               b.bn_id->epsilon,
                               update_running ? &*b.bn_id : nullptr);
      y = ag::Add(tape, y, yi);
    }
    h = ag::Relu(tape, y);
    vars->push_back(v);
  }
  return h;
}

}  // namespace sepspot
