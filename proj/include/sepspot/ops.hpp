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

// Forward and backward kernels for the dense ops the models are built from.
//
// Convolution accumulates every output value in one fixed order: channel
// outermost, then kernel-time, then kernel-freq innermost, starting from 0
// and adding the bias last. The order does not depend on the output
// position, which is what makes the pad-free encoder exactly
// shift-equivariant and lets padded and unpadded runs agree bitwise on
// interior frames. Build with -ffp-contract=off so vectorized and scalar
// tails round identically.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

#include "sepspot/tensor.hpp"

namespace sepspot {

enum class Padding { kSame, kNone };

inline const char* ToString(Padding p) {
  return p == Padding::kSame ? "same" : "none";
}

inline Padding ParsePadding(const std::string& s) {
  if (s == "same") return Padding::kSame;
  if (s == "none") return Padding::kNone;
  Fail(ErrorKind::kConfig, "unknown padding mode '", s,
       "' (expected same|none)");
}

struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_time = 3;
  std::size_t kernel_freq = 3;
  std::size_t stride_time = 1;
  std::size_t stride_freq = 1;
  Padding pad_time = Padding::kSame;
  Padding pad_freq = Padding::kSame;

  std::size_t KernelVolume() const {
    return in_channels * kernel_time * kernel_freq;
  }
  Shape WeightShape() const {
    return {out_channels, in_channels, kernel_time, kernel_freq};
  }
  void Validate() const {
    if (kernel_time % 2 == 0 || kernel_freq % 2 == 0) {
      Fail(ErrorKind::kConfig, "kernel dims must be odd, got ", kernel_time,
           "x", kernel_freq);
    }
    if (stride_time == 0 || stride_freq == 0) {
      Fail(ErrorKind::kConfig, "stride must be >= 1");
    }
    if (in_channels == 0 || out_channels == 0) {
      Fail(ErrorKind::kConfig, "channel counts must be positive");
    }
  }
};

/// Output length along one axis. Throws kWindowUnderflow when an unpadded
/// axis is shorter than the kernel.
inline std::size_t ConvOutputLength(std::size_t len, std::size_t kernel,
                                    std::size_t stride, Padding pad,
                                    const char* axis) {
  if (pad == Padding::kSame) {
    if (len == 0) Fail(ErrorKind::kShape, axis, " axis has length 0");
    return (len + stride - 1) / stride;
  }
  if (len < kernel) {
    Fail(ErrorKind::kWindowUnderflow, "window underflow on ", axis,
         " axis: length ", len, " < kernel ", kernel);
  }
  return (len - kernel) / stride + 1;
}

struct ConvGeometry {
  std::size_t batch, t_in, f_in, t_out, f_out;
  std::size_t pad_t, pad_f;  // leading pad on each axis
};

inline ConvGeometry MakeGeometry(const Shape& in, const ConvSpec& spec) {
  if (in.size() != 4) {
    Fail(ErrorKind::kShape, "conv2d expects [B,C,T,F] input, got ",
         ShapeString(in));
  }
  if (in[1] != spec.in_channels) {
    Fail(ErrorKind::kShape, "conv2d channel axis mismatch: input has ", in[1],
         ", spec expects ", spec.in_channels);
  }
  ConvGeometry g{};
  g.batch = in[0];
  g.t_in = in[2];
  g.f_in = in[3];
  g.t_out = ConvOutputLength(g.t_in, spec.kernel_time, spec.stride_time,
                             spec.pad_time, "time");
  g.f_out = ConvOutputLength(g.f_in, spec.kernel_freq, spec.stride_freq,
                             spec.pad_freq, "freq");
  g.pad_t = spec.pad_time == Padding::kSame ? spec.kernel_time / 2 : 0;
  g.pad_f = spec.pad_freq == Padding::kSame ? spec.kernel_freq / 2 : 0;
  return g;
}

namespace detail {

#if defined(__AVX512F__)
#define SEPSPOT_VEC_BYTES 64
#elif defined(__AVX__)
#define SEPSPOT_VEC_BYTES 32
#else
#define SEPSPOT_VEC_BYTES 16
#endif

using VecF = float __attribute__((vector_size(SEPSPOT_VEC_BYTES)));
constexpr std::size_t kLanes = SEPSPOT_VEC_BYTES / sizeof(float);
constexpr std::size_t kVecs = kLanes >= 16 ? 4 : 2;  // vectors per micro-tile
constexpr std::size_t kChunk = kLanes * kVecs;
constexpr std::size_t kConvTile = 128;
constexpr std::size_t kRowBlock = 4;
static_assert(kConvTile % kChunk == 0);

inline VecF LoadVec(const float* p) {
  VecF v;
  std::memcpy(&v, p, sizeof v);
  return v;
}
inline void StoreVec(float* p, const VecF& v) { std::memcpy(p, &v, sizeof v); }

// C[r][q] = sum_i A[r * ars + i * ais] * B[i * brs + q] for q < kChunk,
// accumulated in ascending i from zero.
template <std::size_t R>
inline void RowsKernel(const float* a, std::size_t ars, std::size_t ais,
                       const float* b, std::size_t brs, std::size_t inner,
                       float* c, std::size_t crs) {
  VecF acc[R][kVecs] = {};
  for (std::size_t i = 0; i < inner; ++i) {
    VecF bv[kVecs];
    for (std::size_t v = 0; v < kVecs; ++v) bv[v] = LoadVec(b + i * brs + v * kLanes);
    for (std::size_t r = 0; r < R; ++r) {
      const float s = a[r * ars + i * ais];
      for (std::size_t v = 0; v < kVecs; ++v) acc[r][v] += s * bv[v];
    }
  }
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t v = 0; v < kVecs; ++v) StoreVec(c + r * crs + v * kLanes, acc[r][v]);
  }
}

// Applies RowsKernel over `rows` rows and `width` columns (a multiple of
// kChunk). B and C must be readable / writable out to `width`.
inline void GemmRows(const float* a, std::size_t ars, std::size_t ais, const float* b,
                     std::size_t brs, std::size_t inner, std::size_t rows,
                     std::size_t width, float* c, std::size_t crs) {
  for (std::size_t q = 0; q < width; q += kChunk) {
    std::size_t r = 0;
    for (; r + kRowBlock <= rows; r += kRowBlock) {
      RowsKernel<kRowBlock>(a + r * ars, ars, ais, b + q, brs, inner, c + r * crs + q, crs);
    }
    switch (rows - r) {
      case 3: RowsKernel<3>(a + r * ars, ars, ais, b + q, brs, inner, c + r * crs + q, crs); break;
      case 2: RowsKernel<2>(a + r * ars, ars, ais, b + q, brs, inner, c + r * crs + q, crs); break;
      case 1: RowsKernel<1>(a + r * ars, ars, ais, b + q, brs, inner, c + r * crs + q, crs); break;
      default: break;
    }
  }
}

// C[r * crs + s] += sum_q A[r * stride + q] * B[s * stride + q], q < width.
template <std::size_t R, std::size_t S>
inline void DotKernel(const float* a, const float* b, std::size_t stride,
                      std::size_t width, float* c, std::size_t crs) {
  VecF acc[R][S] = {};
  for (std::size_t q = 0; q < width; q += kLanes) {
    VecF av[R], bv[S];
    for (std::size_t r = 0; r < R; ++r) av[r] = LoadVec(a + r * stride + q);
    for (std::size_t s = 0; s < S; ++s) bv[s] = LoadVec(b + s * stride + q);
    for (std::size_t r = 0; r < R; ++r) {
      for (std::size_t s = 0; s < S; ++s) acc[r][s] += av[r] * bv[s];
    }
  }
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t s = 0; s < S; ++s) {
      float sum = 0.0f;
      for (std::size_t l = 0; l < kLanes; ++l) sum += acc[r][s][l];
      c[r * crs + s] += sum;
    }
  }
}

template <std::size_t R>
inline void DotRowBlock(const float* a, const float* b, std::size_t stride,
                        std::size_t width, std::size_t cols, float* c, std::size_t crs) {
  std::size_t s = 0;
  for (; s + 4 <= cols; s += 4) DotKernel<R, 4>(a, b + s * stride, stride, width, c + s, crs);
  for (; s < cols; ++s) DotKernel<R, 1>(a, b + s * stride, stride, width, c + s, crs);
}

inline void GemmDot(const float* a, std::size_t rows, const float* b, std::size_t cols,
                    std::size_t stride, std::size_t width, float* c, std::size_t crs) {
  std::size_t r = 0;
  for (; r + 4 <= rows; r += 4) DotRowBlock<4>(a + r * stride, b, stride, width, cols, c + r * crs, crs);
  for (; r < rows; ++r) DotRowBlock<1>(a + r * stride, b, stride, width, cols, c + r * crs, crs);
}

// Visits the runs of output positions [p0, p0 + n) that share an output row:
// f(q, to, fo0, len).
template <typename F>
inline void ForEachRun(const ConvGeometry& g, std::size_t p0, std::size_t n, F&& f) {
  std::size_t q = 0;
  while (q < n) {
    const std::size_t p = p0 + q;
    const std::size_t to = p / g.f_out, fo = p % g.f_out;
    const std::size_t len = std::min(n - q, g.f_out - fo);
    f(q, to, fo, len);
    q += len;
  }
}

// Fills col[k * kConvTile + q] for output positions [p0, p0 + n) of one
// sample; columns past n are zeroed.
inline void Im2ColTile(const float* x, const ConvSpec& spec, const ConvGeometry& g,
                       std::size_t p0, std::size_t n, float* col) {
  const std::size_t kt = spec.kernel_time, kf = spec.kernel_freq;
  const std::size_t sf = spec.stride_freq;
  const auto ti_of = [&](std::size_t to, std::size_t i) {
    return static_cast<std::ptrdiff_t>(to * spec.stride_time + i) -
           static_cast<std::ptrdiff_t>(g.pad_t);
  };
  for (std::size_t c = 0; c < spec.in_channels; ++c) {
    const float* xc = x + c * g.t_in * g.f_in;
    for (std::size_t i = 0; i < kt; ++i) {
      for (std::size_t j = 0; j < kf; ++j) {
        float* row = col + ((c * kt + i) * kf + j) * kConvTile;
        ForEachRun(g, p0, n, [&](std::size_t q, std::size_t to, std::size_t fo0,
                                 std::size_t len) {
          const std::ptrdiff_t ti = ti_of(to, i);
          float* dst = row + q;
          if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(g.t_in)) {
            std::fill(dst, dst + len, 0.0f);
            return;
          }
          const float* src = xc + ti * g.f_in;
          for (std::size_t u = 0; u < len; ++u) {
            const std::ptrdiff_t fi = static_cast<std::ptrdiff_t>((fo0 + u) * sf + j) -
                                      static_cast<std::ptrdiff_t>(g.pad_f);
            dst[u] = fi >= 0 && fi < static_cast<std::ptrdiff_t>(g.f_in) ? src[fi] : 0.0f;
          }
        });
        std::fill(row + n, row + kConvTile, 0.0f);
      }
    }
  }
}

inline void Col2ImTileAdd(const float* col, const ConvSpec& spec, const ConvGeometry& g,
                          std::size_t p0, std::size_t n, float* gx) {
  const std::size_t kt = spec.kernel_time, kf = spec.kernel_freq;
  const std::size_t sf = spec.stride_freq;
  for (std::size_t c = 0; c < spec.in_channels; ++c) {
    float* gc = gx + c * g.t_in * g.f_in;
    for (std::size_t i = 0; i < kt; ++i) {
      for (std::size_t j = 0; j < kf; ++j) {
        const float* row = col + ((c * kt + i) * kf + j) * kConvTile;
        ForEachRun(g, p0, n, [&](std::size_t q, std::size_t to, std::size_t fo0,
                                 std::size_t len) {
          const std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(to * spec.stride_time + i) -
                                    static_cast<std::ptrdiff_t>(g.pad_t);
          if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(g.t_in)) return;
          float* dst = gc + ti * g.f_in;
          for (std::size_t u = 0; u < len; ++u) {
            const std::ptrdiff_t fi = static_cast<std::ptrdiff_t>((fo0 + u) * sf + j) -
                                      static_cast<std::ptrdiff_t>(g.pad_f);
            if (fi >= 0 && fi < static_cast<std::ptrdiff_t>(g.f_in)) dst[fi] += row[q + u];
          }
        });
      }
    }
  }
}

}  // namespace detail

/// 2-D convolution over [B, Cin, T, F]. `weight` is [Cout, Cin, kt, kf];
/// `bias` is [Cout] or empty.
inline Tensor Conv2d(const Tensor& input, const ConvSpec& spec,
                     const Tensor& weight, const Tensor& bias) {
  spec.Validate();
  const ConvGeometry g = MakeGeometry(input.shape, spec);
  if (weight.shape != spec.WeightShape()) {
    Fail(ErrorKind::kShape, "conv2d weight shape ", ShapeString(weight.shape),
         " != expected ", ShapeString(spec.WeightShape()));
  }
  if (!bias.empty() && bias.shape != Shape{spec.out_channels}) {
    Fail(ErrorKind::kShape, "conv2d bias shape ", ShapeString(bias.shape),
         " != [", spec.out_channels, "]");
  }
  const std::size_t K = spec.KernelVolume();
  const std::size_t Co = spec.out_channels;
  const std::size_t P = g.t_out * g.f_out;
  constexpr std::size_t tile = detail::kConvTile;

  Tensor out({g.batch, Co, g.t_out, g.f_out});
  std::vector<float> col(K * tile), acc(Co * tile);

  for (std::size_t b = 0; b < g.batch; ++b) {
    const float* x = input.ptr() + b * spec.in_channels * g.t_in * g.f_in;
    float* y = out.ptr() + b * Co * P;
    for (std::size_t p0 = 0; p0 < P; p0 += tile) {
      const std::size_t n = std::min(tile, P - p0);
      const std::size_t width = (n + detail::kChunk - 1) / detail::kChunk * detail::kChunk;
      detail::Im2ColTile(x, spec, g, p0, n, col.data());
      detail::GemmRows(weight.ptr(), K, 1, col.data(), tile, K, Co, width, acc.data(), tile);
      for (std::size_t o = 0; o < Co; ++o) {
        const float bv = bias.empty() ? 0.0f : bias[o];
        float* dst = y + o * P + p0;
        const float* a = acc.data() + o * tile;
        for (std::size_t q = 0; q < n; ++q) dst[q] = a[q] + bv;
      }
    }
  }
  return out;
}

struct ConvGrads {
  Tensor input, weight, bias;
};

inline ConvGrads Conv2dBackward(const Tensor& input, const ConvSpec& spec,
                                const Tensor& weight, const Tensor& grad_out,
                                bool need_input_grad = true) {
  const ConvGeometry g = MakeGeometry(input.shape, spec);
  const std::size_t K = spec.KernelVolume();
  const std::size_t Co = spec.out_channels;
  const std::size_t P = g.t_out * g.f_out;
  constexpr std::size_t tile = detail::kConvTile;
  if (grad_out.shape != Shape{g.batch, Co, g.t_out, g.f_out}) {
    Fail(ErrorKind::kShape, "conv2d upstream gradient shape ",
         ShapeString(grad_out.shape), " does not match output");
  }
  ConvGrads grads{Tensor(input.shape), Tensor(weight.shape), Tensor({Co})};
  std::vector<float> col(K * tile), gcol(K * tile), gtile(Co * tile);
  for (std::size_t b = 0; b < g.batch; ++b) {
    const float* x = input.ptr() + b * spec.in_channels * g.t_in * g.f_in;
    float* gx = grads.input.ptr() + b * spec.in_channels * g.t_in * g.f_in;
    const float* gy = grad_out.ptr() + b * Co * P;
    for (std::size_t p0 = 0; p0 < P; p0 += tile) {
      const std::size_t n = std::min(tile, P - p0);
      const std::size_t width = (n + detail::kChunk - 1) / detail::kChunk * detail::kChunk;
      detail::Im2ColTile(x, spec, g, p0, n, col.data());
      for (std::size_t o = 0; o < Co; ++o) {
        const float* go = gy + o * P + p0;
        float* gt = gtile.data() + o * tile;
        std::copy(go, go + n, gt);
        std::fill(gt + n, gt + tile, 0.0f);
        float bsum = 0.0f;
        for (std::size_t q = 0; q < n; ++q) bsum += go[q];
        grads.bias[o] += bsum;
      }
      detail::GemmDot(gtile.data(), Co, col.data(), K, tile, width, grads.weight.ptr(), K);
      if (need_input_grad) {
        detail::GemmRows(weight.ptr(), 1, K, gtile.data(), tile, Co, K, width, gcol.data(),
                         tile);
        detail::Col2ImTileAdd(gcol.data(), spec, g, p0, n, gx);
      }
    }
  }
  return grads;
}

struct BatchNormParams {
  Tensor gamma, beta, running_mean, running_var;
  float epsilon = 1e-5f;

  static BatchNormParams Identity(std::size_t channels, float eps = 1e-5f) {
    return {Tensor({channels}, 1.0f), Tensor({channels}, 0.0f),
            Tensor({channels}, 0.0f), Tensor({channels}, 1.0f), eps};
  }
  std::size_t channels() const { return gamma.size(); }
  void Validate() const {
    const std::size_t c = gamma.size();
    if (beta.size() != c || running_mean.size() != c ||
        running_var.size() != c) {
      Fail(ErrorKind::kShape, "batchnorm parameter lengths disagree");
    }
    if (!(epsilon > 0.0f)) Fail(ErrorKind::kConfig, "batchnorm epsilon <= 0");
    for (float v : running_var.data) {
      if (v < 0.0f) Fail(ErrorKind::kValue, "batchnorm running_var < 0");
    }
  }
};

namespace detail {
// Channel axis is 1; everything after it is spatial.
inline std::size_t SpatialSize(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t i = 2; i < s.size(); ++i) n *= s[i];
  return n;
}
inline void CheckChannels(const Tensor& x, std::size_t channels) {
  if (x.rank() < 2 || x.dim(1) != channels) {
    Fail(ErrorKind::kShape, "batchnorm channel axis mismatch: input ",
         ShapeString(x.shape), " vs ", channels, " channels");
  }
}
}  // namespace detail

inline Tensor BatchNormInfer(const Tensor& x, const BatchNormParams& p) {
  p.Validate();
  detail::CheckChannels(x, p.channels());
  const std::size_t B = x.dim(0), C = x.dim(1), S = detail::SpatialSize(x.shape);
  Tensor out(x.shape);
  for (std::size_t c = 0; c < C; ++c) {
    const double mean = p.running_mean[c];
    const double scale =
        p.gamma[c] / std::sqrt(static_cast<double>(p.running_var[c]) + p.epsilon);
    const double beta = p.beta[c];
    for (std::size_t b = 0; b < B; ++b) {
      const float* src = x.ptr() + (b * C + c) * S;
      float* dst = out.ptr() + (b * C + c) * S;
      for (std::size_t i = 0; i < S; ++i) {
        dst[i] = static_cast<float>((src[i] - mean) * scale + beta);
      }
    }
  }
  return out;
}

/// Saved state of a training-mode batchnorm forward.
struct BatchNormCache {
  Tensor normalized;             // x-hat
  std::vector<float> inv_std;    // per channel
  std::vector<float> batch_mean;
  std::vector<float> batch_var;  // biased
};

/// Normalizes with batch statistics. Running stats are not touched here.
inline Tensor BatchNormTrain(const Tensor& x, const BatchNormParams& p,
                             BatchNormCache* cache) {
  detail::CheckChannels(x, p.channels());
  const std::size_t B = x.dim(0), C = x.dim(1), S = detail::SpatialSize(x.shape);
  const double count = static_cast<double>(B * S);
  Tensor out(x.shape);
  BatchNormCache local;
  BatchNormCache& cc = cache ? *cache : local;
  cc.normalized = Tensor(x.shape);
  cc.inv_std.assign(C, 0.0f);
  cc.batch_mean.assign(C, 0.0f);
  cc.batch_var.assign(C, 0.0f);
  for (std::size_t c = 0; c < C; ++c) {
    double sum = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      const float* src = x.ptr() + (b * C + c) * S;
      for (std::size_t i = 0; i < S; ++i) sum += src[i];
    }
    const double mean = sum / count;
    double sq = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      const float* src = x.ptr() + (b * C + c) * S;
      for (std::size_t i = 0; i < S; ++i) {
        const double d = src[i] - mean;
        sq += d * d;
      }
    }
    const double var = sq / count;
    const float inv = static_cast<float>(1.0 / std::sqrt(var + p.epsilon));
    cc.batch_mean[c] = static_cast<float>(mean);
    cc.batch_var[c] = static_cast<float>(var);
    cc.inv_std[c] = inv;
    for (std::size_t b = 0; b < B; ++b) {
      const float* src = x.ptr() + (b * C + c) * S;
      float* xh = cc.normalized.ptr() + (b * C + c) * S;
      float* dst = out.ptr() + (b * C + c) * S;
      for (std::size_t i = 0; i < S; ++i) {
        xh[i] = (src[i] - static_cast<float>(mean)) * inv;
        dst[i] = xh[i] * p.gamma[c] + p.beta[c];
      }
    }
  }
  return out;
}

/// Folds batch statistics into running statistics (unbiased variance).
inline void UpdateRunningStats(BatchNormParams& p, const BatchNormCache& cache,
                               std::size_t count, float momentum = 0.1f) {
  const float unbias =
      count > 1 ? static_cast<float>(count) / static_cast<float>(count - 1)
                : 1.0f;
  for (std::size_t c = 0; c < p.channels(); ++c) {
    p.running_mean[c] =
        (1.0f - momentum) * p.running_mean[c] + momentum * cache.batch_mean[c];
    p.running_var[c] = (1.0f - momentum) * p.running_var[c] +
                       momentum * cache.batch_var[c] * unbias;
  }
}

struct BatchNormGrads {
  Tensor input, gamma, beta;
};

inline BatchNormGrads BatchNormTrainBackward(const BatchNormParams& p,
                                             const BatchNormCache& cache,
                                             const Tensor& grad_out) {
  const Shape& shape = cache.normalized.shape;
  const std::size_t B = shape[0], C = shape[1], S = detail::SpatialSize(shape);
  const double n = static_cast<double>(B * S);
  BatchNormGrads g{Tensor(shape), Tensor({C}), Tensor({C})};
  for (std::size_t c = 0; c < C; ++c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      const float* go = grad_out.ptr() + (b * C + c) * S;
      const float* xh = cache.normalized.ptr() + (b * C + c) * S;
      for (std::size_t i = 0; i < S; ++i) {
        sum_g += go[i];
        sum_gx += static_cast<double>(go[i]) * xh[i];
      }
    }
    g.beta[c] = static_cast<float>(sum_g);
    g.gamma[c] = static_cast<float>(sum_gx);
    const double scale = p.gamma[c] * cache.inv_std[c] / n;
    for (std::size_t b = 0; b < B; ++b) {
      const float* go = grad_out.ptr() + (b * C + c) * S;
      const float* xh = cache.normalized.ptr() + (b * C + c) * S;
      float* gi = g.input.ptr() + (b * C + c) * S;
      for (std::size_t i = 0; i < S; ++i) {
        gi[i] = static_cast<float>(scale * (n * go[i] - sum_g - xh[i] * sum_gx));
      }
    }
  }
  return g;
}

inline Tensor Relu(const Tensor& x) {
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
  return out;
}

/// ReLU derivative is taken as 0 at exactly 0.
inline Tensor ReluBackward(const Tensor& x, const Tensor& grad_out) {
  Tensor g(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) {
    g[i] = x[i] > 0.0f ? grad_out[i] : 0.0f;
  }
  return g;
}

/// out[b] = W * in[b] + bias, W is [D_out, H].
inline Tensor Linear(const Tensor& input, const Tensor& weight,
                     const Tensor& bias) {
  if (input.rank() != 2 || weight.rank() != 2 || weight.dim(1) != input.dim(1)) {
    Fail(ErrorKind::kShape, "linear dim mismatch: input ",
         ShapeString(input.shape), ", weight ", ShapeString(weight.shape));
  }
  const std::size_t B = input.dim(0), H = input.dim(1), D = weight.dim(0);
  if (!bias.empty() && bias.shape != Shape{D}) {
    Fail(ErrorKind::kShape, "linear bias shape ", ShapeString(bias.shape),
         " != [", D, "]");
  }
  Tensor out({B, D});
  const std::size_t body = H - H % detail::kLanes;
  detail::GemmDot(input.ptr(), B, weight.ptr(), D, H, body, out.ptr(), D);
  for (std::size_t b = 0; b < B; ++b) {
    const float* x = input.ptr() + b * H;
    for (std::size_t d = 0; d < D; ++d) {
      const float* w = weight.ptr() + d * H;
      float s = out[b * D + d];
      for (std::size_t h = body; h < H; ++h) s += w[h] * x[h];
      out[b * D + d] = s + (bias.empty() ? 0.0f : bias[d]);
    }
  }
  return out;
}

struct LinearGrads {
  Tensor input, weight, bias;
};

inline LinearGrads LinearBackward(const Tensor& input, const Tensor& weight,
                                  const Tensor& grad_out) {
  const std::size_t B = input.dim(0), H = input.dim(1), D = weight.dim(0);
  LinearGrads g{Tensor(input.shape), Tensor(weight.shape), Tensor({D})};
  for (std::size_t b = 0; b < B; ++b) {
    const float* x = input.ptr() + b * H;
    float* gx = g.input.ptr() + b * H;
    for (std::size_t d = 0; d < D; ++d) {
      const float go = grad_out[b * D + d];
      g.bias[d] += go;
      const float* w = weight.ptr() + d * H;
      float* gw = g.weight.ptr() + d * H;
      for (std::size_t h = 0; h < H; ++h) {
        gw[h] += go * x[h];
        gx[h] += go * w[h];
      }
    }
  }
  return g;
}

/// Softmax along the last axis.
inline Tensor Softmax(const Tensor& x) {
  if (x.rank() == 0 || x.shape.back() == 0) {
    Fail(ErrorKind::kShape, "softmax over empty axis");
  }
  const std::size_t n = x.shape.back(), rows = x.size() / n;
  Tensor out(x.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* src = x.ptr() + r * n;
    float* dst = out.ptr() + r * n;
    const float mx = *std::max_element(src, src + n);
    float sum = 0.0f;
    for (std::size_t i = 0; i < n; ++i) {
      dst[i] = std::exp(src[i] - mx);
      sum += dst[i];
    }
    for (std::size_t i = 0; i < n; ++i) dst[i] /= sum;
  }
  return out;
}

inline Tensor SoftmaxBackward(const Tensor& y, const Tensor& grad_out) {
  const std::size_t n = y.shape.back(), rows = y.size() / n;
  Tensor g(y.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* yy = y.ptr() + r * n;
    const float* go = grad_out.ptr() + r * n;
    float dot = 0.0f;
    for (std::size_t i = 0; i < n; ++i) dot += yy[i] * go[i];
    for (std::size_t i = 0; i < n; ++i) g[r * n + i] = yy[i] * (go[i] - dot);
  }
  return g;
}

inline Tensor Add(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) {
    Fail(ErrorKind::kShape, "add shape mismatch ", ShapeString(a.shape), " vs ",
         ShapeString(b.shape));
  }
  Tensor out(a.shape);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

inline void AddInPlace(Tensor& dst, const Tensor& src) {
  if (dst.empty()) {
    dst = src;
    return;
  }
  if (dst.shape != src.shape) {
    Fail(ErrorKind::kShape, "accumulate shape mismatch ",
         ShapeString(dst.shape), " vs ", ShapeString(src.shape));
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace sepspot
