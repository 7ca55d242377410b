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

// Embedding head: multi-head attention statistics pooling over the hidden
// frames followed by a linear projection to D_0, plus the head-orthogonality
// penalty ||A A^T - I||_F^2 on the attention scoring vectors.

#pragma once

#include <cmath>
#include <memory>
#include <random>

#include "sepspot/autograd.hpp"

namespace sepspot {

constexpr float kPoolVarianceEpsilon = 1e-9f;

struct PoolingParams {
  Tensor attention;  // [heads, H / heads], one scoring vector per head

  std::size_t heads() const { return attention.rank() ? attention.dim(0) : 0; }
  std::size_t head_dim() const {
    return attention.rank() ? attention.dim(1) : 0;
  }
};

struct ProjectionParams {
  Tensor weight;  // [D_0, 2H]
  Tensor bias;    // [D_0]

  std::size_t out_dim() const { return weight.rank() ? weight.dim(0) : 0; }
};

struct EmbeddingHead {
  PoolingParams pool;
  ProjectionParams proj;

  static EmbeddingHead Init(std::size_t hidden, std::size_t heads,
                            std::size_t out_dim, std::mt19937_64& rng) {
    if (heads == 0 || hidden % heads != 0) {
      Fail(ErrorKind::kConfig, "hidden size ", hidden,
           " is not divisible by head count ", heads);
    }
    if (out_dim == 0) Fail(ErrorKind::kConfig, "embedding dim must be > 0");
    const std::size_t d = hidden / heads;
    EmbeddingHead h;
    h.pool.attention =
        RandomNormal({heads, d}, rng, 1.0f / std::sqrt(static_cast<float>(d)));
    h.proj.weight = RandomNormal(
        {out_dim, 2 * hidden}, rng,
        std::sqrt(1.0f / static_cast<float>(2 * hidden)));
    h.proj.bias = Tensor({out_dim});
    return h;
  }

  std::size_t hidden() const { return pool.heads() * pool.head_dim(); }
  std::size_t out_dim() const { return proj.out_dim(); }
};

/// Per-sample softmax weights kept for the backward pass.
struct PoolCache {
  std::vector<float> weights;  // [B, heads, T]
  std::vector<float> mean;     // [B, H]
  std::vector<float> stddev;   // [B, H]
};

namespace detail {
inline void CheckPoolShapes(const Tensor& y, const PoolingParams& p) {
  if (y.rank() != 4) {
    Fail(ErrorKind::kShape, "pooling expects [B,C,T,F], got ",
         ShapeString(y.shape));
  }
  const std::size_t H = y.dim(1) * y.dim(3);
  if (p.heads() == 0 || H % p.heads() != 0) {
    Fail(ErrorKind::kConfig, "hidden size ", H,
         " is not divisible by head count ", p.heads());
  }
  if (p.head_dim() != H / p.heads()) {
    Fail(ErrorKind::kShape, "attention matrix ", ShapeString(p.attention.shape),
         " does not match hidden size ", H);
  }
  if (y.dim(2) == 0) Fail(ErrorKind::kShape, "pooling over zero frames");
}
}  // namespace detail

/// Pools T frame-major rows hid[t * H + h] into out[2H]. `weights`, when
/// given, receives the [heads, T] attention weights.
inline void PoolFrames(const float* hid, std::size_t T, std::size_t H,
                       const PoolingParams& p, float* out, float* weights = nullptr) {
  const std::size_t N = p.heads(), d = p.head_dim();
  std::vector<float> w(T), m(d), v(d);
  for (std::size_t n = 0; n < N; ++n) {
    const float* a = p.attention.ptr() + n * d;
    // Every sum runs in ascending order of its own index; the loops are
    // ordered so independent sums advance together.
    std::fill(w.begin(), w.end(), 0.0f);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t t = 0; t < T; ++t) w[t] += a[i] * hid[t * H + n * d + i];
    }
    const float mx = *std::max_element(w.begin(), w.end());
    float z = 0.0f;
    for (std::size_t t = 0; t < T; ++t) {
      w[t] = std::exp(w[t] - mx);
      z += w[t];
    }
    for (std::size_t t = 0; t < T; ++t) w[t] /= z;
    std::fill(m.begin(), m.end(), 0.0f);
    std::fill(v.begin(), v.end(), 0.0f);
    for (std::size_t t = 0; t < T; ++t) {
      const float* x = hid + t * H + n * d;
      for (std::size_t i = 0; i < d; ++i) m[i] += w[t] * x[i];
    }
    for (std::size_t t = 0; t < T; ++t) {
      const float* x = hid + t * H + n * d;
      for (std::size_t i = 0; i < d; ++i) {
        const float diff = x[i] - m[i];
        v[i] += w[t] * diff * diff;
      }
    }
    float* mu = out + n * 2 * d;
    float* sd = mu + d;
    for (std::size_t i = 0; i < d; ++i) {
      mu[i] = m[i];
      sd[i] = std::sqrt(v[i] + kPoolVarianceEpsilon);
    }
    if (weights) std::copy(w.begin(), w.end(), weights + n * T);
  }
}

/// [B, C, T, F] -> [B, 2H], H = C * F. Per head: softmax over frames of a
/// scalar score, then weighted mean and weighted std, concatenated.
inline Tensor AttentionPool(const Tensor& y, const PoolingParams& p,
                            PoolCache* cache = nullptr) {
  detail::CheckPoolShapes(y, p);
  const std::size_t B = y.dim(0), C = y.dim(1), T = y.dim(2), F = y.dim(3);
  const std::size_t H = C * F, N = p.heads(), d = p.head_dim();
  Tensor out({B, 2 * H});
  if (cache) {
    cache->weights.assign(B * N * T, 0.0f);
    cache->mean.assign(B * H, 0.0f);
    cache->stddev.assign(B * H, 0.0f);
  }
  std::vector<float> hid(T * H);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const float* src = y.ptr() + (b * C + c) * T * F;
      for (std::size_t t = 0; t < T; ++t) {
        std::copy_n(src + t * F, F, hid.data() + t * H + c * F);
      }
    }
    float* o = out.ptr() + b * 2 * H;
    PoolFrames(hid.data(), T, H, p, o, cache ? &cache->weights[b * N * T] : nullptr);
    if (cache) {
      for (std::size_t n = 0; n < N; ++n) {
        std::copy_n(o + n * 2 * d, d, &cache->mean[b * H + n * d]);
        std::copy_n(o + n * 2 * d + d, d, &cache->stddev[b * H + n * d]);
      }
    }
  }
  return out;
}

struct PoolGrads {
  Tensor input, attention;
};

inline PoolGrads AttentionPoolBackward(const Tensor& y, const PoolingParams& p,
                                       const PoolCache& cache,
                                       const Tensor& grad_out) {
  const std::size_t B = y.dim(0), C = y.dim(1), T = y.dim(2), F = y.dim(3);
  const std::size_t H = C * F, N = p.heads(), d = p.head_dim();
  PoolGrads g{Tensor(y.shape), Tensor(p.attention.shape)};
  std::vector<float> hid(T * H), ghid(T * H), gw(T), gmu(d), gv(d);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t f = 0; f < F; ++f) {
          hid[t * H + c * F + f] = y.at(b, c, t, f);
        }
      }
    }
    std::fill(ghid.begin(), ghid.end(), 0.0f);
    for (std::size_t n = 0; n < N; ++n) {
      const float* w = cache.weights.data() + (b * N + n) * T;
      const float* mu = cache.mean.data() + b * H + n * d;
      const float* sd = cache.stddev.data() + b * H + n * d;
      const float* go_mu = grad_out.ptr() + b * 2 * H + n * 2 * d;
      const float* go_sd = go_mu + d;
      // v = sum w x^2 - mu^2, so the gradient reaching mu through v is -2 mu gv.
      for (std::size_t i = 0; i < d; ++i) {
        gv[i] = go_sd[i] / (2.0f * sd[i]);
        gmu[i] = go_mu[i] - 2.0f * mu[i] * gv[i];
      }
      float wdot = 0.0f;
      for (std::size_t t = 0; t < T; ++t) {
        const float* x = hid.data() + t * H + n * d;
        float s = 0.0f;
        for (std::size_t i = 0; i < d; ++i) s += x[i] * gmu[i] + x[i] * x[i] * gv[i];
        gw[t] = s;
        wdot += w[t] * s;
      }
      const float* a = p.attention.ptr() + n * d;
      float* ga = g.attention.ptr() + n * d;
      for (std::size_t t = 0; t < T; ++t) {
        const float gs = w[t] * (gw[t] - wdot);
        const float* x = hid.data() + t * H + n * d;
        float* gx = ghid.data() + t * H + n * d;
        for (std::size_t i = 0; i < d; ++i) {
          gx[i] += w[t] * gmu[i] + 2.0f * w[t] * x[i] * gv[i] + gs * a[i];
          ga[i] += gs * x[i];
        }
      }
    }
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t f = 0; f < F; ++f) {
          g.input.at(b, c, t, f) = ghid[t * H + c * F + f];
        }
      }
    }
  }
  return g;
}

/// Un-normalized embedding: proj(pool(y)). [B, C, T, F] -> [B, D_0].
inline Tensor Embed(const Tensor& y, const EmbeddingHead& head) {
  return Linear(AttentionPool(y, head.pool), head.proj.weight, head.proj.bias);
}

/// ||A A^T - I||_F^2 with A's rows the per-head scoring vectors.
inline double Penalization(const PoolingParams& p) {
  const std::size_t N = p.heads(), d = p.head_dim();
  if (N == 0 || d == 0) Fail(ErrorKind::kValue, "empty attention matrix");
  double total = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = 0; j < N; ++j) {
      double g = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        g += static_cast<double>(p.attention[i * d + k]) * p.attention[j * d + k];
      }
      const double m = g - (i == j ? 1.0 : 0.0);
      total += m * m;
    }
  }
  return total;
}

/// d/dA ||A A^T - I||^2 = 4 (A A^T - I) A.
inline Tensor PenalizationGrad(const PoolingParams& p) {
  const std::size_t N = p.heads(), d = p.head_dim();
  std::vector<double> m(N * N);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = 0; j < N; ++j) {
      double g = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        g += static_cast<double>(p.attention[i * d + k]) * p.attention[j * d + k];
      }
      m[i * N + j] = g - (i == j ? 1.0 : 0.0);
    }
  }
  Tensor grad(p.attention.shape);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t k = 0; k < d; ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < N; ++j) s += m[i * N + j] * p.attention[j * d + k];
      grad[i * d + k] = static_cast<float>(4.0 * s);
    }
  }
  return grad;
}

namespace ag {

inline VarId AttentionPool(Tape& tape, VarId y, VarId attention) {
  auto cache = std::make_shared<PoolCache>();
  PoolingParams p{tape.value(attention)};
  Tensor out = sepspot::AttentionPool(tape.value(y), p, cache.get());
  const VarId inputs[] = {y, attention};
  return tape.Record(std::move(out), inputs,
                     [y, attention, cache](Tape& t, const Tensor& g) {
                       PoolingParams pp{t.value(attention)};
                       PoolGrads pg =
                           AttentionPoolBackward(t.value(y), pp, *cache, g);
                       t.AccumulateGrad(y, pg.input);
                       t.AccumulateGrad(attention, pg.attention);
                     });
}

inline VarId Penalization(Tape& tape, VarId attention) {
  PoolingParams p{tape.value(attention)};
  const VarId inputs[] = {attention};
  return tape.Record(
      Tensor({1}, static_cast<float>(sepspot::Penalization(p))), inputs,
      [attention](Tape& t, const Tensor& g) {
        Tensor grad = PenalizationGrad(PoolingParams{t.value(attention)});
        for (float& v : grad.data) v *= g[0];
        t.AccumulateGrad(attention, grad);
      });
}

}  // namespace ag
}  // namespace sepspot
