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

// Test-only reference implementations. Nothing here calls the library's
// kernels: each oracle is a direct transcription of the defining formula,
// accumulated in double.

#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "sepspot/tensor.hpp"

namespace sepspot::testing {

/// Direct convolution sum with explicit zero padding.
inline Tensor NaiveConv2d(const Tensor& x, std::size_t cout, std::size_t kt,
                          std::size_t kf, std::size_t st, std::size_t sf,
                          bool pad_t, bool pad_f, const Tensor& w,
                          const Tensor& bias) {
  const std::size_t B = x.dim(0), C = x.dim(1), T = x.dim(2), F = x.dim(3);
  const long pt = pad_t ? static_cast<long>(kt / 2) : 0;
  const long pf = pad_f ? static_cast<long>(kf / 2) : 0;
  const std::size_t To = pad_t ? (T + st - 1) / st : (T - kt) / st + 1;
  const std::size_t Fo = pad_f ? (F + sf - 1) / sf : (F - kf) / sf + 1;
  Tensor y({B, cout, To, Fo});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t t = 0; t < To; ++t)
        for (std::size_t f = 0; f < Fo; ++f) {
          double s = bias.empty() ? 0.0 : bias[o];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < kt; ++i)
              for (std::size_t j = 0; j < kf; ++j) {
                const long ti = static_cast<long>(t * st + i) - pt;
                const long fi = static_cast<long>(f * sf + j) - pf;
                if (ti < 0 || fi < 0 || ti >= static_cast<long>(T) ||
                    fi >= static_cast<long>(F))
                  continue;
                s += static_cast<double>(w[((o * C + c) * kt + i) * kf + j]) *
                     x.at(b, c, static_cast<std::size_t>(ti),
                          static_cast<std::size_t>(fi));
              }
          y.at(b, o, t, f) = static_cast<float>(s);
        }
  return y;
}

/// Central finite differences of a scalar function w.r.t. one tensor.
inline Tensor NumericGrad(const std::function<double()>& loss, Tensor& param,
                          double step = 1e-3) {
  Tensor g(param.shape);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const float orig = param[i];
    param[i] = static_cast<float>(orig + step);
    const double up = loss();
    param[i] = static_cast<float>(orig - step);
    const double down = loss();
    param[i] = orig;
    g[i] = static_cast<float>((up - down) / (2.0 * step));
  }
  return g;
}

/// Norm-wise relative error ||a - b|| / max(||a||, ||b||).
inline double RelativeError(const Tensor& a, const Tensor& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (static_cast<double>(a[i]) - b[i]) * (static_cast<double>(a[i]) - b[i]);
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom == 0.0 ? std::sqrt(diff) : std::sqrt(diff) / denom;
}

/// Fixed random projection used to turn tensor outputs into scalar losses.
inline Tensor Probe(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return RandomNormal(shape, rng);
}

inline double Dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

}  // namespace sepspot::testing
