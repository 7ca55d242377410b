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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sepspot {

enum class ErrorKind {
  kShape,
  kWindowUnderflow,
  kConfig,
  kIo,
  kNumeric,
  kValue,
};

inline const char* ToString(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kWindowUnderflow: return "window underflow";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kValue: return "value";
  }
  return "unknown";
}

/// Every failure in the library surfaces as an Error carrying its category.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

namespace detail {
inline void Concat(std::ostringstream&) {}
template <typename T, typename... Rest>
void Concat(std::ostringstream& oss, T&& head, Rest&&... rest) {
  oss << std::forward<T>(head);
  Concat(oss, std::forward<Rest>(rest)...);
}
}  // namespace detail

template <typename... Args>
[[noreturn]] void Fail(ErrorKind kind, Args&&... args) {
  std::ostringstream oss;
  detail::Concat(oss, std::forward<Args>(args)...);
  throw Error(kind, oss.str());
}

using Shape = std::vector<std::size_t>;

inline std::string ShapeString(const Shape& shape) {
  std::ostringstream oss;
  oss << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) oss << ',';
    oss << shape[i];
  }
  oss << ']';
  return oss.str();
}

inline std::size_t NumElements(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

/// Dense row-major f32 tensor.
struct Tensor {
  Shape shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(Shape s, float fill = 0.0f)
      : shape(std::move(s)), data(NumElements(shape), fill) {}
  Tensor(Shape s, std::vector<float> values)
      : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != NumElements(shape)) {
      Fail(ErrorKind::kShape, "tensor data length ", data.size(),
           " does not match shape ", ShapeString(shape));
    }
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t axis) const { return shape.at(axis); }
  bool empty() const { return data.empty(); }

  float* ptr() { return data.data(); }
  const float* ptr() const { return data.data(); }
  std::span<float> span() { return data; }
  std::span<const float> span() const { return data; }

  float& operator[](std::size_t i) { return data[i]; }
  float operator[](std::size_t i) const { return data[i]; }

  // 4-D accessor for [B, C, T, F] maps.
  float& at(std::size_t b, std::size_t c, std::size_t t, std::size_t f) {
    return data[((b * shape[1] + c) * shape[2] + t) * shape[3] + f];
  }
  float at(std::size_t b, std::size_t c, std::size_t t, std::size_t f) const {
    return data[((b * shape[1] + c) * shape[2] + t) * shape[3] + f];
  }

  bool AllFinite() const {
    for (float v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  bool operator==(const Tensor& other) const = default;
};

inline Tensor Zeros(Shape shape) { return Tensor(std::move(shape), 0.0f); }

inline Tensor RandomNormal(Shape shape, std::mt19937_64& rng,
                           float stddev = 1.0f, float mean = 0.0f) {
  Tensor t(std::move(shape));
  std::normal_distribution<float> dist(mean, stddev);
  for (float& v : t.data) v = dist(rng);
  return t;
}

inline Tensor RandomUniform(Shape shape, std::mt19937_64& rng, float lo,
                            float hi) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<float> dist(lo, hi);
  for (float& v : t.data) v = dist(rng);
  return t;
}

inline float MaxAbsDiff(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) {
    Fail(ErrorKind::kShape, "cannot compare ", ShapeString(a.shape), " with ",
         ShapeString(b.shape));
  }
  float worst = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::fabs(a[i] - b[i]));
  }
  return worst;
}

/// Copies frames [t0, t0 + len) of a [B, C, T, F] map.
inline Tensor SliceTime(const Tensor& x, std::size_t t0, std::size_t len) {
  if (x.rank() != 4 || t0 + len > x.dim(2)) {
    Fail(ErrorKind::kShape, "time slice [", t0, ",", t0 + len,
         ") out of range for ", ShapeString(x.shape));
  }
  const std::size_t B = x.dim(0), C = x.dim(1), T = x.dim(2), F = x.dim(3);
  Tensor out({B, C, len, F});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const float* src = x.ptr() + ((b * C + c) * T + t0) * F;
      float* dst = out.ptr() + (b * C + c) * len * F;
      std::copy(src, src + len * F, dst);
    }
  }
  return out;
}

}  // namespace sepspot
