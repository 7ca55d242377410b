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

// Log-mel filterbank front end, temporal context padding, and the on-disk
// feature formats (16-bit PCM WAV in, f32 blob + JSON sidecar out).

#pragma once

#include <fftw3.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numbers>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include "sepspot/tensor.hpp"

namespace sepspot {

static_assert(std::endian::native == std::endian::little,
              "blob formats assume a little-endian host");

struct Waveform {
  std::vector<float> samples;  // in [-1, 1]
  int sample_rate = 16000;
};

struct FeatureMatrix {
  std::size_t rows = 0;  // frames T
  std::size_t cols = 0;  // bins D_f
  std::vector<float> data;
  float frame_shift_ms = 10.0f;
  float frame_len_ms = 25.0f;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t t, std::size_t d, float fill = 0.0f)
      : rows(t), cols(d), data(t * d, fill) {}

  float& operator()(std::size_t t, std::size_t d) { return data[t * cols + d]; }
  float operator()(std::size_t t, std::size_t d) const {
    return data[t * cols + d];
  }
  const float* row(std::size_t t) const { return data.data() + t * cols; }
  float* row(std::size_t t) { return data.data() + t * cols; }

  /// As a single-channel image [1, 1, T, D].
  Tensor AsImage() const { return Tensor({1, 1, rows, cols}, data); }

  /// Frames [start, end) as a new matrix.
  FeatureMatrix Slice(std::size_t start, std::size_t end) const {
    if (start >= end || end > rows) {
      Fail(ErrorKind::kValue, "feature slice [", start, ",", end,
           ") out of range for ", rows, " frames");
    }
    FeatureMatrix out(end - start, cols);
    out.frame_shift_ms = frame_shift_ms;
    out.frame_len_ms = frame_len_ms;
    std::copy(row(start), row(start) + (end - start) * cols, out.data.begin());
    return out;
  }

  bool operator==(const FeatureMatrix&) const = default;
};

/// A frame interval [start_frame, end_frame) of a source matrix.
struct SegmentRef {
  const FeatureMatrix* source = nullptr;
  std::size_t start_frame = 0;
  std::size_t end_frame = 0;

  std::size_t length() const { return end_frame - start_frame; }
};

struct FbankOptions {
  std::size_t num_bins = 60;
  float frame_len_ms = 25.0f;
  float frame_shift_ms = 10.0f;
  float preemphasis = 0.97f;
  std::size_t fft_size = 512;
  float low_freq = 20.0f;
  float high_freq = 7600.0f;
  float log_floor = 1e-10f;
};

inline double MelScale(double hz) { return 1127.0 * std::log(1.0 + hz / 700.0); }
inline double InverseMelScale(double mel) {
  return 700.0 * (std::exp(mel / 1127.0) - 1.0);
}

/// Center frequency (Hz) of every triangular mel filter.
inline std::vector<double> MelCenterFrequencies(const FbankOptions& opts) {
  const double lo = MelScale(opts.low_freq), hi = MelScale(opts.high_freq);
  const double delta = (hi - lo) / static_cast<double>(opts.num_bins + 1);
  std::vector<double> centers(opts.num_bins);
  for (std::size_t j = 0; j < opts.num_bins; ++j) {
    centers[j] = InverseMelScale(lo + delta * static_cast<double>(j + 1));
  }
  return centers;
}

/// [num_bins][fft_size/2 + 1] triangular weights, built on the mel axis.
inline std::vector<std::vector<float>> MelFilterbank(const FbankOptions& opts,
                                                     int sample_rate) {
  const std::size_t nfreq = opts.fft_size / 2 + 1;
  const double lo = MelScale(opts.low_freq), hi = MelScale(opts.high_freq);
  const double delta = (hi - lo) / static_cast<double>(opts.num_bins + 1);
  std::vector<std::vector<float>> bank(opts.num_bins,
                                       std::vector<float>(nfreq, 0.0f));
  for (std::size_t j = 0; j < opts.num_bins; ++j) {
    const double left = lo + delta * j;
    const double center = left + delta;
    const double right = center + delta;
    for (std::size_t k = 0; k < nfreq; ++k) {
      const double hz = static_cast<double>(k) * sample_rate /
                        static_cast<double>(opts.fft_size);
      const double mel = MelScale(hz);
      double w = 0.0;
      if (mel > left && mel <= center) {
        w = (mel - left) / (center - left);
      } else if (mel > center && mel < right) {
        w = (right - mel) / (right - center);
      }
      bank[j][k] = static_cast<float>(w);
    }
  }
  return bank;
}

inline FeatureMatrix ComputeFbank(const Waveform& wave,
                                  const FbankOptions& opts = {}) {
  if (wave.sample_rate <= 0) {
    Fail(ErrorKind::kValue, "sample rate must be positive");
  }
  const auto frame_len = static_cast<std::size_t>(
      std::lround(opts.frame_len_ms * wave.sample_rate / 1000.0));
  const auto frame_shift = static_cast<std::size_t>(
      std::lround(opts.frame_shift_ms * wave.sample_rate / 1000.0));
  if (frame_len == 0 || frame_shift == 0 || frame_len > opts.fft_size) {
    Fail(ErrorKind::kConfig, "frame length ", frame_len,
         " samples does not fit the ", opts.fft_size, "-point FFT");
  }
  if (wave.samples.size() < frame_len) {
    Fail(ErrorKind::kValue, "insufficient samples: ", wave.samples.size(),
         " < one frame of ", frame_len);
  }
  const std::size_t num_frames = (wave.samples.size() - frame_len) / frame_shift + 1;
  const std::size_t nfreq = opts.fft_size / 2 + 1;
  const auto bank = MelFilterbank(opts, wave.sample_rate);

  std::vector<float> window(frame_len);
  for (std::size_t i = 0; i < frame_len; ++i) {
    window[i] = static_cast<float>(
        0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * i / (frame_len - 1)));
  }

  float* in = fftwf_alloc_real(opts.fft_size);
  fftwf_complex* out = fftwf_alloc_complex(nfreq);
  fftwf_plan plan;
  {
    // The FFTW planner is not thread-safe; execution is.
    static std::mutex planner_mutex;
    std::lock_guard<std::mutex> lock(planner_mutex);
    plan = fftwf_plan_dft_r2c_1d(static_cast<int>(opts.fft_size), in, out,
                                 FFTW_ESTIMATE);
  }

  FeatureMatrix feats(num_frames, opts.num_bins);
  feats.frame_len_ms = opts.frame_len_ms;
  feats.frame_shift_ms = opts.frame_shift_ms;
  const float floor_log = std::log(opts.log_floor);
  std::vector<float> frame(frame_len), power(nfreq);
  for (std::size_t t = 0; t < num_frames; ++t) {
    const float* src = wave.samples.data() + t * frame_shift;
    for (std::size_t i = frame_len; i-- > 1;) {
      frame[i] = src[i] - opts.preemphasis * src[i - 1];
    }
    frame[0] = src[0] - opts.preemphasis * src[0];
    std::fill(in, in + opts.fft_size, 0.0f);
    for (std::size_t i = 0; i < frame_len; ++i) in[i] = frame[i] * window[i];
    fftwf_execute(plan);
    for (std::size_t k = 0; k < nfreq; ++k) {
      power[k] = out[k][0] * out[k][0] + out[k][1] * out[k][1];
    }
    for (std::size_t j = 0; j < opts.num_bins; ++j) {
      double e = 0.0;
      for (std::size_t k = 0; k < nfreq; ++k) e += bank[j][k] * power[k];
      feats(t, j) = e > opts.log_floor ? static_cast<float>(std::log(e))
                                       : floor_log;
    }
  }
  {
    static std::mutex destroy_mutex;
    std::lock_guard<std::mutex> lock(destroy_mutex);
    fftwf_destroy_plan(plan);
  }
  fftwf_free(in);
  fftwf_free(out);
  return feats;
}

/// Pads (or center-crops) a segment to exactly `target` frames. Context is
/// taken from the source where it exists, otherwise the nearest real frame
/// is replicated. The left side gets the extra frame on odd remainders.
inline FeatureMatrix TemporalContextPad(const SegmentRef& seg,
                                        std::size_t target) {
  if (seg.source == nullptr || seg.start_frame >= seg.end_frame) {
    Fail(ErrorKind::kValue, "empty segment [", seg.start_frame, ",",
         seg.end_frame, ")");
  }
  const FeatureMatrix& src = *seg.source;
  if (seg.end_frame > src.rows) {
    Fail(ErrorKind::kValue, "segment end ", seg.end_frame,
         " past source length ", src.rows);
  }
  if (target == 0) Fail(ErrorKind::kConfig, "target frame count must be > 0");

  std::size_t start = seg.start_frame;
  std::size_t len = seg.length();
  if (len > target) {
    start += (len - target) / 2;
    len = target;
  }
  const std::size_t total = target - len;
  const std::size_t left = (total + 1) / 2;

  FeatureMatrix out(target, src.cols);
  out.frame_shift_ms = src.frame_shift_ms;
  out.frame_len_ms = src.frame_len_ms;
  const auto last = static_cast<std::ptrdiff_t>(src.rows) - 1;
  for (std::size_t i = 0; i < target; ++i) {
    std::ptrdiff_t s = static_cast<std::ptrdiff_t>(start) -
                       static_cast<std::ptrdiff_t>(left) +
                       static_cast<std::ptrdiff_t>(i);
    s = std::clamp<std::ptrdiff_t>(s, 0, last);
    std::copy(src.row(static_cast<std::size_t>(s)),
              src.row(static_cast<std::size_t>(s)) + src.cols, out.row(i));
  }
  return out;
}

inline FeatureMatrix TemporalContextPad(const FeatureMatrix& whole,
                                        std::size_t target) {
  return TemporalContextPad(SegmentRef{&whole, 0, whole.rows}, target);
}

// ---------------------------------------------------------------------------
// File formats

inline std::vector<char> ReadFileBytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) Fail(ErrorKind::kIo, "cannot open ", path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

inline nlohmann::json ReadJsonFile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) Fail(ErrorKind::kIo, "cannot open ", path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorKind::kIo, "malformed JSON in ", path.string(), ": ", e.what());
  }
}

inline void WriteJsonFile(const std::filesystem::path& path,
                          const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) Fail(ErrorKind::kIo, "cannot write ", path.string());
  out << j.dump(2) << '\n';
}

inline void WriteF32Blob(const std::filesystem::path& path,
                         std::span<const float> values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) Fail(ErrorKind::kIo, "cannot write ", path.string());
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size_bytes()));
}

inline std::vector<float> ReadF32Blob(const std::filesystem::path& path) {
  const auto bytes = ReadFileBytes(path);
  if (bytes.size() % sizeof(float) != 0) {
    Fail(ErrorKind::kIo, path.string(), " is not a whole number of f32 values");
  }
  std::vector<float> values(bytes.size() / sizeof(float));
  std::memcpy(values.data(), bytes.data(), bytes.size());
  return values;
}

/// Writes `<stem>.f32` and `<stem>.json`.
inline void WriteFeatures(const std::filesystem::path& stem,
                          const FeatureMatrix& m) {
  auto blob = stem;
  blob += ".f32";
  auto side = stem;
  side += ".json";
  WriteF32Blob(blob, m.data);
  WriteJsonFile(side, {{"rows", m.rows},
                       {"cols", m.cols},
                       {"frame_shift_ms", m.frame_shift_ms},
                       {"frame_len_ms", m.frame_len_ms}});
}

inline FeatureMatrix ReadFeatures(const std::filesystem::path& stem) {
  auto blob = stem;
  blob += ".f32";
  auto side = stem;
  side += ".json";
  const auto meta = ReadJsonFile(side);
  FeatureMatrix m;
  try {
    m.rows = meta.at("rows").get<std::size_t>();
    m.cols = meta.at("cols").get<std::size_t>();
    m.frame_shift_ms = meta.at("frame_shift_ms").get<float>();
    m.frame_len_ms = meta.at("frame_len_ms").get<float>();
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorKind::kIo, "bad feature sidecar ", side.string(), ": ",
         e.what());
  }
  m.data = ReadF32Blob(blob);
  if (m.data.size() != m.rows * m.cols) {
    Fail(ErrorKind::kIo, blob.string(), " holds ", m.data.size(),
         " values, sidecar says ", m.rows, "x", m.cols);
  }
  return m;
}

/// Reads a mono 16-bit PCM RIFF/WAVE file.
inline Waveform ReadWav(const std::filesystem::path& path) {
  const auto bytes = ReadFileBytes(path);
  auto u32 = [&](std::size_t off) {
    std::uint32_t v;
    std::memcpy(&v, bytes.data() + off, 4);
    return v;
  };
  auto u16 = [&](std::size_t off) {
    std::uint16_t v;
    std::memcpy(&v, bytes.data() + off, 2);
    return v;
  };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    Fail(ErrorKind::kIo, path.string(), " is not a RIFF/WAVE file");
  }
  Waveform w;
  bool have_fmt = false;
  std::size_t off = 12;
  while (off + 8 <= bytes.size()) {
    const std::uint32_t size = u32(off + 4);
    const std::size_t body = off + 8;
    if (body + size > bytes.size()) break;
    if (std::memcmp(bytes.data() + off, "fmt ", 4) == 0) {
      if (size < 16 || u16(body) != 1 || u16(body + 2) != 1 ||
          u16(body + 14) != 16) {
        Fail(ErrorKind::kIo, path.string(),
             ": only mono 16-bit PCM WAV is supported");
      }
      w.sample_rate = static_cast<int>(u32(body + 4));
      have_fmt = true;
    } else if (std::memcmp(bytes.data() + off, "data", 4) == 0) {
      if (!have_fmt) Fail(ErrorKind::kIo, path.string(), ": data before fmt");
      const std::size_t n = size / 2;
      w.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        std::int16_t s;
        std::memcpy(&s, bytes.data() + body + 2 * i, 2);
        w.samples[i] = static_cast<float>(s) / 32768.0f;
      }
      return w;
    }
    off = body + size + (size & 1u);
  }
  Fail(ErrorKind::kIo, path.string(), ": no data chunk");
}

inline void WriteWav(const std::filesystem::path& path, const Waveform& w) {
  std::ofstream out(path, std::ios::binary);
  if (!out) Fail(ErrorKind::kIo, "cannot write ", path.string());
  auto put32 = [&](std::uint32_t v) { out.write(reinterpret_cast<char*>(&v), 4); };
  auto put16 = [&](std::uint16_t v) { out.write(reinterpret_cast<char*>(&v), 2); };
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  out.write("RIFF", 4);
  put32(36 + data_bytes);
  out.write("WAVEfmt ", 8);
  put32(16);
  put16(1);
  put16(1);
  put32(static_cast<std::uint32_t>(w.sample_rate));
  put32(static_cast<std::uint32_t>(w.sample_rate) * 2);
  put16(2);
  put16(16);
  out.write("data", 4);
  put32(data_bytes);
  for (float s : w.samples) {
    const float c = std::clamp(s, -1.0f, 1.0f);
    put16(static_cast<std::uint16_t>(
        static_cast<std::int16_t>(std::lround(c * 32767.0f))));
  }
}

}  // namespace sepspot
