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

// Synthetic keyword corpus in the fbank domain.
//
// Every word is a smooth random spectro-temporal surface (a sum of Gaussian
// bumps over normalized time and mel bin). An instance warps its duration,
// jitters its amplitude and sits in Gaussian noise. Filler between keywords
// is built from distractor words that never appear as labels.

#pragma once

#include "sepspot/model.hpp"
#include "sepspot/parallel.hpp"
#include "sepspot/records.hpp"

namespace sepspot {

struct SynthCorpusSpec {
  std::size_t classes = 10;            // N
  std::size_t samples_per_class = 50;  // r_i
  std::size_t enroll_per_class = 5;
  std::size_t test_audios = 20;
  std::size_t keywords_per_audio = 5;
  std::size_t distractors = 20;
  std::size_t bins = 60;
  std::size_t min_frames = 100;
  std::size_t max_frames = 150;
  float noise = 0.5f;
  std::uint64_t seed = 7;

  void Validate() const {
    if (classes < 2) Fail(ErrorKind::kConfig, "synthetic corpus needs N >= 2 classes");
    if (samples_per_class < 2) {
      Fail(ErrorKind::kConfig, "synthetic corpus needs >= 2 samples per class");
    }
    if (min_frames < 4 || min_frames > max_frames) {
      Fail(ErrorKind::kConfig, "keyword duration range [", min_frames, ",",
           max_frames, "] is invalid");
    }
    if (bins == 0) Fail(ErrorKind::kConfig, "bins must be > 0");
    if (!(noise >= 0.0f)) Fail(ErrorKind::kConfig, "noise must be >= 0");
  }
};

struct SynthCorpus {
  Corpus train;   // one keyword per utterance, r_i utterances per class
  Corpus enroll;  // query templates
  Corpus test;    // long utterances with planted keywords
};

namespace detail {

inline std::uint64_t SplitMix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::mt19937_64 SubRng(std::uint64_t seed, std::uint64_t stream,
                              std::uint64_t index) {
  return std::mt19937_64(SplitMix(SplitMix(seed ^ SplitMix(stream)) + index));
}

struct Bump {
  double u, f, su, sf, amp;
};

struct WordShape {
  std::size_t frames;
  std::vector<Bump> bumps;
};

inline WordShape RandomWord(const SynthCorpusSpec& s, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> len(s.min_frames, s.max_frames);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  WordShape w;
  w.frames = len(rng);
  const double D = static_cast<double>(s.bins);
  for (int k = 0; k < 8; ++k) {
    const double sign = unit(rng) < 0.5 ? -1.0 : 1.0;
    w.bumps.push_back({unit(rng), unit(rng) * D, 0.05 + 0.1 * unit(rng),
                       D * (0.03 + 0.07 * unit(rng)),
                       sign * (1.5 + 2.0 * unit(rng))});
  }
  return w;
}

/// Adds a warped, jittered instance of `w` at row `at`; returns its length.
inline std::size_t Render(const WordShape& w, FeatureMatrix& m, std::size_t at,
                          std::size_t length, double amp) {
  for (std::size_t t = 0; t < length && at + t < m.rows; ++t) {
    const double u = (t + 0.5) / static_cast<double>(length);
    for (std::size_t d = 0; d < m.cols; ++d) {
      double v = 0.0;
      for (const Bump& b : w.bumps) {
        const double du = (u - b.u) / b.su, df = (d - b.f) / b.sf;
        v += b.amp * std::exp(-0.5 * (du * du + df * df));
      }
      m(at + t, d) += static_cast<float>(amp * v);
    }
  }
  return length;
}

inline std::size_t InstanceLength(const WordShape& w, const SynthCorpusSpec& s,
                                  std::mt19937_64& rng) {
  std::uniform_real_distribution<double> warp(0.85, 1.15);
  const auto n = static_cast<std::size_t>(std::lround(w.frames * warp(rng)));
  return std::clamp(n, s.min_frames, s.max_frames);
}

/// Builds an utterance: filler, then each keyword followed by filler.
struct Layout {
  std::vector<std::pair<int, std::size_t>> keywords;  // (word, gap before)
  std::size_t tail = 0;
};

inline FeatureMatrix Compose(const SynthCorpusSpec& s,
                             const std::vector<WordShape>& words,
                             const std::vector<WordShape>& fillers,
                             const Layout& layout, std::mt19937_64& rng,
                             const std::string& id,
                             std::vector<LabelSpan>* labels) {
  std::uniform_real_distribution<double> amp(0.8, 1.2);
  std::uniform_int_distribution<std::size_t> silence(5, 25);
  std::uniform_int_distribution<std::size_t> pick(0, fillers.size() - 1);

  // Decide every event first so the total length is known.
  struct Event {
    const WordShape* w;
    std::size_t at, len;
    double amp;
    int label;
  };
  std::vector<Event> events;
  std::size_t cursor = 0;
  auto fill = [&](std::size_t gap) {
    const std::size_t end = cursor + gap;
    cursor += silence(rng);
    while (cursor < end) {
      const WordShape& f = fillers[pick(rng)];
      const std::size_t len = InstanceLength(f, s, rng);
      if (cursor + len + 2 > end) break;
      events.push_back({&f, cursor, len, amp(rng), -1});
      cursor += len + silence(rng);
    }
    cursor = end;
  };
  for (const auto& [word, gap] : layout.keywords) {
    fill(gap);
    const WordShape& w = words[static_cast<std::size_t>(word)];
    const std::size_t len = InstanceLength(w, s, rng);
    events.push_back({&w, cursor, len, amp(rng), word});
    cursor += len;
  }
  fill(layout.tail);

  FeatureMatrix m(cursor, s.bins);
  std::normal_distribution<float> noise(0.0f, s.noise);
  for (float& v : m.data) v = noise(rng);
  for (const Event& e : events) {
    Render(*e.w, m, e.at, e.len, e.amp);
    if (e.label >= 0) labels->push_back({id, e.label, e.at, e.at + e.len});
  }
  return m;
}

}  // namespace detail

/// Deterministic in spec.seed; utterances are generated in parallel with
/// per-utterance seeds.
inline SynthCorpus Synthesize(const SynthCorpusSpec& s) {
  s.Validate();
  std::mt19937_64 vocab = detail::SubRng(s.seed, 0, 0);
  std::vector<detail::WordShape> words, fillers;
  for (std::size_t i = 0; i < s.classes; ++i) words.push_back(detail::RandomWord(s, vocab));
  for (std::size_t i = 0; i < std::max<std::size_t>(s.distractors, 1); ++i) {
    fillers.push_back(detail::RandomWord(s, vocab));
  }

  auto single = [&](std::uint64_t stream, std::size_t per_class, const char* prefix) {
    const std::size_t n = s.classes * per_class;
    std::vector<FeatureMatrix> mats(n);
    std::vector<std::vector<LabelSpan>> labels(n);
    std::vector<std::string> ids(n);
    ParallelFor(n, [&](std::size_t i) {
      auto rng = detail::SubRng(s.seed, stream, i);
      std::uniform_int_distribution<std::size_t> ctx(40, 120);
      detail::Layout layout;
      layout.keywords.push_back({static_cast<int>(i % s.classes), ctx(rng)});
      layout.tail = ctx(rng);
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%s%05zu", prefix, i);
      ids[i] = buf;
      mats[i] = detail::Compose(s, words, fillers, layout, rng, ids[i], &labels[i]);
    });
    Corpus c;
    for (std::size_t i = 0; i < n; ++i) {
      c.audios.emplace(ids[i], std::move(mats[i]));
      c.labels.insert(c.labels.end(), labels[i].begin(), labels[i].end());
    }
    return c;
  };

  SynthCorpus out;
  out.train = single(1, s.samples_per_class, "train");
  out.enroll = single(2, s.enroll_per_class, "enroll");

  std::vector<FeatureMatrix> mats(s.test_audios);
  std::vector<std::vector<LabelSpan>> labels(s.test_audios);
  std::vector<std::string> ids(s.test_audios);
  ParallelFor(s.test_audios, [&](std::size_t i) {
    auto rng = detail::SubRng(s.seed, 3, i);
    std::uniform_int_distribution<std::size_t> gap(100, 200);
    std::uniform_int_distribution<int> word(0, static_cast<int>(s.classes) - 1);
    detail::Layout layout;
    for (std::size_t k = 0; k < s.keywords_per_audio; ++k) {
      layout.keywords.push_back({word(rng), gap(rng)});
    }
    layout.tail = gap(rng);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "test%05zu", i);
    ids[i] = buf;
    mats[i] = detail::Compose(s, words, fillers, layout, rng, ids[i], &labels[i]);
  });
  for (std::size_t i = 0; i < s.test_audios; ++i) {
    out.test.audios.emplace(ids[i], std::move(mats[i]));
    out.test.labels.insert(out.test.labels.end(), labels[i].begin(), labels[i].end());
  }
  return out;
}

}  // namespace sepspot
