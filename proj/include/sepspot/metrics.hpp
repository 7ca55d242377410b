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

// Detection scoring: center-distance overlap, label-area overlap ratio,
// one-to-one matching, precision / recall / F1 and mean average overlap.

#pragma once

#include <iomanip>
#include <set>
#include <sstream>

#include "sepspot/records.hpp"

namespace sepspot {

struct EvalConfig {
  /// Center-distance threshold in frames; unset means half the label length.
  std::optional<double> t;

  double ThresholdFor(const LabelSpan& l) const {
    return t ? *t : 0.5 * static_cast<double>(l.length());
  }
};

inline double Center(std::size_t start, std::size_t end) {
  return 0.5 * (static_cast<double>(start) + static_cast<double>(end));
}

/// |center(l) - center(p)| <= t.
inline bool Overlap(const LabelSpan& l, const Detection& p, const EvalConfig& cfg) {
  return std::fabs(Center(l.start_frame, l.end_frame) -
                   Center(p.start_frame, p.end_frame)) <= cfg.ThresholdFor(l);
}

/// |l intersect p| / |l|.
inline double OverlapRatio(const LabelSpan& l, const Detection& p) {
  const std::size_t lo = std::max(l.start_frame, p.start_frame);
  const std::size_t hi = std::min(l.end_frame, p.end_frame);
  if (hi <= lo) return 0.0;
  return static_cast<double>(hi - lo) / static_cast<double>(l.length());
}

struct WordCounts {
  std::size_t tp = 0, fp = 0, fn = 0;
};

struct EvalReport {
  std::size_t tp = 0, fp = 0, fn = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0, mao = 0.0;
  std::map<int, WordCounts> per_word;
  std::optional<double> threshold;  // set by sweeps
};

namespace detail {

inline double SafeDiv(double a, double b) { return b > 0.0 ? a / b : 0.0; }

inline void Finish(EvalReport& r, std::size_t labels, double ratio_sum) {
  r.precision = SafeDiv(double(r.tp), double(r.tp + r.fp));
  r.recall = SafeDiv(double(r.tp), double(r.tp + r.fn));
  r.f1 = SafeDiv(2.0 * r.precision * r.recall, r.precision + r.recall);
  r.mao = SafeDiv(ratio_sum, double(labels));
}

inline auto DetKey(const Detection& d) {
  return std::tie(d.audio_id, d.word_id, d.start_frame, d.end_frame);
}

inline auto LabelKey(const LabelSpan& l) {
  return std::tie(l.audio_id, l.word_id, l.start_frame, l.end_frame);
}

}  // namespace detail

/// Pairs a detection with a label when both agree on audio and word, the
/// centers overlap and the intersection is non-empty. Pairs are accepted
/// greedily by overlap ratio (ties: earlier detection start), each label and
/// detection used at most once. Accepted pairs are TP, leftover labels FN and
/// leftover detections FP.
inline EvalReport Match(const std::vector<LabelSpan>& labels,
                        const std::vector<Detection>& dets, const EvalConfig& cfg = {}) {
  if (cfg.t && !(*cfg.t >= 0.0)) Fail(ErrorKind::kConfig, "overlap t must be >= 0");
  {
    std::set<std::tuple<std::string, int, std::size_t, std::size_t>> seen;
    for (const auto& d : dets) {
      if (!seen.emplace(d.audio_id, d.word_id, d.start_frame, d.end_frame).second) {
        Fail(ErrorKind::kValue, "duplicate detection ", d.audio_id, " word ",
             d.word_id, " [", d.start_frame, ",", d.end_frame, ")");
      }
    }
  }
  struct Pair {
    double ratio;
    std::size_t label, det;
  };
  std::vector<Pair> pairs;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::size_t j = 0; j < dets.size(); ++j) {
      const LabelSpan& l = labels[i];
      const Detection& d = dets[j];
      if (l.audio_id != d.audio_id || l.word_id != d.word_id) continue;
      const double r = OverlapRatio(l, d);
      if (r > 0.0 && Overlap(l, d, cfg)) pairs.push_back({r, i, j});
    }
  }
  std::sort(pairs.begin(), pairs.end(), [&](const Pair& a, const Pair& b) {
    if (a.ratio != b.ratio) return a.ratio > b.ratio;
    const Detection &da = dets[a.det], &db = dets[b.det];
    if (da.start_frame != db.start_frame) return da.start_frame < db.start_frame;
    if (detail::DetKey(da) != detail::DetKey(db)) return detail::DetKey(da) < detail::DetKey(db);
    return detail::LabelKey(labels[a.label]) < detail::LabelKey(labels[b.label]);
  });

  EvalReport r;
  std::vector<char> label_used(labels.size(), 0), det_used(dets.size(), 0);
  double ratio_sum = 0.0;
  for (const Pair& p : pairs) {
    if (label_used[p.label] || det_used[p.det]) continue;
    label_used[p.label] = det_used[p.det] = 1;
    ratio_sum += p.ratio;
    ++r.tp;
    ++r.per_word[labels[p.label].word_id].tp;
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!label_used[i]) {
      ++r.fn;
      ++r.per_word[labels[i].word_id].fn;
    }
  }
  for (std::size_t j = 0; j < dets.size(); ++j) {
    if (!det_used[j]) {
      ++r.fp;
      ++r.per_word[dets[j].word_id].fp;
    }
  }
  detail::Finish(r, labels.size(), ratio_sum);
  return r;
}

/// One report per threshold over the detections scoring above it.
inline std::vector<EvalReport> SweepThresholds(const std::vector<LabelSpan>& labels,
                                               const std::vector<Detection>& dets,
                                               std::span<const double> thresholds,
                                               const EvalConfig& cfg = {}) {
  std::vector<EvalReport> out;
  for (double thr : thresholds) {
    std::vector<Detection> kept;
    for (const auto& d : dets) {
      if (d.score > thr) kept.push_back(d);
    }
    EvalReport r = Match(labels, kept, cfg);
    r.threshold = thr;
    out.push_back(std::move(r));
  }
  return out;
}

/// Highest F1; ties go to the earlier report.
inline EvalReport BestByF1(const std::vector<EvalReport>& reports) {
  if (reports.empty()) Fail(ErrorKind::kValue, "no reports to choose from");
  const EvalReport* best = &reports[0];
  for (const auto& r : reports) {
    if (r.f1 > best->f1) best = &r;
  }
  return *best;
}

inline nlohmann::json ToJson(const EvalReport& r) {
  nlohmann::json words = nlohmann::json::array();
  for (const auto& [w, c] : r.per_word) {
    words.push_back({{"word_id", w}, {"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}});
  }
  nlohmann::json j = {{"tp", r.tp},         {"fp", r.fp},
                      {"fn", r.fn},         {"precision", r.precision},
                      {"recall", r.recall}, {"f1", r.f1},
                      {"mao", r.mao},       {"per_word", words}};
  j["threshold"] = r.threshold ? nlohmann::json(*r.threshold) : nlohmann::json();
  return j;
}

/// Fixed-width table, one line per system:
///   system  threshold  precision  recall  F1  MAO
inline std::string FormatTable(
    const std::vector<std::pair<std::string, EvalReport>>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(16) << "system" << std::right << std::setw(10)
     << "threshold" << std::setw(11) << "precision" << std::setw(8) << "recall"
     << std::setw(8) << "F1" << std::setw(8) << "MAO" << '\n';
  os << std::fixed;
  for (const auto& [name, r] : rows) {
    os << std::left << std::setw(16) << name << std::right << std::setw(10);
    if (r.threshold) {
      os << std::setprecision(3) << *r.threshold;
    } else {
      os << "-";
    }
    os << std::setprecision(1) << std::setw(11) << 100.0 * r.precision
       << std::setw(8) << 100.0 * r.recall << std::setw(8) << 100.0 * r.f1
       << std::setw(8) << 100.0 * r.mao << '\n';
  }
  return os.str();
}

}  // namespace sepspot
