// src/metrics.cc

// Copyright 2026  The phonalign Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "phonalign/metrics.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <tuple>

#include "json.hpp"

namespace phonalign {

namespace {

// Absorbs binary rounding of times read from text (e.g. 0.04 s -> 40.000000000000007 ms).
constexpr double kTimeSlackMs = 1e-6;

struct Onset {
  double time_ms;
  int phone;
};

std::vector<Onset> onsets(const SegmentTier &tier, bool skip_initial) {
  std::vector<Onset> out;
  const auto &segs = tier.segments();
  for (std::size_t i = skip_initial ? 1 : 0; i < segs.size(); ++i)
    out.push_back({segs[i].start_ms, segs[i].phone});
  return out;
}

bool candidate(const Onset &r, const Onset &h, double tol) {
  return r.phone == h.phone && std::abs(r.time_ms - h.time_ms) <= tol + kTimeSlackMs;
}

// Closest pairs first; ties broken by the earlier, then the later, onset time.
// The key is symmetric in ref and hyp, so swapping them swaps P and R.
long greedy_hits(const std::vector<Onset> &ref, const std::vector<Onset> &hyp, double tol) {
  struct Pair {
    double gap, lo, hi;
    std::size_t i, j;
  };
  std::vector<Pair> pairs;
  for (std::size_t i = 0; i < ref.size(); ++i)
    for (std::size_t j = 0; j < hyp.size(); ++j)
      if (candidate(ref[i], hyp[j], tol))
        pairs.push_back({std::abs(ref[i].time_ms - hyp[j].time_ms),
                         std::min(ref[i].time_ms, hyp[j].time_ms),
                         std::max(ref[i].time_ms, hyp[j].time_ms), i, j});
  std::sort(pairs.begin(), pairs.end(), [](const Pair &a, const Pair &b) {
    return std::tie(a.gap, a.lo, a.hi) < std::tie(b.gap, b.lo, b.hi);
  });
  std::vector<bool> ref_used(ref.size(), false), hyp_used(hyp.size(), false);
  long hits = 0;
  for (const Pair &p : pairs) {
    if (ref_used[p.i] || hyp_used[p.j]) continue;
    ref_used[p.i] = hyp_used[p.j] = true;
    ++hits;
  }
  return hits;
}

// Kuhn's augmenting-path maximum bipartite matching; tiers are short.
long optimal_hits(const std::vector<Onset> &ref, const std::vector<Onset> &hyp, double tol) {
  std::vector<std::vector<std::size_t>> adj(ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i)
    for (std::size_t j = 0; j < hyp.size(); ++j)
      if (candidate(ref[i], hyp[j], tol)) adj[i].push_back(j);
  std::vector<long> match_of_hyp(hyp.size(), -1);
  long hits = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    std::vector<bool> seen(hyp.size(), false);
    std::function<bool(std::size_t)> augment = [&](std::size_t u) {
      for (std::size_t v : adj[u]) {
        if (seen[v]) continue;
        seen[v] = true;
        if (match_of_hyp[v] < 0 || augment(static_cast<std::size_t>(match_of_hyp[v]))) {
          match_of_hyp[v] = static_cast<long>(u);
          return true;
        }
      }
      return false;
    };
    if (augment(i)) ++hits;
  }
  return hits;
}

void fill_ratios(EvalReport &r) {
  r.precision = r.hyp_count > 0 ? static_cast<double>(r.hits) / static_cast<double>(r.hyp_count) : 0.0;
  r.recall = r.ref_count > 0 ? static_cast<double>(r.hits) / static_cast<double>(r.ref_count) : 0.0;
  const double denom = r.precision + r.recall;
  r.f1 = denom > 0.0 ? 2.0 * r.precision * r.recall / denom : 0.0;
  r.r_value = r_value(r.hits, r.ref_count, r.hyp_count);
}

}  // namespace

double r_value(long hits, long ref_count, long hyp_count) {
  if (ref_count <= 0) return hyp_count == 0 ? 1.0 : 0.0;
  const double recall = static_cast<double>(hits) / static_cast<double>(ref_count);
  const double os = static_cast<double>(hyp_count) / static_cast<double>(ref_count) - 1.0;
  const double r1 = std::sqrt((1.0 - recall) * (1.0 - recall) + os * os);
  const double r2 = (-os + recall - 1.0) / std::sqrt(2.0);
  return std::clamp(1.0 - (std::abs(r1) + std::abs(r2)) / 2.0, 0.0, 1.0);
}

OverlapResult frame_overlap_counts(const SegmentTier &ref, const SegmentTier &hyp,
                                   double grid_ms) {
  const FrameLabels a = segments_to_labels(ref, grid_ms);
  const FrameLabels b = segments_to_labels(hyp, grid_ms);
  OverlapResult out;
  const std::size_t n = std::min(a.size(), b.size());
  out.truncated = a.size() != b.size();
  out.total = static_cast<long>(n);
  for (std::size_t t = 0; t < n; ++t) out.matching += a.labels[t] == b.labels[t];
  return out;
}

double frame_overlap(const SegmentTier &ref, const SegmentTier &hyp, double grid_ms) {
  return frame_overlap_counts(ref, hyp, grid_ms).percent();
}

long count_hits(const SegmentTier &ref, const SegmentTier &hyp, const EvalOptions &opts) {
  const auto r = onsets(ref, opts.skip_initial);
  const auto h = onsets(hyp, opts.skip_initial);
  return opts.optimal_matching ? optimal_hits(r, h, opts.tolerance_ms)
                               : greedy_hits(r, h, opts.tolerance_ms);
}

EvalReport boundary_eval(const SegmentTier &ref, const SegmentTier &hyp, double tolerance_ms) {
  EvalOptions opts;
  opts.tolerance_ms = tolerance_ms;
  return boundary_eval(ref, hyp, opts);
}

EvalReport boundary_eval(const SegmentTier &ref, const SegmentTier &hyp,
                         const EvalOptions &opts) {
  EvalReport r;
  r.tolerance_ms = opts.tolerance_ms;
  r.ref_count = static_cast<long>(onsets(ref, opts.skip_initial).size());
  r.hyp_count = static_cast<long>(onsets(hyp, opts.skip_initial).size());
  r.hits = count_hits(ref, hyp, opts);
  fill_ratios(r);
  r.overlap_pct = frame_overlap(ref, hyp, opts.grid_ms);
  return r;
}

EvalReport boundary_eval(const SegmentTier &ref, const PhoneInventory &ref_inv,
                         const SegmentTier &hyp, const PhoneInventory &hyp_inv,
                         const EvalOptions &opts) {
  if (!(ref_inv == hyp_inv))
    throw Error(ErrorCode::kInventoryMismatch, "reference and hypothesis use different inventories");
  return boundary_eval(ref, hyp, opts);
}

EvalReport batch_eval(const std::vector<std::pair<SegmentTier, SegmentTier>> &pairs,
                      const EvalOptions &opts) {
  if (pairs.empty()) throw Error(ErrorCode::kEmptyInput, "no tier pairs to evaluate");
  EvalReport pooled;
  pooled.tolerance_ms = opts.tolerance_ms;
  long overlap_match = 0;
  long overlap_total = 0;
  EvalReport macro;
  macro.tolerance_ms = opts.tolerance_ms;
  for (const auto &[ref, hyp] : pairs) {
    const EvalReport one = boundary_eval(ref, hyp, opts);
    pooled.hits += one.hits;
    pooled.ref_count += one.ref_count;
    pooled.hyp_count += one.hyp_count;
    const OverlapResult ov = frame_overlap_counts(ref, hyp, opts.grid_ms);
    overlap_match += ov.matching;
    overlap_total += ov.total;
    macro.precision += one.precision;
    macro.recall += one.recall;
    macro.f1 += one.f1;
    macro.r_value += one.r_value;
    macro.overlap_pct += one.overlap_pct;
  }
  if (opts.macro) {
    const auto n = static_cast<double>(pairs.size());
    macro.precision /= n;
    macro.recall /= n;
    macro.f1 /= n;
    macro.r_value /= n;
    macro.overlap_pct /= n;
    macro.hits = pooled.hits;
    macro.ref_count = pooled.ref_count;
    macro.hyp_count = pooled.hyp_count;
    return macro;
  }
  fill_ratios(pooled);
  pooled.overlap_pct = overlap_total == 0 ? 0.0
                                          : 100.0 * static_cast<double>(overlap_match) /
                                                static_cast<double>(overlap_total);
  return pooled;
}

std::string eval_report_to_json(const EvalReport &r) {
  nlohmann::ordered_json doc;
  doc["precision"] = r.precision;
  doc["recall"] = r.recall;
  doc["f1"] = r.f1;
  doc["r_value"] = r.r_value;
  doc["overlap_pct"] = r.overlap_pct;
  doc["hits"] = r.hits;
  doc["ref_count"] = r.ref_count;
  doc["hyp_count"] = r.hyp_count;
  doc["tolerance_ms"] = r.tolerance_ms;
  return doc.dump();
}

}  // namespace phonalign
