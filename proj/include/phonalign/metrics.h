// include/phonalign/metrics.h

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

#ifndef PHONALIGN_METRICS_H_
#define PHONALIGN_METRICS_H_

#include <string>
#include <utility>
#include <vector>

#include "phonalign/core.h"

namespace phonalign {

/// Phone-onset evaluation. A reference onset and a hypothesis onset are a
/// hit when they are at most `tolerance_ms` apart and carry the same phone;
/// each onset is used at most once.
struct EvalOptions {
  double tolerance_ms = 20.0;
  double grid_ms = 10.0;
  /// Drop the onset at t = 0 from both tiers.
  bool skip_initial = false;
  /// Maximum-cardinality matching instead of the greedy closest-first one.
  bool optimal_matching = false;
  /// batch_eval: average per-pair ratios instead of pooling counts.
  bool macro = false;
};

struct EvalReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double r_value = 0.0;
  double overlap_pct = 0.0;
  long hits = 0;
  long ref_count = 0;
  long hyp_count = 0;
  double tolerance_ms = 20.0;
};

/// R-value from counts: OS = hyp/ref - 1 (= recall/precision - 1),
/// r1 = sqrt((1 - recall)^2 + OS^2), r2 = (-OS + recall - 1)/sqrt(2),
/// R = 1 - (|r1| + |r2|)/2, floored at 0.
double r_value(long hits, long ref_count, long hyp_count);

struct OverlapResult {
  long matching = 0;
  long total = 0;
  /// The two tiers discretized to different frame counts; only the common
  /// prefix was compared.
  bool truncated = false;

  double percent() const {
    return total == 0 ? 0.0 : 100.0 * static_cast<double>(matching) / static_cast<double>(total);
  }
};

OverlapResult frame_overlap_counts(const SegmentTier &ref, const SegmentTier &hyp,
                                   double grid_ms = 10.0);
double frame_overlap(const SegmentTier &ref, const SegmentTier &hyp, double grid_ms = 10.0);

/// Hit count of a single pair under the given options.
long count_hits(const SegmentTier &ref, const SegmentTier &hyp, const EvalOptions &opts);

EvalReport boundary_eval(const SegmentTier &ref, const SegmentTier &hyp, double tolerance_ms);
EvalReport boundary_eval(const SegmentTier &ref, const SegmentTier &hyp,
                         const EvalOptions &opts);
/// As above, but refuses tiers indexed against different inventories.
EvalReport boundary_eval(const SegmentTier &ref, const PhoneInventory &ref_inv,
                         const SegmentTier &hyp, const PhoneInventory &hyp_inv,
                         const EvalOptions &opts);

/// Corpus-level report. Counts and overlap frames are pooled across pairs
/// (micro-averaging) unless opts.macro is set. Throws kEmptyInput for an
/// empty list.
EvalReport batch_eval(const std::vector<std::pair<SegmentTier, SegmentTier>> &pairs,
                      const EvalOptions &opts = {});

std::string eval_report_to_json(const EvalReport &report);

}  // namespace phonalign

#endif  // PHONALIGN_METRICS_H_
