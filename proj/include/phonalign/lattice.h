// include/phonalign/lattice.h

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

#ifndef PHONALIGN_LATTICE_H_
#define PHONALIGN_LATTICE_H_

#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "phonalign/core.h"

namespace phonalign {

constexpr double kLogZero = -std::numeric_limits<double>::infinity();

/// Log-probability given to the blank symbol when the forward-sum loss is
/// run through a CTC lattice. Low enough that every blank-visiting path
/// underflows to zero weight in double precision.
constexpr double kSuppressedBlankLogProb = -1e4;

inline double log_add_exp(double a, double b) {
  if (a < b) std::swap(a, b);
  if (b == kLogZero) return a;
  return a + std::log1p(std::exp(b - a));
}

/// Monotonic frame -> phone-position assignment (steps of 0 or +1, starting
/// at position 0 and ending at N - 1).
struct AlignmentPath {
  std::vector<int> frame_to_phone;
  double score = 0.0;
};

struct ForwardSumResult {
  double loss = 0.0;
  /// d loss / d logA, frames x positions. Equals minus the posterior
  /// occupancy, so every row sums to -1.
  Matrix d_log_attention;
};

/// Forward-sum loss over the stay/advance lattice.
///
/// `log_attention` is frames x phone positions (T x N). Returns
/// -log sum_paths prod_t A[t, path(t)] and its exact gradient from the
/// forward-backward recursions. Throws kInfeasible when T < N and
/// kInvalidInput for non-finite entries.
ForwardSumResult forward_sum_loss(const Matrix &log_attention);

/// The same quantity computed as a standard CTC loss over the label
/// sequence 1..N of a T x (N + 1) matrix whose column 0 is the blank.
/// The blank must be suppressed (log-prob <= kSuppressedBlankLogProb at
/// every frame).
double forward_sum_via_blank_suppression(const Matrix &log_probs_with_blank);

/// Prepends a blank column holding `blank_log_prob` to a T x N matrix.
Matrix with_suppressed_blank(const Matrix &log_attention,
                             double blank_log_prob = kSuppressedBlankLogProb);

/// Best monotonic path through a T x V log-posterior matrix for the given
/// transcript. On ties the earlier phone keeps the frame, so transitions
/// happen as late as possible.
AlignmentPath dtw_forced_decode(const Matrix &log_posteriors,
                                const PhoneSeq &transcript);
AlignmentPath dtw_forced_decode(const FrameMatrix &log_posteriors,
                                const PhoneSeq &transcript);

/// Per-frame argmax over phone positions of an N x T attention matrix,
/// mapped through the transcript. Ties go to the lower position. No
/// monotonicity is imposed.
FrameLabels argmax_decode(const FrameMatrix &attention, const PhoneSeq &transcript);
std::vector<int> argmax_positions(const Matrix &attention);

/// Greedy CTC decoding of a T x (V + 1) log-posterior matrix whose last
/// column is the blank. Throws kEmptyDecode when every frame is blank.
PhoneSeq ctc_greedy_decode(const Matrix &log_posteriors);
PhoneSeq ctc_greedy_decode(const FrameMatrix &log_posteriors);

/// Fraction of adjacent frame pairs with non-decreasing argmax position,
/// times the mean column maximum. Input is N x T attention.
double diagonality_score(const Matrix &attention);
double diagonality_score(const FrameMatrix &attention);

/// Segments for a decoded path: one interval per transcript position.
SegmentTier path_to_segments(const AlignmentPath &path, const PhoneSeq &transcript,
                             double frame_shift_ms);

}  // namespace phonalign

#endif  // PHONALIGN_LATTICE_H_
