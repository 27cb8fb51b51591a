// src/lattice.cc

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

#include "phonalign/lattice.h"

#include <cmath>
#include <string>

namespace phonalign {

namespace {

void check_feasible(Eigen::Index frames, Eigen::Index phones) {
  if (phones < 1) throw Error(ErrorCode::kInvalidInput, "no phones");
  if (frames < phones)
    throw Error(ErrorCode::kInfeasible,
                std::to_string(frames) + " frames cannot hold " +
                    std::to_string(phones) + " phones");
}

void check_finite(const Matrix &m) {
  if (!m.allFinite()) throw Error(ErrorCode::kInvalidInput, "non-finite log-probability");
}

// Column index with the largest value; ties resolve to the lowest index.
Eigen::Index argmax_col(const Matrix &m, Eigen::Index col) {
  Eigen::Index best = 0;
  for (Eigen::Index n = 1; n < m.rows(); ++n)
    if (m(n, col) > m(best, col)) best = n;
  return best;
}

Eigen::Index argmax_row(const Matrix &m, Eigen::Index row) {
  Eigen::Index best = 0;
  for (Eigen::Index c = 1; c < m.cols(); ++c)
    if (m(row, c) > m(row, best)) best = c;
  return best;
}

}  // namespace

ForwardSumResult forward_sum_loss(const Matrix &log_attention) {
  const Eigen::Index T = log_attention.rows();
  const Eigen::Index N = log_attention.cols();
  check_feasible(T, N);
  check_finite(log_attention);

  // alpha(t, n): log mass of prefixes ending at position n on frame t,
  // including frame t's own emission. beta(t, n): log mass of suffixes
  // from (t, n), excluding frame t's emission.
  Matrix alpha = Matrix::Constant(T, N, kLogZero);
  Matrix beta = Matrix::Constant(T, N, kLogZero);
  alpha(0, 0) = log_attention(0, 0);
  for (Eigen::Index t = 1; t < T; ++t) {
    // Position n is reachable at frame t only if n <= t and N-1-n <= T-1-t.
    const Eigen::Index lo = std::max<Eigen::Index>(0, N - T + t);
    const Eigen::Index hi = std::min<Eigen::Index>(N - 1, t);
    for (Eigen::Index n = lo; n <= hi; ++n) {
      double prev = alpha(t - 1, n);
      if (n > 0) prev = log_add_exp(prev, alpha(t - 1, n - 1));
      alpha(t, n) = prev + log_attention(t, n);
    }
  }
  const double log_total = alpha(T - 1, N - 1);

  beta(T - 1, N - 1) = 0.0;
  for (Eigen::Index t = T - 2; t >= 0; --t) {
    const Eigen::Index lo = std::max<Eigen::Index>(0, N - T + t);
    const Eigen::Index hi = std::min<Eigen::Index>(N - 1, t);
    for (Eigen::Index n = lo; n <= hi; ++n) {
      double next = beta(t + 1, n) + log_attention(t + 1, n);
      if (n + 1 < N)
        next = log_add_exp(next, beta(t + 1, n + 1) + log_attention(t + 1, n + 1));
      beta(t, n) = next;
    }
  }

  ForwardSumResult result;
  result.loss = -log_total;
  result.d_log_attention = Matrix::Zero(T, N);
  for (Eigen::Index t = 0; t < T; ++t)
    for (Eigen::Index n = 0; n < N; ++n) {
      const double occ = alpha(t, n) + beta(t, n) - log_total;
      if (occ != kLogZero) result.d_log_attention(t, n) = -std::exp(occ);
    }
  return result;
}

Matrix with_suppressed_blank(const Matrix &log_attention, double blank_log_prob) {
  Matrix out(log_attention.rows(), log_attention.cols() + 1);
  out.col(0).setConstant(blank_log_prob);
  out.rightCols(log_attention.cols()) = log_attention;
  return out;
}

double forward_sum_via_blank_suppression(const Matrix &log_probs_with_blank) {
  const Eigen::Index T = log_probs_with_blank.rows();
  const Eigen::Index N = log_probs_with_blank.cols() - 1;
  check_feasible(T, N);
  check_finite(log_probs_with_blank);
  if (log_probs_with_blank.col(0).maxCoeff() > kSuppressedBlankLogProb)
    throw Error(ErrorCode::kInvalidInput, "blank column is not suppressed");

  // Extended label sequence: blank, 1, blank, 2, ..., N, blank.
  const Eigen::Index S = 2 * N + 1;
  auto column = [](Eigen::Index s) -> Eigen::Index { return s % 2 == 0 ? 0 : (s + 1) / 2; };
  std::vector<double> prev(static_cast<std::size_t>(S), kLogZero);
  std::vector<double> cur(static_cast<std::size_t>(S), kLogZero);
  prev[0] = log_probs_with_blank(0, 0);
  prev[1] = log_probs_with_blank(0, 1);
  for (Eigen::Index t = 1; t < T; ++t) {
    for (Eigen::Index s = 0; s < S; ++s) {
      double acc = prev[static_cast<std::size_t>(s)];
      if (s >= 1) acc = log_add_exp(acc, prev[static_cast<std::size_t>(s - 1)]);
      // Labels are distinct phone positions, so the blank skip is always legal.
      if (s >= 2 && s % 2 == 1)
        acc = log_add_exp(acc, prev[static_cast<std::size_t>(s - 2)]);
      cur[static_cast<std::size_t>(s)] =
          acc == kLogZero ? kLogZero : acc + log_probs_with_blank(t, column(s));
    }
    std::swap(prev, cur);
  }
  const double log_total = log_add_exp(prev[static_cast<std::size_t>(S - 1)],
                                       prev[static_cast<std::size_t>(S - 2)]);
  return -log_total;
}

AlignmentPath dtw_forced_decode(const Matrix &log_posteriors, const PhoneSeq &transcript) {
  const Eigen::Index T = log_posteriors.rows();
  const auto N = static_cast<Eigen::Index>(transcript.size());
  check_feasible(T, N);
  for (int p : transcript.phones)
    if (p < 0 || p >= log_posteriors.cols())
      throw Error(ErrorCode::kInvalidInput,
                  "transcript index " + std::to_string(p) + " outside posterior columns");

  auto emit = [&](Eigen::Index t, Eigen::Index n) {
    return log_posteriors(t, transcript.phones[static_cast<std::size_t>(n)]);
  };
  Matrix best = Matrix::Constant(T, N, kLogZero);
  // advanced(t, n): frame t entered position n from n - 1.
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> advanced =
      Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(T, N, false);
  best(0, 0) = emit(0, 0);
  for (Eigen::Index t = 1; t < T; ++t) {
    const Eigen::Index lo = std::max<Eigen::Index>(0, N - T + t);
    const Eigen::Index hi = std::min<Eigen::Index>(N - 1, t);
    for (Eigen::Index n = lo; n <= hi; ++n) {
      const double stay = best(t - 1, n);
      const double advance = n > 0 ? best(t - 1, n - 1) : kLogZero;
      // >= : on a tie the predecessor stayed on n - 1, i.e. the later transition.
      if (n > 0 && advance >= stay) {
        best(t, n) = advance + emit(t, n);
        advanced(t, n) = true;
      } else {
        best(t, n) = stay + emit(t, n);
      }
    }
  }

  AlignmentPath path;
  path.score = best(T - 1, N - 1);
  path.frame_to_phone.assign(static_cast<std::size_t>(T), 0);
  Eigen::Index n = N - 1;
  for (Eigen::Index t = T - 1; t >= 0; --t) {
    path.frame_to_phone[static_cast<std::size_t>(t)] = static_cast<int>(n);
    if (t > 0 && advanced(t, n)) --n;
  }
  return path;
}

AlignmentPath dtw_forced_decode(const FrameMatrix &log_posteriors, const PhoneSeq &transcript) {
  if (log_posteriors.kind() != MatrixKind::kLogPosterior)
    throw Error(ErrorCode::kInvalidInput, "DTW expects a log_posterior matrix");
  return dtw_forced_decode(log_posteriors.values(), transcript);
}

std::vector<int> argmax_positions(const Matrix &attention) {
  std::vector<int> out(static_cast<std::size_t>(attention.cols()));
  for (Eigen::Index t = 0; t < attention.cols(); ++t)
    out[static_cast<std::size_t>(t)] = static_cast<int>(argmax_col(attention, t));
  return out;
}

FrameLabels argmax_decode(const FrameMatrix &attention, const PhoneSeq &transcript) {
  if (attention.kind() != MatrixKind::kAttention)
    throw Error(ErrorCode::kInvalidInput, "argmax_decode expects an attention matrix");
  if (attention.rows() != static_cast<Eigen::Index>(transcript.size()))
    throw Error(ErrorCode::kDimensionMismatch,
                "attention has " + std::to_string(attention.rows()) +
                    " phone rows, transcript has " + std::to_string(transcript.size()));
  FrameLabels fl;
  fl.frame_shift_ms = attention.frame_shift_ms();
  for (int pos : argmax_positions(attention.values()))
    fl.labels.push_back(transcript.phones[static_cast<std::size_t>(pos)]);
  return fl;
}

PhoneSeq ctc_greedy_decode(const Matrix &log_posteriors) {
  if (log_posteriors.cols() < 2)
    throw Error(ErrorCode::kInvalidInput, "CTC posteriors need a blank column");
  const Eigen::Index blank = log_posteriors.cols() - 1;
  PhoneSeq out;
  Eigen::Index last = -1;
  for (Eigen::Index t = 0; t < log_posteriors.rows(); ++t) {
    const Eigen::Index c = argmax_row(log_posteriors, t);
    if (c != blank && c != last) out.phones.push_back(static_cast<int>(c));
    last = c;
  }
  if (out.phones.empty()) throw Error(ErrorCode::kEmptyDecode, "every frame decoded to blank");
  return out;
}

PhoneSeq ctc_greedy_decode(const FrameMatrix &log_posteriors) {
  return ctc_greedy_decode(log_posteriors.values());
}

double diagonality_score(const Matrix &attention) {
  const Eigen::Index T = attention.cols();
  if (T < 1 || attention.rows() < 1)
    throw Error(ErrorCode::kInvalidInput, "empty attention matrix");
  const std::vector<int> am = argmax_positions(attention);
  double monotone = 1.0;
  if (T > 1) {
    Eigen::Index ok = 0;
    for (std::size_t t = 1; t < am.size(); ++t) ok += am[t] >= am[t - 1];
    monotone = static_cast<double>(ok) / static_cast<double>(T - 1);
  }
  const double sharpness = attention.colwise().maxCoeff().mean();
  return monotone * sharpness;
}

double diagonality_score(const FrameMatrix &attention) {
  if (attention.kind() != MatrixKind::kAttention)
    throw Error(ErrorCode::kInvalidInput, "diagonality needs an attention matrix");
  return diagonality_score(attention.values());
}

SegmentTier path_to_segments(const AlignmentPath &path, const PhoneSeq &transcript,
                             double frame_shift_ms) {
  const auto &f2p = path.frame_to_phone;
  if (f2p.empty()) throw Error(ErrorCode::kInvalidInput, "empty path");
  std::vector<Segment> segs;
  std::size_t begin = 0;
  for (std::size_t t = 1; t <= f2p.size(); ++t) {
    if (t == f2p.size() || f2p[t] != f2p[begin]) {
      segs.push_back({transcript.phones.at(static_cast<std::size_t>(f2p[begin])),
                      static_cast<double>(begin) * frame_shift_ms,
                      static_cast<double>(t) * frame_shift_ms});
      begin = t;
    }
  }
  return SegmentTier(std::move(segs), static_cast<double>(f2p.size()) * frame_shift_ms);
}

}  // namespace phonalign
