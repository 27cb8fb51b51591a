// include/phonalign/objective.h

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

#ifndef PHONALIGN_OBJECTIVE_H_
#define PHONALIGN_OBJECTIVE_H_

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "phonalign/core.h"

// The alignment objective. Column-per-item layout throughout: phone
// embeddings Y are K x N, frame representations Xhat are K x T, similarity
// and attention are N x T.
//
//   D    = (Wy Y + by)^T (Wx Xhat + bx)          similarity
//   A    = softmax(D) over the phone axis         attention
//   H    = [Xhat; Y A]                            fused states, 2K x T
//   Z    = Wo H + bo                              predictions, K x T
//   L    = w_m L_m(Z) + lambda * L_fs(log A^T) / T
//
// L_m is the temperature-scaled contrastive loss of each prediction against
// its target codeword and a set of sampled negatives.

namespace phonalign {

/// Time-mask span length in frames.
constexpr int kMaskSpanFrames = 10;

struct EncodedPhones {
  Matrix Y;  // K x N
};

struct EncodedFrames {
  Matrix Xhat;             // K x T
  std::vector<bool> mask;  // true = masked; empty means nothing masked
  double frame_shift_ms = 20.0;
};

struct ProjectionHeads {
  Matrix Wy, Wx;  // K x K
  Vector by, bx;  // K

  static ProjectionHeads Identity(Eigen::Index dim);
  static ProjectionHeads Zero(Eigen::Index dim);
};

/// Linear map bringing the 2K fused state down to the codeword dimension.
struct OutputProjection {
  Matrix W;  // K x 2K
  Vector b;  // K

  static OutputProjection Zero(Eigen::Index dim);
};

/// Frozen quantizer codebook; M x K with unit-norm rows.
class Codebook {
 public:
  explicit Codebook(Matrix rows);

  const Matrix &rows() const { return rows_; }
  Eigen::Index size() const { return rows_.rows(); }
  Eigen::Index dim() const { return rows_.cols(); }

  /// Index of the row with the largest inner product with `v`.
  int nearest(const Eigen::Ref<const Vector> &v) const;

 private:
  Matrix rows_;
};

enum class Similarity { kCosine, kDot };

struct LossConfig {
  double kappa = 0.1;
  double lambda = 1.0;
  int negatives = 50;
  double p_low = 0.05;
  double p_high = 0.2;
  double feature_mask_frac = 0.1;
  /// Not part of the JSON form.
  Similarity similarity = Similarity::kCosine;

  /// Throws kInvalidInput on out-of-range values.
  void validate() const;
};

/// JSON with exactly the keys kappa, lambda, negatives, p_low, p_high,
/// feature_mask_frac.
std::string loss_config_to_json(const LossConfig &cfg);
LossConfig loss_config_from_json(std::string_view text);

/// negatives[t] holds the codebook rows competing with targets[t].
using NegativeSets = std::vector<std::vector<int>>;

/// Which frames contribute to the contrastive average.
enum class ContrastiveFrames { kMasked, kAll };

FrameMatrix similarity_matrix(const EncodedPhones &phones, const EncodedFrames &frames,
                              const ProjectionHeads &heads);
Matrix similarity(const Matrix &Y, const Matrix &Xhat, const ProjectionHeads &heads);

FrameMatrix attention_from_similarity(const FrameMatrix &similarity);
Matrix column_softmax(const Matrix &D);
Matrix column_log_softmax(const Matrix &D);

/// [Xhat; Y A], 2K x T.
Matrix fuse_states(const Matrix &Xhat, const Matrix &Y, const Matrix &attention);
Matrix fuse_states(const EncodedFrames &frames, const EncodedPhones &phones,
                   const FrameMatrix &attention);

struct ContrastiveResult {
  double loss = 0.0;
  Matrix d_predictions;  // K x T
  int scored_frames = 0;
};

/// Mean over scored frames of
///   -log exp(sim(z_t, q_target)/kappa) / sum_{k in {target} u negatives} exp(sim(z_t, q_k)/kappa).
/// `scored` empty means every frame. Each scored frame must carry exactly
/// cfg.negatives negatives, none equal to its target (kInvalidNegatives).
ContrastiveResult contrastive_loss(const Matrix &predictions, const Codebook &codebook,
                                   const std::vector<int> &targets,
                                   const NegativeSets &negatives,
                                   const std::vector<bool> &scored, const LossConfig &cfg);

struct CombinedInputs {
  const Matrix *Y = nullptr;     // K x N
  const Matrix *Xhat = nullptr;  // K x T
  std::vector<bool> mask;        // time mask applied upstream; selects frames for kMasked
  const ProjectionHeads *heads = nullptr;
  const OutputProjection *projection = nullptr;
  const Codebook *codebook = nullptr;
  std::vector<int> targets;
  NegativeSets negatives;
  LossConfig cfg;
  ContrastiveFrames contrastive_frames = ContrastiveFrames::kMasked;
  /// Weight on L_m; 0 turns the contrastive term off entirely.
  double contrastive_weight = 1.0;
};

struct CombinedResult {
  double loss = 0.0;
  double loss_m = 0.0;   // contrastive term, unweighted
  double loss_fs = 0.0;  // forward-sum loss divided by T, unweighted
  Matrix attention;      // N x T

  Matrix dY, dXhat;
  ProjectionHeads d_heads;
  OutputProjection d_projection;
};

/// L = w_m * L_m + lambda * L_fs with gradients for every input.
CombinedResult combined_loss(const CombinedInputs &in);

struct MaskSample {
  std::vector<bool> time_mask;     // length T
  std::vector<bool> feature_mask;  // length K
  int percent = 0;                 // the drawn p (per cent)
  int span_starts = 0;
};

/// Draws p uniformly from the integer per-cent grid
/// [round(100 p_low), round(100 p_high)], starts a kMaskSpanFrames-long
/// time mask at each frame with probability p/100, and masks one
/// contiguous block of ceil(feature_mask_frac * K) channels.
MaskSample sample_masking(int num_frames, int dim, const LossConfig &cfg, std::uint64_t seed);

/// cfg.negatives distinct codebook rows per frame, uniform over all rows
/// except that frame's target.
NegativeSets sample_negatives(const std::vector<int> &targets, Eigen::Index codebook_size,
                              int count, std::uint64_t seed);

}  // namespace phonalign

#endif  // PHONALIGN_OBJECTIVE_H_
