// include/phonalign/toytrain.h

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

#ifndef PHONALIGN_TOYTRAIN_H_
#define PHONALIGN_TOYTRAIN_H_

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "phonalign/core.h"
#include "phonalign/metrics.h"
#include "phonalign/objective.h"

namespace phonalign {

// ---------------------------------------------------------------------------
// Synthetic corpus

struct Utterance {
  Matrix features;  // K x T
  PhoneSeq phones;
  FrameLabels labels;          // phone index per frame
  std::vector<int> positions;  // transcript position per frame
};

struct SyntheticCorpus {
  std::vector<Utterance> utterances;
  PhoneInventory inventory;
  double frame_shift_ms = 20.0;
  double noise_sigma = 0.0;
};

/// V x K matrix of unit-norm Gaussian directions.
Matrix make_prototypes(int vocab, int dim, std::uint64_t seed);

/// Generic inventory "p0".."p{V-1}".
PhoneInventory toy_inventory(int vocab);

/// Every utterance draws N in len_range distinct phones, a duration in
/// dur_range frames for each, and emits prototype + N(0, sigma^2) noise per
/// frame. Utterance i is seeded from (seed, i) alone.
SyntheticCorpus generate_corpus(const PhoneInventory &inventory, const Matrix &prototypes,
                                int count, std::uint64_t seed, double noise_sigma,
                                std::pair<int, int> dur_range, std::pair<int, int> len_range);

/// Repeats every frame `factor` times and divides the frame shift by it.
SyntheticCorpus upsample(const SyntheticCorpus &corpus, int factor);
Matrix repeat_frames(const Matrix &features, int factor);

// ---------------------------------------------------------------------------
// Curriculum

struct CurriculumPlan {
  std::vector<double> thresholds_s;
  std::vector<std::vector<int>> chunks;
  long dropped = 0;
};

/// Utterance i goes to the first chunk whose threshold is >= durations_s[i];
/// longer utterances are dropped and counted. Thresholds must be non-empty
/// and strictly ascending (kInvalidInput).
CurriculumPlan plan_curriculum(const std::vector<double> &durations_s,
                               const std::vector<double> &thresholds_s);

// ---------------------------------------------------------------------------
// Models

/// Two affine layers with a tanh in between, K -> K per frame.
struct FrameEncoder {
  Matrix W1, W2;  // K x K
  Vector b1, b2;

  /// `hidden` receives tanh(W1 x + b1) when non-null.
  Matrix forward(const Matrix &x, Matrix *hidden = nullptr) const;
  static FrameEncoder Zero(Eigen::Index dim);
};

struct ToyModel {
  Matrix E;  // V x K phone embedding table
  FrameEncoder encoder;
  ProjectionHeads heads;
  OutputProjection projection;
  Codebook codebook;
  LossConfig cfg;

  Matrix embed(const PhoneSeq &phones) const;  // K x N
  /// N x T attention for unmasked input.
  FrameMatrix attention(const Matrix &features, const PhoneSeq &phones,
                        double frame_shift_ms) const;
};

/// Codebook rows: the prototypes followed by `extra` random unit rows.
Codebook make_codebook(const Matrix &prototypes, int extra, std::uint64_t seed);

ToyModel init_toy_model(int vocab, const Codebook &codebook, const LossConfig &cfg,
                        std::uint64_t seed);

// ---------------------------------------------------------------------------
// Forward-sum training

struct FsTrainOptions {
  int steps_per_chunk = 100;
  int batch = 4;
  double lr = 0.05;
  std::uint64_t seed = 0;
  bool no_fs = false;
  bool no_contrastive = false;
  bool no_curriculum = false;
  /// Run the duplicated-frame phase after the base phase.
  bool upsample = true;
  double upsampled_p_low = 0.05;
  double upsampled_p_high = 0.2;
  ContrastiveFrames contrastive_frames = ContrastiveFrames::kAll;
  /// Utterances whose attention is scored for the history; the training
  /// corpus when null.
  const SyntheticCorpus *eval_corpus = nullptr;
  int eval_utterances = 50;
};

struct HistoryEntry {
  long step = 0;
  double loss_m = 0.0;
  double loss_fs = 0.0;
  double diagonality = 0.0;
};

std::string history_entry_to_json(const HistoryEntry &entry);

struct FsTrainResult {
  ToyModel model;
  std::vector<HistoryEntry> history;
};

/// SGD through combined_loss, chunks in ascending order, first at the corpus
/// frame rate and then on duplicated frames. One history entry per chunk
/// pass. Throws TrainingDiverged on a non-finite loss.
FsTrainResult train_fs(ToyModel model, const SyntheticCorpus &corpus,
                       const CurriculumPlan &plan, const FsTrainOptions &opts);

struct AlignmentScore {
  double diagonality = 0.0;
  double frame_accuracy = 0.0;
  EvalReport boundaries;
};

/// Argmax alignments of `corpus` (unmasked) against ground truth; onsets hit
/// within `tolerance_frames` frames.
AlignmentScore evaluate_fs(const ToyModel &model, const SyntheticCorpus &corpus,
                           int tolerance_frames = 2);

/// Pseudo-labels from argmax_decode of each utterance.
std::vector<FrameLabels> bootstrap_fc(const ToyModel &model, const SyntheticCorpus &corpus);

/// Fraction of frames whose labels agree, pooled over utterances.
double frame_agreement(const std::vector<FrameLabels> &labels, const SyntheticCorpus &corpus);

// ---------------------------------------------------------------------------
// Frame classification

struct FcModel {
  FrameEncoder encoder;
  Matrix Wc;  // V x K
  Vector bc;
  PhoneInventory inventory;

  /// T x V log-posteriors.
  FrameMatrix log_posteriors(const Matrix &features, double frame_shift_ms) const;
};

struct FcTrainOptions {
  int steps = 300;
  int batch = 4;
  double lr = 0.5;
  std::uint64_t seed = 0;
};

/// Cross-entropy SGD on per-frame labels (labels[i] covers utterance i).
FcModel train_fc(const std::vector<FrameLabels> &labels, const SyntheticCorpus &corpus,
                 const FcTrainOptions &opts);

struct FcScore {
  double frame_accuracy = 0.0;
  /// DTW forced alignment against the true transcript.
  EvalReport boundaries;
};

FcScore evaluate_fc(const FcModel &model, const SyntheticCorpus &corpus,
                    int tolerance_frames = 2);

// ---------------------------------------------------------------------------
// Fixture

struct ToyFixture {
  int vocab = 20;
  int dim = 16;
  double noise_sigma = 0.05;
  int train_count = 200;
  int test_count = 50;
  std::pair<int, int> len_range{3, 12};
  std::pair<int, int> dur_range{2, 8};
  int extra_codewords = 44;
  std::vector<double> thresholds_s{0.3, 0.5, 1.0};
  double frames_per_second = 100.0;
  double frame_shift_ms = 20.0;
  int batch = 4;
  int steps_per_chunk = 100;
  double lr = 0.05;
  LossConfig loss{0.1, 1.0, 50, 0.01, 0.04, 0.1};
  double upsampled_p_low = 0.01;
  double upsampled_p_high = 0.08;
  ContrastiveFrames contrastive_frames = ContrastiveFrames::kAll;
  std::uint64_t corpus_seed = 7;
  std::uint64_t test_seed = 99;
  std::uint64_t prototype_seed = 1000;
  FcTrainOptions fc;
};

/// Unknown or mistyped keys raise kParse; absent keys keep their defaults.
ToyFixture parse_fixture(std::string_view json_text);
ToyFixture load_fixture(const std::string &path);

struct Ablation {
  bool no_fs = false;
  bool no_contrastive = false;
  bool no_curriculum = false;
};

struct ToyData {
  Matrix prototypes;
  SyntheticCorpus train;
  SyntheticCorpus test;  // at the upsampled frame rate
  CurriculumPlan plan;
  Codebook codebook;
};

ToyData build_toy_data(const ToyFixture &fx);

struct ToyRun {
  FsTrainResult fs;
  AlignmentScore score;
};

/// Trains from seed `seed` with the fixture's schedule; `steps_per_chunk`
/// overrides the fixture when non-negative.
ToyRun run_toy(const ToyFixture &fx, const ToyData &data, std::uint64_t seed,
               const Ablation &ablation, int steps_per_chunk = -1);

}  // namespace phonalign

#endif  // PHONALIGN_TOYTRAIN_H_
