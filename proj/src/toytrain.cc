// src/toytrain.cc

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

#include "phonalign/toytrain.h"

#include <cmath>
#include <numeric>

#include "json.hpp"
#include "phonalign/io.h"
#include "phonalign/lattice.h"
#include "phonalign/rng.h"

namespace phonalign {

namespace {

void require(bool ok, const std::string &what) {
  if (!ok) throw Error(ErrorCode::kInvalidInput, what);
}

Matrix gaussian(Rng &rng, Eigen::Index rows, Eigen::Index cols, double scale) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = scale * rng.normal();
  return m;
}

Matrix unit_rows(Rng &rng, Eigen::Index rows, Eigen::Index cols) {
  Matrix m = gaussian(rng, rows, cols, 1.0);
  for (Eigen::Index r = 0; r < rows; ++r) m.row(r).normalize();
  return m;
}

FrameEncoder init_encoder(Rng &rng, Eigen::Index dim) {
  const double s = 1.0 / std::sqrt(static_cast<double>(dim));
  FrameEncoder enc;
  enc.W1 = gaussian(rng, dim, dim, s);
  enc.b1 = Vector::Zero(dim);
  enc.W2 = gaussian(rng, dim, dim, s);
  enc.b2 = Vector::Zero(dim);
  return enc;
}

// Accumulates parameter gradients of the encoder given its input, hidden
// activations and the gradient at its output.
void encoder_backward(const FrameEncoder &enc, const Matrix &x, const Matrix &hidden,
                      const Matrix &d_out, FrameEncoder &grad) {
  grad.W2.noalias() += d_out * hidden.transpose();
  grad.b2 += d_out.rowwise().sum();
  const Matrix d_pre =
      ((enc.W2.transpose() * d_out).array() * (1.0 - hidden.array().square())).matrix();
  grad.W1.noalias() += d_pre * x.transpose();
  grad.b1 += d_pre.rowwise().sum();
}

void sgd(FrameEncoder &enc, const FrameEncoder &g, double step) {
  enc.W1 -= step * g.W1;
  enc.b1 -= step * g.b1;
  enc.W2 -= step * g.W2;
  enc.b2 -= step * g.b2;
}

struct ToyGrad {
  Matrix E;
  FrameEncoder encoder;
  ProjectionHeads heads;
  OutputProjection projection;

  ToyGrad(Eigen::Index vocab, Eigen::Index dim)
      : E(Matrix::Zero(vocab, dim)),
        encoder(FrameEncoder::Zero(dim)),
        heads(ProjectionHeads::Zero(dim)),
        projection(OutputProjection::Zero(dim)) {}
};

std::vector<int> sample_without_replacement(Rng &rng, const std::vector<int> &pool, int k) {
  std::vector<int> v = pool;
  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), v.size());
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(v.size() - i));
    std::swap(v[i], v[j]);
  }
  v.resize(take);
  return v;
}

double mean_diagonality(const ToyModel &model, const SyntheticCorpus &corpus, int factor,
                        int limit) {
  const std::size_t n = std::min<std::size_t>(corpus.utterances.size(),
                                               static_cast<std::size_t>(std::max(limit, 0)));
  if (n == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Utterance &u = corpus.utterances[i];
    const Matrix x = factor == 1 ? u.features : repeat_frames(u.features, factor);
    sum += diagonality_score(model.attention(x, u.phones, corpus.frame_shift_ms / factor));
  }
  return sum / static_cast<double>(n);
}

SegmentTier truth_tier(const Utterance &u, double frame_shift_ms) {
  FrameLabels fl = u.labels;
  fl.frame_shift_ms = frame_shift_ms;
  return labels_to_segments(fl);
}

}  // namespace

// ---------------------------------------------------------------------------
// Corpus

Matrix make_prototypes(int vocab, int dim, std::uint64_t seed) {
  require(vocab > 0 && dim > 0, "prototype shape must be positive");
  Rng rng(seed);
  return unit_rows(rng, vocab, dim);
}

PhoneInventory toy_inventory(int vocab) {
  require(vocab > 0, "vocabulary must be non-empty");
  std::vector<std::string> symbols;
  for (int v = 0; v < vocab; ++v) symbols.push_back("p" + std::to_string(v));
  return PhoneInventory(symbols);
}

SyntheticCorpus generate_corpus(const PhoneInventory &inventory, const Matrix &prototypes,
                                int count, std::uint64_t seed, double noise_sigma,
                                std::pair<int, int> dur_range, std::pair<int, int> len_range) {
  const int vocab = static_cast<int>(inventory.size());
  require(prototypes.rows() == vocab, "one prototype per inventory symbol");
  require(count >= 0, "negative utterance count");
  require(noise_sigma >= 0.0 && std::isfinite(noise_sigma), "noise sigma must be >= 0");
  require(dur_range.first >= 1 && dur_range.first <= dur_range.second, "bad duration range");
  require(len_range.first >= 1 && len_range.first <= len_range.second, "bad length range");
  require(len_range.second <= vocab, "utterance length exceeds the inventory");

  SyntheticCorpus corpus;
  corpus.inventory = inventory;
  corpus.noise_sigma = noise_sigma;
  const Eigen::Index K = prototypes.cols();
  std::vector<int> all(static_cast<std::size_t>(vocab));
  std::iota(all.begin(), all.end(), 0);
  for (int i = 0; i < count; ++i) {
    Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(i)));
    Utterance u;
    u.labels.frame_shift_ms = corpus.frame_shift_ms;
    const int n = static_cast<int>(rng.between(len_range.first, len_range.second));
    u.phones.phones = sample_without_replacement(rng, all, n);
    for (int pos = 0; pos < n; ++pos) {
      const int d = static_cast<int>(rng.between(dur_range.first, dur_range.second));
      for (int k = 0; k < d; ++k) {
        u.positions.push_back(pos);
        u.labels.labels.push_back(u.phones.phones[static_cast<std::size_t>(pos)]);
      }
    }
    const auto T = static_cast<Eigen::Index>(u.positions.size());
    u.features.resize(K, T);
    for (Eigen::Index t = 0; t < T; ++t) {
      u.features.col(t) = prototypes.row(u.labels.labels[static_cast<std::size_t>(t)]).transpose();
      for (Eigen::Index k = 0; k < K; ++k) u.features(k, t) += noise_sigma * rng.normal();
    }
    corpus.utterances.push_back(std::move(u));
  }
  return corpus;
}

Matrix repeat_frames(const Matrix &features, int factor) {
  require(factor >= 1, "upsampling factor must be >= 1");
  Matrix out(features.rows(), features.cols() * factor);
  for (Eigen::Index t = 0; t < features.cols(); ++t)
    for (int k = 0; k < factor; ++k) out.col(t * factor + k) = features.col(t);
  return out;
}

SyntheticCorpus upsample(const SyntheticCorpus &corpus, int factor) {
  SyntheticCorpus out = corpus;
  out.frame_shift_ms = corpus.frame_shift_ms / factor;
  for (Utterance &u : out.utterances) {
    u.features = repeat_frames(u.features, factor);
    std::vector<int> labels, positions;
    for (std::size_t t = 0; t < u.positions.size(); ++t)
      for (int k = 0; k < factor; ++k) {
        labels.push_back(u.labels.labels[t]);
        positions.push_back(u.positions[t]);
      }
    u.labels.labels = std::move(labels);
    u.labels.frame_shift_ms = out.frame_shift_ms;
    u.positions = std::move(positions);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Curriculum

CurriculumPlan plan_curriculum(const std::vector<double> &durations_s,
                               const std::vector<double> &thresholds_s) {
  require(!thresholds_s.empty(), "curriculum needs at least one threshold");
  for (std::size_t i = 1; i < thresholds_s.size(); ++i)
    require(thresholds_s[i - 1] < thresholds_s[i], "curriculum thresholds must ascend");
  CurriculumPlan plan;
  plan.thresholds_s = thresholds_s;
  plan.chunks.resize(thresholds_s.size());
  for (std::size_t i = 0; i < durations_s.size(); ++i) {
    const auto it = std::lower_bound(thresholds_s.begin(), thresholds_s.end(), durations_s[i]);
    if (it == thresholds_s.end()) {
      ++plan.dropped;
      continue;
    }
    plan.chunks[static_cast<std::size_t>(it - thresholds_s.begin())].push_back(static_cast<int>(i));
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Models

Matrix FrameEncoder::forward(const Matrix &x, Matrix *hidden) const {
  Matrix pre = W1 * x;
  pre.colwise() += b1;
  Matrix h = pre.array().tanh().matrix();
  Matrix out = W2 * h;
  out.colwise() += b2;
  if (hidden) *hidden = std::move(h);
  return out;
}

FrameEncoder FrameEncoder::Zero(Eigen::Index dim) {
  return {Matrix::Zero(dim, dim), Matrix::Zero(dim, dim), Vector::Zero(dim), Vector::Zero(dim)};
}

Matrix ToyModel::embed(const PhoneSeq &phones) const {
  Matrix Y(E.cols(), static_cast<Eigen::Index>(phones.size()));
  for (std::size_t n = 0; n < phones.size(); ++n)
    Y.col(static_cast<Eigen::Index>(n)) = E.row(phones.phones[n]).transpose();
  return Y;
}

FrameMatrix ToyModel::attention(const Matrix &features, const PhoneSeq &phones,
                                double frame_shift_ms) const {
  const Matrix Xhat = encoder.forward(features);
  return FrameMatrix(column_softmax(similarity(embed(phones), Xhat, heads)), frame_shift_ms,
                     MatrixKind::kAttention);
}

Codebook make_codebook(const Matrix &prototypes, int extra, std::uint64_t seed) {
  require(extra >= 0, "negative extra codeword count");
  Rng rng(seed);
  Matrix rows(prototypes.rows() + extra, prototypes.cols());
  rows.topRows(prototypes.rows()) = prototypes;
  rows.bottomRows(extra) = unit_rows(rng, extra, prototypes.cols());
  return Codebook(rows);
}

ToyModel init_toy_model(int vocab, const Codebook &codebook, const LossConfig &cfg,
                        std::uint64_t seed) {
  require(vocab > 0, "vocabulary must be non-empty");
  cfg.validate();
  const Eigen::Index K = codebook.dim();
  const double s = 1.0 / std::sqrt(static_cast<double>(K));
  Rng rng(Rng::derive(seed, 0x746F79));
  Matrix E = gaussian(rng, vocab, K, 1.0);
  FrameEncoder enc = init_encoder(rng, K);
  ProjectionHeads heads{gaussian(rng, K, K, s), gaussian(rng, K, K, s), Vector::Zero(K),
                        Vector::Zero(K)};
  OutputProjection proj{gaussian(rng, K, 2 * K, 1.0 / std::sqrt(2.0 * K)), Vector::Zero(K)};
  return ToyModel{std::move(E), std::move(enc), std::move(heads), std::move(proj), codebook, cfg};
}

// ---------------------------------------------------------------------------
// Forward-sum training

std::string history_entry_to_json(const HistoryEntry &e) {
  nlohmann::ordered_json doc;
  doc["step"] = e.step;
  doc["loss_m"] = e.loss_m;
  doc["loss_fs"] = e.loss_fs;
  doc["diagonality"] = e.diagonality;
  return doc.dump();
}

FsTrainResult train_fs(ToyModel model, const SyntheticCorpus &corpus,
                       const CurriculumPlan &plan, const FsTrainOptions &opts) {
  require(opts.steps_per_chunk >= 0, "negative step count");
  require(opts.batch >= 1, "batch size must be >= 1");
  require(opts.lr > 0.0 && std::isfinite(opts.lr), "learning rate must be positive");
  for (const auto &chunk : plan.chunks)
    for (int i : chunk)
      require(i >= 0 && static_cast<std::size_t>(i) < corpus.utterances.size(),
              "curriculum refers to a missing utterance");

  const Eigen::Index V = model.E.rows();
  const Eigen::Index K = model.E.cols();
  const Eigen::Index M = model.codebook.size();

  struct Phase {
    int factor;
    LossConfig cfg;
  };
  std::vector<Phase> phases{{1, model.cfg}};
  if (opts.upsample) {
    LossConfig up = model.cfg;
    up.p_low = opts.upsampled_p_low;
    up.p_high = opts.upsampled_p_high;
    up.validate();
    phases.push_back({2, up});
  }
  for (Phase &ph : phases)
    if (opts.no_fs) ph.cfg.lambda = 0.0;

  std::vector<std::vector<int>> chunks;
  std::vector<int> everything(corpus.utterances.size());
  std::iota(everything.begin(), everything.end(), 0);
  for (const auto &chunk : plan.chunks)
    chunks.push_back(opts.no_curriculum ? everything : chunk);

  FsTrainResult result{std::move(model), {}};
  ToyModel &m = result.model;
  Rng batch_rng(Rng::derive(opts.seed, 0x62617463));
  long step = 0;

  for (const Phase &phase : phases) {
    for (const auto &chunk : chunks) {
      if (chunk.empty() || opts.steps_per_chunk == 0) continue;
      double sum_m = 0.0, sum_fs = 0.0;
      for (int s = 0; s < opts.steps_per_chunk; ++s, ++step) {
        std::vector<int> batch;
        if (opts.no_curriculum) {
          for (int b = 0; b < opts.batch; ++b)
            batch.push_back(chunk[static_cast<std::size_t>(batch_rng.below(chunk.size()))]);
        } else {
          batch = sample_without_replacement(batch_rng, chunk, opts.batch);
        }

        ToyGrad g(V, K);
        double step_m = 0.0, step_fs = 0.0, step_loss = 0.0;
        for (std::size_t b = 0; b < batch.size(); ++b) {
          const Utterance &u = corpus.utterances[static_cast<std::size_t>(batch[b])];
          const Matrix clean =
              phase.factor == 1 ? u.features : repeat_frames(u.features, phase.factor);
          const auto T = static_cast<int>(clean.cols());
          const std::uint64_t seed =
              Rng::derive(Rng::derive(opts.seed, static_cast<std::uint64_t>(step)), b);
          const MaskSample ms = sample_masking(T, static_cast<int>(K), phase.cfg, seed);

          Matrix x = clean;
          for (int t = 0; t < T; ++t)
            if (ms.time_mask[static_cast<std::size_t>(t)]) x.col(t).setZero();
          for (Eigen::Index k = 0; k < K; ++k)
            if (ms.feature_mask[static_cast<std::size_t>(k)]) x.row(k).setZero();

          Matrix hidden;
          const Matrix Xhat = m.encoder.forward(x, &hidden);
          const Matrix Y = m.embed(u.phones);

          CombinedInputs in;
          in.Y = &Y;
          in.Xhat = &Xhat;
          in.mask = ms.time_mask;
          in.heads = &m.heads;
          in.projection = &m.projection;
          in.codebook = &m.codebook;
          in.cfg = phase.cfg;
          in.contrastive_frames = opts.contrastive_frames;
          in.contrastive_weight = opts.no_contrastive ? 0.0 : 1.0;
          if (!opts.no_contrastive) {
            in.targets.resize(static_cast<std::size_t>(T));
            for (int t = 0; t < T; ++t)
              in.targets[static_cast<std::size_t>(t)] = m.codebook.nearest(clean.col(t));
            in.negatives = sample_negatives(in.targets, M, phase.cfg.negatives,
                                            Rng::derive(seed, 1));
          }

          CombinedResult r;
          try {
            r = combined_loss(in);
          } catch (const Error &e) {
            // Inputs are finite here, so a rejected intermediate is an overflow.
            if (e.code() == ErrorCode::kInvalidInput) throw TrainingDiverged(step);
            throw;
          }
          if (!std::isfinite(r.loss)) throw TrainingDiverged(step);
          step_loss += r.loss;
          step_m += r.loss_m;
          step_fs += r.loss_fs;

          for (std::size_t n = 0; n < u.phones.size(); ++n)
            g.E.row(u.phones.phones[n]) += r.dY.col(static_cast<Eigen::Index>(n)).transpose();
          encoder_backward(m.encoder, x, hidden, r.dXhat, g.encoder);
          g.heads.Wy += r.d_heads.Wy;
          g.heads.by += r.d_heads.by;
          g.heads.Wx += r.d_heads.Wx;
          g.heads.bx += r.d_heads.bx;
          g.projection.W += r.d_projection.W;
          g.projection.b += r.d_projection.b;
        }

        const double scale = opts.lr / static_cast<double>(batch.size());
        m.E -= scale * g.E;
        sgd(m.encoder, g.encoder, scale);
        m.heads.Wy -= scale * g.heads.Wy;
        m.heads.by -= scale * g.heads.by;
        m.heads.Wx -= scale * g.heads.Wx;
        m.heads.bx -= scale * g.heads.bx;
        m.projection.W -= scale * g.projection.W;
        m.projection.b -= scale * g.projection.b;
        if (!m.E.allFinite() || !m.encoder.W1.allFinite() || !m.encoder.W2.allFinite() ||
            !m.encoder.b1.allFinite() || !m.encoder.b2.allFinite() || !m.heads.Wy.allFinite() ||
            !m.heads.Wx.allFinite() || !m.heads.by.allFinite() || !m.heads.bx.allFinite() ||
            !m.projection.W.allFinite() || !m.projection.b.allFinite())
          throw TrainingDiverged(step);

        sum_m += step_m / static_cast<double>(batch.size());
        sum_fs += step_fs / static_cast<double>(batch.size());
      }
      HistoryEntry e;
      e.step = step;
      e.loss_m = sum_m / opts.steps_per_chunk;
      e.loss_fs = sum_fs / opts.steps_per_chunk;
      e.diagonality = opts.eval_corpus
                          ? mean_diagonality(m, *opts.eval_corpus, 1, opts.eval_utterances)
                          : mean_diagonality(m, corpus, phase.factor, opts.eval_utterances);
      result.history.push_back(e);
    }
  }
  return result;
}

AlignmentScore evaluate_fs(const ToyModel &model, const SyntheticCorpus &corpus,
                           int tolerance_frames) {
  require(!corpus.utterances.empty(), "evaluation corpus is empty");
  AlignmentScore score;
  std::vector<std::pair<SegmentTier, SegmentTier>> pairs;
  long hits = 0, frames = 0;
  for (const Utterance &u : corpus.utterances) {
    const FrameMatrix A = model.attention(u.features, u.phones, corpus.frame_shift_ms);
    score.diagonality += diagonality_score(A);
    const std::vector<int> pos = argmax_positions(A.values());
    for (std::size_t t = 0; t < pos.size(); ++t) hits += pos[t] == u.positions[t];
    frames += static_cast<long>(pos.size());
    pairs.emplace_back(truth_tier(u, corpus.frame_shift_ms),
                       labels_to_segments(argmax_decode(A, u.phones)));
  }
  score.diagonality /= static_cast<double>(corpus.utterances.size());
  score.frame_accuracy = static_cast<double>(hits) / static_cast<double>(frames);
  EvalOptions eo;
  eo.tolerance_ms = tolerance_frames * corpus.frame_shift_ms;
  eo.grid_ms = corpus.frame_shift_ms;
  score.boundaries = batch_eval(pairs, eo);
  return score;
}

std::vector<FrameLabels> bootstrap_fc(const ToyModel &model, const SyntheticCorpus &corpus) {
  std::vector<FrameLabels> out;
  for (const Utterance &u : corpus.utterances)
    out.push_back(argmax_decode(model.attention(u.features, u.phones, corpus.frame_shift_ms),
                                u.phones));
  return out;
}

double frame_agreement(const std::vector<FrameLabels> &labels, const SyntheticCorpus &corpus) {
  if (labels.size() != corpus.utterances.size())
    throw Error(ErrorCode::kDimensionMismatch, "one label sequence per utterance expected");
  long same = 0, total = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto &a = labels[i].labels;
    const auto &b = corpus.utterances[i].labels.labels;
    if (a.size() != b.size())
      throw Error(ErrorCode::kDimensionMismatch, "label length differs from utterance length");
    for (std::size_t t = 0; t < a.size(); ++t) same += a[t] == b[t];
    total += static_cast<long>(a.size());
  }
  return total == 0 ? 0.0 : static_cast<double>(same) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Frame classification

FrameMatrix FcModel::log_posteriors(const Matrix &features, double frame_shift_ms) const {
  Matrix logits = Wc * encoder.forward(features);
  logits.colwise() += bc;
  return FrameMatrix(column_log_softmax(logits).transpose(), frame_shift_ms,
                     MatrixKind::kLogPosterior, inventory.symbols());
}

FcModel train_fc(const std::vector<FrameLabels> &labels, const SyntheticCorpus &corpus,
                 const FcTrainOptions &opts) {
  require(opts.steps >= 0, "negative step count");
  require(opts.batch >= 1, "batch size must be >= 1");
  require(opts.lr > 0.0 && std::isfinite(opts.lr), "learning rate must be positive");
  require(!corpus.utterances.empty(), "training corpus is empty");
  if (labels.size() != corpus.utterances.size())
    throw Error(ErrorCode::kDimensionMismatch, "one label sequence per utterance expected");
  const auto V = static_cast<Eigen::Index>(corpus.inventory.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (static_cast<Eigen::Index>(labels[i].size()) != corpus.utterances[i].features.cols())
      throw Error(ErrorCode::kDimensionMismatch, "label length differs from utterance length");
    for (int l : labels[i].labels) require(l >= 0 && l < V, "frame label outside the inventory");
  }
  const Eigen::Index K = corpus.utterances.front().features.rows();

  Rng init(Rng::derive(opts.seed, 0x6663));
  FcModel m;
  m.encoder = init_encoder(init, K);
  m.Wc = gaussian(init, V, K, 1.0 / std::sqrt(static_cast<double>(K)));
  m.bc = Vector::Zero(V);
  m.inventory = corpus.inventory;

  Rng rng(Rng::derive(opts.seed, 0x62617463));
  for (long step = 0; step < opts.steps; ++step) {
    FrameEncoder g = FrameEncoder::Zero(K);
    Matrix gWc = Matrix::Zero(V, K);
    Vector gbc = Vector::Zero(V);
    for (int b = 0; b < opts.batch; ++b) {
      const std::size_t i = rng.below(corpus.utterances.size());
      const Matrix &x = corpus.utterances[i].features;
      const auto &y = labels[i].labels;
      const auto T = x.cols();
      Matrix hidden;
      const Matrix Xhat = m.encoder.forward(x, &hidden);
      Matrix logits = m.Wc * Xhat;
      logits.colwise() += m.bc;
      const Matrix logp = column_log_softmax(logits);
      double loss = 0.0;
      Matrix d = logp.array().exp().matrix();
      for (Eigen::Index t = 0; t < T; ++t) {
        loss -= logp(y[static_cast<std::size_t>(t)], t);
        d(y[static_cast<std::size_t>(t)], t) -= 1.0;
      }
      if (!std::isfinite(loss)) throw TrainingDiverged(step);
      d /= static_cast<double>(T);
      gWc.noalias() += d * Xhat.transpose();
      gbc += d.rowwise().sum();
      encoder_backward(m.encoder, x, hidden, m.Wc.transpose() * d, g);
    }
    const double scale = opts.lr / opts.batch;
    m.Wc -= scale * gWc;
    m.bc -= scale * gbc;
    sgd(m.encoder, g, scale);
    if (!m.Wc.allFinite() || !m.encoder.W1.allFinite() || !m.encoder.W2.allFinite())
      throw TrainingDiverged(step);
  }
  return m;
}

FcScore evaluate_fc(const FcModel &model, const SyntheticCorpus &corpus, int tolerance_frames) {
  require(!corpus.utterances.empty(), "evaluation corpus is empty");
  FcScore score;
  std::vector<std::pair<SegmentTier, SegmentTier>> pairs;
  long hits = 0, frames = 0;
  for (const Utterance &u : corpus.utterances) {
    const FrameMatrix lp = model.log_posteriors(u.features, corpus.frame_shift_ms);
    for (Eigen::Index t = 0; t < lp.rows(); ++t) {
      Eigen::Index best = 0;
      lp.values().row(t).maxCoeff(&best);
      hits += best == u.labels.labels[static_cast<std::size_t>(t)];
    }
    frames += lp.rows();
    const AlignmentPath path = dtw_forced_decode(lp, u.phones);
    pairs.emplace_back(truth_tier(u, corpus.frame_shift_ms),
                       path_to_segments(path, u.phones, corpus.frame_shift_ms));
  }
  score.frame_accuracy = static_cast<double>(hits) / static_cast<double>(frames);
  EvalOptions eo;
  eo.tolerance_ms = tolerance_frames * corpus.frame_shift_ms;
  eo.grid_ms = corpus.frame_shift_ms;
  score.boundaries = batch_eval(pairs, eo);
  return score;
}

// ---------------------------------------------------------------------------
// Fixture

namespace {

template <typename T>
void take(const nlohmann::json &doc, const char *key, T &out) {
  if (!doc.contains(key)) return;
  try {
    out = doc.at(key).get<T>();
  } catch (const nlohmann::json::exception &e) {
    throw Error(ErrorCode::kParse, std::string("fixture key '") + key + "': " + e.what());
  }
}

void take_range(const nlohmann::json &doc, const char *key, std::pair<int, int> &out) {
  std::vector<int> v;
  take(doc, key, v);
  if (!doc.contains(key)) return;
  if (v.size() != 2) throw Error(ErrorCode::kParse, std::string("'") + key + "' needs [lo, hi]");
  out = {v[0], v[1]};
}

}  // namespace

ToyFixture parse_fixture(std::string_view json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error &e) {
    throw Error(ErrorCode::kParse, std::string("fixture: ") + e.what());
  }
  if (!doc.is_object()) throw Error(ErrorCode::kParse, "fixture must be a JSON object");
  static const std::vector<std::string> known{
      "vocab", "dim", "noise_sigma", "train_count", "test_count", "len_range", "dur_range",
      "extra_codewords", "thresholds_s", "frames_per_second", "frame_shift_ms", "batch",
      "steps_per_chunk", "lr", "loss", "upsampled_p_low", "upsampled_p_high", "contrastive_frames", "corpus_seed",
      "test_seed", "prototype_seed", "fc"};
  for (const auto &[key, value] : doc.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw Error(ErrorCode::kParse, "unknown fixture key '" + key + "'");

  ToyFixture fx;
  take(doc, "vocab", fx.vocab);
  take(doc, "dim", fx.dim);
  take(doc, "noise_sigma", fx.noise_sigma);
  take(doc, "train_count", fx.train_count);
  take(doc, "test_count", fx.test_count);
  take_range(doc, "len_range", fx.len_range);
  take_range(doc, "dur_range", fx.dur_range);
  take(doc, "extra_codewords", fx.extra_codewords);
  take(doc, "thresholds_s", fx.thresholds_s);
  take(doc, "frames_per_second", fx.frames_per_second);
  take(doc, "frame_shift_ms", fx.frame_shift_ms);
  take(doc, "batch", fx.batch);
  take(doc, "steps_per_chunk", fx.steps_per_chunk);
  take(doc, "lr", fx.lr);
  if (doc.contains("loss")) fx.loss = loss_config_from_json(doc.at("loss").dump());
  take(doc, "upsampled_p_low", fx.upsampled_p_low);
  take(doc, "upsampled_p_high", fx.upsampled_p_high);
  if (doc.contains("contrastive_frames")) {
    std::string frames;
    take(doc, "contrastive_frames", frames);
    if (frames == "all")
      fx.contrastive_frames = ContrastiveFrames::kAll;
    else if (frames == "masked")
      fx.contrastive_frames = ContrastiveFrames::kMasked;
    else
      throw Error(ErrorCode::kParse, "contrastive_frames must be \"all\" or \"masked\"");
  }
  take(doc, "corpus_seed", fx.corpus_seed);
  take(doc, "test_seed", fx.test_seed);
  take(doc, "prototype_seed", fx.prototype_seed);
  if (doc.contains("fc")) {
    const auto &fc = doc.at("fc");
    if (!fc.is_object()) throw Error(ErrorCode::kParse, "'fc' must be an object");
    for (const auto &[key, value] : fc.items())
      if (key != "steps" && key != "batch" && key != "lr")
        throw Error(ErrorCode::kParse, "unknown fc key '" + key + "'");
    take(fc, "steps", fx.fc.steps);
    take(fc, "batch", fx.fc.batch);
    take(fc, "lr", fx.fc.lr);
  }
  return fx;
}

ToyFixture load_fixture(const std::string &path) { return parse_fixture(read_file(path)); }

ToyData build_toy_data(const ToyFixture &fx) {
  require(fx.frames_per_second > 0.0, "frames_per_second must be positive");
  require(fx.frame_shift_ms > 0.0, "frame_shift_ms must be positive");
  const PhoneInventory inv = toy_inventory(fx.vocab);
  Matrix protos = make_prototypes(fx.vocab, fx.dim, fx.prototype_seed);
  SyntheticCorpus train = generate_corpus(inv, protos, fx.train_count, fx.corpus_seed,
                                          fx.noise_sigma, fx.dur_range, fx.len_range);
  train.frame_shift_ms = fx.frame_shift_ms;
  for (Utterance &u : train.utterances) u.labels.frame_shift_ms = fx.frame_shift_ms;
  SyntheticCorpus test = generate_corpus(inv, protos, fx.test_count, fx.test_seed,
                                         fx.noise_sigma, fx.dur_range, fx.len_range);
  test.frame_shift_ms = fx.frame_shift_ms;
  std::vector<double> durations;
  for (const Utterance &u : train.utterances)
    durations.push_back(static_cast<double>(u.features.cols()) / fx.frames_per_second);
  CurriculumPlan plan = plan_curriculum(durations, fx.thresholds_s);
  Codebook codebook = make_codebook(protos, fx.extra_codewords, Rng::derive(fx.prototype_seed, 1));
  return ToyData{std::move(protos), std::move(train), upsample(test, 2), std::move(plan),
                 std::move(codebook)};
}

ToyRun run_toy(const ToyFixture &fx, const ToyData &data, std::uint64_t seed,
               const Ablation &ablation, int steps_per_chunk) {
  ToyModel model = init_toy_model(fx.vocab, data.codebook, fx.loss, seed);
  FsTrainOptions o;
  o.steps_per_chunk = steps_per_chunk >= 0 ? steps_per_chunk : fx.steps_per_chunk;
  o.batch = fx.batch;
  o.lr = fx.lr;
  o.seed = seed;
  o.no_fs = ablation.no_fs;
  o.no_contrastive = ablation.no_contrastive;
  o.no_curriculum = ablation.no_curriculum;
  o.upsampled_p_low = fx.upsampled_p_low;
  o.upsampled_p_high = fx.upsampled_p_high;
  o.contrastive_frames = fx.contrastive_frames;
  o.eval_corpus = &data.test;
  ToyRun run{train_fs(std::move(model), data.train, data.plan, o), {}};
  run.score = evaluate_fs(run.fs.model, data.test);
  return run;
}

}  // namespace phonalign
