// src/objective.cc

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

#include "phonalign/objective.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "phonalign/lattice.h"
#include "phonalign/rng.h"

namespace phonalign {

namespace {

// Matches the epsilon torch uses in cosine_similarity.
constexpr double kNormEps = 1e-8;

void require(bool ok, const std::string &what) {
  if (!ok) throw Error(ErrorCode::kDimensionMismatch, what);
}

}  // namespace

ProjectionHeads ProjectionHeads::Identity(Eigen::Index dim) {
  return {Matrix::Identity(dim, dim), Matrix::Identity(dim, dim), Vector::Zero(dim),
          Vector::Zero(dim)};
}

ProjectionHeads ProjectionHeads::Zero(Eigen::Index dim) {
  return {Matrix::Zero(dim, dim), Matrix::Zero(dim, dim), Vector::Zero(dim),
          Vector::Zero(dim)};
}

OutputProjection OutputProjection::Zero(Eigen::Index dim) {
  return {Matrix::Zero(dim, 2 * dim), Vector::Zero(dim)};
}

Codebook::Codebook(Matrix rows) : rows_(std::move(rows)) {
  if (rows_.rows() < 1 || rows_.cols() < 1)
    throw Error(ErrorCode::kInvalidInput, "empty codebook");
  for (Eigen::Index m = 0; m < rows_.rows(); ++m)
    if (std::abs(rows_.row(m).norm() - 1.0) > 1e-9)
      throw Error(ErrorCode::kInvalidInput,
                  "codebook row " + std::to_string(m) + " is not unit norm");
}

int Codebook::nearest(const Eigen::Ref<const Vector> &v) const {
  Vector scores = rows_ * v;
  Eigen::Index best = 0;
  for (Eigen::Index m = 1; m < scores.size(); ++m)
    if (scores(m) > scores(best)) best = m;
  return static_cast<int>(best);
}

void LossConfig::validate() const {
  if (!(kappa > 0.0)) throw Error(ErrorCode::kInvalidInput, "kappa must be positive");
  if (!(lambda >= 0.0)) throw Error(ErrorCode::kInvalidInput, "lambda must be non-negative");
  if (negatives < 1) throw Error(ErrorCode::kInvalidInput, "need at least one negative");
  if (!(p_low >= 0.0 && p_low <= p_high && p_high <= 1.0))
    throw Error(ErrorCode::kInvalidInput, "masking bounds must satisfy 0 <= p_low <= p_high <= 1");
  if (!(feature_mask_frac >= 0.0 && feature_mask_frac <= 1.0))
    throw Error(ErrorCode::kInvalidInput, "feature_mask_frac must lie in [0, 1]");
}

std::string loss_config_to_json(const LossConfig &cfg) {
  nlohmann::ordered_json doc;
  doc["kappa"] = cfg.kappa;
  doc["lambda"] = cfg.lambda;
  doc["negatives"] = cfg.negatives;
  doc["p_low"] = cfg.p_low;
  doc["p_high"] = cfg.p_high;
  doc["feature_mask_frac"] = cfg.feature_mask_frac;
  return doc.dump();
}

LossConfig loss_config_from_json(std::string_view text) {
  static const char *const kKeys[] = {"kappa",  "lambda", "negatives",
                                      "p_low", "p_high", "feature_mask_frac"};
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error &e) {
    throw Error(ErrorCode::kParse, e.what());
  }
  if (!doc.is_object()) throw Error(ErrorCode::kParse, "loss config must be an object");
  for (const auto &item : doc.items())
    if (std::find_if(std::begin(kKeys), std::end(kKeys),
                     [&](const char *k) { return item.key() == k; }) == std::end(kKeys))
      throw Error(ErrorCode::kParse, "unknown loss config key '" + item.key() + "'");
  LossConfig cfg;
  try {
    for (const char *k : kKeys)
      if (!doc.contains(k)) throw Error(ErrorCode::kParse, std::string("missing key '") + k + "'");
    cfg.kappa = doc.at("kappa").get<double>();
    cfg.lambda = doc.at("lambda").get<double>();
    cfg.negatives = doc.at("negatives").get<int>();
    cfg.p_low = doc.at("p_low").get<double>();
    cfg.p_high = doc.at("p_high").get<double>();
    cfg.feature_mask_frac = doc.at("feature_mask_frac").get<double>();
  } catch (const nlohmann::json::exception &e) {
    throw Error(ErrorCode::kParse, e.what());
  }
  cfg.validate();
  return cfg;
}

Matrix similarity(const Matrix &Y, const Matrix &Xhat, const ProjectionHeads &heads) {
  require(Y.rows() == Xhat.rows(), "phone and frame embeddings differ in dimension");
  require(heads.Wy.cols() == Y.rows() && heads.Wx.cols() == Xhat.rows() &&
              heads.Wy.rows() == heads.Wx.rows() && heads.by.size() == heads.Wy.rows() &&
              heads.bx.size() == heads.Wx.rows(),
          "projection heads do not match the embedding dimension");
  Matrix py = heads.Wy * Y;
  py.colwise() += heads.by;
  Matrix px = heads.Wx * Xhat;
  px.colwise() += heads.bx;
  return py.transpose() * px;
}

FrameMatrix similarity_matrix(const EncodedPhones &phones, const EncodedFrames &frames,
                              const ProjectionHeads &heads) {
  return FrameMatrix(similarity(phones.Y, frames.Xhat, heads), frames.frame_shift_ms,
                     MatrixKind::kSimilarity);
}

Matrix column_log_softmax(const Matrix &D) {
  Matrix out(D.rows(), D.cols());
  for (Eigen::Index t = 0; t < D.cols(); ++t) {
    const double m = D.col(t).maxCoeff();
    const double lse = m + std::log((D.col(t).array() - m).exp().sum());
    out.col(t) = D.col(t).array() - lse;
  }
  return out;
}

Matrix column_softmax(const Matrix &D) { return column_log_softmax(D).array().exp(); }

FrameMatrix attention_from_similarity(const FrameMatrix &sim) {
  if (sim.kind() != MatrixKind::kSimilarity)
    throw Error(ErrorCode::kInvalidInput, "expected a similarity matrix");
  return FrameMatrix(column_softmax(sim.values()), sim.frame_shift_ms(), MatrixKind::kAttention,
                     sim.labels());
}

Matrix fuse_states(const Matrix &Xhat, const Matrix &Y, const Matrix &attention) {
  require(Y.cols() == attention.rows(), "attention rows must match phone count");
  require(Xhat.cols() == attention.cols(), "attention columns must match frame count");
  require(Xhat.rows() == Y.rows(), "phone and frame embeddings differ in dimension");
  Matrix H(2 * Xhat.rows(), Xhat.cols());
  H.topRows(Xhat.rows()) = Xhat;
  H.bottomRows(Xhat.rows()) = Y * attention;
  return H;
}

Matrix fuse_states(const EncodedFrames &frames, const EncodedPhones &phones,
                   const FrameMatrix &attention) {
  if (attention.kind() != MatrixKind::kAttention)
    throw Error(ErrorCode::kInvalidInput, "expected an attention matrix");
  return fuse_states(frames.Xhat, phones.Y, attention.values());
}

ContrastiveResult contrastive_loss(const Matrix &predictions, const Codebook &codebook,
                                   const std::vector<int> &targets,
                                   const NegativeSets &negatives,
                                   const std::vector<bool> &scored, const LossConfig &cfg) {
  cfg.validate();
  const Eigen::Index T = predictions.cols();
  require(predictions.rows() == codebook.dim(), "prediction and codeword dimensions differ");
  require(static_cast<Eigen::Index>(targets.size()) == T, "one target per frame required");
  require(static_cast<Eigen::Index>(negatives.size()) == T, "one negative set per frame required");
  require(scored.empty() || static_cast<Eigen::Index>(scored.size()) == T,
          "scored-frame mask has the wrong length");

  ContrastiveResult out;
  out.d_predictions = Matrix::Zero(predictions.rows(), T);
  std::vector<Eigen::Index> frames;
  for (Eigen::Index t = 0; t < T; ++t)
    if (scored.empty() || scored[static_cast<std::size_t>(t)]) frames.push_back(t);
  out.scored_frames = static_cast<int>(frames.size());
  if (frames.empty()) return out;

  const Matrix &Q = codebook.rows();
  const double inv_count = 1.0 / static_cast<double>(frames.size());
  std::vector<int> cand;
  Vector s;
  Vector sims;
  for (Eigen::Index t : frames) {
    const int target = targets[static_cast<std::size_t>(t)];
    const auto &neg = negatives[static_cast<std::size_t>(t)];
    if (target < 0 || target >= codebook.size())
      throw Error(ErrorCode::kInvalidInput, "target index out of range");
    if (static_cast<int>(neg.size()) != cfg.negatives)
      throw Error(ErrorCode::kInvalidNegatives,
                  "frame " + std::to_string(t) + " has " + std::to_string(neg.size()) +
                      " negatives, expected " + std::to_string(cfg.negatives));
    cand.assign(1, target);
    for (int k : neg) {
      if (k == target)
        throw Error(ErrorCode::kInvalidNegatives,
                    "frame " + std::to_string(t) + " lists its target as a negative");
      if (k < 0 || k >= codebook.size())
        throw Error(ErrorCode::kInvalidNegatives, "negative index out of range");
      cand.push_back(k);
    }

    const auto z = predictions.col(t);
    const double znorm = std::max(z.norm(), kNormEps);
    const auto C = static_cast<Eigen::Index>(cand.size());
    sims.resize(C);
    for (Eigen::Index k = 0; k < C; ++k) {
      const auto q = Q.row(cand[static_cast<std::size_t>(k)]).transpose();
      sims(k) = cfg.similarity == Similarity::kCosine
                    ? z.dot(q) / (znorm * std::max(q.norm(), kNormEps))
                    : z.dot(q);
    }
    s = sims / cfg.kappa;
    const double m = s.maxCoeff();
    const double lse = m + std::log((s.array() - m).exp().sum());
    out.loss += (lse - s(0)) * inv_count;

    // d loss_t / d s_k = softmax(s)_k - [k == 0]
    Vector w = (s.array() - lse).exp();
    w(0) -= 1.0;
    w *= inv_count / cfg.kappa;
    auto dz = out.d_predictions.col(t);
    for (Eigen::Index k = 0; k < C; ++k) {
      if (w(k) == 0.0) continue;
      const auto q = Q.row(cand[static_cast<std::size_t>(k)]).transpose();
      if (cfg.similarity == Similarity::kCosine) {
        const double qnorm = std::max(q.norm(), kNormEps);
        dz += w(k) * (q / (znorm * qnorm) - sims(k) * z / (znorm * znorm));
      } else {
        dz += w(k) * q;
      }
    }
  }
  return out;
}

CombinedResult combined_loss(const CombinedInputs &in) {
  if (!in.Y || !in.Xhat || !in.heads || !in.projection || !in.codebook)
    throw Error(ErrorCode::kInvalidInput, "combined_loss inputs are incomplete");
  in.cfg.validate();
  const Matrix &Y = *in.Y;
  const Matrix &Xhat = *in.Xhat;
  const ProjectionHeads &heads = *in.heads;
  const OutputProjection &proj = *in.projection;
  const Eigen::Index K = Xhat.rows();
  const Eigen::Index T = Xhat.cols();
  const Eigen::Index N = Y.cols();
  require(proj.W.rows() == in.codebook->dim() && proj.W.cols() == 2 * K &&
              proj.b.size() == proj.W.rows(),
          "output projection must map 2K to the codeword dimension");
  require(in.mask.empty() || static_cast<Eigen::Index>(in.mask.size()) == T,
          "mask length must equal the frame count");

  CombinedResult r;
  Matrix py = heads.Wy * Y;
  py.colwise() += heads.by;
  Matrix px = heads.Wx * Xhat;
  px.colwise() += heads.bx;
  const Matrix D = py.transpose() * px;
  const Matrix logA = column_log_softmax(D);
  r.attention = logA.array().exp();
  const Matrix &A = r.attention;

  Matrix dA = Matrix::Zero(N, T);     // through the fused context Y A
  Matrix dLogA = Matrix::Zero(N, T);  // through the forward-sum term
  r.dY = Matrix::Zero(Y.rows(), N);
  r.dXhat = Matrix::Zero(K, T);
  r.d_projection.W = Matrix::Zero(proj.W.rows(), proj.W.cols());
  r.d_projection.b = Vector::Zero(proj.b.size());

  if (in.contrastive_weight != 0.0) {
    const Matrix H = fuse_states(Xhat, Y, A);
    Matrix Z = proj.W * H;
    Z.colwise() += proj.b;
    std::vector<bool> scored;
    if (in.contrastive_frames == ContrastiveFrames::kMasked)
      scored = in.mask.empty() ? std::vector<bool>(static_cast<std::size_t>(T), false) : in.mask;
    ContrastiveResult c =
        contrastive_loss(Z, *in.codebook, in.targets, in.negatives, scored, in.cfg);
    r.loss_m = c.loss;
    const Matrix dZ = in.contrastive_weight * c.d_predictions;
    r.d_projection.W = dZ * H.transpose();
    r.d_projection.b = dZ.rowwise().sum();
    const Matrix dH = proj.W.transpose() * dZ;
    r.dXhat += dH.topRows(K);
    const Matrix dCtx = dH.bottomRows(K);
    r.dY += dCtx * A.transpose();
    dA = Y.transpose() * dCtx;
  }

  if (in.cfg.lambda != 0.0) {
    ForwardSumResult fs = forward_sum_loss(logA.transpose());
    const double scale = 1.0 / static_cast<double>(T);
    r.loss_fs = fs.loss * scale;
    dLogA = (in.cfg.lambda * scale) * fs.d_log_attention.transpose();
  }
  r.loss = in.contrastive_weight * r.loss_m + in.cfg.lambda * r.loss_fs;

  // Softmax and log-softmax backward, column by column.
  Matrix dD(N, T);
  for (Eigen::Index t = 0; t < T; ++t) {
    const double a_dot = A.col(t).dot(dA.col(t));
    const double g_sum = dLogA.col(t).sum();
    dD.col(t) = (A.col(t).array() * (dA.col(t).array() - a_dot)).matrix() + dLogA.col(t) -
                g_sum * A.col(t);
  }

  const Matrix dPy = px * dD.transpose();  // K x N
  const Matrix dPx = py * dD;              // K x T
  r.d_heads.Wy = dPy * Y.transpose();
  r.d_heads.by = dPy.rowwise().sum();
  r.d_heads.Wx = dPx * Xhat.transpose();
  r.d_heads.bx = dPx.rowwise().sum();
  r.dY += heads.Wy.transpose() * dPy;
  r.dXhat += heads.Wx.transpose() * dPx;
  return r;
}

MaskSample sample_masking(int num_frames, int dim, const LossConfig &cfg, std::uint64_t seed) {
  cfg.validate();
  if (num_frames < 0 || dim < 0) throw Error(ErrorCode::kInvalidInput, "negative mask size");
  Rng rng(seed);
  MaskSample out;
  const long lo = std::lround(100.0 * cfg.p_low);
  const long hi = std::lround(100.0 * cfg.p_high);
  out.percent = static_cast<int>(rng.between(lo, hi));
  const double p = out.percent / 100.0;
  out.time_mask.assign(static_cast<std::size_t>(num_frames), false);
  for (int t = 0; t < num_frames; ++t) {
    if (rng.uniform() < p) {
      ++out.span_starts;
      const int end = std::min(num_frames, t + kMaskSpanFrames);
      for (int u = t; u < end; ++u) out.time_mask[static_cast<std::size_t>(u)] = true;
    }
  }
  out.feature_mask.assign(static_cast<std::size_t>(dim), false);
  const int width = static_cast<int>(std::ceil(cfg.feature_mask_frac * dim - 1e-12));
  if (width > 0 && dim > 0) {
    const int start = static_cast<int>(rng.between(0, dim - width));
    for (int k = start; k < start + width; ++k) out.feature_mask[static_cast<std::size_t>(k)] = true;
  }
  return out;
}

NegativeSets sample_negatives(const std::vector<int> &targets, Eigen::Index codebook_size,
                              int count, std::uint64_t seed) {
  if (count < 1 || count > codebook_size - 1)
    throw Error(ErrorCode::kInvalidNegatives,
                "cannot draw " + std::to_string(count) + " negatives from a codebook of " +
                    std::to_string(codebook_size));
  Rng rng(seed);
  NegativeSets out(targets.size());
  std::vector<int> pool(static_cast<std::size_t>(codebook_size - 1));
  for (std::size_t t = 0; t < targets.size(); ++t) {
    // Pool = every row but the target; partial Fisher-Yates for `count` draws.
    int j = 0;
    for (int m = 0; m < codebook_size; ++m)
      if (m != targets[t]) pool[static_cast<std::size_t>(j++)] = m;
    auto &neg = out[t];
    neg.resize(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k) {
      const auto pick = static_cast<std::size_t>(k) +
                        rng.below(pool.size() - static_cast<std::size_t>(k));
      std::swap(pool[static_cast<std::size_t>(k)], pool[pick]);
      neg[static_cast<std::size_t>(k)] = pool[static_cast<std::size_t>(k)];
    }
  }
  return out;
}

}  // namespace phonalign
