// tests/test_objective.cc

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

#include <cmath>
#include <set>

#include "check_error.h"
#include "doctest.h"
#include "objective_oracle.h"
#include "oracles.h"
#include "phonalign/lattice.h"
#include "phonalign/objective.h"

using namespace phonalign;

namespace {

Codebook random_codebook(Rng &rng, Eigen::Index M, Eigen::Index K) {
  Matrix q = oracle::random_matrix(rng, M, K);
  for (Eigen::Index m = 0; m < M; ++m) q.row(m).normalize();
  return Codebook(q);
}

}  // namespace

TEST_CASE("similarity with identity heads is Y^T Xhat") {
  Matrix Y = Matrix::Identity(3, 2);
  Matrix X = Matrix::Identity(3, 3).leftCols(3);
  const FrameMatrix D = similarity_matrix({Y}, {X, {}, 20}, ProjectionHeads::Identity(3));
  CHECK(D.kind() == MatrixKind::kSimilarity);
  CHECK(D.values().isApprox(Y.transpose() * X));
  CHECK(similarity(Y, Matrix::Zero(3, 4), ProjectionHeads::Identity(3)).isZero());
}

TEST_CASE("similarity matches a hand-multiplied oracle") {
  Rng rng(7);
  const Matrix Y = oracle::random_matrix(rng, 4, 2), X = oracle::random_matrix(rng, 4, 3);
  ProjectionHeads h{oracle::random_matrix(rng, 4, 4), oracle::random_matrix(rng, 4, 4),
                    oracle::random_matrix(rng, 4, 1), oracle::random_matrix(rng, 4, 1)};
  const Matrix D = similarity(Y, X, h);
  for (int n = 0; n < 2; ++n)
    for (int t = 0; t < 3; ++t) {
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) {
        double fy = h.by(k), fx = h.bx(k);
        for (int j = 0; j < 4; ++j) {
          fy += h.Wy(k, j) * Y(j, n);
          fx += h.Wx(k, j) * X(j, t);
        }
        acc += fy * fx;
      }
      CHECK(D(n, t) == doctest::Approx(acc).epsilon(1e-12));
    }
  CHECK_ERROR_CODE(similarity(Y, Matrix::Zero(3, 3), h), ErrorCode::kDimensionMismatch);
}

TEST_CASE("attention is a column softmax") {
  Matrix D(3, 2);
  D << 1, 40, 1, 5, 1, 0;
  const FrameMatrix A = attention_from_similarity(FrameMatrix(D, 20, MatrixKind::kSimilarity));
  CHECK(A.kind() == MatrixKind::kAttention);
  for (int n = 0; n < 3; ++n) CHECK(A.values()(n, 0) == doctest::Approx(1.0 / 3));
  CHECK(A.values()(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(A.values()(2, 1) < 1e-15);
}

TEST_CASE("property: attention columns sum to one and ignore column shifts") {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix D = oracle::random_matrix(rng, 4, 6, 5.0);
    const Matrix A = column_softmax(D);
    for (int t = 0; t < 6; ++t) {
      CHECK(std::abs(A.col(t).sum() - 1.0) <= 1e-6);
      CHECK(A.col(t).minCoeff() > 0.0);
      CHECK(A.col(t).maxCoeff() < 1.0);
      CHECK(A.col(t).isApprox(oracle::softmax(D.col(t))));
    }
    Matrix shifted = D;
    for (int t = 0; t < 6; ++t) shifted.col(t).array() += 100.0 * rng.normal();
    CHECK(argmax_positions(column_softmax(shifted)) == argmax_positions(A));
  }
}

TEST_CASE("fused states") {
  Rng rng(9);
  const Matrix Y = oracle::random_matrix(rng, 3, 2), X = oracle::random_matrix(rng, 3, 4);
  SUBCASE("one-hot column selects a phone") {
    Matrix A = Matrix::Zero(2, 4);
    A.row(1).setOnes();
    const Matrix H = fuse_states(X, Y, A);
    CHECK(H.topRows(3) == X);
    for (int t = 0; t < 4; ++t) CHECK(H.col(t).tail(3) == Y.col(1));
  }
  SUBCASE("uniform attention gives the mean embedding") {
    const Matrix H = fuse_states(X, Y, Matrix::Constant(2, 4, 0.5));
    for (int t = 0; t < 4; ++t) CHECK(H.col(t).tail(3).isApprox(Y.rowwise().mean()));
  }
  SUBCASE("random attention against a loop oracle") {
    const Matrix A = column_softmax(oracle::random_matrix(rng, 2, 4));
    const Matrix H = fuse_states(X, Y, A);
    for (int t = 0; t < 4; ++t)
      for (int k = 0; k < 3; ++k)
        CHECK(H(3 + k, t) == doctest::Approx(A(0, t) * Y(k, 0) + A(1, t) * Y(k, 1)));
  }
  CHECK_ERROR_CODE(fuse_states(X, Y, Matrix::Zero(3, 4)), ErrorCode::kDimensionMismatch);
}

TEST_CASE("contrastive loss closed forms") {
  LossConfig cfg;
  cfg.kappa = 1.0;
  cfg.negatives = 2;
  SUBCASE("positive equal to the prediction, negatives orthogonal") {
    const Codebook cb(Matrix::Identity(3, 3));
    Matrix z = Matrix::Zero(3, 1);
    z(0, 0) = 1.0;
    const ContrastiveResult r = contrastive_loss(z, cb, {0}, {{1, 2}}, {}, cfg);
    CHECK(r.loss == doctest::Approx(-std::log(std::exp(1.0) / (std::exp(1.0) + 2.0))));
    CHECK(r.loss == doctest::Approx(0.5514).epsilon(1e-4));
  }
  SUBCASE("negatives identical to the positive give log(n + 1)") {
    Matrix q(4, 2);
    q << 1, 0, 1, 0, 1, 0, 1, 0;
    cfg.negatives = 3;
    Matrix z(2, 1);
    z << 0.3, -0.7;
    CHECK(contrastive_loss(z, Codebook(q), {0}, {{1, 2, 3}}, {}, cfg).loss ==
          doctest::Approx(std::log(4.0)));
  }
  SUBCASE("small temperature with a dominant positive tends to zero") {
    const Codebook cb(Matrix::Identity(3, 3));
    Matrix z = Matrix::Zero(3, 1);
    z(0, 0) = 1.0;
    cfg.kappa = 0.01;
    CHECK(contrastive_loss(z, cb, {0}, {{1, 2}}, {}, cfg).loss < 1e-30);
  }
}

TEST_CASE("contrastive loss validates negatives") {
  LossConfig cfg;
  cfg.negatives = 2;
  const Codebook cb(Matrix::Identity(3, 3));
  const Matrix z = Matrix::Ones(3, 1);
  CHECK_ERROR_CODE(contrastive_loss(z, cb, {0}, {{0, 1}}, {}, cfg), ErrorCode::kInvalidNegatives);
  CHECK_ERROR_CODE(contrastive_loss(z, cb, {0}, {{1}}, {}, cfg), ErrorCode::kInvalidNegatives);
  CHECK(contrastive_loss(z, cb, {0}, {{1, 2}}, {false}, cfg).scored_frames == 0);
}

TEST_CASE("contrastive loss matches a direct oracle and finite differences") {
  Rng rng(10);
  for (int trial = 0; trial < 30; ++trial) {
    const int K = static_cast<int>(rng.between(2, 8)), T = static_cast<int>(rng.between(1, 10));
    const Codebook cb = random_codebook(rng, 12, K);
    LossConfig cfg;
    cfg.negatives = 5;
    cfg.kappa = 0.5;
    if (trial % 3 == 0) cfg.similarity = Similarity::kDot;
    std::vector<int> targets;
    for (int t = 0; t < T; ++t) targets.push_back(static_cast<int>(rng.below(12)));
    const NegativeSets neg = sample_negatives(targets, 12, 5, 100 + trial);
    std::vector<bool> scored;
    for (int t = 0; t < T; ++t) scored.push_back(rng.uniform() < 0.6);
    const Matrix Z = oracle::random_matrix(rng, K, T);
    const ContrastiveResult r = contrastive_loss(Z, cb, targets, neg, scored, cfg);
    auto f = [&](const Matrix &z) {
      return oracle::contrastive(z, cb.rows(), targets, neg, scored, cfg.kappa,
                                 cfg.similarity == Similarity::kCosine);
    };
    CHECK(r.loss == doctest::Approx(f(Z)).epsilon(1e-10));
    CHECK(oracle::relative_error(r.d_predictions, oracle::numeric_gradient(f, Z)) <= 1e-4);
  }
}

TEST_CASE("property: contrastive loss falls as the positive similarity rises") {
  Matrix q(3, 2);
  q << 1, 0, 0, 1, -1, 0;
  const Codebook cb(q);
  LossConfig cfg;
  cfg.negatives = 2;
  double last = 1e300;
  for (int i = 0; i <= 20; ++i) {
    const double angle = 3.0 * (1.0 - i / 20.0);
    Matrix z(2, 1);
    z << std::cos(angle), std::sin(angle);
    const double loss = contrastive_loss(z, cb, {0}, {{1, 2}}, {}, cfg).loss;
    CHECK(loss < last);
    last = loss;
  }
}

TEST_CASE("combined loss reduces to its parts") {
  Rng rng(12);
  const int K = 4, N = 3, T = 6;
  const Matrix Y = oracle::random_matrix(rng, K, N), X = oracle::random_matrix(rng, K, T);
  const ProjectionHeads heads = ProjectionHeads::Identity(K);
  OutputProjection proj{oracle::random_matrix(rng, K, 2 * K, 0.3), Vector::Zero(K)};
  const Codebook cb = random_codebook(rng, 10, K);
  CombinedInputs in;
  in.Y = &Y;
  in.Xhat = &X;
  in.heads = &heads;
  in.projection = &proj;
  in.codebook = &cb;
  in.cfg.negatives = 4;
  in.contrastive_frames = ContrastiveFrames::kAll;
  for (int t = 0; t < T; ++t) in.targets.push_back(static_cast<int>(rng.below(10)));
  in.negatives = sample_negatives(in.targets, 10, 4, 5);

  SUBCASE("lambda = 0 leaves the contrastive loss") {
    in.cfg.lambda = 0.0;
    const CombinedResult r = combined_loss(in);
    const Matrix H = fuse_states(X, Y, column_softmax(similarity(Y, X, heads)));
    Matrix Z = proj.W * H;
    Z.colwise() += proj.b;
    CHECK(r.loss == doctest::Approx(contrastive_loss(Z, cb, in.targets, in.negatives, {}, in.cfg).loss));
    CHECK(r.loss_fs == 0.0);
  }
  SUBCASE("zero contrastive weight leaves the forward-sum term over T") {
    in.contrastive_weight = 0.0;
    const CombinedResult r = combined_loss(in);
    const Matrix logA = column_log_softmax(similarity(Y, X, heads));
    CHECK(r.loss == doctest::Approx(oracle::brute_force_sum_loss(logA.transpose()) / T));
  }
  SUBCASE("masked frames only") {
    in.contrastive_frames = ContrastiveFrames::kMasked;
    in.mask.assign(T, false);
    const CombinedResult none = combined_loss(in);
    CHECK(none.loss_m == 0.0);
    in.mask[2] = true;
    CHECK(combined_loss(in).loss_m > 0.0);
  }
}

TEST_CASE("combined loss near its joint optimum") {
  // Phone i and frame i share a large embedding, so A is near one-hot on the
  // diagonal, and the output projection copies the frame half of H onto a
  // codeword.
  const int K = 3, N = 3, T = 3;
  const Matrix Y = 30.0 * Matrix::Identity(K, N), X = 30.0 * Matrix::Identity(K, T);
  const ProjectionHeads heads = ProjectionHeads::Identity(K);
  OutputProjection proj{Matrix::Zero(K, 2 * K), Vector::Zero(K)};
  proj.W.leftCols(K) = Matrix::Identity(K, K);
  const Codebook cb(Matrix::Identity(K, K));
  CombinedInputs in;
  in.Y = &Y;
  in.Xhat = &X;
  in.heads = &heads;
  in.projection = &proj;
  in.codebook = &cb;
  in.cfg.negatives = 2;
  in.cfg.kappa = 0.01;
  in.contrastive_frames = ContrastiveFrames::kAll;
  in.targets = {0, 1, 2};
  in.negatives = {{1, 2}, {0, 2}, {0, 1}};
  const CombinedResult r = combined_loss(in);
  CHECK(r.loss_m < 1e-12);
  CHECK(r.loss_fs < 1e-12);
}

TEST_CASE("combined loss gradients match finite differences") {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const int K = static_cast<int>(rng.between(2, 6));
    const int N = static_cast<int>(rng.between(1, 4));
    const int T = static_cast<int>(rng.between(N, 8));
    oracle::CombinedCase c = oracle::random_combined_case(rng, K, N, T, trial % 2 == 0);
    const CombinedResult r = combined_loss(c.inputs());
    CHECK(r.loss == doctest::Approx(c.oracle_loss()).epsilon(1e-9));
    for (const auto &[name, err] : c.gradient_errors(r)) {
      INFO(name);
      CHECK(err <= 1e-4);
    }
  }
}

TEST_CASE("masking samples") {
  LossConfig cfg;
  SUBCASE("fixed p = 5 per cent") {
    cfg.p_low = cfg.p_high = 0.05;
    const MaskSample m = sample_masking(1000, 16, cfg, 42);
    CHECK(m.percent == 5);
    // Binomial(1000, 0.05): mean 50, sd ~6.9.
    CHECK(m.span_starts >= 25);
    CHECK(m.span_starts <= 75);
    int width = 0;
    for (bool b : m.feature_mask) width += b;
    CHECK(width == 2);
  }
  SUBCASE("zero probability masks nothing") {
    cfg.p_low = cfg.p_high = 0.0;
    cfg.feature_mask_frac = 0.0;
    const MaskSample m = sample_masking(200, 8, cfg, 1);
    for (bool b : m.time_mask) CHECK_FALSE(b);
    for (bool b : m.feature_mask) CHECK_FALSE(b);
  }
  SUBCASE("spans are kMaskSpanFrames long and seeds reproduce") {
    cfg.p_low = cfg.p_high = 0.01;
    const MaskSample a = sample_masking(500, 16, cfg, 9), b = sample_masking(500, 16, cfg, 9);
    CHECK(a.time_mask == b.time_mask);
    CHECK(a.feature_mask == b.feature_mask);
    int run = 0;
    for (bool x : a.time_mask) {
      if (x) {
        ++run;
      } else {
        if (run) CHECK(run >= kMaskSpanFrames);
        run = 0;
      }
    }
  }
}

TEST_CASE("negative sampling excludes the target and repeats") {
  const std::vector<int> targets{0, 3, 7, 3};
  const NegativeSets neg = sample_negatives(targets, 8, 7, 77);
  for (std::size_t t = 0; t < targets.size(); ++t) {
    std::set<int> seen(neg[t].begin(), neg[t].end());
    CHECK(seen.size() == 7);
    CHECK_FALSE(seen.count(targets[t]));
  }
  CHECK(sample_negatives(targets, 8, 3, 5) == sample_negatives(targets, 8, 3, 5));
  CHECK_ERROR_CODE(sample_negatives(targets, 8, 8, 1), ErrorCode::kInvalidNegatives);
}

TEST_CASE("loss config JSON") {
  LossConfig cfg;
  cfg.kappa = 0.25;
  cfg.negatives = 7;
  const LossConfig back = loss_config_from_json(loss_config_to_json(cfg));
  CHECK(back.kappa == 0.25);
  CHECK(back.negatives == 7);
  CHECK(back.p_high == cfg.p_high);
  CHECK_ERROR_CODE(loss_config_from_json(R"({"kappa":0.1})"), ErrorCode::kParse);
  CHECK_ERROR_CODE(
      loss_config_from_json(
          R"({"kappa":0.1,"lambda":1,"negatives":5,"p_low":0.1,"p_high":0.2,"feature_mask_frac":0.1,"x":1})"),
      ErrorCode::kParse);
  LossConfig bad;
  bad.p_low = 0.5;
  bad.p_high = 0.1;
  CHECK_ERROR_CODE(bad.validate(), ErrorCode::kInvalidInput);
}

TEST_CASE("codebook rows must be unit norm") {
  CHECK_ERROR_CODE(Codebook(Matrix::Constant(2, 2, 1.0)), ErrorCode::kInvalidInput);
  Matrix q(2, 2);
  q << 1, 0, 0, 1;
  Vector v(2);
  v << 0.2, 0.9;
  CHECK(Codebook(q).nearest(v) == 1);
}
