// tests/test_toytrain.cc

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
#include <cstring>
#include <set>

#include "check_error.h"
#include "doctest.h"
#include "json.hpp"
#include "phonalign/io.h"
#include "phonalign/rng.h"
#include "phonalign/toytrain.h"

using namespace phonalign;

namespace {

const std::string kData = PHONALIGN_SOURCE_DIR "/data/";

bool same_bytes(const Matrix &a, const Matrix &b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

bool same_model(const ToyModel &a, const ToyModel &b) {
  return same_bytes(a.E, b.E) && same_bytes(a.encoder.W1, b.encoder.W1) &&
         same_bytes(a.encoder.W2, b.encoder.W2) && same_bytes(a.encoder.b1, b.encoder.b1) &&
         same_bytes(a.encoder.b2, b.encoder.b2) && same_bytes(a.heads.Wy, b.heads.Wy) &&
         same_bytes(a.heads.Wx, b.heads.Wx) && same_bytes(a.heads.by, b.heads.by) &&
         same_bytes(a.heads.bx, b.heads.bx) && same_bytes(a.projection.W, b.projection.W) &&
         same_bytes(a.projection.b, b.projection.b) &&
         same_bytes(a.codebook.rows(), b.codebook.rows());
}

// A reduced fixture that trains in well under a second.
ToyFixture small_fixture() {
  ToyFixture fx;
  fx.train_count = 60;
  fx.test_count = 20;
  fx.steps_per_chunk = 20;
  return fx;
}

double corpus_seconds(const Utterance &u, double fps) {
  return static_cast<double>(u.features.cols()) / fps;
}

}  // namespace

TEST_CASE("noiseless corpus frames equal their prototypes") {
  const Matrix protos = make_prototypes(20, 16, 3);
  for (Eigen::Index v = 0; v < protos.rows(); ++v) CHECK(protos.row(v).norm() == doctest::Approx(1.0));
  const SyntheticCorpus c = generate_corpus(toy_inventory(20), protos, 30, 5, 0.0, {3, 3}, {3, 10});
  for (const Utterance &u : c.utterances) {
    CHECK(u.features.cols() == 3 * static_cast<Eigen::Index>(u.phones.size()));
    for (Eigen::Index t = 0; t < u.features.cols(); ++t) {
      const int label = u.labels.labels[static_cast<std::size_t>(t)];
      CHECK(u.features.col(t) == protos.row(label).transpose());
      Eigen::Index nearest = 0;
      (protos * u.features.col(t)).maxCoeff(&nearest);
      CHECK(nearest == label);
    }
  }
}

TEST_CASE("corpus generation is deterministic and per-utterance seeded") {
  const Matrix protos = make_prototypes(20, 16, 3);
  const PhoneInventory inv = toy_inventory(20);
  const SyntheticCorpus a = generate_corpus(inv, protos, 10, 11, 0.05, {2, 8}, {3, 12});
  const SyntheticCorpus b = generate_corpus(inv, protos, 10, 11, 0.05, {2, 8}, {3, 12});
  const SyntheticCorpus longer = generate_corpus(inv, protos, 15, 11, 0.05, {2, 8}, {3, 12});
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(same_bytes(a.utterances[i].features, b.utterances[i].features));
    CHECK(a.utterances[i].phones == b.utterances[i].phones);
    CHECK(same_bytes(a.utterances[i].features, longer.utterances[i].features));
  }
  CHECK(inv.symbol(0) == "p0");
  CHECK(inv.symbol(19) == "p19");
}

TEST_CASE("property: generated utterances realize their transcripts") {
  const Matrix protos = make_prototypes(20, 16, 4);
  const SyntheticCorpus c =
      generate_corpus(toy_inventory(20), protos, 100, 12, 0.05, {2, 8}, {3, 10});
  REQUIRE(c.utterances.size() == 100);
  for (const Utterance &u : c.utterances) {
    const std::size_t N = u.phones.size();
    CHECK(N >= 3);
    CHECK(N <= 10);
    CHECK(std::set<int>(u.phones.phones.begin(), u.phones.phones.end()).size() == N);
    // Labels run-length encode to exactly the transcript, each run 2..8 frames.
    const SegmentTier tier = labels_to_segments(u.labels);
    REQUIRE(tier.size() == N);
    for (std::size_t n = 0; n < N; ++n) {
      CHECK(tier.segments()[n].phone == u.phones.phones[n]);
      const double frames = (tier.segments()[n].end_ms - tier.segments()[n].start_ms) / 20.0;
      CHECK(frames >= 2);
      CHECK(frames <= 8);
    }
    REQUIRE(u.positions.size() == u.labels.size());
    for (std::size_t t = 0; t < u.positions.size(); ++t)
      CHECK(u.phones.phones[static_cast<std::size_t>(u.positions[t])] == u.labels.labels[t]);
    CHECK(std::is_sorted(u.positions.begin(), u.positions.end()));
  }
}

TEST_CASE("upsampling repeats frames and halves the shift") {
  const Matrix protos = make_prototypes(5, 4, 1);
  const SyntheticCorpus c = generate_corpus(toy_inventory(5), protos, 3, 2, 0.1, {2, 3}, {2, 3});
  const SyntheticCorpus up = upsample(c, 2);
  CHECK(up.frame_shift_ms == 10.0);
  for (std::size_t i = 0; i < 3; ++i) {
    const Utterance &a = c.utterances[i], &b = up.utterances[i];
    REQUIRE(b.features.cols() == 2 * a.features.cols());
    for (Eigen::Index t = 0; t < a.features.cols(); ++t) {
      CHECK(b.features.col(2 * t) == a.features.col(t));
      CHECK(b.features.col(2 * t + 1) == a.features.col(t));
    }
    CHECK(labels_to_segments(b.labels) == labels_to_segments(a.labels));
  }
}

TEST_CASE("curriculum plans") {
  SUBCASE("one utterance per chunk") {
    const CurriculumPlan p = plan_curriculum({2.5, 3.2, 9.0}, {3, 5, 10});
    CHECK(p.chunks == std::vector<std::vector<int>>{{0}, {1}, {2}});
    CHECK(p.dropped == 0);
  }
  SUBCASE("all short") {
    const CurriculumPlan p = plan_curriculum({1.0, 2.0, 3.0}, {3, 5, 10});
    CHECK(p.chunks[0] == std::vector<int>{0, 1, 2});
    CHECK(p.chunks[1].empty());
    CHECK(p.chunks[2].empty());
  }
  SUBCASE("too long is dropped") {
    const CurriculumPlan p = plan_curriculum({11.0}, {3, 5, 10});
    CHECK(p.dropped == 1);
    for (const auto &c : p.chunks) CHECK(c.empty());
  }
  CHECK_ERROR_CODE(plan_curriculum({1.0}, {}), ErrorCode::kInvalidInput);
  CHECK_ERROR_CODE(plan_curriculum({1.0}, {5, 3}), ErrorCode::kInvalidInput);
}

TEST_CASE("property: curriculum chunks partition the kept utterances by duration") {
  Rng rng(41);
  const std::vector<double> th{0.3, 0.5, 1.0};
  std::vector<double> durations;
  for (int i = 0; i < 300; ++i) durations.push_back(1.2 * rng.uniform());
  const CurriculumPlan p = plan_curriculum(durations, th);
  std::set<int> seen;
  for (std::size_t k = 0; k < p.chunks.size(); ++k)
    for (int i : p.chunks[k]) {
      CHECK(seen.insert(i).second);
      CHECK(durations[static_cast<std::size_t>(i)] <= th[k]);
      if (k > 0) CHECK(durations[static_cast<std::size_t>(i)] > th[k - 1]);
    }
  long over = 0;
  for (double d : durations) over += d > th.back();
  CHECK(p.dropped == over);
  CHECK(static_cast<long>(seen.size()) + over == 300);
}

TEST_CASE("zero steps leave the model untouched") {
  const ToyFixture fx = small_fixture();
  const ToyData data = build_toy_data(fx);
  const ToyModel init = init_toy_model(fx.vocab, data.codebook, fx.loss, 0);
  FsTrainOptions opts;
  opts.steps_per_chunk = 0;
  const FsTrainResult r = train_fs(init, data.train, data.plan, opts);
  CHECK(r.history.empty());
  CHECK(same_model(r.model, init));
}

TEST_CASE("training keeps the codebook frozen and the history finite") {
  const ToyFixture fx = small_fixture();
  const ToyData data = build_toy_data(fx);
  const ToyRun run = run_toy(fx, data, 1, Ablation{});
  CHECK(same_bytes(run.fs.model.codebook.rows(), data.codebook.rows()));
  REQUIRE_FALSE(run.fs.history.empty());
  long last = 0;
  for (const HistoryEntry &h : run.fs.history) {
    CHECK(std::isfinite(h.loss_m));
    CHECK(std::isfinite(h.loss_fs));
    CHECK(std::isfinite(h.diagonality));
    CHECK(h.step > last);
    last = h.step;
    const auto j = nlohmann::json::parse(history_entry_to_json(h));
    CHECK(j.size() == 4);
    for (const char *k : {"step", "loss_m", "loss_fs", "diagonality"}) CHECK(j.contains(k));
  }
}

TEST_CASE("training is bit-reproducible") {
  const ToyFixture fx = small_fixture();
  const ToyData data = build_toy_data(fx);
  const ToyRun a = run_toy(fx, data, 2, Ablation{}), b = run_toy(fx, data, 2, Ablation{});
  CHECK(same_model(a.fs.model, b.fs.model));
  REQUIRE(a.fs.history.size() == b.fs.history.size());
  for (std::size_t i = 0; i < a.fs.history.size(); ++i)
    CHECK(history_entry_to_json(a.fs.history[i]) == history_entry_to_json(b.fs.history[i]));
  const ToyRun c = run_toy(fx, data, 3, Ablation{});
  CHECK_FALSE(same_model(a.fs.model, c.fs.model));
}

TEST_CASE("noiseless corpus: alignment emerges, and removing forward-sum hurts it") {
  ToyFixture fx;
  fx.noise_sigma = 0.0;
  fx.steps_per_chunk = 84;  // 3 chunks x 2 phases: about 500 updates
  const ToyData data = build_toy_data(fx);
  const ToyRun full = run_toy(fx, data, 0, Ablation{});
  CHECK(full.score.diagonality >= 0.9);
  const ToyRun no_fs = run_toy(fx, data, 0, Ablation{true, false, false});
  CHECK(no_fs.score.diagonality < full.score.diagonality);

  SUBCASE("bootstrap labels from the converged model") {
    const auto labels = bootstrap_fc(full.fs.model, data.test);
    CHECK(frame_agreement(labels, data.test) >= 0.95);
  }
}

TEST_CASE("untrained bootstrap agreement sits near transcript-position chance") {
  const ToyFixture fx = small_fixture();
  const ToyData data = build_toy_data(fx);
  const ToyModel init = init_toy_model(fx.vocab, data.codebook, fx.loss, 0);
  double chance_frames = 0.0, frames = 0.0;
  for (const Utterance &u : data.test.utterances) {
    chance_frames += static_cast<double>(u.labels.size()) / static_cast<double>(u.phones.size());
    frames += static_cast<double>(u.labels.size());
  }
  const double chance = chance_frames / frames;
  const double agree = frame_agreement(bootstrap_fc(init, data.test), data.test);
  MESSAGE("untrained agreement " << agree << ", chance " << chance);
  CHECK(std::abs(agree - chance) <= 0.15);
}

TEST_CASE("a single-phone utterance bootstraps to that phone everywhere") {
  const Matrix protos = make_prototypes(6, 8, 2);
  const SyntheticCorpus c = generate_corpus(toy_inventory(6), protos, 3, 4, 0.05, {3, 6}, {1, 1});
  const ToyModel m = init_toy_model(6, make_codebook(protos, 4, 1), LossConfig{}, 5);
  const auto labels = bootstrap_fc(m, c);
  for (std::size_t i = 0; i < 3; ++i) {
    for (int l : labels[i].labels) CHECK(l == c.utterances[i].phones.phones[0]);
  }
  CHECK(frame_agreement(labels, c) == 1.0);
}

TEST_CASE("frame classifier on ground truth") {
  ToyFixture fx = small_fixture();
  fx.noise_sigma = 0.0;
  const ToyData data = build_toy_data(fx);
  std::vector<FrameLabels> truth;
  for (const Utterance &u : data.train.utterances) truth.push_back(u.labels);
  const SyntheticCorpus train_up = upsample(data.train, 2);
  std::vector<FrameLabels> truth_up;
  for (const Utterance &u : train_up.utterances) truth_up.push_back(u.labels);

  const FcModel trained = train_fc(truth_up, train_up, fx.fc);
  CHECK(evaluate_fc(trained, data.test).frame_accuracy >= 0.99);
  const FrameMatrix lp = trained.log_posteriors(data.test.utterances[0].features, 10.0);
  CHECK(lp.kind() == MatrixKind::kLogPosterior);
  CHECK(lp.values().rows() == data.test.utterances[0].features.cols());

  FcTrainOptions none = fx.fc;
  none.steps = 0;
  const double untrained = evaluate_fc(train_fc(truth_up, train_up, none), data.test).frame_accuracy;
  MESSAGE("untrained FC accuracy " << untrained);
  CHECK(untrained <= 0.3);

  const FcModel again = train_fc(truth_up, train_up, fx.fc);
  CHECK(same_bytes(again.Wc, trained.Wc));
  CHECK(same_bytes(again.encoder.W1, trained.encoder.W1));
}

TEST_CASE("divergence is reported with its step") {
  ToyFixture fx = small_fixture();
  fx.lr = 1e6;
  const ToyData data = build_toy_data(fx);
  try {
    run_toy(fx, data, 0, Ablation{});
    FAIL("expected divergence");
  } catch (const TrainingDiverged &e) {
    CHECK(e.code() == ErrorCode::kTrainingDiverged);
    CHECK(e.step() >= 1);
    CHECK(std::string(e.what()).find("step " + std::to_string(e.step())) != std::string::npos);
  }
}

TEST_CASE("committed fixture equals the built-in defaults") {
  const ToyFixture f = load_fixture(kData + "toy_fixture.json");
  const ToyFixture d;
  CHECK(f.vocab == d.vocab);
  CHECK(f.dim == d.dim);
  CHECK(f.noise_sigma == d.noise_sigma);
  CHECK(f.train_count == d.train_count);
  CHECK(f.test_count == d.test_count);
  CHECK(f.len_range == d.len_range);
  CHECK(f.dur_range == d.dur_range);
  CHECK(f.extra_codewords == d.extra_codewords);
  CHECK(f.thresholds_s == d.thresholds_s);
  CHECK(f.frames_per_second == d.frames_per_second);
  CHECK(f.frame_shift_ms == d.frame_shift_ms);
  CHECK(f.batch == d.batch);
  CHECK(f.steps_per_chunk == d.steps_per_chunk);
  CHECK(f.lr == d.lr);
  CHECK(loss_config_to_json(f.loss) == loss_config_to_json(d.loss));
  CHECK(f.upsampled_p_low == d.upsampled_p_low);
  CHECK(f.upsampled_p_high == d.upsampled_p_high);
  CHECK(f.contrastive_frames == d.contrastive_frames);
  CHECK(f.corpus_seed == d.corpus_seed);
  CHECK(f.test_seed == d.test_seed);
  CHECK(f.prototype_seed == d.prototype_seed);
  CHECK(f.fc.steps == d.fc.steps);
  CHECK(f.fc.lr == d.fc.lr);
  CHECK(f.fc.batch == d.fc.batch);

  CHECK_ERROR_CODE(parse_fixture(R"({"vocab": 20, "bogus": 1})"), ErrorCode::kParse);
  CHECK_ERROR_CODE(parse_fixture(R"({"vocab": "twenty"})"), ErrorCode::kParse);
  CHECK(parse_fixture(R"({"steps_per_chunk": 7})").steps_per_chunk == 7);
}

TEST_CASE("fixture corpus fits the curriculum") {
  const ToyFixture fx;
  const ToyData data = build_toy_data(fx);
  CHECK(data.plan.dropped == 0);
  CHECK(data.train.utterances.size() == 200);
  CHECK(data.test.utterances.size() == 50);
  CHECK(data.test.frame_shift_ms == 10.0);
  for (const auto &c : data.plan.chunks) CHECK_FALSE(c.empty());
  for (const Utterance &u : data.train.utterances) CHECK(corpus_seconds(u, 100.0) <= 1.0);
}
