// tools/phonalign.cc

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

// phonalign: batch front end for forced alignment, segmentation, evaluation
// and the toy training demo.
//
// Exit status: 0 success, 1 I/O or parse error, 2 infeasible alignment or
// empty decode, 3 training divergence.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "phonalign/core.h"
#include "phonalign/io.h"
#include "phonalign/lattice.h"
#include "phonalign/metrics.h"
#include "phonalign/toytrain.h"

namespace fs = std::filesystem;
using namespace phonalign;

namespace {

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInfeasible:
    case ErrorCode::kEmptyDecode:
      return 2;
    case ErrorCode::kTrainingDiverged:
      return 3;
    default:
      return 1;
  }
}

unsigned worker_count(std::size_t jobs) {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char *env = std::getenv("CHARSIU_LITE_THREADS")) {
    char *end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) n = static_cast<unsigned>(v);
  }
  return static_cast<unsigned>(std::min<std::size_t>(n, std::max<std::size_t>(jobs, 1)));
}

// Runs job(i) for i in [0, n) on up to worker_count(n) threads.
void parallel_for(std::size_t n, const std::function<void(std::size_t)> &job) {
  const unsigned workers = worker_count(n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) job(i);
    });
  for (auto &t : pool) t.join();
}

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// ---------------------------------------------------------------------------
// Posterior handling shared by align and segment.

Matrix to_log_posteriors(const FrameMatrix &m) {
  switch (m.kind()) {
    case MatrixKind::kLogPosterior:
      return m.values();
    case MatrixKind::kPosterior:
      return m.values().array().log().matrix();
    default:
      throw Error(ErrorCode::kInvalidInput, std::string("expected posteriors, got a ") +
                                                MatrixKindName(m.kind()) + " matrix");
  }
}

// Checks the matrix columns against the inventory; `blank_ok` admits one
// extra trailing blank column.
void check_columns(const FrameMatrix &m, const PhoneInventory &inv, bool blank_ok) {
  const auto V = static_cast<Eigen::Index>(inv.size());
  if (m.cols() != V && !(blank_ok && m.cols() == V + 1))
    throw Error(ErrorCode::kInventoryMismatch,
                "posteriors have " + std::to_string(m.cols()) + " columns, inventory has " +
                    std::to_string(V) + " symbols");
  for (Eigen::Index c = 0; c < std::min<Eigen::Index>(V, static_cast<Eigen::Index>(m.labels().size())); ++c)
    if (m.labels()[static_cast<std::size_t>(c)] != inv.symbol(static_cast<int>(c)))
      throw Error(ErrorCode::kInventoryMismatch,
                  "posterior column " + std::to_string(c) + " is '" +
                      m.labels()[static_cast<std::size_t>(c)] + "', inventory has '" +
                      inv.symbol(static_cast<int>(c)) + "'");
}

std::string textgrid_text(const SegmentTier &tier, const PhoneInventory &inv) {
  TextGrid grid;
  grid.tiers.push_back(to_textgrid_tier({"phones", tier}, inv));
  grid.xmax = grid.tiers.back().xmax;
  return format_textgrid(grid);
}

SegmentTier segment_matrix(const FrameMatrix &m, const PhoneInventory &inv, bool ctc) {
  check_columns(m, inv, true);
  const Matrix logp = to_log_posteriors(m);
  const auto V = static_cast<Eigen::Index>(inv.size());
  if (ctc) {
    if (logp.cols() != V + 1)
      throw Error(ErrorCode::kInvalidInput, "--ctc needs a trailing blank column");
    const PhoneSeq transcript = ctc_greedy_decode(logp);
    const AlignmentPath path = dtw_forced_decode(Matrix(logp.leftCols(V)), transcript);
    return path_to_segments(path, transcript, m.frame_shift_ms());
  }
  FrameLabels fl;
  fl.frame_shift_ms = m.frame_shift_ms();
  for (Eigen::Index t = 0; t < logp.rows(); ++t) {
    Eigen::Index best = 0;
    logp.row(t).leftCols(V).maxCoeff(&best);
    fl.labels.push_back(static_cast<int>(best));
  }
  return labels_to_segments(fl);
}

// ---------------------------------------------------------------------------
// Subcommands

struct AlignArgs {
  std::string posteriors, transcript, inventory, out;
};

int cmd_align(const AlignArgs &a) {
  const PhoneInventory inv = load_inventory(a.inventory);
  const FrameMatrix m = read_matrix(a.posteriors);
  check_columns(m, inv, false);
  const PhoneSeq transcript = parse_transcript(a.transcript, inv);
  const AlignmentPath path = dtw_forced_decode(to_log_posteriors(m), transcript);
  write_file(a.out, textgrid_text(path_to_segments(path, transcript, m.frame_shift_ms()), inv));
  return 0;
}

struct SegmentArgs {
  std::string posteriors, posteriors_dir, inventory, out, out_dir;
  bool ctc = false;
};

int cmd_segment(const SegmentArgs &a) {
  const PhoneInventory inv = load_inventory(a.inventory);
  if (!a.posteriors.empty()) {
    if (a.out.empty()) throw Error(ErrorCode::kInvalidInput, "--out is required with --posteriors");
    const SegmentTier tier = segment_matrix(read_matrix(a.posteriors), inv, a.ctc);
    write_file(a.out, textgrid_text(tier, inv));
    return 0;
  }
  if (a.out_dir.empty())
    throw Error(ErrorCode::kInvalidInput, "--out-dir is required with --posteriors-dir");
  std::vector<fs::path> inputs;
  std::error_code ec;
  for (fs::directory_iterator it(a.posteriors_dir, ec), end; !ec && it != end; it.increment(ec))
    if (it->is_regular_file()) inputs.push_back(it->path());
  if (ec) throw Error(ErrorCode::kIo, "cannot list " + a.posteriors_dir + ": " + ec.message());
  std::sort(inputs.begin(), inputs.end());
  fs::create_directories(a.out_dir, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create " + a.out_dir + ": " + ec.message());

  struct Outcome {
    std::string text;
    std::string error;
    int code = 0;
  };
  std::vector<Outcome> outcomes(inputs.size());
  parallel_for(inputs.size(), [&](std::size_t i) {
    try {
      outcomes[i].text = textgrid_text(segment_matrix(read_matrix(inputs[i].string()), inv, a.ctc), inv);
    } catch (const Error &e) {
      outcomes[i].error = e.what();
      outcomes[i].code = exit_code_for(e.code());
    } catch (const std::exception &e) {
      outcomes[i].error = e.what();
      outcomes[i].code = 1;
    }
  });
  int status = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (outcomes[i].code != 0) {
      std::cerr << "phonalign: " << inputs[i].string() << ": " << outcomes[i].error << "\n";
      if (status == 0) status = outcomes[i].code;
      continue;
    }
    const fs::path out = fs::path(a.out_dir) / (inputs[i].stem().string() + ".TextGrid");
    write_file(out.string(), outcomes[i].text);
  }
  return status;
}

struct EvalArgs {
  std::string ref, hyp, inventory, tier;
  double tolerance_ms = 20.0;
  double grid_ms = 10.0;
  bool skip_initial = false, optimal = false, macro = false;
};

const TextGridTier &pick_tier(const TextGrid &grid, const std::string &name, const std::string &path) {
  if (grid.tiers.empty()) throw Error(ErrorCode::kEmptyTiers, path + " has no tiers");
  const std::string want = name.empty() ? "phones" : name;
  for (const auto &t : grid.tiers)
    if (t.name == want) return t;
  if (name.empty()) return grid.tiers.front();
  throw Error(ErrorCode::kInvalidTier, path + " has no tier named '" + name + "'");
}

int cmd_eval(const EvalArgs &a) {
  std::vector<std::pair<std::string, std::string>> files;
  if (fs::is_directory(a.ref) || fs::is_directory(a.hyp)) {
    if (!fs::is_directory(a.ref) || !fs::is_directory(a.hyp))
      throw Error(ErrorCode::kInvalidInput, "--ref and --hyp must both be files or both directories");
    std::vector<fs::path> refs;
    for (const auto &e : fs::directory_iterator(a.ref))
      if (e.is_regular_file() && e.path().extension() == ".TextGrid") refs.push_back(e.path());
    std::sort(refs.begin(), refs.end());
    for (const auto &r : refs) {
      const fs::path h = fs::path(a.hyp) / r.filename();
      if (!fs::is_regular_file(h)) throw Error(ErrorCode::kIo, "no hypothesis for " + r.string());
      files.emplace_back(r.string(), h.string());
    }
  } else {
    files.emplace_back(a.ref, a.hyp);
  }

  std::vector<std::pair<TextGridTier, TextGridTier>> raw;
  for (const auto &[r, h] : files)
    raw.emplace_back(pick_tier(read_textgrid_file(r), a.tier, r),
                     pick_tier(read_textgrid_file(h), a.tier, h));

  PhoneInventory inv;
  if (!a.inventory.empty()) {
    inv = load_inventory(a.inventory);
  } else {
    std::set<std::string> ref_labels, hyp_labels;
    for (const auto &[r, h] : raw) {
      for (const auto &iv : r.intervals) ref_labels.insert(iv.text);
      for (const auto &iv : h.intervals) hyp_labels.insert(iv.text);
    }
    for (const auto &l : hyp_labels)
      if (!ref_labels.count(l))
        throw Error(ErrorCode::kInventoryMismatch,
                    "hypothesis label '" + l + "' does not occur in the reference");
    ref_labels.erase("");
    inv = PhoneInventory(std::vector<std::string>(ref_labels.begin(), ref_labels.end()));
  }

  std::vector<std::pair<SegmentTier, SegmentTier>> pairs;
  for (const auto &[r, h] : raw)
    pairs.emplace_back(from_textgrid_tier(r, inv).tier, from_textgrid_tier(h, inv).tier);
  EvalOptions opts;
  opts.tolerance_ms = a.tolerance_ms;
  opts.grid_ms = a.grid_ms;
  opts.skip_initial = a.skip_initial;
  opts.optimal_matching = a.optimal;
  opts.macro = a.macro;
  std::cout << eval_report_to_json(batch_eval(pairs, opts)) << "\n";
  return 0;
}

struct ToyArgs {
  std::uint64_t seed = 0;
  int steps = -1;
  std::string fixture, history;
  bool no_fs = false, no_contrastive = false, no_curriculum = false, fc = false;
};

ToyFixture fixture_of(const ToyArgs &a) {
  return a.fixture.empty() ? ToyFixture{} : load_fixture(a.fixture);
}

void print_table_header() {
  std::cout << "config          seed  diagonality  f1      frame_acc\n";
}

void print_row(const std::string &name, const std::string &seed, double diag, double f1,
               double acc) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-15s %-5s %-12s %-7s %s\n", name.c_str(), seed.c_str(),
                fmt(diag).c_str(), fmt(f1).c_str(), fmt(acc).c_str());
  std::cout << buf;
}

int cmd_train_toy(const ToyArgs &a) {
  const ToyFixture fx = fixture_of(a);
  const ToyData data = build_toy_data(fx);
  const Ablation abl{a.no_fs, a.no_contrastive, a.no_curriculum};
  const ToyRun run = run_toy(fx, data, a.seed, abl, a.steps);

  std::ostringstream jsonl;
  for (const auto &e : run.fs.history) jsonl << history_entry_to_json(e) << "\n";
  if (a.history.empty())
    std::cout << jsonl.str();
  else
    write_file(a.history, jsonl.str());

  std::string name = "full";
  if (a.no_fs) name = "no-fs";
  if (a.no_contrastive) name = a.no_fs ? "no-fs,no-lm" : "no-lm";
  if (a.no_curriculum) name = name == "full" ? "no-curriculum" : name + ",no-curr";
  print_table_header();
  print_row(name, std::to_string(a.seed), run.score.diagonality, run.score.boundaries.f1,
            run.score.frame_accuracy);

  if (a.fc) {
    const SyntheticCorpus up = upsample(data.train, 2);
    FcTrainOptions fo = fx.fc;
    fo.seed = a.seed;
    const auto pseudo = bootstrap_fc(run.fs.model, up);
    std::vector<FrameLabels> truth;
    for (const auto &u : up.utterances) truth.push_back(u.labels);
    const FcScore boot = evaluate_fc(train_fc(pseudo, up, fo), data.test);
    const FcScore gold = evaluate_fc(train_fc(truth, up, fo), data.test);
    std::cout << "pseudo_label_agreement " << fmt(frame_agreement(pseudo, up)) << "\n"
              << "fc_bootstrap_f1 " << fmt(boot.boundaries.f1) << "\n"
              << "fc_truth_f1 " << fmt(gold.boundaries.f1) << "\n";
  }
  return 0;
}

int cmd_ablate(const ToyArgs &a) {
  const ToyFixture fx = fixture_of(a);
  const ToyData data = build_toy_data(fx);
  const std::vector<std::pair<std::string, Ablation>> configs{
      {"full", {}},
      {"no-curriculum", {false, false, true}},
      {"no-fs", {true, false, false}},
      {"no-lm", {false, true, false}}};
  constexpr int kSeeds = 3;
  struct Result {
    double diag = 0.0, f1 = 0.0, acc = 0.0;
    std::string error;
    int code = 0;
  };
  std::vector<Result> results(configs.size() * kSeeds);
  parallel_for(results.size(), [&](std::size_t i) {
    try {
      const ToyRun run = run_toy(fx, data, a.seed + i % kSeeds, configs[i / kSeeds].second, a.steps);
      results[i] = {run.score.diagonality, run.score.boundaries.f1, run.score.frame_accuracy, "", 0};
    } catch (const Error &e) {
      results[i].error = e.what();
      results[i].code = exit_code_for(e.code());
    }
  });
  for (std::size_t i = 0; i < results.size(); ++i)
    if (results[i].code != 0) {
      std::cerr << "phonalign: " << configs[i / kSeeds].first << " seed " << a.seed + i % kSeeds
                << ": " << results[i].error << "\n";
      return results[i].code;
    }
  print_table_header();
  for (std::size_t c = 0; c < configs.size(); ++c) {
    double d = 0, f = 0, acc = 0;
    for (int s = 0; s < kSeeds; ++s) {
      const Result &r = results[c * kSeeds + static_cast<std::size_t>(s)];
      print_row(configs[c].first, std::to_string(a.seed + static_cast<std::uint64_t>(s)), r.diag, r.f1, r.acc);
      d += r.diag;
      f += r.f1;
      acc += r.acc;
    }
    print_row(configs[c].first, "mean", d / kSeeds, f / kSeeds, acc / kSeeds);
  }
  return 0;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"phonalign: phone-to-audio alignment engine"};
  app.require_subcommand(1);

  AlignArgs align;
  auto *c_align = app.add_subcommand("align", "DTW forced alignment of a posteriorgram");
  c_align->add_option("--posteriors", align.posteriors, "Posterior matrix file")->required();
  c_align->add_option("--transcript", align.transcript, "Space-separated phones")->required();
  c_align->add_option("--inventory", align.inventory, "Inventory JSON")->required();
  c_align->add_option("--out", align.out, "Output TextGrid")->required();

  SegmentArgs seg;
  auto *c_seg = app.add_subcommand("segment", "Text-independent segmentation");
  auto *o_post = c_seg->add_option("--posteriors", seg.posteriors, "Posterior matrix file");
  auto *o_dir = c_seg->add_option("--posteriors-dir", seg.posteriors_dir,
                                  "Directory of posterior matrix files");
  o_post->excludes(o_dir);
  c_seg->add_option("--inventory", seg.inventory, "Inventory JSON")->required();
  c_seg->add_option("--out", seg.out, "Output TextGrid");
  c_seg->add_option("--out-dir", seg.out_dir, "Output directory for --posteriors-dir");
  c_seg->add_flag("--ctc", seg.ctc, "Greedy CTC transcript, then DTW");
  c_seg->require_option(2, 0);

  EvalArgs ev;
  auto *c_eval = app.add_subcommand("eval", "Boundary and frame evaluation");
  c_eval->add_option("--ref", ev.ref, "Reference TextGrid (or directory)")->required();
  c_eval->add_option("--hyp", ev.hyp, "Hypothesis TextGrid (or directory)")->required();
  c_eval->add_option("--tolerance-ms", ev.tolerance_ms, "Onset tolerance")->capture_default_str();
  c_eval->add_option("--grid-ms", ev.grid_ms, "Overlap grid")->capture_default_str();
  c_eval->add_option("--inventory", ev.inventory, "Inventory JSON (default: reference labels)");
  c_eval->add_option("--tier", ev.tier, "Tier name (default: phones, else the first tier)");
  c_eval->add_flag("--skip-initial", ev.skip_initial, "Ignore the onset at t = 0");
  c_eval->add_flag("--optimal", ev.optimal, "Maximum matching instead of greedy");
  c_eval->add_flag("--macro", ev.macro, "Average per file instead of pooling counts");

  ToyArgs toy;
  auto *c_toy = app.add_subcommand("train-toy", "Train the synthetic forward-sum model");
  auto *c_abl = app.add_subcommand("ablate", "Full model and the three ablations over 3 seeds");
  for (auto *c : {c_toy, c_abl}) {
    c->add_option("--seed", toy.seed, "Random seed (ablate: first of 3)")->required();
    c->add_option("--steps", toy.steps, "Steps per curriculum chunk (default: fixture)");
    c->add_option("--fixture", toy.fixture, "Fixture JSON (default: built-in)");
  }
  c_toy->add_option("--history", toy.history, "Write history JSONL here instead of stdout");
  c_toy->add_flag("--no-fs", toy.no_fs, "Drop the forward-sum term");
  c_toy->add_flag("--no-contrastive", toy.no_contrastive, "Drop the contrastive term");
  c_toy->add_flag("--no-curriculum", toy.no_curriculum, "Sample batches from the whole corpus");
  c_toy->add_flag("--fc", toy.fc, "Also run the frame-classification bootstrap");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*c_align) return cmd_align(align);
    if (*c_seg) return cmd_segment(seg);
    if (*c_eval) return cmd_eval(ev);
    if (*c_toy) return cmd_train_toy(toy);
    if (*c_abl) return cmd_ablate(toy);
  } catch (const Error &e) {
    std::cerr << "phonalign: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception &e) {
    std::cerr << "phonalign: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
