// src/core.cc

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

#include "phonalign/core.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace phonalign {

const char *ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kIo: return "IoError";
    case ErrorCode::kParse: return "ParseError";
    case ErrorCode::kDuplicateSymbol: return "DuplicateSymbol";
    case ErrorCode::kCollapseTargetMissing: return "CollapseTargetMissing";
    case ErrorCode::kUnmappedSymbol: return "UnmappedSymbol";
    case ErrorCode::kUnknownSymbol: return "UnknownSymbol";
    case ErrorCode::kInventoryMismatch: return "InventoryMismatch";
    case ErrorCode::kInvalidInput: return "InvalidInput";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kInfeasible: return "Infeasible";
    case ErrorCode::kEmptyDecode: return "EmptyDecode";
    case ErrorCode::kInvalidNegatives: return "InvalidNegatives";
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kEmptyTiers: return "EmptyTiers";
    case ErrorCode::kInvalidTier: return "InvalidTier";
    case ErrorCode::kCorruptFile: return "CorruptFile";
    case ErrorCode::kUnsupported: return "Unsupported";
    case ErrorCode::kTrainingDiverged: return "TrainingDiverged";
  }
  return "Error";
}

// ---------------------------------------------------------------------------
// PhoneInventory

PhoneInventory::PhoneInventory(std::vector<std::string> symbols,
                               std::vector<std::string> keep,
                               std::map<std::string, std::string> collapse_map,
                               std::optional<std::vector<std::string>> targets)
    : symbols_(std::move(symbols)),
      keep_(std::move(keep)),
      collapse_map_(std::move(collapse_map)) {
  if (symbols_.empty())
    throw Error(ErrorCode::kInvalidInput, "inventory has no symbols");
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    if (symbols_[i].empty())
      throw Error(ErrorCode::kInvalidInput, "empty phone symbol");
    if (!index_.emplace(symbols_[i], static_cast<int>(i)).second)
      throw Error(ErrorCode::kDuplicateSymbol, "'" + symbols_[i] + "'");
  }
  for (const auto &k : keep_)
    if (!contains(k))
      throw Error(ErrorCode::kUnknownSymbol,
                  "keep symbol '" + k + "' not in inventory");
  for (const auto &[src, dst] : collapse_map_) {
    if (!contains(src))
      throw Error(ErrorCode::kUnknownSymbol,
                  "collapse source '" + src + "' not in inventory");
    if (dst.empty())
      throw Error(ErrorCode::kCollapseTargetMissing,
                  "empty collapse target for '" + src + "'");
  }
  if (collapse_map_.empty() && keep_.empty() && !targets) return;

  std::vector<std::string> target_symbols;
  if (targets) {
    target_symbols = *targets;
  } else {
    std::set<std::string> seen;
    for (const auto &s : symbols_) {
      std::string dst;
      if (is_kept(s)) {
        dst = s;
      } else if (auto it = collapse_map_.find(s); it != collapse_map_.end()) {
        dst = it->second;
      } else {
        continue;
      }
      if (seen.insert(dst).second) target_symbols.push_back(dst);
    }
  }
  target_ = std::make_shared<const PhoneInventory>(std::move(target_symbols));
  for (const auto &[src, dst] : collapse_map_)
    if (!target_->contains(dst))
      throw Error(ErrorCode::kCollapseTargetMissing,
                  "'" + src + "' -> '" + dst + "' not in target inventory");
  for (const auto &k : keep_)
    if (!target_->contains(k))
      throw Error(ErrorCode::kCollapseTargetMissing,
                  "kept symbol '" + k + "' not in target inventory");
}

const std::string &PhoneInventory::symbol(int index) const {
  if (index < 0 || static_cast<std::size_t>(index) >= symbols_.size())
    throw Error(ErrorCode::kInvalidInput,
                "phone index " + std::to_string(index) + " out of range");
  return symbols_[static_cast<std::size_t>(index)];
}

std::optional<int> PhoneInventory::find(std::string_view symbol) const {
  auto it = index_.find(std::string(symbol));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int PhoneInventory::index(std::string_view symbol) const {
  if (auto i = find(symbol)) return *i;
  throw Error(ErrorCode::kUnknownSymbol,
              "unknown phone '" + std::string(symbol) + "'");
}

bool PhoneInventory::is_kept(std::string_view symbol) const {
  return std::find(keep_.begin(), keep_.end(), symbol) != keep_.end();
}

const PhoneInventory &PhoneInventory::target() const {
  if (!target_)
    throw Error(ErrorCode::kCollapseTargetMissing,
                "inventory has no collapse map");
  return *target_;
}

PhoneInventory parse_inventory(std::string_view json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error &e) {
    throw Error(ErrorCode::kParse, e.what());
  }
  try {
    if (!doc.is_object() || !doc.contains("symbols"))
      throw Error(ErrorCode::kParse, "inventory needs a \"symbols\" array");
    auto symbols = doc.at("symbols").get<std::vector<std::string>>();
    std::vector<std::string> keep;
    if (doc.contains("keep")) keep = doc.at("keep").get<std::vector<std::string>>();
    std::map<std::string, std::string> collapse;
    if (doc.contains("collapse_map"))
      collapse = doc.at("collapse_map").get<std::map<std::string, std::string>>();
    std::optional<std::vector<std::string>> targets;
    if (doc.contains("targets"))
      targets = doc.at("targets").get<std::vector<std::string>>();
    return PhoneInventory(std::move(symbols), std::move(keep),
                          std::move(collapse), std::move(targets));
  } catch (const nlohmann::json::exception &e) {
    throw Error(ErrorCode::kParse, e.what());
  }
}

PhoneInventory load_inventory(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_inventory(buf.str());
}

std::string inventory_to_json(const PhoneInventory &inv) {
  nlohmann::ordered_json doc;
  doc["symbols"] = inv.symbols();
  if (!inv.keep().empty()) doc["keep"] = inv.keep();
  if (!inv.collapse_map().empty()) doc["collapse_map"] = inv.collapse_map();
  if (inv.has_collapse()) doc["targets"] = inv.target().symbols();
  return doc.dump();
}

// ---------------------------------------------------------------------------
// FrameMatrix

namespace {

struct KindName {
  MatrixKind kind;
  const char *name;
};

constexpr KindName kKindNames[] = {
    {MatrixKind::kFeatures, "features"},
    {MatrixKind::kSimilarity, "similarity"},
    {MatrixKind::kAttention, "attention"},
    {MatrixKind::kLogPosterior, "log_posterior"},
    {MatrixKind::kPosterior, "posterior"},
};

}  // namespace

const char *MatrixKindName(MatrixKind kind) {
  for (const auto &kn : kKindNames)
    if (kn.kind == kind) return kn.name;
  return "unknown";
}

MatrixKind ParseMatrixKind(std::string_view name) {
  for (const auto &kn : kKindNames)
    if (name == kn.name) return kn.kind;
  throw Error(ErrorCode::kUnsupported,
              "unknown matrix kind '" + std::string(name) + "'");
}

FrameMatrix::FrameMatrix(Matrix values, double frame_shift_ms, MatrixKind kind,
                         std::vector<std::string> labels)
    : values_(std::move(values)),
      frame_shift_ms_(frame_shift_ms),
      kind_(kind),
      labels_(std::move(labels)) {
  if (values_.rows() < 1 || values_.cols() < 1)
    throw Error(ErrorCode::kInvalidInput, "empty frame matrix");
  if (!(frame_shift_ms_ > 0.0) || !std::isfinite(frame_shift_ms_))
    throw Error(ErrorCode::kInvalidInput, "frame shift must be positive");
  if (!values_.allFinite())
    throw Error(ErrorCode::kInvalidInput, "non-finite matrix entry");
  if (!labels_.empty() &&
      static_cast<Eigen::Index>(labels_.size()) != num_classes())
    throw Error(ErrorCode::kDimensionMismatch,
                "label count " + std::to_string(labels_.size()) +
                    " != class count " + std::to_string(num_classes()));
  if (kind_ == MatrixKind::kPosterior) {
    if (values_.minCoeff() < 0.0 || values_.maxCoeff() > 1.0)
      throw Error(ErrorCode::kInvalidInput, "posterior entry outside [0,1]");
    for (Eigen::Index t = 0; t < values_.rows(); ++t)
      if (std::abs(values_.row(t).sum() - 1.0) > kStochasticTolerance)
        throw Error(ErrorCode::kInvalidInput,
                    "posterior row " + std::to_string(t) + " does not sum to 1");
  } else if (kind_ == MatrixKind::kAttention) {
    for (Eigen::Index t = 0; t < values_.cols(); ++t)
      if (std::abs(values_.col(t).sum() - 1.0) > kStochasticTolerance)
        throw Error(ErrorCode::kInvalidInput,
                    "attention column " + std::to_string(t) +
                        " does not sum to 1");
  }
}

// ---------------------------------------------------------------------------
// Sequences and tiers

void validate(const PhoneSeq &seq, const PhoneInventory &inv) {
  if (seq.phones.empty())
    throw Error(ErrorCode::kInvalidInput, "empty phone sequence");
  for (int p : seq.phones)
    if (p < 0 || static_cast<std::size_t>(p) >= inv.size())
      throw Error(ErrorCode::kInvalidInput,
                  "phone index " + std::to_string(p) + " out of range");
}

PhoneSeq parse_transcript(std::string_view text, const PhoneInventory &inv) {
  PhoneSeq seq;
  std::istringstream in{std::string(text)};
  std::string token;
  while (in >> token) seq.phones.push_back(inv.index(token));
  if (seq.phones.empty())
    throw Error(ErrorCode::kInvalidInput, "empty transcript");
  return seq;
}

SegmentTier::SegmentTier(std::vector<Segment> segments, double total_duration_ms)
    : segments_(std::move(segments)), total_duration_ms_(total_duration_ms) {
  constexpr double kTimeTol = 1e-6;
  if (segments_.empty()) throw Error(ErrorCode::kInvalidTier, "tier has no segments");
  if (std::abs(segments_.front().start_ms) > kTimeTol)
    throw Error(ErrorCode::kInvalidTier, "first segment does not start at 0");
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    const Segment &s = segments_[i];
    if (s.phone < 0)
      throw Error(ErrorCode::kInvalidTier, "negative phone index");
    if (!(s.start_ms < s.end_ms))
      throw Error(ErrorCode::kInvalidTier,
                  "segment " + std::to_string(i) + " has start >= end");
    if (i + 1 < segments_.size() &&
        std::abs(s.end_ms - segments_[i + 1].start_ms) > kTimeTol)
      throw Error(ErrorCode::kInvalidTier,
                  "segments " + std::to_string(i) + " and " +
                      std::to_string(i + 1) + " are not contiguous");
  }
  if (std::abs(segments_.back().end_ms - total_duration_ms_) > kTimeTol)
    throw Error(ErrorCode::kInvalidTier, "last segment does not end at total duration");
}

namespace {

int collapse_index(int phone, const PhoneInventory &inv) {
  const std::string &sym = inv.symbol(phone);
  const PhoneInventory &target = inv.target();
  if (inv.is_kept(sym)) return target.index(sym);
  auto it = inv.collapse_map().find(sym);
  if (it == inv.collapse_map().end())
    throw Error(ErrorCode::kUnmappedSymbol, "no collapse mapping for '" + sym + "'");
  return target.index(it->second);
}

}  // namespace

PhoneSeq collapse_seq(const PhoneSeq &seq, const PhoneInventory &inv) {
  PhoneSeq out;
  out.phones.reserve(seq.size());
  for (int p : seq.phones) out.phones.push_back(collapse_index(p, inv));
  return out;
}

SegmentTier collapse_seq(const SegmentTier &tier, const PhoneInventory &inv) {
  std::vector<Segment> segs = tier.segments();
  for (auto &s : segs) s.phone = collapse_index(s.phone, inv);
  return SegmentTier(std::move(segs), tier.total_duration_ms());
}

SegmentTier labels_to_segments(const FrameLabels &fl) {
  if (fl.labels.empty())
    throw Error(ErrorCode::kInvalidInput, "no frames to segment");
  if (!(fl.frame_shift_ms > 0.0))
    throw Error(ErrorCode::kInvalidInput, "frame shift must be positive");
  std::vector<Segment> segs;
  std::size_t begin = 0;
  const std::size_t n = fl.labels.size();
  for (std::size_t t = 1; t <= n; ++t) {
    if (t == n || fl.labels[t] != fl.labels[begin]) {
      segs.push_back({fl.labels[begin], static_cast<double>(begin) * fl.frame_shift_ms,
                      static_cast<double>(t) * fl.frame_shift_ms});
      begin = t;
    }
  }
  return SegmentTier(std::move(segs), static_cast<double>(n) * fl.frame_shift_ms);
}

FrameLabels segments_to_labels(const SegmentTier &tier, double frame_shift_ms) {
  if (!(frame_shift_ms > 0.0))
    throw Error(ErrorCode::kInvalidInput, "frame shift must be positive");
  const auto num_frames = static_cast<std::size_t>(
      std::max(1.0, std::round(tier.total_duration_ms() / frame_shift_ms)));
  FrameLabels fl;
  fl.frame_shift_ms = frame_shift_ms;
  fl.labels.reserve(num_frames);
  const auto &segs = tier.segments();
  std::size_t s = 0;
  for (std::size_t t = 0; t < num_frames; ++t) {
    const double mid = (static_cast<double>(t) + 0.5) * frame_shift_ms;
    while (s + 1 < segs.size() && mid >= segs[s].end_ms) ++s;
    fl.labels.push_back(segs[s].phone);
  }
  return fl;
}

}  // namespace phonalign
