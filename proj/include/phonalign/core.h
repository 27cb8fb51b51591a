// include/phonalign/core.h

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

#ifndef PHONALIGN_CORE_H_
#define PHONALIGN_CORE_H_

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "phonalign/error.h"

namespace phonalign {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// A closed, ordered set of phone symbols with an optional many-to-one
/// collapse map onto a target inventory (e.g. TIMIT-61 onto CMU-39).
///
/// Symbols listed in `keep` bypass the collapse map and are copied to the
/// target verbatim (the TIMIT flap DX has no CMU counterpart). The target
/// inventory is either given explicitly or derived from the map's values
/// plus the kept symbols, in source-symbol order.
class PhoneInventory {
 public:
  PhoneInventory() = default;
  explicit PhoneInventory(
      std::vector<std::string> symbols, std::vector<std::string> keep = {},
      std::map<std::string, std::string> collapse_map = {},
      std::optional<std::vector<std::string>> targets = std::nullopt);

  std::size_t size() const { return symbols_.size(); }
  const std::vector<std::string> &symbols() const { return symbols_; }
  const std::string &symbol(int index) const;

  std::optional<int> find(std::string_view symbol) const;
  /// Throws kUnknownSymbol naming the offending token.
  int index(std::string_view symbol) const;
  bool contains(std::string_view symbol) const { return find(symbol).has_value(); }

  bool has_collapse() const { return target_ != nullptr; }
  const std::map<std::string, std::string> &collapse_map() const {
    return collapse_map_;
  }
  const std::vector<std::string> &keep() const { return keep_; }
  bool is_kept(std::string_view symbol) const;

  /// Inventory that collapse_seq maps into. Throws kCollapseTargetMissing
  /// when this inventory has no collapse map.
  const PhoneInventory &target() const;

  bool operator==(const PhoneInventory &other) const {
    return symbols_ == other.symbols_;
  }

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, int> index_;
  std::vector<std::string> keep_;
  std::map<std::string, std::string> collapse_map_;
  std::shared_ptr<const PhoneInventory> target_;
};

/// Parses the inventory JSON document
///   {"symbols": [...], "keep": [...], "collapse_map": {...}, "targets": [...]}
/// where everything but "symbols" is optional.
PhoneInventory parse_inventory(std::string_view json_text);
PhoneInventory load_inventory(const std::string &path);
std::string inventory_to_json(const PhoneInventory &inv);

enum class MatrixKind { kFeatures, kSimilarity, kAttention, kLogPosterior, kPosterior };

const char *MatrixKindName(MatrixKind kind);
MatrixKind ParseMatrixKind(std::string_view name);

/// A real matrix tied to a frame axis.
///
/// Layout is frames x classes for features and posteriors. Similarity and
/// attention matrices are stored phones x frames (N x T), so each attention
/// column is one softmax over phone positions. Invariants are checked on
/// construction: all entries finite; posterior rows sum to one; attention
/// columns sum to one (both within 1e-5). `labels`, when present, name the
/// class axis.
class FrameMatrix {
 public:
  static constexpr double kStochasticTolerance = 1e-5;

  FrameMatrix(Matrix values, double frame_shift_ms, MatrixKind kind,
              std::vector<std::string> labels = {});

  const Matrix &values() const { return values_; }
  double frame_shift_ms() const { return frame_shift_ms_; }
  MatrixKind kind() const { return kind_; }
  const std::vector<std::string> &labels() const { return labels_; }

  Eigen::Index rows() const { return values_.rows(); }
  Eigen::Index cols() const { return values_.cols(); }
  bool phones_by_frames() const {
    return kind_ == MatrixKind::kAttention || kind_ == MatrixKind::kSimilarity;
  }
  Eigen::Index num_frames() const {
    return phones_by_frames() ? values_.cols() : values_.rows();
  }
  Eigen::Index num_classes() const {
    return phones_by_frames() ? values_.rows() : values_.cols();
  }

 private:
  Matrix values_;
  double frame_shift_ms_;
  MatrixKind kind_;
  std::vector<std::string> labels_;
};

struct PhoneSeq {
  std::vector<int> phones;

  std::size_t size() const { return phones.size(); }
  bool operator==(const PhoneSeq &) const = default;
};

/// Throws kInvalidInput when empty or an index is outside the inventory.
void validate(const PhoneSeq &seq, const PhoneInventory &inv);

/// Whitespace-separated symbols -> PhoneSeq. Unknown tokens raise
/// kUnknownSymbol with the token in the message.
PhoneSeq parse_transcript(std::string_view text, const PhoneInventory &inv);

struct Segment {
  int phone;
  double start_ms;
  double end_ms;

  bool operator==(const Segment &) const = default;
};

/// Contiguous half-open intervals [start, end) covering [0, total).
class SegmentTier {
 public:
  SegmentTier(std::vector<Segment> segments, double total_duration_ms);

  const std::vector<Segment> &segments() const { return segments_; }
  double total_duration_ms() const { return total_duration_ms_; }
  std::size_t size() const { return segments_.size(); }

  bool operator==(const SegmentTier &) const = default;

 private:
  std::vector<Segment> segments_;
  double total_duration_ms_;
};

struct FrameLabels {
  std::vector<int> labels;
  double frame_shift_ms = 10.0;

  std::size_t size() const { return labels.size(); }
  bool operator==(const FrameLabels &) const = default;
};

PhoneSeq collapse_seq(const PhoneSeq &seq, const PhoneInventory &inv);
SegmentTier collapse_seq(const SegmentTier &tier, const PhoneInventory &inv);

SegmentTier labels_to_segments(const FrameLabels &fl);

/// Frame t takes the phone whose interval contains (t + 0.5) * shift.
FrameLabels segments_to_labels(const SegmentTier &tier, double frame_shift_ms);

}  // namespace phonalign

#endif  // PHONALIGN_CORE_H_
