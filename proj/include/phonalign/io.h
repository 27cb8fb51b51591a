// include/phonalign/io.h

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

#ifndef PHONALIGN_IO_H_
#define PHONALIGN_IO_H_

#include <string>
#include <string_view>
#include <vector>

#include "phonalign/core.h"

namespace phonalign {

// ---------------------------------------------------------------------------
// Praat TextGrid, long text format, UTF-8, LF line endings.
//
// Writing emits the layout Praat itself produces (including its trailing
// blanks), with times in seconds to 6 decimals. Only IntervalTiers are
// supported. Concurrent writers to one path are not synchronized.

struct TextGridInterval {
  double xmin = 0.0;
  double xmax = 0.0;
  std::string text;
};

struct TextGridTier {
  std::string name;
  double xmin = 0.0;
  double xmax = 0.0;
  std::vector<TextGridInterval> intervals;
};

struct TextGrid {
  double xmin = 0.0;
  double xmax = 0.0;
  std::vector<TextGridTier> tiers;
};

std::string format_textgrid(const TextGrid &grid);
/// Throws ParseError (with line number) on malformed input and kInvalidTier
/// when a tier's intervals overlap, leave gaps, or are empty.
TextGrid parse_textgrid(std::string_view text);

struct NamedTier {
  std::string name;
  SegmentTier tier;
};

TextGridTier to_textgrid_tier(const NamedTier &tier, const PhoneInventory &inv);
NamedTier from_textgrid_tier(const TextGridTier &tier, const PhoneInventory &inv);

/// Throws kEmptyTiers for an empty list.
void write_textgrid(const std::vector<NamedTier> &tiers, const PhoneInventory &inv,
                    const std::string &path);
std::vector<NamedTier> read_textgrid(const std::string &path, const PhoneInventory &inv);
TextGrid read_textgrid_file(const std::string &path);

// ---------------------------------------------------------------------------
// Matrix container: one JSON header line
//   {"kind":..,"rows":..,"cols":..,"frame_shift_ms":..,"labels":[..],
//    "endianness":"LE","dtype":"f32"}
// followed by rows * cols IEEE-754 binary32 values, little-endian, row-major.
// Values are rounded to binary32 on write.

std::string encode_matrix(const FrameMatrix &m);
FrameMatrix decode_matrix(std::string_view bytes);
void write_matrix(const FrameMatrix &m, const std::string &path);
FrameMatrix read_matrix(const std::string &path);

std::string read_file(const std::string &path);
void write_file(const std::string &path, std::string_view contents);

}  // namespace phonalign

#endif  // PHONALIGN_IO_H_
