// src/io.cc

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

#include "phonalign/io.h"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace phonalign {

std::string read_file(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string &path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw Error(ErrorCode::kIo, "short write to " + path);
}

// ---------------------------------------------------------------------------
// TextGrid

namespace {

constexpr double kTierTolSec = 1e-9;

std::string fmt_time(double seconds) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", seconds);
  return buf;
}

std::string quote(const std::string &s) {
  std::string out = "\"";
  for (char c : s) {
    out += c;
    if (c == '"') out += '"';
  }
  return out + "\"";
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

class LineReader {
 public:
  explicit LineReader(std::string_view text) {
    std::size_t pos = 0;
    while (pos <= text.size()) {
      auto nl = text.find('\n', pos);
      if (nl == std::string_view::npos) nl = text.size();
      lines_.emplace_back(text.substr(pos, nl - pos));
      pos = nl + 1;
    }
  }

  std::size_t line_number() const { return next_; }

  // Next non-blank line, trimmed.
  std::string_view next(const char *expecting) {
    while (next_ < lines_.size()) {
      std::string_view l = trim(lines_[next_++]);
      if (!l.empty()) return l;
    }
    throw ParseError(next_, std::string("unexpected end of file, expected ") + expecting);
  }

  // Reads `key = value` and returns the raw value text (a quoted string may
  // continue over several lines).
  std::string value_of(std::string_view key) {
    std::string_view l = next(std::string(key).c_str());
    const std::size_t line = next_;
    const auto eq = l.find('=');
    if (eq == std::string_view::npos || trim(l.substr(0, eq)) != key)
      throw ParseError(line, "expected '" + std::string(key) + " = ...', got '" +
                                 std::string(l) + "'");
    std::string value(trim(l.substr(eq + 1)));
    if (!value.empty() && value.front() == '"') {
      while (!closed_string(value)) {
        if (next_ >= lines_.size()) throw ParseError(line, "unterminated string");
        value += '\n';
        value += lines_[next_++];
        value = std::string(trim(value));
      }
    }
    return value;
  }

  double number(std::string_view key) {
    const std::string v = value_of(key);
    const std::size_t line = next_;
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (trim(std::string_view(v).substr(used)).empty() && std::isfinite(d)) return d;
    } catch (const std::exception &) {
    }
    throw ParseError(line, "expected a number for '" + std::string(key) + "', got '" + v + "'");
  }

  long integer(std::string_view key) {
    const double d = number(key);
    if (d < 0 || d != std::floor(d))
      throw ParseError(next_, "expected a count for '" + std::string(key) + "'");
    return static_cast<long>(d);
  }

  std::string string(std::string_view key) {
    const std::string v = value_of(key);
    if (v.size() < 2 || v.front() != '"' || v.back() != '"')
      throw ParseError(next_, "expected a quoted string for '" + std::string(key) + "'");
    std::string out;
    for (std::size_t i = 1; i + 1 < v.size(); ++i) {
      out += v[i];
      if (v[i] == '"') ++i;  // "" escapes a quote
    }
    return out;
  }

  void expect(std::string_view prefix) {
    std::string_view l = next(std::string(prefix).c_str());
    if (l.substr(0, prefix.size()) != prefix)
      throw ParseError(next_, "expected '" + std::string(prefix) + "', got '" + std::string(l) + "'");
  }

 private:
  static bool closed_string(const std::string &v) {
    if (v.size() < 2 || v.back() != '"') return false;
    // Count the run of quotes at the end; an odd run after the opening
    // quote closes the string.
    std::size_t run = 0;
    for (std::size_t i = v.size() - 1; i > 0 && v[i] == '"'; --i) ++run;
    return run % 2 == 1;
  }

  std::vector<std::string_view> lines_;
  std::size_t next_ = 0;
};

}  // namespace

std::string format_textgrid(const TextGrid &grid) {
  std::ostringstream o;
  o << "File type = \"ooTextFile\"\n"
    << "Object class = \"TextGrid\"\n\n"
    << "xmin = " << fmt_time(grid.xmin) << " \n"
    << "xmax = " << fmt_time(grid.xmax) << " \n"
    << "tiers? <exists> \n"
    << "size = " << grid.tiers.size() << " \n"
    << "item []: \n";
  for (std::size_t i = 0; i < grid.tiers.size(); ++i) {
    const TextGridTier &tier = grid.tiers[i];
    o << "    item [" << i + 1 << "]:\n"
      << "        class = \"IntervalTier\" \n"
      << "        name = " << quote(tier.name) << " \n"
      << "        xmin = " << fmt_time(tier.xmin) << " \n"
      << "        xmax = " << fmt_time(tier.xmax) << " \n"
      << "        intervals: size = " << tier.intervals.size() << " \n";
    for (std::size_t j = 0; j < tier.intervals.size(); ++j) {
      const TextGridInterval &iv = tier.intervals[j];
      o << "        intervals [" << j + 1 << "]:\n"
        << "            xmin = " << fmt_time(iv.xmin) << " \n"
        << "            xmax = " << fmt_time(iv.xmax) << " \n"
        << "            text = " << quote(iv.text) << " \n";
    }
  }
  return o.str();
}

TextGrid parse_textgrid(std::string_view text) {
  if (text.substr(0, 3) == "\xEF\xBB\xBF") text.remove_prefix(3);
  LineReader in(text);
  if (in.string("File type") != "ooTextFile")
    throw ParseError(in.line_number(), "not an ooTextFile");
  if (in.string("Object class") != "TextGrid")
    throw ParseError(in.line_number(), "not a TextGrid");
  TextGrid grid;
  grid.xmin = in.number("xmin");
  grid.xmax = in.number("xmax");
  in.expect("tiers? <exists>");
  const long size = in.integer("size");
  in.expect("item []:");
  for (long i = 0; i < size; ++i) {
    in.expect("item [");
    TextGridTier tier;
    const std::string cls = in.string("class");
    if (cls != "IntervalTier")
      throw ParseError(in.line_number(), "unsupported tier class '" + cls + "'");
    tier.name = in.string("name");
    tier.xmin = in.number("xmin");
    tier.xmax = in.number("xmax");
    const long count = in.integer("intervals: size");
    for (long j = 0; j < count; ++j) {
      in.expect("intervals [");
      TextGridInterval iv;
      iv.xmin = in.number("xmin");
      iv.xmax = in.number("xmax");
      iv.text = in.string("text");
      tier.intervals.push_back(std::move(iv));
    }
    if (tier.intervals.empty())
      throw Error(ErrorCode::kInvalidTier, "tier '" + tier.name + "' has no intervals");
    for (std::size_t j = 0; j < tier.intervals.size(); ++j) {
      const auto &iv = tier.intervals[j];
      if (!(iv.xmin < iv.xmax))
        throw Error(ErrorCode::kInvalidTier,
                    "tier '" + tier.name + "' interval " + std::to_string(j + 1) + " is empty");
      if (j + 1 < tier.intervals.size() &&
          std::abs(iv.xmax - tier.intervals[j + 1].xmin) > kTierTolSec)
        throw Error(ErrorCode::kInvalidTier, "tier '" + tier.name + "' intervals " +
                                                 std::to_string(j + 1) + " and " +
                                                 std::to_string(j + 2) +
                                                 " overlap or leave a gap");
    }
    grid.tiers.push_back(std::move(tier));
  }
  return grid;
}

TextGridTier to_textgrid_tier(const NamedTier &named, const PhoneInventory &inv) {
  TextGridTier out;
  out.name = named.name;
  out.xmin = 0.0;
  out.xmax = named.tier.total_duration_ms() / 1000.0;
  for (const Segment &s : named.tier.segments())
    out.intervals.push_back({s.start_ms / 1000.0, s.end_ms / 1000.0, inv.symbol(s.phone)});
  return out;
}

NamedTier from_textgrid_tier(const TextGridTier &tier, const PhoneInventory &inv) {
  if (std::abs(tier.xmin) > kTierTolSec || tier.intervals.empty() ||
      std::abs(tier.intervals.front().xmin - tier.xmin) > kTierTolSec ||
      std::abs(tier.intervals.back().xmax - tier.xmax) > kTierTolSec)
    throw Error(ErrorCode::kInvalidTier, "tier '" + tier.name + "' must cover [0, xmax]");
  std::vector<Segment> segs;
  for (const auto &iv : tier.intervals) {
    if (iv.text.empty())
      throw Error(ErrorCode::kUnknownSymbol, "tier '" + tier.name + "' has an empty label");
    segs.push_back({inv.index(iv.text), iv.xmin * 1000.0, iv.xmax * 1000.0});
  }
  // Adjacent boundaries were checked against kTierTolSec; make them exact.
  for (std::size_t i = 0; i + 1 < segs.size(); ++i) segs[i].end_ms = segs[i + 1].start_ms;
  segs.front().start_ms = 0.0;
  return {tier.name, SegmentTier(std::move(segs), tier.xmax * 1000.0)};
}

void write_textgrid(const std::vector<NamedTier> &tiers, const PhoneInventory &inv,
                    const std::string &path) {
  if (tiers.empty()) throw Error(ErrorCode::kEmptyTiers, "no tiers to write");
  TextGrid grid;
  for (const auto &t : tiers) {
    grid.tiers.push_back(to_textgrid_tier(t, inv));
    grid.xmax = std::max(grid.xmax, grid.tiers.back().xmax);
  }
  write_file(path, format_textgrid(grid));
}

TextGrid read_textgrid_file(const std::string &path) { return parse_textgrid(read_file(path)); }

std::vector<NamedTier> read_textgrid(const std::string &path, const PhoneInventory &inv) {
  const TextGrid grid = read_textgrid_file(path);
  if (grid.tiers.empty()) throw Error(ErrorCode::kEmptyTiers, path + " has no tiers");
  std::vector<NamedTier> out;
  for (const auto &t : grid.tiers) out.push_back(from_textgrid_tier(t, inv));
  return out;
}

// ---------------------------------------------------------------------------
// Matrix container

std::string encode_matrix(const FrameMatrix &m) {
  nlohmann::ordered_json header;
  header["kind"] = MatrixKindName(m.kind());
  header["rows"] = m.rows();
  header["cols"] = m.cols();
  header["frame_shift_ms"] = m.frame_shift_ms();
  header["labels"] = m.labels();
  header["endianness"] = "LE";
  header["dtype"] = "f32";
  std::string out = header.dump();
  out += '\n';
  out.reserve(out.size() + static_cast<std::size_t>(m.rows() * m.cols()) * 4);
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const auto f = static_cast<float>(m.values()(r, c));
      if (!std::isfinite(f))
        throw Error(ErrorCode::kInvalidInput, "value does not fit in binary32");
      const auto bits = std::bit_cast<std::uint32_t>(f);
      for (int b = 0; b < 4; ++b) out += static_cast<char>((bits >> (8 * b)) & 0xFFu);
    }
  return out;
}

FrameMatrix decode_matrix(std::string_view bytes) {
  const auto nl = bytes.find('\n');
  if (nl == std::string_view::npos) throw Error(ErrorCode::kCorruptFile, "missing header line");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(0, nl));
  } catch (const nlohmann::json::parse_error &e) {
    throw Error(ErrorCode::kCorruptFile, std::string("bad header: ") + e.what());
  }
  std::string kind, endianness, dtype;
  long long rows = 0, cols = 0;
  double shift = 0.0;
  std::vector<std::string> labels;
  try {
    kind = header.at("kind").get<std::string>();
    rows = header.at("rows").get<long long>();
    cols = header.at("cols").get<long long>();
    shift = header.at("frame_shift_ms").get<double>();
    if (header.contains("labels")) labels = header.at("labels").get<std::vector<std::string>>();
    endianness = header.at("endianness").get<std::string>();
    dtype = header.at("dtype").get<std::string>();
  } catch (const nlohmann::json::exception &e) {
    throw Error(ErrorCode::kCorruptFile, std::string("bad header: ") + e.what());
  }
  if (dtype != "f32") throw Error(ErrorCode::kUnsupported, "dtype '" + dtype + "'");
  if (endianness != "LE") throw Error(ErrorCode::kUnsupported, "endianness '" + endianness + "'");
  if (rows < 1 || cols < 1) throw Error(ErrorCode::kCorruptFile, "non-positive matrix shape");
  const std::string_view payload = bytes.substr(nl + 1);
  const auto expected = static_cast<unsigned long long>(rows) * static_cast<unsigned long long>(cols) * 4ULL;
  if (payload.size() != expected)
    throw Error(ErrorCode::kCorruptFile, "payload is " + std::to_string(payload.size()) +
                                             " bytes, header implies " + std::to_string(expected));
  Matrix values(rows, cols);
  std::size_t off = 0;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b)
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(payload[off++])) << (8 * b);
      values(r, c) = static_cast<double>(std::bit_cast<float>(bits));
    }
  return FrameMatrix(std::move(values), shift, ParseMatrixKind(kind), std::move(labels));
}

void write_matrix(const FrameMatrix &m, const std::string &path) {
  write_file(path, encode_matrix(m));
}

FrameMatrix read_matrix(const std::string &path) { return decode_matrix(read_file(path)); }

}  // namespace phonalign
