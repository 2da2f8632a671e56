// Copyright 2026 The POPLIN Toolkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Flat binary records used for checkpoints and candidate dumps. Byte layout,
// all integers and floats little-endian:
//
//   bytes 0..3   magic "PLNR"
//   u32          kind   (RecordKind)
//   u32          tag    (activation for kMlp, mode for kEnsemble, else 0)
//   u32          n      number of dims
//   n x u32      dims   (layer sizes for kMlp, rows/cols for kMatrix, ...)
//   u64          count  number of values
//   count x f64  values (IEEE-754 binary64)
//
// A file is a concatenation of records.

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "poplin/common.hpp"
#include "poplin/net.hpp"

namespace poplin {

enum class RecordKind : std::uint32_t {
  kMlp = 1,
  kNormalizer = 2,
  kVector = 3,
  kMatrix = 4,
  kEnsemble = 5,
};

struct Record {
  RecordKind kind = RecordKind::kVector;
  std::uint32_t tag = 0;
  std::vector<std::uint32_t> dims;
  Vector values;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void PutU32(std::ostream& os, std::uint32_t v) {
  std::array<char, 4> b;
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b.data(), 4);
}

inline void PutU64(std::ostream& os, std::uint64_t v) {
  std::array<char, 8> b;
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b.data(), 8);
}

inline std::uint64_t GetBytes(std::istream& is, int n) {
  std::array<unsigned char, 8> b{};
  is.read(reinterpret_cast<char*>(b.data()), n);
  if (!is) throw FormatError("truncated record");
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline void WriteRecord(std::ostream& os, const Record& r) {
  os.write("PLNR", 4);
  detail::PutU32(os, static_cast<std::uint32_t>(r.kind));
  detail::PutU32(os, r.tag);
  detail::PutU32(os, static_cast<std::uint32_t>(r.dims.size()));
  for (std::uint32_t d : r.dims) detail::PutU32(os, d);
  detail::PutU64(os, r.values.size());
  for (double v : r.values) detail::PutU64(os, std::bit_cast<std::uint64_t>(v));
}

// Returns false at a clean end of stream.
inline bool ReadRecord(std::istream& is, Record& r) {
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() == 0 && is.eof()) return false;
  if (is.gcount() != 4 || std::memcmp(magic, "PLNR", 4) != 0) {
    throw FormatError("bad record magic");
  }
  r.kind = static_cast<RecordKind>(detail::GetBytes(is, 4));
  r.tag = static_cast<std::uint32_t>(detail::GetBytes(is, 4));
  std::uint32_t n = static_cast<std::uint32_t>(detail::GetBytes(is, 4));
  if (n > 4096) throw FormatError("implausible dimension count");
  r.dims.resize(n);
  for (auto& d : r.dims) d = static_cast<std::uint32_t>(detail::GetBytes(is, 4));
  std::uint64_t count = detail::GetBytes(is, 8);
  if (count > (std::uint64_t{1} << 32)) throw FormatError("implausible value count");
  r.values.resize(count);
  for (auto& v : r.values) v = std::bit_cast<double>(detail::GetBytes(is, 8));
  return true;
}

inline std::vector<Record> ReadRecords(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  std::vector<Record> out;
  Record r;
  while (ReadRecord(is, r)) out.push_back(r);
  return out;
}

inline void WriteRecords(const std::string& path, const std::vector<Record>& records) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot write " + path);
  for (const auto& r : records) WriteRecord(os, r);
  if (!os) throw FormatError("write failed for " + path);
}

inline Record ToRecord(const FlatParams& p) {
  Record r;
  r.kind = RecordKind::kMlp;
  r.tag = static_cast<std::uint32_t>(p.shape.hidden);
  for (int n : p.shape.layers) r.dims.push_back(static_cast<std::uint32_t>(n));
  r.values = p.values;
  return r;
}

inline FlatParams ParamsFromRecord(const Record& r) {
  if (r.kind != RecordKind::kMlp) throw FormatError("record is not an MLP");
  if (r.tag > 1) throw FormatError("unknown activation code");
  MlpShape shape;
  shape.hidden = static_cast<Activation>(r.tag);
  for (auto d : r.dims) shape.layers.push_back(static_cast<int>(d));
  try {
    return FlatParams(shape, r.values);
  } catch (const UsageError& e) {
    throw FormatError(std::string("corrupt MLP record: ") + e.what());
  }
}

inline void SaveParams(const std::string& path, const FlatParams& p) {
  WriteRecords(path, {ToRecord(p)});
}

inline FlatParams LoadParams(const std::string& path) {
  auto records = ReadRecords(path);
  if (records.size() != 1) throw FormatError(path + ": expected one MLP record");
  return ParamsFromRecord(records.front());
}

inline Record MatrixRecord(std::uint32_t rows, std::uint32_t cols, Vector values) {
  if (values.size() != static_cast<std::size_t>(rows) * cols) {
    throw UsageError("matrix record size mismatch");
  }
  return Record{RecordKind::kMatrix, 0, {rows, cols}, std::move(values)};
}

}  // namespace poplin
