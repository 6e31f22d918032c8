/* Copyright 2026 The stb-asv Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#include "stbasv/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <vector>

#include "stbasv/errors.hpp"

namespace stbasv::io {
namespace {

constexpr char kMagic[4] = {'S', 'T', 'B', 'T'};
constexpr uint8_t kVersion = 1;

void put_u32_le(std::string& buf, uint32_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
  buf.push_back(static_cast<char>((v >> 16) & 0xff));
  buf.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f64_le(std::string& buf, double d) {
  const uint64_t v = std::bit_cast<uint64_t>(d);
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t get_u32_le(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

double get_f64_le(const unsigned char* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

}  // namespace

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  if (!t.defined()) throw IoError("save_tensor: cannot write an empty tensor");
  if (t.rank() > 255) throw IoError("save_tensor: rank exceeds 255");
  for (int64_t e : t.shape()) {
    if (e < 0 || e > std::numeric_limits<uint32_t>::max()) {
      throw IoError("save_tensor: extent " + std::to_string(e) +
                    " does not fit the file format");
    }
  }
  std::string buf;
  buf.reserve(6 + 4 * t.shape().size() + 8 * static_cast<size_t>(t.numel()));
  buf.append(kMagic, 4);
  buf.push_back(static_cast<char>(kVersion));
  buf.push_back(static_cast<char>(t.rank()));
  for (int64_t e : t.shape()) put_u32_le(buf, static_cast<uint32_t>(e));
  for (double d : t.data()) put_f64_le(buf, d);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("save_tensor: cannot open " + path.string() + " for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("save_tensor: short write to " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw MissingArtifactError("load_tensor: no such file: " + path.string());
  }
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < 6 || std::memcmp(buf.data(), kMagic, 4) != 0) {
    throw IoError("load_tensor: " + path.string() + " is not a tensor file");
  }
  if (buf[4] != kVersion) {
    throw IoError("load_tensor: " + path.string() + " has unsupported version " +
                  std::to_string(static_cast<int>(buf[4])));
  }
  const int rank = static_cast<int>(buf[5]);
  size_t pos = 6;
  if (buf.size() < pos + 4 * static_cast<size_t>(rank)) {
    throw IoError("load_tensor: " + path.string() + " is truncated");
  }
  Shape shape(static_cast<size_t>(rank));
  for (int i = 0; i < rank; ++i) {
    shape[static_cast<size_t>(i)] = get_u32_le(buf.data() + pos);
    pos += 4;
  }
  const int64_t n = numel_of(shape);
  if (buf.size() != pos + 8 * static_cast<size_t>(n)) {
    throw IoError("load_tensor: " + path.string() + " payload size disagrees with header " +
                  shape_str(shape));
  }
  std::vector<double> data(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    data[static_cast<size_t>(i)] = get_f64_le(buf.data() + pos);
    pos += 8;
  }
  return Tensor::from(std::move(shape), std::move(data));
}

}  // namespace stbasv::io
