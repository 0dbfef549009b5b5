/*
 * Copyright 2026 The IBIS Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Little-endian byte encoding shared by the dataset, checkpoint and SVM
// containers.

#ifndef IBIS_BINARY_IO_HPP_
#define IBIS_BINARY_IO_HPP_

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "ibis/errors.hpp"

namespace ibis::io {

class ByteWriter {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    buffer_.insert(buffer_.end(), p, p + n);
  }
  void magic(std::string_view tag) { bytes(tag.data(), tag.size()); }

  template <typename UInt>
  void uint(UInt value) {
    for (std::size_t i = 0; i < sizeof(UInt); ++i) {
      buffer_.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
    }
  }
  void u8(std::uint8_t v) { uint(v); }
  void u16(std::uint16_t v) { uint(v); }
  void u32(std::uint32_t v) { uint(v); }
  void u64(std::uint64_t v) { uint(v); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

  // u16 length prefix, then the raw bytes.
  void short_string(std::string_view s) {
    if (s.size() > 0xFFFF) throw InputError("string too long to encode");
    u16(static_cast<std::uint16_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void f64_array(const std::vector<double>& values) {
    u64(values.size());
    for (double v : values) f64(v);
  }

  const std::vector<std::uint8_t>& buffer() const { return buffer_; }

 private:
  std::vector<std::uint8_t> buffer_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<std::uint8_t> data) : data_(std::move(data)) {}

  std::uint64_t offset() const { return offset_; }
  std::size_t remaining() const { return data_.size() - offset_; }
  bool at_end() const { return offset_ == data_.size(); }

  void expect_magic(std::string_view tag) {
    need(tag.size(), "magic bytes");
    if (std::memcmp(&data_[offset_], tag.data(), tag.size()) != 0) {
      throw FormatError("bad magic bytes, expected \"" + std::string(tag) + "\"",
                        offset_);
    }
    offset_ += tag.size();
  }

  template <typename UInt>
  UInt uint(const char* what) {
    need(sizeof(UInt), what);
    UInt value = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) {
      value |= static_cast<UInt>(static_cast<UInt>(data_[offset_ + i]) << (8 * i));
    }
    offset_ += sizeof(UInt);
    return value;
  }
  std::uint8_t u8(const char* what) { return uint<std::uint8_t>(what); }
  std::uint16_t u16(const char* what) { return uint<std::uint16_t>(what); }
  std::uint32_t u32(const char* what) { return uint<std::uint32_t>(what); }
  std::uint64_t u64(const char* what) { return uint<std::uint64_t>(what); }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }

  std::string short_string(const char* what) {
    const std::uint16_t n = u16(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(&data_[offset_]), n);
    offset_ += n;
    return s;
  }
  std::vector<double> f64_array(const char* what) {
    const std::uint64_t n = u64(what);
    if (n > remaining() / 8) {
      throw FormatError(std::string("truncated payload reading ") + what,
                        offset_);
    }
    std::vector<double> values(n);
    for (double& v : values) v = f64(what);
    return values;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(what, offset_);
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw FormatError(std::string("truncated payload reading ") + what,
                        offset_);
    }
  }

  std::vector<std::uint8_t> data_;
  std::uint64_t offset_ = 0;
};

inline void write_file(const std::filesystem::path& path,
                       const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace ibis::io

#endif  // IBIS_BINARY_IO_HPP_
