#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "rclnet/errors.hpp"

namespace rclnet {

/// Little-endian writer over an in-memory buffer.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buffer_.push_back(v); }

  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buffer_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    u32(bits);
  }

  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    for (int i = 0; i < 8; ++i) buffer_.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }

  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    buffer_.insert(buffer_.end(), p, p + n);
  }

  const std::vector<std::uint8_t>& buffer() const { return buffer_; }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(buffer_.data()),
              static_cast<std::streamsize>(buffer_.size()));
    if (!out) throw Error("failed while writing " + path.string());
  }

 private:
  std::vector<std::uint8_t> buffer_;
};

/// Bounds-checked little-endian reader; every overrun raises FormatError with
/// the offending byte offset, so corrupt files fail cleanly.
class ByteReader {
 public:
  explicit ByteReader(std::vector<std::uint8_t> data) : data_(std::move(data)) {}

  static ByteReader from_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw Error("cannot open " + path.string() + " for reading");
    const auto size = in.tellg();
    std::vector<std::uint8_t> data(static_cast<std::size_t>(size));
    in.seekg(0);
    in.read(reinterpret_cast<char*>(data.data()), size);
    if (!in) throw Error("failed while reading " + path.string());
    return ByteReader(std::move(data));
  }

  std::uint64_t offset() const { return pos_; }
  std::uint64_t remaining() const { return data_.size() - pos_; }
  bool exhausted() const { return pos_ == data_.size(); }

  std::uint8_t u8() {
    require(1, "unexpected end of file");
    return data_[pos_++];
  }

  std::uint32_t u32() {
    require(4, "unexpected end of file");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }

  double f64() {
    require(8, "unexpected end of file");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 8;
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }

  void bytes(void* dst, std::size_t n, const char* what = "unexpected end of file") {
    require(n, what);
    std::memcpy(dst, data_.data() + pos_, n);
    pos_ += n;
  }

  void require(std::size_t n, const char* what) const {
    if (data_.size() - pos_ < n) throw FormatError(what, pos_);
  }

 private:
  std::vector<std::uint8_t> data_;
  std::uint64_t pos_ = 0;
};

}  // namespace rclnet
