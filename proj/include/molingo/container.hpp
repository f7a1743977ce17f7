#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

// Shared on-disk framing for corpus, embedding and checkpoint files:
//
//   header  : 8-byte magic, u32 version, u32 record count      (16 bytes)
//   record  : u32 tag, u64 payload length, payload, u32 CRC-32 of payload
//
// All integers and floats are little-endian.
namespace molingo::io {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct VersionMismatch : FormatError {
  using FormatError::FormatError;
};
struct TruncatedFile : FormatError {
  using FormatError::FormatError;
};
struct ChecksumMismatch : FormatError {
  using FormatError::FormatError;
};

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void string(std::string_view s);  // u32 length + UTF-8 bytes
  void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
  const std::vector<std::uint8_t>& buffer() const { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::string string();
  std::span<const std::uint8_t> bytes(std::size_t n);
  std::size_t remaining() const { return data_.size() - pos_; }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const;
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

struct Record {
  std::uint32_t tag = 0;
  std::vector<std::uint8_t> payload;
};

void write_container(const std::filesystem::path& path, std::string_view magic, std::uint32_t version,
                     const std::vector<Record>& records);
// A zero-byte file reads as an empty record list.
std::vector<Record> read_container(const std::filesystem::path& path, std::string_view magic,
                                   std::uint32_t version);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
// Hex CRC-32 of a file's bytes, used for manifests.
std::string file_digest(const std::filesystem::path& path);

}  // namespace molingo::io
