#include "molingo/container.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace molingo::io {

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = ::crc32(crc, bytes.data() + off, chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::string(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  buf_.insert(buf_.end(), s.begin(), s.end());
}

void ByteReader::need(std::size_t n) const {
  if (data_.size() - pos_ < n) throw TruncatedFile("unexpected end of data");
}

std::uint8_t ByteReader::u8() {
  need(1);
  return data_[pos_++];
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_++]) << (8 * i);
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_++]) << (8 * i);
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }
double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string ByteReader::string() {
  const std::uint32_t n = u32();
  auto b = bytes(n);
  return std::string(b.begin(), b.end());
}

std::span<const std::uint8_t> ByteReader::bytes(std::size_t n) {
  need(n);
  auto s = data_.subspan(pos_, n);
  pos_ += n;
  return s;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return data;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void write_container(const std::filesystem::path& path, std::string_view magic, std::uint32_t version,
                     const std::vector<Record>& records) {
  if (magic.size() != 8) throw std::invalid_argument("container magic must be 8 bytes");
  ByteWriter w;
  w.bytes({reinterpret_cast<const std::uint8_t*>(magic.data()), magic.size()});
  w.u32(version);
  w.u32(static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    w.u32(r.tag);
    w.u64(r.payload.size());
    w.bytes(r.payload);
    w.u32(crc32(r.payload));
  }
  write_file(path, w.buffer());
}

std::vector<Record> read_container(const std::filesystem::path& path, std::string_view magic,
                                   std::uint32_t version) {
  const auto data = read_file(path);
  if (data.empty()) return {};
  ByteReader r(data);
  if (data.size() < 16) throw TruncatedFile(path.string() + ": header truncated");
  auto m = r.bytes(8);
  if (std::memcmp(m.data(), magic.data(), 8) != 0) throw FormatError(path.string() + ": bad magic");
  const std::uint32_t v = r.u32();
  if (v != version) {
    throw VersionMismatch(path.string() + ": format version " + std::to_string(v) + ", expected " +
                          std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  std::vector<Record> records;
  records.reserve(count);
  try {
    for (std::uint32_t i = 0; i < count; ++i) {
      Record rec;
      rec.tag = r.u32();
      const std::uint64_t len = r.u64();
      auto payload = r.bytes(len);
      rec.payload.assign(payload.begin(), payload.end());
      const std::uint32_t crc = r.u32();
      if (crc != crc32(rec.payload)) {
        throw ChecksumMismatch(path.string() + ": checksum mismatch in record " + std::to_string(i));
      }
      records.push_back(std::move(rec));
    }
  } catch (const TruncatedFile&) {
    throw TruncatedFile(path.string() + ": truncated at record " + std::to_string(records.size()));
  }
  return records;
}

std::string file_digest(const std::filesystem::path& path) {
  const auto data = read_file(path);
  std::ostringstream os;
  os << std::hex << std::setw(8) << std::setfill('0') << crc32(data) << '-' << std::dec << data.size();
  return os.str();
}

}  // namespace molingo::io
