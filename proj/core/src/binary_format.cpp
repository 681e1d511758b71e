#include "tempofuse/binary_format.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "tempofuse/error.hpp"

namespace tempofuse {

void ByteWriter::put_bytes(std::span<const std::uint8_t> bytes) {
  bytes_.insert(bytes_.end(), bytes.begin(), bytes.end());
}

void ByteWriter::put_tag(std::string_view four_cc) {
  for (char c : four_cc) bytes_.push_back(static_cast<std::uint8_t>(c));
}

void ByteWriter::put_u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::put_f32(float v) { put_u32(std::bit_cast<std::uint32_t>(v)); }

void ByteWriter::put_matrices(std::span<const TaggedMatrix> matrices) {
  put_u32(static_cast<std::uint32_t>(matrices.size()));
  for (const auto& m : matrices) {
    require(m.values.size() == std::size_t{m.rows} * m.cols, ErrorCode::shape,
            "tagged matrix payload does not match its dimensions");
    put_u8(m.tag);
    put_u32(m.rows);
    put_u32(m.cols);
    bytes_.reserve(bytes_.size() + 4 * m.values.size());
    for (float v : m.values) put_f32(v);
  }
}

void ByteReader::need(std::size_t n) const {
  if (n > remaining()) {
    fail(ErrorCode::format, what_ + ": truncated (needed " + std::to_string(n) +
                                " bytes at offset " + std::to_string(pos_) + ")");
  }
}

std::span<const std::uint8_t> ByteReader::get_bytes(std::size_t n) {
  need(n);
  auto out = bytes_.subspan(pos_, n);
  pos_ += n;
  return out;
}

std::uint8_t ByteReader::get_u8() {
  need(1);
  return bytes_[pos_++];
}

std::uint32_t ByteReader::get_u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[pos_ + i]} << (8 * i);
  pos_ += 4;
  return v;
}

float ByteReader::get_f32() { return std::bit_cast<float>(get_u32()); }

std::vector<TaggedMatrix> ByteReader::get_matrices() {
  const std::uint32_t count = get_u32();
  std::vector<TaggedMatrix> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    TaggedMatrix m;
    m.tag = get_u8();
    m.rows = get_u32();
    m.cols = get_u32();
    const std::size_t n = std::size_t{m.rows} * m.cols;
    need(4 * n);
    m.values.resize(n);
    for (auto& v : m.values) v = get_f32();
    out.push_back(std::move(m));
  }
  return out;
}

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in bounded pieces.
  constexpr std::size_t kPiece = 1u << 30;
  for (std::size_t off = 0; off < bytes.size(); off += kPiece) {
    const std::size_t n = std::min(kPiece, bytes.size() - off);
    crc = ::crc32(crc, bytes.data() + off, static_cast<uInt>(n));
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> encode_container(std::string_view magic, std::uint32_t version,
                                           std::uint32_t label,
                                           std::span<const TaggedMatrix> matrices) {
  ByteWriter w;
  w.put_tag(magic);
  w.put_u32(version);
  w.put_u32(label);
  w.put_matrices(matrices);
  const auto crc = crc32(std::span(w.bytes()).subspan(magic.size()));
  w.put_u32(crc);
  return w.take();
}

std::span<const std::uint8_t> checked_payload(std::span<const std::uint8_t> bytes,
                                              std::string_view magic, const std::string& what) {
  if (bytes.size() < magic.size() ||
      std::memcmp(bytes.data(), magic.data(), magic.size()) != 0) {
    fail(ErrorCode::format, what + ": bad magic (expected \"" + std::string(magic) + "\")");
  }
  if (bytes.size() < magic.size() + 4) {
    fail(ErrorCode::checksum, what + ": file too short to hold a checksum");
  }
  const auto payload = bytes.subspan(magic.size(), bytes.size() - magic.size() - 4);
  ByteReader tail(bytes.subspan(bytes.size() - 4), what);
  const std::uint32_t stored = tail.get_u32();
  if (stored != crc32(payload)) {
    fail(ErrorCode::checksum, what + ": checksum mismatch (truncated or corrupt file)");
  }
  return payload;
}

Container decode_container(std::span<const std::uint8_t> bytes, std::string_view magic,
                           const std::string& what) {
  ByteReader r(checked_payload(bytes, magic, what), what);
  Container c;
  c.version = r.get_u32();
  c.label = r.get_u32();
  c.matrices = r.get_matrices();
  if (r.remaining() != 0) fail(ErrorCode::format, what + ": trailing bytes after matrices");
  return c;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string s = ss.str();
  return {s.begin(), s.end()};
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) fail(ErrorCode::io, "cannot create directory " + path.parent_path().string());
  }
  std::random_device rd;
  fs::path tmp = path;
  tmp += ".tmp" + std::to_string(rd());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCode::io, "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    fail(ErrorCode::io, "cannot rename into " + path.string());
  }
}

}  // namespace tempofuse
