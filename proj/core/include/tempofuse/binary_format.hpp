#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tempofuse {

/// One float32 matrix inside a binary container, labelled by a one-byte tag.
struct TaggedMatrix {
  std::uint8_t tag = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<float> values;

  bool operator==(const TaggedMatrix&) const = default;
};

/// Little-endian byte sink.
class ByteWriter {
 public:
  void put_bytes(std::span<const std::uint8_t> bytes);
  void put_tag(std::string_view four_cc);
  void put_u8(std::uint8_t v) { bytes_.push_back(v); }
  void put_u32(std::uint32_t v);
  void put_f32(float v);
  void put_matrices(std::span<const TaggedMatrix> matrices);

  std::size_t size() const noexcept { return bytes_.size(); }
  const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

/// Bounds-checked little-endian reader. Running past the end throws a
/// format error that names `what`.
class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::string what)
      : bytes_(bytes), what_(std::move(what)) {}

  std::span<const std::uint8_t> get_bytes(std::size_t n);
  std::uint8_t get_u8();
  std::uint32_t get_u32();
  float get_f32();
  std::vector<TaggedMatrix> get_matrices();

  std::size_t position() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const;

  std::span<const std::uint8_t> bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

/// Feature-cache style container:
///   magic(4) | u32 version | u32 label | u32 count | matrices | u32 CRC32
/// The CRC covers every byte between the magic and the checksum.
std::vector<std::uint8_t> encode_container(std::string_view magic, std::uint32_t version,
                                           std::uint32_t label,
                                           std::span<const TaggedMatrix> matrices);

struct Container {
  std::uint32_t version = 0;
  std::uint32_t label = 0;
  std::vector<TaggedMatrix> matrices;
};

Container decode_container(std::span<const std::uint8_t> bytes, std::string_view magic,
                           const std::string& what);

/// Verifies and strips the trailing CRC32 of a `magic | payload | crc` blob.
/// Returns the payload span (without magic and checksum).
std::span<const std::uint8_t> checked_payload(std::span<const std::uint8_t> bytes,
                                              std::string_view magic, const std::string& what);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

/// Writes to a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace tempofuse
