#include <cmath>
#include <numbers>
#include <string>

#include "tempofuse/error.hpp"
#include "tempofuse/matrix.hpp"
#include "tempofuse/rng.hpp"

namespace tempofuse {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::io: return "io";
    case ErrorCode::format: return "format";
    case ErrorCode::checksum: return "checksum";
    case ErrorCode::shape: return "shape";
    case ErrorCode::empty_input: return "empty_input";
    case ErrorCode::numeric: return "numeric";
    case ErrorCode::state: return "state";
  }
  return "unknown";
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require(data_.size() == rows_ * cols_, ErrorCode::shape,
          "matrix data length " + std::to_string(data_.size()) + " != " +
              std::to_string(rows_) + "x" + std::to_string(cols_));
}

Matrix Matrix::col_range(std::size_t begin, std::size_t count) const {
  require(begin + count <= cols_, ErrorCode::shape, "column range out of bounds");
  Matrix out(rows_, count);
  for (std::size_t r = 0; r < rows_; ++r) {
    const float* src = data_.data() + r * cols_ + begin;
    std::copy(src, src + count, out.data_.data() + r * count);
  }
  return out;
}

std::uint64_t Rng::below(std::uint64_t n) {
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace tempofuse
