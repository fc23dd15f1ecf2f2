#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <variant>

#include "fuseret/tensor.hpp"

namespace fuseret {

// Binary tensor container:
//   "FRTN" | version 0x01 | dtype (0 = f32, 1 = f64) | ndim |
//   ndim x uint64 little-endian extents | row-major little-endian payload.
// No padding, no compression.

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint8_t kTensorFormatVersion = 0x01;

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <typename Scalar>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::f32; }
template <>
constexpr DType dtype_of<double>() { return DType::f64; }

/// Writes one record; returns the number of bytes written.
template <typename Scalar>
std::uint64_t write_tensor(std::ostream& out, const Tensor<Scalar>& t);

/// Reads one record, converting to Scalar if the stored dtype differs.
template <typename Scalar>
Tensor<Scalar> read_tensor(std::istream& in);

template <typename Scalar>
void save_tensor(const std::filesystem::path& path, const Tensor<Scalar>& t);

template <typename Scalar>
Tensor<Scalar> load_tensor(const std::filesystem::path& path);

}  // namespace fuseret
