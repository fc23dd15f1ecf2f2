#include "fuseret/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace fuseret {

static_assert(std::endian::native == std::endian::little,
              "tensor files are little-endian; big-endian hosts need byte swapping");

namespace {

constexpr std::array<char, 4> kMagic{'F', 'R', 'T', 'N'};

template <typename T>
void write_raw(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_raw(std::istream& in) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw FormatError("tensor file truncated");
  }
  return value;
}

template <typename Stored, typename Scalar>
std::vector<Scalar> read_payload(std::istream& in, std::size_t count) {
  std::vector<Stored> raw(count);
  if (count > 0 &&
      !in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count * sizeof(Stored)))) {
    throw FormatError("tensor payload truncated");
  }
  if constexpr (std::is_same_v<Stored, Scalar>) {
    return raw;
  } else {
    return std::vector<Scalar>(raw.begin(), raw.end());
  }
}

}  // namespace

template <typename Scalar>
std::uint64_t write_tensor(std::ostream& out, const Tensor<Scalar>& t) {
  if (t.ndim() > 255) throw FormatError("tensor rank exceeds 255");
  out.write(kMagic.data(), kMagic.size());
  write_raw(out, kTensorFormatVersion);
  write_raw(out, static_cast<std::uint8_t>(dtype_of<Scalar>()));
  write_raw(out, static_cast<std::uint8_t>(t.ndim()));
  for (Index e : t.shape()) write_raw(out, static_cast<std::uint64_t>(e));
  const auto values = t.data();
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(Scalar)));
  if (!out) throw FormatError("failed writing tensor");
  return 4 + 3 + 8 * static_cast<std::uint64_t>(t.ndim()) + values.size() * sizeof(Scalar);
}

template <typename Scalar>
Tensor<Scalar> read_tensor(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size())) throw FormatError("tensor file truncated");
  if (magic != kMagic) throw FormatError("bad tensor magic");
  const auto version = read_raw<std::uint8_t>(in);
  if (version != kTensorFormatVersion) {
    throw FormatError("unsupported tensor format version " + std::to_string(version));
  }
  const auto dtype = read_raw<std::uint8_t>(in);
  const auto ndim = read_raw<std::uint8_t>(in);
  Shape shape(ndim);
  for (auto& e : shape) {
    const auto extent = read_raw<std::uint64_t>(in);
    if (extent > (std::uint64_t{1} << 40)) throw FormatError("implausible tensor extent");
    e = static_cast<Index>(extent);
  }
  const auto count = static_cast<std::size_t>(shape_numel(shape));
  switch (static_cast<DType>(dtype)) {
    case DType::f32:
      return Tensor<Scalar>(std::move(shape), read_payload<float, Scalar>(in, count));
    case DType::f64:
      return Tensor<Scalar>(std::move(shape), read_payload<double, Scalar>(in, count));
  }
  throw FormatError("unknown tensor dtype byte " + std::to_string(dtype));
}

template <typename Scalar>
void save_tensor(const std::filesystem::path& path, const Tensor<Scalar>& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_tensor(out, t);
}

template <typename Scalar>
Tensor<Scalar> load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return read_tensor<Scalar>(in);
}

template std::uint64_t write_tensor(std::ostream&, const Tensor<float>&);
template std::uint64_t write_tensor(std::ostream&, const Tensor<double>&);
template Tensor<float> read_tensor(std::istream&);
template Tensor<double> read_tensor(std::istream&);
template void save_tensor(const std::filesystem::path&, const Tensor<float>&);
template void save_tensor(const std::filesystem::path&, const Tensor<double>&);
template Tensor<float> load_tensor(const std::filesystem::path&);
template Tensor<double> load_tensor(const std::filesystem::path&);

}  // namespace fuseret
