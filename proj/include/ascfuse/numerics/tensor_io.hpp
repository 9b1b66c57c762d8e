#pragma once

// ATNS binary tensor files:
//   magic "ATNS" | version u16 LE (=1) | dtype u8 (0 f32, 1 f64) | rank u8 |
//   dims u32 LE x rank | payload, row-major little-endian.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "ascfuse/error.hpp"
#include "ascfuse/numerics/matrix.hpp"

namespace ascfuse {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

/// N-d tensor. Values are held as doubles; an f32 tensor only ever holds
/// values exactly representable as float, so round trips are bit-exact.
struct Tensor {
    DType dtype = DType::f64;
    std::vector<std::uint32_t> dims;
    std::vector<double> values;

    std::size_t element_count() const {
        std::size_t n = 1;
        for (auto d : dims) n *= d;
        return n;
    }

    static Tensor from_matrix(const Matrix& m, DType dtype = DType::f64) {
        Tensor t;
        t.dtype = dtype;
        t.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
        t.values = m.data();
        if (dtype == DType::f32)
            for (double& v : t.values) v = static_cast<float>(v);
        return t;
    }

    Matrix to_matrix() const {
        if (dims.size() != 2) throw ShapeError("Tensor::to_matrix: rank must be 2");
        return Matrix::from_rows(dims[0], dims[1], values);
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

enum class TensorErrorKind { io, bad_magic, bad_version, bad_dtype, truncated, dim_overflow, trailing_data };

class TensorError : public Error {
public:
    TensorError(TensorErrorKind kind, const std::string& what) : Error(what), kind_(kind) {}
    TensorErrorKind kind() const { return kind_; }

private:
    TensorErrorKind kind_;
};

namespace detail {

inline constexpr std::array<char, 4> kAtnsMagic{'A', 'T', 'N', 'S'};
inline constexpr std::uint16_t kAtnsVersion = 1;
// Refuse payloads beyond 2^34 elements (128 GiB of f64).
inline constexpr std::uint64_t kMaxElements = 1ULL << 34;

template <class U>
void put_le(std::vector<char>& out, U v) {
    static_assert(std::is_unsigned_v<U>);
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <class U>
U get_le(const unsigned char* p) {
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
    return v;
}

}  // namespace detail

inline std::vector<char> tensor_encode(const Tensor& t) {
    if (t.dims.size() > 255) throw TensorError(TensorErrorKind::dim_overflow, "tensor rank exceeds 255");
    std::uint64_t count = 1;
    for (auto d : t.dims) {
        count *= d;
        if (count > detail::kMaxElements) throw TensorError(TensorErrorKind::dim_overflow, "tensor too large");
    }
    if (count != t.values.size()) throw ShapeError("tensor_encode: value count does not match dims");

    std::vector<char> out(detail::kAtnsMagic.begin(), detail::kAtnsMagic.end());
    detail::put_le<std::uint16_t>(out, detail::kAtnsVersion);
    out.push_back(static_cast<char>(t.dtype));
    out.push_back(static_cast<char>(t.dims.size()));
    for (auto d : t.dims) detail::put_le<std::uint32_t>(out, d);
    out.reserve(out.size() + count * (t.dtype == DType::f32 ? 4 : 8));
    for (double v : t.values) {
        if (t.dtype == DType::f32)
            detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
        else
            detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
    return out;
}

inline Tensor tensor_decode(const std::vector<char>& bytes) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::size_t n = bytes.size();
    if (n < 8) throw TensorError(TensorErrorKind::truncated, "ATNS: header truncated");
    if (std::memcmp(p, detail::kAtnsMagic.data(), 4) != 0) throw TensorError(TensorErrorKind::bad_magic, "ATNS: bad magic");
    const auto version = detail::get_le<std::uint16_t>(p + 4);
    if (version != detail::kAtnsVersion)
        throw TensorError(TensorErrorKind::bad_version, "ATNS: unsupported version " + std::to_string(version));
    const std::uint8_t dtype = p[6];
    if (dtype > 1) throw TensorError(TensorErrorKind::bad_dtype, "ATNS: unknown dtype " + std::to_string(dtype));
    const std::size_t rank = p[7];
    if (n < 8 + 4 * rank) throw TensorError(TensorErrorKind::truncated, "ATNS: dims truncated");

    Tensor t;
    t.dtype = static_cast<DType>(dtype);
    std::uint64_t count = 1;
    for (std::size_t i = 0; i < rank; ++i) {
        const auto d = detail::get_le<std::uint32_t>(p + 8 + 4 * i);
        t.dims.push_back(d);
        count *= d;
        if (count > detail::kMaxElements) throw TensorError(TensorErrorKind::dim_overflow, "ATNS: dims overflow");
    }
    const std::size_t width = t.dtype == DType::f32 ? 4 : 8;
    const std::size_t offset = 8 + 4 * rank;
    const std::uint64_t need = offset + count * width;
    if (n < need) throw TensorError(TensorErrorKind::truncated, "ATNS: payload truncated");
    if (n > need) throw TensorError(TensorErrorKind::trailing_data, "ATNS: trailing bytes after payload");

    t.values.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        const unsigned char* q = p + offset + i * width;
        if (t.dtype == DType::f32)
            t.values[i] = std::bit_cast<float>(detail::get_le<std::uint32_t>(q));
        else
            t.values[i] = std::bit_cast<double>(detail::get_le<std::uint64_t>(q));
    }
    return t;
}

inline void tensor_write(const std::filesystem::path& path, const Tensor& t) {
    const auto bytes = tensor_encode(t);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw TensorError(TensorErrorKind::io, "cannot open for writing: " + path.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw TensorError(TensorErrorKind::io, "write failed: " + path.string());
}

inline Tensor tensor_read(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw TensorError(TensorErrorKind::io, "cannot open: " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return tensor_decode(bytes);
}

/// FNV-1a 64 over raw bytes; used for checksums and config hashes.
inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t file_checksum(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open for checksum: " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return fnv1a64(bytes.data(), bytes.size());
}

}  // namespace ascfuse
