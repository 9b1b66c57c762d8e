#include <gtest/gtest.h>

#include <filesystem>

#include "ascfuse/numerics.hpp"

using namespace ascfuse;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
    auto dir = fs::temp_directory_path() / "ascfuse_tensor_tests";
    fs::create_directories(dir);
    return dir / name;
}

TensorErrorKind decode_error(const std::vector<char>& bytes) {
    try {
        tensor_decode(bytes);
    } catch (const TensorError& e) {
        return e.kind();
    }
    ADD_FAILURE() << "decode unexpectedly succeeded";
    return TensorErrorKind::io;
}

}  // namespace

TEST(TensorIo, MatrixRoundTripIsBitExact) {
    Matrix m{{1.0, -2.5, 3.0 / 7.0}, {1e-300, 6.02e23, -0.0}};
    const auto path = temp_file("m.atns");
    tensor_write(path, Tensor::from_matrix(m));
    const Tensor back = tensor_read(path);
    EXPECT_EQ(back.dtype, DType::f64);
    EXPECT_EQ(back.dims, (std::vector<std::uint32_t>{2, 3}));
    for (std::size_t i = 0; i < m.size(); ++i)
        EXPECT_EQ(std::bit_cast<std::uint64_t>(back.values[i]), std::bit_cast<std::uint64_t>(m.data()[i]));
}

TEST(TensorIo, ScalarRankZero) {
    Tensor t;
    t.values = {3.25};
    const auto path = temp_file("scalar.atns");
    tensor_write(path, t);
    EXPECT_EQ(tensor_read(path), t);
}

TEST(TensorIo, F32HeaderLayout) {
    Tensor t;
    t.dtype = DType::f32;
    t.dims = {1, 2};
    t.values = {0.5, -1.0};
    const auto bytes = tensor_encode(t);
    ASSERT_EQ(bytes.size(), 4u + 2 + 1 + 1 + 8 + 8);
    EXPECT_EQ(bytes[0], 0x41);
    EXPECT_EQ(bytes[1], 0x54);
    EXPECT_EQ(bytes[2], 0x4E);
    EXPECT_EQ(bytes[3], 0x53);
    EXPECT_EQ(bytes[4], 1);
    EXPECT_EQ(bytes[5], 0);
    EXPECT_EQ(bytes[6], 0);  // f32
    EXPECT_EQ(bytes[7], 2);  // rank
    EXPECT_EQ(bytes[8], 1);
    EXPECT_EQ(bytes[12], 2);
    EXPECT_EQ(tensor_decode(bytes), t);
}

TEST(TensorIo, ErrorCategories) {
    Tensor t;
    t.dims = {2};
    t.values = {1, 2};
    auto good = tensor_encode(t);

    auto bad_magic = good;
    bad_magic[0] = 'X';
    EXPECT_EQ(decode_error(bad_magic), TensorErrorKind::bad_magic);

    auto truncated = good;
    truncated.pop_back();
    EXPECT_EQ(decode_error(truncated), TensorErrorKind::truncated);
    EXPECT_EQ(decode_error(std::vector<char>(good.begin(), good.begin() + 5)), TensorErrorKind::truncated);

    auto trailing = good;
    trailing.push_back(0);
    EXPECT_EQ(decode_error(trailing), TensorErrorKind::trailing_data);

    auto version = good;
    version[4] = 9;
    EXPECT_EQ(decode_error(version), TensorErrorKind::bad_version);

    auto dtype = good;
    dtype[6] = 7;
    EXPECT_EQ(decode_error(dtype), TensorErrorKind::bad_dtype);

    // rank 3 with dims 2^32-1 each overflows any sane element count.
    std::vector<char> huge{'A', 'T', 'N', 'S', 1, 0, 1, 3};
    for (int d = 0; d < 3; ++d)
        for (int b = 0; b < 4; ++b) huge.push_back(static_cast<char>(0xFF));
    EXPECT_EQ(decode_error(huge), TensorErrorKind::dim_overflow);
}

TEST(TensorIo, MissingFileIsIoError) {
    try {
        tensor_read(temp_file("does-not-exist.atns"));
        FAIL();
    } catch (const TensorError& e) {
        EXPECT_EQ(e.kind(), TensorErrorKind::io);
    }
}
