#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <variant>
#include <vector>

#include "t4d/tensor.hpp"

namespace t4d {

// T4DF container: little-endian binary tensor file.
//
//   offset  size  field
//   0       4     magic "T4DF"
//   4       1     version (1)
//   5       1     dtype code: 0 = f32, 1 = f64
//   6       1     rank (1..6)
//   7       8*r   extents, unsigned 64-bit little-endian
//   ...     n*s   payload, row-major (C order), little-endian floats

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

struct T4dfHeader {
    DType dtype = DType::F32;
    Shape extents;
};

namespace detail {

inline void put_u64_le(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64_le(std::istream& is, const std::string& path) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw IoError(IoError::Kind::Truncated, path + ": truncated header");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

template <typename T>
constexpr DType dtype_of() {
    return std::is_same_v<T, float> ? DType::F32 : DType::F64;
}

template <typename T>
void write_payload(std::ostream& os, const T* data, std::int64_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char*>(data), n * static_cast<std::int64_t>(sizeof(T)));
    } else {
        using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
        for (std::int64_t i = 0; i < n; ++i) {
            const Bits bits = std::bit_cast<Bits>(data[i]);
            unsigned char b[sizeof(T)];
            for (std::size_t j = 0; j < sizeof(T); ++j)
                b[j] = static_cast<unsigned char>((bits >> (8 * j)) & 0xff);
            os.write(reinterpret_cast<const char*>(b), sizeof(T));
        }
    }
}

template <typename T>
void read_payload(std::istream& is, T* data, std::int64_t n, const std::string& path) {
    if constexpr (std::endian::native == std::endian::little) {
        is.read(reinterpret_cast<char*>(data), n * static_cast<std::int64_t>(sizeof(T)));
        if (is.gcount() != n * static_cast<std::int64_t>(sizeof(T)))
            throw IoError(IoError::Kind::Truncated,
                          path + ": payload shorter than header promises");
    } else {
        using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
        for (std::int64_t i = 0; i < n; ++i) {
            unsigned char b[sizeof(T)];
            is.read(reinterpret_cast<char*>(b), sizeof(T));
            if (!is)
                throw IoError(IoError::Kind::Truncated,
                              path + ": payload shorter than header promises");
            Bits bits = 0;
            for (std::size_t j = 0; j < sizeof(T); ++j)
                bits |= static_cast<Bits>(b[j]) << (8 * j);
            data[i] = std::bit_cast<T>(bits);
        }
    }
}

inline T4dfHeader read_header(std::istream& is, const std::string& path) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "T4DF", 4) != 0)
        throw IoError(IoError::Kind::BadMagic, path + ": bad magic, not a T4DF file");
    unsigned char version = 0, dtype = 0, rank = 0;
    is.read(reinterpret_cast<char*>(&version), 1);
    is.read(reinterpret_cast<char*>(&dtype), 1);
    is.read(reinterpret_cast<char*>(&rank), 1);
    if (!is) throw IoError(IoError::Kind::Truncated, path + ": truncated header");
    if (version != 1)
        throw IoError(IoError::Kind::BadVersion,
                      path + ": unsupported version " + std::to_string(version));
    if (dtype > 1)
        throw IoError(IoError::Kind::BadDtype, path + ": unknown dtype code " + std::to_string(dtype));
    if (rank < 1 || rank > kMaxRank)
        throw IoError(IoError::Kind::BadRank, path + ": rank " + std::to_string(rank) +
                                                 " outside 1.." + std::to_string(kMaxRank));
    T4dfHeader header;
    header.dtype = static_cast<DType>(dtype);
    for (int d = 0; d < rank; ++d) {
        const std::uint64_t e = get_u64_le(is, path);
        if (e < 1) throw IoError(IoError::Kind::Format, path + ": zero extent");
        header.extents.push_back(static_cast<std::int64_t>(e));
    }
    return header;
}

}  // namespace detail

template <typename T>
void save_tensor(const std::string& path, const Tensor<T>& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError(IoError::Kind::Open, path + ": cannot open for writing");
    os.write("T4DF", 4);
    const unsigned char version = 1;
    const unsigned char dtype = static_cast<unsigned char>(detail::dtype_of<T>());
    const unsigned char rank = static_cast<unsigned char>(t.rank());
    os.write(reinterpret_cast<const char*>(&version), 1);
    os.write(reinterpret_cast<const char*>(&dtype), 1);
    os.write(reinterpret_cast<const char*>(&rank), 1);
    for (int d = 0; d < t.rank(); ++d)
        detail::put_u64_le(os, static_cast<std::uint64_t>(t.extent(d)));
    detail::write_payload(os, t.data(), t.numel());
    if (!os) throw IoError(IoError::Kind::Open, path + ": write failed");
}

inline T4dfHeader read_tensor_header(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError(IoError::Kind::Open, path + ": cannot open");
    return detail::read_header(is, path);
}

using LoadedTensor = std::variant<Tensor<float>, Tensor<double>>;

inline LoadedTensor load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError(IoError::Kind::Open, path + ": cannot open");
    const T4dfHeader header = detail::read_header(is, path);
    if (header.dtype == DType::F32) {
        Tensor<float> t(header.extents);
        detail::read_payload(is, t.data(), t.numel(), path);
        return t;
    }
    Tensor<double> t(header.extents);
    detail::read_payload(is, t.data(), t.numel(), path);
    return t;
}

// Loads and converts to the requested element type (f32 -> f64 is lossless;
// f64 -> f32 rounds).
template <typename T>
Tensor<T> load_tensor_as(const std::string& path) {
    LoadedTensor loaded = load_tensor(path);
    if (std::holds_alternative<Tensor<T>>(loaded)) return std::get<Tensor<T>>(std::move(loaded));
    if (std::holds_alternative<Tensor<float>>(loaded))
        return std::get<Tensor<float>>(loaded).template cast<T>();
    return std::get<Tensor<double>>(loaded).template cast<T>();
}

}  // namespace t4d
