#pragma once

// Little-endian primitives shared by the dataset and checkpoint formats.

#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace clipmem::io {

template <typename UInt>
void put_le(std::ostream& out, UInt value) {
    std::array<char, sizeof(UInt)> bytes{};
    for (std::size_t i = 0; i < sizeof(UInt); ++i)
        bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
    out.write(bytes.data(), bytes.size());
}

inline void put_f64(std::ostream& out, double value) {
    put_le(out, std::bit_cast<std::uint64_t>(value));
}

/// Returns false on clean EOF before the first byte; throws on a short read.
template <typename UInt>
bool try_get_le(std::istream& in, UInt& value) {
    std::array<unsigned char, sizeof(UInt)> bytes{};
    in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
    if (in.gcount() == 0 && in.eof()) return false;
    if (static_cast<std::size_t>(in.gcount()) != bytes.size())
        throw std::runtime_error("truncated file");
    value = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i)
        value |= static_cast<UInt>(bytes[i]) << (8 * i);
    return true;
}

template <typename UInt>
UInt get_le(std::istream& in) {
    UInt value{};
    if (!try_get_le(in, value)) throw std::runtime_error("truncated file");
    return value;
}

inline double get_f64(std::istream& in) {
    return std::bit_cast<double>(get_le<std::uint64_t>(in));
}

inline std::uint32_t checked_u32(std::size_t value, const char* what) {
    if (value > 0xFFFFFFFFu) throw std::length_error(std::string(what) + " exceeds u32 range");
    return static_cast<std::uint32_t>(value);
}

}  // namespace clipmem::io
