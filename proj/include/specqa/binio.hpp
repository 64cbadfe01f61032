#pragma once

// Little-endian primitives for the index snapshot files.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "specqa/error.hpp"

namespace specqa::binio {

template <typename T>
inline void write_le(std::ostream& os, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
    }
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
inline T read_le(std::istream& is) {
    unsigned char buf[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(buf), sizeof(T)))
        throw Error(ErrorCode::SnapshotError, "truncated snapshot");
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
    }
    T value;
    std::memcpy(&value, buf, sizeof(T));
    return value;
}

inline void write_string(std::ostream& os, const std::string& s) {
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is) {
    auto n = read_le<std::uint32_t>(is);
    if (n > (1u << 28)) throw Error(ErrorCode::SnapshotError, "implausible string length in snapshot");
    std::string s(n, '\0');
    if (n && !is.read(s.data(), n)) throw Error(ErrorCode::SnapshotError, "truncated snapshot");
    return s;
}

inline void write_magic(std::ostream& os, const char (&magic)[5], std::uint8_t version) {
    os.write(magic, 4);
    write_le<std::uint8_t>(os, version);
}

inline std::uint8_t read_magic(std::istream& is, const char (&magic)[5]) {
    char buf[4];
    if (!is.read(buf, 4) || std::memcmp(buf, magic, 4) != 0)
        throw Error(ErrorCode::SnapshotError, std::string("not a ") + magic + " snapshot");
    return read_le<std::uint8_t>(is);
}

}  // namespace specqa::binio
