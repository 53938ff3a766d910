#pragma once

// Little-endian readers/writers for the on-disk containers.

#include "seqnet/errors.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace seqnet::io {

template <typename T>
T to_little(T v) {
    if constexpr (std::endian::native == std::endian::big) {
        unsigned char b[sizeof(T)];
        std::memcpy(b, &v, sizeof(T));
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
        std::memcpy(&v, b, sizeof(T));
    }
    return v;
}

template <typename T>
void put(std::ostream& out, T v) {
    v = to_little(v);
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

inline void put_doubles(std::ostream& out, std::span<const double> values) {
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(values.data()),
                  static_cast<std::streamsize>(values.size() * sizeof(double)));
    } else {
        for (double v : values) put(out, v);
    }
}

inline void put_string(std::ostream& out, const std::string& s) {
    put<std::uint64_t>(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

// `what` names the container in truncation errors.
template <typename T>
T get(std::istream& in, const char* what) {
    T v;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
        throw FormatError(std::string(what) + ": truncated file");
    }
    return to_little(v);
}

inline void get_doubles(std::istream& in, std::span<double> values, const char* what) {
    if (!in.read(reinterpret_cast<char*>(values.data()),
                 static_cast<std::streamsize>(values.size() * sizeof(double)))) {
        throw FormatError(std::string(what) + ": truncated file");
    }
    if constexpr (std::endian::native == std::endian::big) {
        for (double& v : values) v = to_little(v);
    }
}

inline std::string get_string(std::istream& in, std::uint64_t max_len, const char* what) {
    const auto n = get<std::uint64_t>(in, what);
    if (n > max_len) throw FormatError(std::string(what) + ": implausible string length " + std::to_string(n));
    std::string s(n, '\0');
    if (!in.read(s.data(), static_cast<std::streamsize>(n))) {
        throw FormatError(std::string(what) + ": truncated file");
    }
    return s;
}

} // namespace seqnet::io
