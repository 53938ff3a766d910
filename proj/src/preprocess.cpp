#include "seqnet/preprocess.hpp"

#include "io/binary_io.hpp"
#include "seqnet/errors.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <memory>

namespace seqnet {

namespace {

constexpr char kCacheMagic[8] = {'S', 'E', 'Q', 'N', 'E', 'T', 'P', 'C'};
constexpr std::uint32_t kCacheVersion = 1;

// Sample position j of M on a source of length L, as an exact rational
// i0 + rem / den so that integer positions take v[i0] without rounding.
struct Tap {
    std::size_t i0;
    std::uint64_t rem;
    std::uint64_t den;
};

Tap tap_for(std::size_t j, std::size_t L, std::size_t M) {
    std::uint64_t num, den;
    if (M == 1) {
        num = L - 1;
        den = 2;
    } else {
        num = static_cast<std::uint64_t>(j) * (L - 1);
        den = M - 1;
    }
    return {static_cast<std::size_t>(num / den), num % den, den};
}

} // namespace

std::string_view label_name(Label label) {
    switch (label) {
    case Label::benign:
        return "benign";
    case Label::malicious:
        return "malicious";
    case Label::unknown:
        break;
    }
    return "unknown";
}

Label parse_label(std::string_view text) {
    if (text == "benign" || text == "0") return Label::benign;
    if (text == "malicious" || text == "1") return Label::malicious;
    if (text == "unknown") return Label::unknown;
    throw ManifestError("unknown label '" + std::string(text) + "'");
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
        throw Error("SHA-256 computation failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 0xF]);
    }
    return out;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("error reading '" + path.string() + "'");
    return bytes;
}

RawSample RawSample::from_bytes(std::vector<std::uint8_t> bytes, Label label, std::string source_path) {
    RawSample s;
    s.digest = sha256_hex(bytes);
    s.bytes = std::move(bytes);
    s.label = label;
    s.source_path = std::move(source_path);
    return s;
}

RawSample RawSample::read_file(const std::filesystem::path& path, Label label) {
    return from_bytes(read_bytes(path), label, path.string());
}

std::vector<double> normalize_bytes(std::span<const std::uint8_t> bytes) {
    if (bytes.empty()) throw Error("empty binary");
    std::vector<double> v(bytes.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) v[i] = bytes[i] / 127.5 - 1.0;
    return v;
}

std::uint8_t quantize_byte(double value) {
    const double b = std::round(127.5 * (value + 1.0));
    return static_cast<std::uint8_t>(std::clamp(b, 0.0, 255.0));
}

std::vector<double> resample_linear(std::span<const double> v, std::size_t target_length) {
    const std::size_t L = v.size(), M = target_length;
    if (L == 0) throw Error("resample_linear: empty input");
    if (M == 0) throw Error("resample_linear: target length must be positive");
    std::vector<double> out(M);
    for (std::size_t j = 0; j < M; ++j) {
        const Tap tap = tap_for(j, L, M);
        if (tap.rem == 0) {
            out[j] = v[tap.i0];
            continue;
        }
        const double a = v[tap.i0], b = v[tap.i0 + 1];
        const double f = static_cast<double>(tap.rem) / static_cast<double>(tap.den);
        out[j] = std::clamp(a + f * (b - a), std::min(a, b), std::max(a, b));
    }
    return out;
}

std::vector<double> resample_adjoint(std::span<const double> g, std::size_t original_length,
                                     std::size_t target_length) {
    const std::size_t L = original_length, M = target_length;
    if (L == 0 || M == 0) throw ShapeError("resample_adjoint: lengths must be positive");
    if (g.size() != M) {
        throw ShapeError("resample_adjoint: gradient has length " + std::to_string(g.size()) +
                         " but the resample geometry targets " + std::to_string(M));
    }
    std::vector<double> out(L, 0.0);
    for (std::size_t j = 0; j < M; ++j) {
        const Tap tap = tap_for(j, L, M);
        if (tap.rem == 0) {
            out[tap.i0] += g[j];
            continue;
        }
        const double f = static_cast<double>(tap.rem) / static_cast<double>(tap.den);
        out[tap.i0] += (1.0 - f) * g[j];
        out[tap.i0 + 1] += f * g[j];
    }
    return out;
}

NormalizedSequence preprocess_bytes(std::span<const std::uint8_t> bytes, std::size_t target_length) {
    NormalizedSequence seq;
    seq.values = resample_linear(normalize_bytes(bytes), target_length);
    seq.original_length = bytes.size();
    seq.target_length = target_length;
    return seq;
}

NormalizedSequence preprocess(const RawSample& sample, std::size_t target_length) {
    return preprocess_bytes(sample.bytes, target_length);
}

void write_cache(const std::filesystem::path& path, const NormalizedSequence& seq) {
    if (seq.values.size() != seq.target_length) {
        throw ShapeError("write_cache: sequence holds " + std::to_string(seq.values.size()) +
                         " values, header says " + std::to_string(seq.target_length));
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out.write(kCacheMagic, sizeof kCacheMagic);
    io::put<std::uint32_t>(out, kCacheVersion);
    io::put<std::uint64_t>(out, seq.original_length);
    io::put<std::uint64_t>(out, seq.target_length);
    io::put_doubles(out, seq.values);
    if (!out) throw IoError("error writing '" + path.string() + "'");
}

NormalizedSequence read_cache(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    char magic[8];
    if (!in.read(magic, sizeof magic) || !std::equal(magic, magic + 8, kCacheMagic)) {
        throw FormatError("'" + path.string() + "' is not a preprocessed-sequence cache (bad magic)");
    }
    const auto version = io::get<std::uint32_t>(in, "sequence cache");
    if (version != kCacheVersion) {
        throw FormatError("sequence cache version " + std::to_string(version) + " is not supported");
    }
    NormalizedSequence seq;
    seq.original_length = io::get<std::uint64_t>(in, "sequence cache");
    seq.target_length = io::get<std::uint64_t>(in, "sequence cache");
    if (seq.target_length == 0 || seq.target_length > (std::size_t{1} << 32)) {
        throw FormatError("sequence cache: implausible target length " + std::to_string(seq.target_length));
    }
    seq.values.resize(seq.target_length);
    io::get_doubles(in, seq.values, "sequence cache");
    return seq;
}

} // namespace seqnet
