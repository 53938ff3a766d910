#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace seqnet {

// Class index convention used everywhere: 0 = benign, 1 = malicious.
enum class Label { benign = 0, malicious = 1, unknown = -1 };

std::string_view label_name(Label label);
/// Accepts "benign"/"malicious"/"unknown" and "0"/"1"; throws ManifestError otherwise.
Label parse_label(std::string_view text);

/// Lowercase hex SHA-256 of the bytes.
std::string sha256_hex(std::span<const std::uint8_t> bytes);

struct RawSample {
    std::vector<std::uint8_t> bytes;
    Label label = Label::unknown;
    std::string digest;
    std::string source_path;

    static RawSample from_bytes(std::vector<std::uint8_t> bytes, Label label, std::string source_path = {});
    /// Throws IoError if the file cannot be read.
    static RawSample read_file(const std::filesystem::path& path, Label label = Label::unknown);
};

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);

inline constexpr std::size_t kDefaultTargetLength = std::size_t{1} << 18;

struct NormalizedSequence {
    std::vector<double> values;
    std::size_t original_length = 0;
    std::size_t target_length = 0;
};

/// b / 127.5 - 1: 0x00 -> -1, 0xFF -> +1. Throws Error("empty binary") on empty input.
std::vector<double> normalize_bytes(std::span<const std::uint8_t> bytes);

/// Inverse map back to bytes: round(127.5 * (x + 1)) clamped to [0, 255].
std::uint8_t quantize_byte(double value);

// Endpoint-aligned linear interpolation of v (length L) to M samples:
// out[j] = lerp(v, j * (L - 1) / (M - 1)). M = 1 samples the midpoint
// (L - 1) / 2. L = M returns v bit for bit.
std::vector<double> resample_linear(std::span<const double> v, std::size_t target_length);

// Transpose of resample_linear's Jacobian: g has the target length M and the
// result has the original length L. Throws ShapeError if g.size() != M.
std::vector<double> resample_adjoint(std::span<const double> g, std::size_t original_length,
                                     std::size_t target_length);

/// normalize_bytes then resample_linear, in that order.
NormalizedSequence preprocess_bytes(std::span<const std::uint8_t> bytes,
                                    std::size_t target_length = kDefaultTargetLength);
NormalizedSequence preprocess(const RawSample& sample, std::size_t target_length = kDefaultTargetLength);

// Cache file: "SEQNETPC" magic, u32 version, u64 original_length,
// u64 target_length, then target_length little-endian doubles.
void write_cache(const std::filesystem::path& path, const NormalizedSequence& seq);
NormalizedSequence read_cache(const std::filesystem::path& path);

} // namespace seqnet
