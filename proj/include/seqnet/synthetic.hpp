#pragma once

#include "seqnet/train.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

namespace seqnet {

// Planted-motif corpus. Both classes share one background process (zero runs,
// text, code-like bytes, high-entropy blocks) with no motif trigram anywhere;
// a malicious file additionally carries one contiguous region of motif
// trigrams, usually in the second half of the file.

using Motif = std::array<std::uint8_t, 3>;

std::vector<Motif> default_motifs();

struct SyntheticCorpusConfig {
    std::size_t per_class = 1000;
    std::size_t min_length = 4096;
    std::size_t max_length = std::size_t{1} << 20;  // log-uniform in between
    double validation_fraction = 0.25;
    double tail_probability = 0.9;     // region starts in the second half
    double region_fraction_min = 0.015;  // region length / file length
    double region_fraction_max = 0.03;
    std::vector<Motif> motifs = default_motifs();
    std::size_t max_attempts = 100;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SyntheticSample {
    std::vector<std::uint8_t> bytes;
    Label label = Label::unknown;
    std::size_t region_begin = 0;  // motif region [begin, end); empty for benign
    std::size_t region_end = 0;
};

/// Offsets of every motif occurrence.
std::vector<std::size_t> find_motifs(std::span<const std::uint8_t> bytes, std::span<const Motif> motifs);

/// One sample; throws Error if no motif-free background is found within max_attempts.
SyntheticSample generate_sample(Label label, std::mt19937_64& rng, const SyntheticCorpusConfig& config);

struct PlantedRegion {
    std::filesystem::path path;
    std::size_t begin = 0, end = 0, length = 0;
};

struct SyntheticCorpus {
    DatasetManifest train;
    DatasetManifest validation;
    std::vector<PlantedRegion> regions;  // malicious files only
};

// Writes samples/<label>_<index>.bin, train.tsv, validation.tsv and
// motifs.tsv (path, region begin, region end, file length) under `dir`, with a
// stratified split and no repeated digest.
SyntheticCorpus generate_corpus(const std::filesystem::path& dir, const SyntheticCorpusConfig& config);

/// Reads motifs.tsv back; relative paths resolve against its directory.
std::vector<PlantedRegion> read_regions(const std::filesystem::path& path);

} // namespace seqnet
