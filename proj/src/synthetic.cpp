#include "seqnet/synthetic.hpp"

#include "seqnet/errors.hpp"
#include "text_util.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_set>

namespace seqnet {

namespace fs = std::filesystem;

std::vector<Motif> default_motifs() {
    // Instruction-flavoured trigrams built from high byte values.
    return {{0xE8, 0xF4, 0xC3}, {0xFF, 0xD5, 0xC9}, {0xCD, 0xEB, 0xFE}, {0xF3, 0xC2, 0xE9}};
}

void SyntheticCorpusConfig::validate() const {
    if (per_class < 1) throw SpecError("need at least one sample per class");
    if (min_length < 16 || min_length > max_length) throw SpecError("length range must satisfy 16 <= min <= max");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) throw SpecError("validation fraction must lie in (0, 1)");
    if (!(tail_probability >= 0.0 && tail_probability <= 1.0)) throw SpecError("tail probability must lie in [0, 1]");
    if (!(region_fraction_min > 0.0 && region_fraction_min <= region_fraction_max && region_fraction_max < 0.5)) {
        throw SpecError("motif region fractions must satisfy 0 < min <= max < 0.5");
    }
    if (motifs.empty()) throw SpecError("motif set is empty");
    if (max_attempts < 1) throw SpecError("max attempts must be at least 1");
}

namespace {

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

std::size_t log_uniform(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
    if (lo >= hi) return lo;
    const double l = std::log(static_cast<double>(lo)), h = std::log(static_cast<double>(hi));
    const auto v = static_cast<std::size_t>(std::exp(l + uniform01(rng) * (h - l)));
    return std::clamp(v, lo, hi);
}

// Bytes that dominate compiled code, drawn most of the time in code segments.
constexpr std::uint8_t kCodeBytes[] = {0x00, 0x00, 0x00, 0x48, 0x89, 0x8B, 0x45, 0x24, 0x08, 0x10, 0x83, 0xC4,
                                       0xE8, 0xFF, 0x0F, 0x85, 0x74, 0x75, 0x4C, 0x8D, 0x05, 0x01, 0x44, 0x20,
                                       0xC3, 0x90, 0x31, 0xC0, 0x55, 0x5D, 0x50, 0x58};

void fill_background(std::vector<std::uint8_t>& out, std::mt19937_64& rng) {
    const std::size_t N = out.size();
    const std::size_t max_segment = std::max<std::size_t>(64, N / 8);
    std::size_t pos = 0;
    while (pos < N) {
        const std::size_t len = std::min(N - pos, log_uniform(rng, 64, max_segment));
        const double kind = uniform01(rng);
        for (std::size_t i = pos; i < pos + len; ++i) {
            if (kind < 0.15) {
                out[i] = 0x00;
            } else if (kind < 0.40) {
                out[i] = static_cast<std::uint8_t>(0x20 + uniform_index(rng, 0x5F));
            } else if (kind < 0.85) {
                out[i] = uniform01(rng) < 0.7 ? kCodeBytes[uniform_index(rng, std::size(kCodeBytes))]
                                              : static_cast<std::uint8_t>(rng());
            } else {
                out[i] = static_cast<std::uint8_t>(rng());
            }
        }
        pos += len;
    }
}

} // namespace

std::vector<std::size_t> find_motifs(std::span<const std::uint8_t> bytes, std::span<const Motif> motifs) {
    std::vector<std::size_t> hits;
    for (std::size_t i = 0; i + 3 <= bytes.size(); ++i) {
        for (const auto& m : motifs) {
            if (bytes[i] == m[0] && bytes[i + 1] == m[1] && bytes[i + 2] == m[2]) {
                hits.push_back(i);
                break;
            }
        }
    }
    return hits;
}

SyntheticSample generate_sample(Label label, std::mt19937_64& rng, const SyntheticCorpusConfig& config) {
    if (label != Label::benign && label != Label::malicious) throw Error("generate_sample: label must be benign or malicious");
    SyntheticSample s;
    s.label = label;
    const std::size_t N = log_uniform(rng, config.min_length, config.max_length);
    s.bytes.resize(N);
    bool clean = false;
    for (std::size_t attempt = 0; attempt < config.max_attempts && !clean; ++attempt) {
        fill_background(s.bytes, rng);
        clean = find_motifs(s.bytes, config.motifs).empty();
    }
    if (!clean) {
        throw Error("could not draw a motif-free background in " + std::to_string(config.max_attempts) + " attempts");
    }
    if (label == Label::malicious) {
        const double frac =
            config.region_fraction_min + uniform01(rng) * (config.region_fraction_max - config.region_fraction_min);
        std::size_t R = static_cast<std::size_t>(std::round(frac * static_cast<double>(N)));
        R = std::max<std::size_t>(3, R - R % 3);
        const std::size_t last_start = N - R;
        std::size_t lo = 0;
        if (uniform01(rng) < config.tail_probability) lo = std::min(last_start, (N + 1) / 2);
        const std::size_t start = lo + uniform_index(rng, last_start - lo + 1);
        for (std::size_t i = start; i < start + R; i += 3) {
            const Motif& m = config.motifs[uniform_index(rng, config.motifs.size())];
            std::copy(m.begin(), m.end(), s.bytes.begin() + static_cast<std::ptrdiff_t>(i));
        }
        s.region_begin = start;
        s.region_end = start + R;
    }
    return s;
}

SyntheticCorpus generate_corpus(const fs::path& dir, const SyntheticCorpusConfig& config) {
    config.validate();
    const fs::path samples = dir / "samples";
    std::error_code ec;
    fs::create_directories(samples, ec);
    if (ec) throw IoError("cannot create '" + samples.string() + "': " + ec.message());

    std::mt19937_64 rng(config.seed);
    std::unordered_set<std::string> digests;
    SyntheticCorpus corpus;
    corpus.train.split = Split::train;
    corpus.validation.split = Split::validation;
    std::vector<ManifestEntry> by_class[2];

    for (Label label : {Label::benign, Label::malicious}) {
        for (std::size_t i = 0; i < config.per_class; ++i) {
            SyntheticSample s;
            std::string digest;
            std::size_t attempt = 0;
            for (;; ++attempt) {
                if (attempt == config.max_attempts) {
                    throw Error("digest collision persisted after " + std::to_string(config.max_attempts) + " attempts");
                }
                s = generate_sample(label, rng, config);
                digest = sha256_hex(s.bytes);
                if (digests.insert(digest).second) break;
            }
            char name[64];
            std::snprintf(name, sizeof name, "%s_%04zu.bin", std::string(label_name(label)).c_str(), i);
            const fs::path path = samples / name;
            std::ofstream out(path, std::ios::binary | std::ios::trunc);
            out.write(reinterpret_cast<const char*>(s.bytes.data()), static_cast<std::streamsize>(s.bytes.size()));
            if (!out) throw IoError("error writing '" + path.string() + "'");
            by_class[static_cast<int>(label)].push_back({path, label, digest});
            if (label == Label::malicious) corpus.regions.push_back({path, s.region_begin, s.region_end, s.bytes.size()});
        }
    }

    for (auto& entries : by_class) {
        std::vector<std::size_t> order(entries.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
        const auto n_val = static_cast<std::size_t>(std::llround(config.validation_fraction * static_cast<double>(entries.size())));
        std::vector<bool> is_val(entries.size(), false);
        for (std::size_t k = 0; k < n_val; ++k) is_val[order[k]] = true;
        // Manifests keep file order; only membership is random.
        for (std::size_t i = 0; i < entries.size(); ++i) {
            (is_val[i] ? corpus.validation : corpus.train).entries.push_back(entries[i]);
        }
    }
    corpus.train.validate();
    corpus.validation.validate();
    check_disjoint(corpus.train, corpus.validation);
    corpus.train.write(dir / "train.tsv");
    corpus.validation.write(dir / "validation.tsv");

    std::ofstream out(dir / "motifs.tsv", std::ios::trunc);
    if (!out) throw IoError("cannot write '" + (dir / "motifs.tsv").string() + "'");
    for (const auto& r : corpus.regions) {
        out << r.path.lexically_proximate(dir).generic_string() << '\t' << r.begin << '\t' << r.end << '\t' << r.length
            << '\n';
    }
    if (!out) throw IoError("error writing motifs.tsv");
    return corpus;
}

std::vector<PlantedRegion> read_regions(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::vector<PlantedRegion> regions;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = text::split(line, '\t');
        if (f.size() != 4) throw ManifestError(path.string() + ":" + std::to_string(lineno) + ": expected 4 fields");
        PlantedRegion r;
        r.path = fs::path(f[0]);
        if (r.path.is_relative()) r.path = path.parent_path() / r.path;
        try {
            r.begin = std::stoull(f[1]);
            r.end = std::stoull(f[2]);
            r.length = std::stoull(f[3]);
        } catch (const std::exception&) {
            throw ManifestError(path.string() + ":" + std::to_string(lineno) + ": bad offset");
        }
        regions.push_back(r);
    }
    return regions;
}

} // namespace seqnet
