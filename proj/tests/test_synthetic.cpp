#include "seqnet/errors.hpp"
#include "seqnet/synthetic.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace seqnet;
using seqnet::testing::TempDir;

namespace {

SyntheticCorpusConfig small_config(std::size_t per_class, std::uint64_t seed) {
    SyntheticCorpusConfig c;
    c.per_class = per_class;
    c.max_length = 64 * 1024;
    c.seed = seed;
    return c;
}

} // namespace

TEST(Synthetic, FindMotifs) {
    const auto motifs = default_motifs();
    std::vector<std::uint8_t> bytes(20, 0x41);
    EXPECT_TRUE(find_motifs(bytes, motifs).empty());
    std::copy(motifs[1].begin(), motifs[1].end(), bytes.begin() + 5);
    std::copy(motifs[0].begin(), motifs[0].end(), bytes.begin() + 17);
    EXPECT_EQ(find_motifs(bytes, motifs), (std::vector<std::size_t>{5, 17}));
}

TEST(Synthetic, SamplesHonourTheirLabel) {
    std::mt19937_64 rng(1);
    const auto c = small_config(1, 0);
    for (int i = 0; i < 40; ++i) {
        const auto b = generate_sample(Label::benign, rng, c);
        EXPECT_TRUE(find_motifs(b.bytes, c.motifs).empty());
        EXPECT_GE(b.bytes.size(), c.min_length);
        EXPECT_LE(b.bytes.size(), c.max_length);
        const auto m = generate_sample(Label::malicious, rng, c);
        const auto hits = find_motifs(m.bytes, c.motifs);
        ASSERT_FALSE(hits.empty());
        EXPECT_GE(hits.front() + 2, m.region_begin);
        EXPECT_LE(hits.back(), m.region_end);
        const double frac = static_cast<double>(m.region_end - m.region_begin) / static_cast<double>(m.bytes.size());
        EXPECT_GE(frac, 0.014);
        EXPECT_LE(frac, 0.031);
    }
}

TEST(Synthetic, MotifsSitInTheTailMostOfTheTime) {
    std::mt19937_64 rng(2);
    const auto c = small_config(1, 0);
    int tail = 0;
    const int n = 300;
    for (int i = 0; i < n; ++i) {
        const auto m = generate_sample(Label::malicious, rng, c);
        const auto hits = find_motifs(m.bytes, c.motifs);
        tail += std::any_of(hits.begin(), hits.end(), [&](std::size_t h) { return 2 * h > m.bytes.size(); });
    }
    EXPECT_GE(tail, static_cast<int>(0.8 * n));
}

TEST(Synthetic, CorpusLayoutSplitAndDeterminism) {
    TempDir a("corpus_a"), b("corpus_b");
    const auto ca = generate_corpus(a.path(), small_config(10, 42));
    const auto cb = generate_corpus(b.path(), small_config(10, 42));
    EXPECT_EQ(ca.train.entries.size() + ca.validation.entries.size(), 20u);
    EXPECT_EQ(ca.validation.count(Label::benign), 3u);  // round(0.25 * 10) per class
    EXPECT_EQ(ca.validation.count(Label::malicious), 3u);
    EXPECT_NO_THROW(check_disjoint(ca.train, ca.validation));
    std::set<std::string> digests;
    for (const auto* m : {&ca.train, &ca.validation}) {
        for (const auto& e : m->entries) digests.insert(e.digest);
    }
    EXPECT_EQ(digests.size(), 20u);

    const auto back = DatasetManifest::read(a / "train.tsv");
    ASSERT_EQ(back.entries.size(), ca.train.entries.size());
    for (std::size_t i = 0; i < back.entries.size(); ++i) {
        EXPECT_EQ(back.entries[i].digest, cb.train.entries[i].digest);
        EXPECT_EQ(read_bytes(back.entries[i].path), read_bytes(cb.train.entries[i].path));
    }
    const auto regions = read_regions(a / "motifs.tsv");
    ASSERT_EQ(regions.size(), 10u);
    for (const auto& r : regions) {
        const auto bytes = read_bytes(r.path);
        EXPECT_EQ(bytes.size(), r.length);
        const auto hits = find_motifs(bytes, default_motifs());
        ASSERT_FALSE(hits.empty());
        EXPECT_GE(hits.front() + 2, r.begin);
    }
}

TEST(Synthetic, ConfigValidation) {
    SyntheticCorpusConfig c;
    EXPECT_NO_THROW(c.validate());
    c.per_class = 0;
    EXPECT_THROW(c.validate(), SpecError);
    c = {};
    c.min_length = 10;
    EXPECT_THROW(c.validate(), SpecError);
    c = {};
    c.motifs.clear();
    EXPECT_THROW(c.validate(), SpecError);
}
