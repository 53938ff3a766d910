#include "seqnet/adversarial.hpp"
#include "seqnet/errors.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace seqnet;
using seqnet::testing::random_vector;
using seqnet::testing::TempDir;

namespace {

ModelSpec small_spec() { return ModelSpec::for_input_length(512).with_channels_divided(4); }

// Random model whose head is biased towards "malicious" so every input starts out detected.
SeqNetModel detecting_model(std::uint64_t seed, std::mt19937_64& rng) {
    auto m = SeqNetModel::build(small_spec(), seed);
    seqnet::testing::randomise_offsets(m, rng);
    for (auto& [name, t] : m.parameters()) {
        if (name == "head.dense.bias") {
            t.mutable_data()[0] = -2.0;
            t.mutable_data()[1] = 2.0;
        }
    }
    return m;
}

RawSample random_sample(std::size_t n, std::mt19937_64& rng, Label label = Label::malicious) {
    std::vector<std::uint8_t> bytes(n);
    for (auto& b : bytes) b = static_cast<std::uint8_t>(rng());
    return RawSample::from_bytes(std::move(bytes), label);
}

} // namespace

TEST(Sign, ThreeWay) {
    EXPECT_EQ(sign(3.2), 1);
    EXPECT_EQ(sign(0.0), 0);
    EXPECT_EQ(sign(-0.0), 0);
    EXPECT_EQ(sign(-1e-30), -1);
}

TEST(PoisonStep, HandExamples) {
    EXPECT_EQ(poison_step(std::vector<double>{0.5}, std::vector<double>{2.0})[0], 0.49609375);
    EXPECT_EQ(poison_step(std::vector<double>{0.5}, std::vector<double>{-1e-9})[0], 0.50390625);
    EXPECT_EQ(poison_step(std::vector<double>{-1.0}, std::vector<double>{1.0})[0], -1.0);
    EXPECT_EQ(poison_step(std::vector<double>{1.0}, std::vector<double>{-1.0})[0], 1.0);
    const std::vector<double> p{0.25, -0.5, 0.75};
    EXPECT_EQ(poison_step(p, std::vector<double>{0, 0, 0}), p);
    EXPECT_THROW(poison_step(p, std::vector<double>{1.0}), ShapeError);
}

TEST(PoisonStep, StepsAreExactlyZeroOrOneOver256) {
    std::mt19937_64 rng(1);
    PoisonConfig wide;
    wide.clamp_min = -4.0;
    wide.clamp_max = 4.0;
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> p(64), g(64);
        for (auto& v : p) v = static_cast<double>(static_cast<int>(rng() % 513) - 256) / 256.0;
        for (auto& v : g) v = static_cast<double>(static_cast<int>(rng() % 3) - 1) * (rng() % 100) * 1e-3;
        const auto q = poison_step(p, g, wide);
        const auto c = poison_step(p, g);
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double d = q[i] - p[i];
            EXPECT_TRUE(d == 0.0 || d == 1.0 / 256 || d == -1.0 / 256) << d;
            EXPECT_EQ(d, -sign(g[i]) / 256.0);
            EXPECT_GE(c[i], -1.0);
            EXPECT_LE(c[i], 1.0);
        }
    }
}

TEST(PoisonGradient, IsTheAdjointRestrictionOfTheInputGradient) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 3; ++trial) {
        auto model = detecting_model(10 + trial, rng);
        const auto sample = random_sample(200 + rng() % 300, rng);
        std::vector<double> poison(40 + rng() % 200);
        for (auto& v : poison) v = static_cast<double>(static_cast<int>(rng() % 513) - 256) / 256.0;
        const auto g = poison_gradient(model, sample.bytes, poison);
        const std::size_t N = sample.bytes.size() + poison.size(), M = 512;
        ASSERT_EQ(g.poison_grad.size(), poison.size());
        // Column by column: J e_i through the forward resampler, dotted with dP/dx.
        for (std::size_t i = 0; i < poison.size(); ++i) {
            std::vector<double> e(N, 0.0);
            e[sample.bytes.size() + i] = 1.0;
            const auto col = resample_linear(e, M);
            double expect = 0.0;
            for (std::size_t j = 0; j < M; ++j) expect += col[j] * g.input_grad[j];
            EXPECT_NEAR(g.poison_grad[i], expect, 1e-12);
        }
    }
}

TEST(PoisonGradient, MatchesFiniteDifferencesOfTheContinuousPoison) {
    std::mt19937_64 rng(3);
    auto model = detecting_model(20, rng);
    const auto sample = random_sample(300, rng);
    std::vector<double> poison(120);
    for (auto& v : poison) v = random_vector(1, rng)[0];
    const auto g = poison_gradient(model, sample.bytes, poison);
    auto prob = [&](const std::vector<double>& p) {
        auto full = normalize_bytes(sample.bytes);
        full.insert(full.end(), p.begin(), p.end());
        NoGradGuard guard;
        return model.forward(Tensor::from({1, 1, 512}, resample_linear(full, 512))).data()[1];
    };
    EXPECT_NEAR(prob(poison), g.prob, 1e-15);
    const double h = 1e-6;
    for (std::size_t i : {0ul, 7ul, 60ul, 119ul}) {
        auto up = poison, down = poison;
        up[i] += h;
        down[i] -= h;
        const double numeric = (prob(up) - prob(down)) / (2 * h);
        EXPECT_LE(std::abs(numeric - g.poison_grad[i]), 1e-4 * std::max({std::abs(numeric), std::abs(g.poison_grad[i]), 1e-4}))
            << "coordinate " << i;
    }
}

TEST(Attack, ZeroIterationsKeepsOnlyTheCleanPrediction) {
    std::mt19937_64 rng(4);
    auto model = detecting_model(30, rng);
    const auto sample = random_sample(400, rng);
    PoisonConfig c;
    c.iterations = 0;
    c.poison_length_bytes = 50;
    const auto tr = attack(model, sample, c);
    ASSERT_EQ(tr.y.size(), 1u);
    EXPECT_EQ(tr.y[0], malicious_probability(model, sample.bytes));
    EXPECT_EQ(tr.iterations_run, 0u);
    EXPECT_FALSE(tr.evaded);
    EXPECT_EQ(tr.poison, std::vector<std::uint8_t>(50, 0x00));
}

TEST(Attack, Preconditions) {
    std::mt19937_64 rng(5);
    auto model = detecting_model(31, rng);
    PoisonConfig c;
    c.poison_length_bytes = 16;
    EXPECT_THROW(attack(model, random_sample(100, rng, Label::benign), c), AttackError);
    // Head flipped: nothing is detected.
    for (auto& [name, t] : model.parameters()) {
        if (name == "head.dense.bias") {
            t.mutable_data()[0] = 5.0;
            t.mutable_data()[1] = -5.0;
        }
    }
    EXPECT_THROW(attack(model, random_sample(100, rng), c), AttackError);
    c.poison_length_bytes = 0;
    EXPECT_THROW(c.validate(), SpecError);
}

TEST(Attack, TraceInvariantsAndUntouchedSample) {
    std::mt19937_64 rng(6);
    auto model = detecting_model(32, rng);
    const auto sample = random_sample(350, rng);
    const auto original = sample.bytes;
    PoisonConfig c;
    c.iterations = 4;
    c.poison_length_bytes = 150;
    const auto tr = attack(model, sample, c);
    EXPECT_EQ(sample.bytes, original);
    EXPECT_EQ(tr.poison.size(), 150u);
    EXPECT_EQ(tr.y.size(), tr.iterations_run + 1);
    EXPECT_EQ(tr.y_continuous.size(), tr.y.size());
    for (double y : tr.y) {
        EXPECT_GE(y, 0.0);
        EXPECT_LE(y, 1.0);
    }
    // The last y is the model's view of the shipped byte string.
    auto full = original;
    full.insert(full.end(), tr.poison.begin(), tr.poison.end());
    if (tr.iterations_run > 0) EXPECT_EQ(tr.y.back(), malicious_probability(model, full));
    EXPECT_EQ(tr.evaded, classify(tr.y.back()) == Label::benign);
    for (std::size_t b = 0; b + 1 < 6; ++b) EXPECT_LE(tr.evaded_within(b), tr.evaded_within(b + 1));
    EXPECT_FALSE(tr.evaded_within(0));
}

TEST(Attack, ConstantModelStallsWithPoisonUnchanged) {
    std::mt19937_64 rng(7);
    auto model = detecting_model(33, rng);
    for (auto& [name, t] : model.parameters()) {
        if (name.ends_with("weight")) std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
    }
    const auto sample = random_sample(300, rng);
    PoisonConfig c;
    c.iterations = 20;
    c.poison_length_bytes = 64;
    const auto tr = attack(model, sample, c);
    EXPECT_TRUE(tr.stalled);
    EXPECT_EQ(tr.iterations_run, 4u);  // five zero gradients, the first four of which were applied as no-ops
    EXPECT_EQ(tr.poison, std::vector<std::uint8_t>(64, 0x00));
    for (double y : tr.y) EXPECT_EQ(y, tr.y[0]);
}

TEST(Campaign, PrefixBudgetsAreMonotone) {
    std::mt19937_64 rng(8);
    auto model = detecting_model(34, rng);
    TempDir dir("campaign");
    DatasetManifest m;
    for (int i = 0; i < 4; ++i) {
        const auto s = random_sample(200 + 50 * i, rng, i == 3 ? Label::benign : Label::malicious);
        const auto path = dir / ("s" + std::to_string(i) + ".bin");
        std::ofstream(path, std::ios::binary).write(reinterpret_cast<const char*>(s.bytes.data()),
                                                   static_cast<std::streamsize>(s.bytes.size()));
        m.entries.push_back({path, s.label, s.digest});
    }
    PoisonConfig c;
    c.poison_length_bytes = 100;
    c.samples_to_attack = 2;
    const auto res = attack_campaign(model, m, c, {3, 0, 1});
    EXPECT_EQ(res.budgets, (std::vector<std::size_t>{0, 1, 3}));
    EXPECT_EQ(res.total, 2u);
    EXPECT_EQ(res.evaded[0], 0u);
    EXPECT_LE(res.evaded[0], res.evaded[1]);
    EXPECT_LE(res.evaded[1], res.evaded[2]);
    const std::string csv = res.to_csv();
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "iterations,evaded_count,total");
    EXPECT_EQ(trace_csv(res.traces[0]).substr(0, 4), "t,y\n");
    EXPECT_THROW(attack_campaign(model, DatasetManifest{}, c, {1}), Error);
}
