#include "seqnet/errors.hpp"
#include "seqnet/explain.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace seqnet;
using seqnet::testing::random_vector;
using seqnet::testing::TempDir;

namespace {

SeqNetModel random_model(std::uint64_t seed) {
    auto m = SeqNetModel::build(ModelSpec::for_input_length(512).with_channels_divided(4), seed);
    std::mt19937_64 rng(seed);
    seqnet::testing::randomise_offsets(m, rng);
    return m;
}

Heatmap map_of(std::vector<double> v, const std::string& layer = "res5") {
    Heatmap h;
    h.values = std::move(v);
    h.layer = layer;
    h.input_length = 8 * h.values.size();
    return h;
}

} // namespace

TEST(NormalizeSnippet, Examples) {
    auto a = normalize_snippet(std::vector<double>{2, 4, 1});
    EXPECT_EQ(a.values, (std::vector<double>{0.5, 1.0, 0.25}));
    EXPECT_FALSE(a.degenerate);
    auto z = normalize_snippet(std::vector<double>{0, 0});
    EXPECT_EQ(z.values, (std::vector<double>{0, 0}));
    EXPECT_TRUE(z.degenerate);
    EXPECT_EQ(normalize_snippet(std::vector<double>{7}).values, (std::vector<double>{1}));
    EXPECT_THROW(normalize_snippet(std::vector<double>{1, -0.5}), Error);
}

TEST(NormalizeSnippet, Idempotent) {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 50; ++i) {
        auto v = random_vector(1 + rng() % 40, rng, 0.0, 3.0);
        const auto once = normalize_snippet(v).values;
        EXPECT_EQ(normalize_snippet(once).values, once);
        EXPECT_EQ(*std::max_element(once.begin(), once.end()), 1.0);
    }
}

TEST(CamCombine, ConstantAndZeroCases) {
    // One channel, constant activation 3 with positive gradient: flat map.
    const std::vector<double> a(6, 3.0), g(6, 0.25);
    const auto m = cam_combine(a, g, 1, 6);
    EXPECT_EQ(m, std::vector<double>(6, 0.75));
    EXPECT_EQ(normalize_snippet(m).values, std::vector<double>(6, 1.0));
    const auto zero = cam_combine(a, std::vector<double>(6, 0.0), 1, 6);
    EXPECT_EQ(zero, std::vector<double>(6, 0.0));
    EXPECT_TRUE(normalize_snippet(zero).degenerate);
    EXPECT_THROW(cam_combine(a, g, 2, 6), ShapeError);
}

TEST(CamCombine, WeightsAreMeanGradients) {
    // Two channels of length 2; alphas are 1 and -0.5.
    const std::vector<double> a{1, 2, 4, 1};
    const std::vector<double> g{0.5, 1.5, -1, 0};
    EXPECT_EQ(cam_combine(a, g, 2, 2), (std::vector<double>{0.0, 1.5}));
}

TEST(AverageHeatmap, Examples) {
    const auto h = map_of({0.2, 1.0, 0.4});
    const auto same = average_heatmap({h, h, h});
    for (std::size_t i = 0; i < h.values.size(); ++i) EXPECT_NEAR(same.values[i], h.values[i], 1e-15);
    const auto avg = average_heatmap({map_of({1, 0}), map_of({0, 1})});
    EXPECT_EQ(avg.values, (std::vector<double>{1, 1}));
    EXPECT_THROW(average_heatmap({}), Error);
    EXPECT_THROW(average_heatmap({map_of({1, 0}), map_of({1, 0, 0})}), Error);
    EXPECT_THROW(average_heatmap({map_of({1, 0}), map_of({1, 0}, "res4")}), Error);
}

TEST(GradCam, ShapesAndUnknownLayer) {
    auto model = random_model(1);
    std::mt19937_64 rng(2);
    const auto x = random_vector(512, rng);
    const auto lengths = model.spec().stage_input_lengths();
    const auto h = grad_cam(model, x);
    EXPECT_EQ(h.layer, "res5");
    EXPECT_EQ(h.values.size(), model.spec().trunk_length());
    EXPECT_DOUBLE_EQ(h.offset_scale() * static_cast<double>(h.values.size()), 512.0);
    for (double v : h.values) EXPECT_GE(v, 0.0);
    GradCamOptions bad;
    bad.layer = "conv9";
    EXPECT_THROW(grad_cam(model, x, bad), Error);
}

TEST(GradCam, BatchCompositionDoesNotMatter) {
    auto model = random_model(3);
    std::mt19937_64 rng(4);
    std::vector<std::vector<double>> xs;
    std::vector<double> flat;
    for (int i = 0; i < 3; ++i) {
        xs.push_back(random_vector(512, rng));
        flat.insert(flat.end(), xs.back().begin(), xs.back().end());
    }
    for (const std::string layer : {"stem", "stage2", "res5"}) {
        GradCamOptions o;
        o.layer = layer;
        const auto batch = grad_cam(model, Tensor::from({3, 1, 512}, flat), o);
        for (int i = 0; i < 3; ++i) {
            const auto alone = grad_cam(model, xs[i], o);
            ASSERT_EQ(alone.values.size(), batch[i].values.size());
            for (std::size_t p = 0; p < alone.values.size(); ++p) {
                EXPECT_NEAR(alone.values[p], batch[i].values[p], 1e-12);
            }
        }
    }
}

TEST(GradCam, ScoreScalingIsLinear) {
    auto model = random_model(5);
    std::mt19937_64 rng(6);
    const auto x = random_vector(512, rng);
    for (int target : {0, 1}) {
        GradCamOptions o;
        o.target_class = target;
        const auto base = grad_cam(model, x, o);
        o.score_scale = 3.5;
        const auto scaled = grad_cam(model, x, o);
        for (std::size_t p = 0; p < base.values.size(); ++p) {
            EXPECT_NEAR(scaled.values[p], 3.5 * base.values[p], 1e-12 * std::max(1.0, scaled.values[p]));
        }
        auto a = base, b = scaled;
        normalize(a);
        normalize(b);
        for (std::size_t p = 0; p < a.values.size(); ++p) EXPECT_NEAR(a.values[p], b.values[p], 1e-12);
    }
}

TEST(GradCam, LayerSweep) {
    auto model = random_model(7);
    std::mt19937_64 rng(8);
    const auto x = random_vector(512, rng);
    const auto sweep = layer_sweep(model, x);
    const auto tags = model.layer_tags();
    ASSERT_EQ(sweep.size(), tags.size());
    for (std::size_t i = 0; i < sweep.size(); ++i) {
        EXPECT_EQ(sweep[i].layer, tags[i]);
        if (i > 0) EXPECT_LE(sweep[i].values.size(), sweep[i - 1].values.size());
        const double peak = *std::max_element(sweep[i].values.begin(), sweep[i].values.end());
        if (sweep[i].degenerate) {
            EXPECT_EQ(peak, 0.0);
        } else {
            EXPECT_EQ(peak, 1.0);
        }
        for (double v : sweep[i].values) EXPECT_GE(v, 0.0);
        // Same maps as one grad_cam call per layer.
        GradCamOptions o;
        o.layer = tags[i];
        auto single = grad_cam(model, x, o);
        normalize(single);
        for (std::size_t p = 0; p < single.values.size(); ++p) EXPECT_NEAR(single.values[p], sweep[i].values[p], 1e-12);
    }
    EXPECT_EQ(sweep.front().values.size(), 512u);
    EXPECT_EQ(sweep.back().values.size(), model.spec().trunk_length());
}

TEST(Heatmap, FileOffsetsAndOutputs) {
    Heatmap h = map_of({0.0, 0.5, 1.0, 0.25});
    h.input_length = 400;
    h.original_length = 1000;
    EXPECT_EQ(h.file_offset(0), 0u);
    EXPECT_EQ(h.file_offset(2), static_cast<std::size_t>(200.0 * 999.0 / 399.0));
    EXPECT_EQ(h.argmax(), 2u);
    const std::string csv = heatmap_csv(h);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "position,file_offset,value");
    EXPECT_NE(csv.find("\n2,500,1\n"), std::string::npos);

    TempDir dir("pgm");
    write_pgm(dir / "h.pgm", {h, map_of({1, 0})});
    std::ifstream in(dir / "h.pgm", std::ios::binary);
    const std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::string header = "P5\n4 2\n255\n";
    ASSERT_EQ(content.size(), header.size() + 8);
    EXPECT_EQ(content.substr(0, header.size()), header);
    EXPECT_EQ(static_cast<unsigned char>(content[header.size() + 1]), 128);  // round(127.5)
    EXPECT_EQ(static_cast<unsigned char>(content[header.size() + 4]), 255);  // stretched row
    EXPECT_EQ(static_cast<unsigned char>(content[header.size() + 6]), 0);
}
