#include "seqnet/errors.hpp"
#include "seqnet/model.hpp"
#include "seqnet/ops.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace seqnet;
using seqnet::testing::random_tensor;

namespace {

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("seqnet_test_" + std::to_string(::getpid()) + "_" + name);
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ModelSpec toy_spec() { return ModelSpec::for_input_length(512).with_channels_divided(2); }

// Random spec: 0-4 stages with random channels and pools, 0-3 trunk blocks.
ModelSpec random_spec(std::mt19937_64& rng) {
    ModelSpec s;
    s.input_length = 64 + rng() % 200;
    s.stem = {1, 1 + rng() % 6, 3, 1, 1, rng() % 2 == 0};
    s.layout = rng() % 2 ? nn::BlockLayout::linear_depthwise : nn::kDefaultBlockLayout;
    std::size_t c = s.stem.out_channels;
    const std::size_t n_stages = rng() % 5;
    for (std::size_t i = 0; i < n_stages; ++i) {
        StageSpec st;
        const std::size_t co = 1 + rng() % 8;
        st.block = {nn::BlockKind::standard, c, co, 1 + 2 * (rng() % 2), s.layout};
        st.pool_window = 1 + rng() % 3;
        st.pool_stride = 1 + rng() % 3;
        s.stages.push_back(st);
        c = co;
    }
    s.trunk_channels = c;
    s.trunk_blocks = rng() % 4;
    return s;
}

} // namespace

TEST(ModelSpec, DefaultGeometry) {
    const auto spec = ModelSpec::default_spec();
    EXPECT_NO_THROW(spec.validate());
    EXPECT_EQ(spec.input_length, std::size_t{1} << 18);
    EXPECT_EQ(spec.stem.kernel_length, 3u);
    EXPECT_EQ(spec.trunk_blocks, 5u);
    EXPECT_EQ(spec.trunk_channels, 128u);
    EXPECT_EQ(spec.trunk_length(), 64u);
}

TEST(ModelSpec, PoolScheduleFollowsInputLength) {
    auto pools = [](const ModelSpec& s) {
        std::vector<std::size_t> w;
        for (const auto& st : s.stages) w.push_back(st.pool_window);
        return w;
    };
    EXPECT_EQ(pools(ModelSpec::for_input_length(1 << 18)), (std::vector<std::size_t>{16, 16, 4, 4}));
    EXPECT_EQ(pools(ModelSpec::for_input_length(1 << 14)), (std::vector<std::size_t>{4, 4, 4, 4}));
    EXPECT_EQ(pools(ModelSpec::for_input_length(512)), (std::vector<std::size_t>{1, 2, 2, 2}));
    EXPECT_EQ(pools(ModelSpec::for_input_length(1 << 20)), (std::vector<std::size_t>{16, 16, 8, 8}));
    for (std::size_t L : {512, 1 << 12, 1 << 14, 1 << 18, 1 << 20})
        EXPECT_EQ(ModelSpec::for_input_length(L).trunk_length(), 64u);
}

TEST(ModelSpec, ToyGeometryHalvesChannels) {
    const auto s = toy_spec();
    EXPECT_EQ(s.stem.out_channels, 8u);
    EXPECT_EQ(s.trunk_channels, 64u);
    EXPECT_EQ(s.stages.back().block.out_channels, 64u);
}

TEST(ModelSpec, InvalidSpecsNameTheInvariant) {
    auto s = ModelSpec::default_spec();
    s.stem.kernel_length = 5;
    EXPECT_THROW(s.validate(), SpecError);

    s = ModelSpec::default_spec();
    s.trunk_channels = 64;
    try {
        s.validate();
        FAIL();
    } catch (const SpecError& e) {
        EXPECT_NE(std::string(e.what()).find("trunk_channels"), std::string::npos);
    }

    s = ModelSpec::default_spec();
    s.input_length = 1000;
    EXPECT_THROW(s.validate(), SpecError);
    EXPECT_THROW(SeqNetModel::build(s, 1), SpecError);
}

TEST(ModelSpec, JsonRoundTrip) {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 20; ++i) {
        auto s = random_spec(rng);
        EXPECT_EQ(ModelSpec::from_json(s.to_json()), s);
    }
    EXPECT_THROW(ModelSpec::from_json("{\"input_length\": 3}"), SpecError);
}

TEST(Model, ParameterCountMatchesGolden) {
    const auto spec = ModelSpec::default_spec();
    const auto model = SeqNetModel::build(spec, 0);
    const std::size_t total = model.parameter_count();

    std::ifstream golden(std::string(SEQNET_GOLDEN_DIR) + "/default_param_count.txt");
    ASSERT_TRUE(golden) << "golden file missing";
    std::size_t pinned = 0;
    golden >> pinned;
    EXPECT_EQ(total, pinned);
    EXPECT_GE(total, 110000u);
    EXPECT_LE(total, 160000u);
    EXPECT_EQ(count_params(spec).total_params, total);
}

TEST(Model, ReportEqualsTensorsForRandomSpecs) {
    std::mt19937_64 rng(2);
    for (int i = 0; i < 50; ++i) {
        auto spec = random_spec(rng);
        auto model = SeqNetModel::build(spec, i);
        EXPECT_EQ(count_params(spec).total_params, model.parameter_count());
    }
}

TEST(Model, ForwardIsShapeTotal) {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 30; ++i) {
        auto spec = random_spec(rng);
        auto model = SeqNetModel::build(spec, i);
        Tensor p = model.forward(random_tensor({3, 1, spec.input_length}, rng));
        ASSERT_EQ(p.shape(), (Shape{3, 2}));
        for (std::size_t n = 0; n < 3; ++n) EXPECT_NEAR(p.at({n, 0}) + p.at({n, 1}), 1.0, 1e-9);
    }
}

TEST(Model, WrongInputLengthRejected) {
    auto model = SeqNetModel::build(toy_spec(), 1);
    EXPECT_THROW(model.forward(Tensor::zeros({1, 1, 500})), ShapeError);
}

TEST(Model, SameSeedSameParameters) {
    auto a = SeqNetModel::build(toy_spec(), 7), b = SeqNetModel::build(toy_spec(), 7);
    auto c = SeqNetModel::build(toy_spec(), 8);
    auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
    bool any_diff = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        EXPECT_TRUE(std::equal(pa[i].second.data().begin(), pa[i].second.data().end(), pb[i].second.data().begin()));
        any_diff |= !std::equal(pa[i].second.data().begin(), pa[i].second.data().end(), pc[i].second.data().begin());
    }
    EXPECT_TRUE(any_diff);
}

TEST(Model, IdenticalInputsGiveIdenticalRows) {
    std::mt19937_64 rng(4);
    auto model = SeqNetModel::build(toy_spec(), 1);
    Tensor one = random_tensor({1, 1, 512}, rng);
    std::vector<double> rows;
    for (int i = 0; i < 4; ++i) rows.insert(rows.end(), one.data().begin(), one.data().end());
    Tensor p = model.forward(Tensor::from({4, 1, 512}, rows));
    for (std::size_t n = 1; n < 4; ++n) {
        EXPECT_EQ(p.at({n, 0}), p.at({0, 0}));
        EXPECT_EQ(p.at({n, 1}), p.at({0, 1}));
    }
}

TEST(Model, ZeroSequenceGivesDistribution) {
    auto spec = ModelSpec::for_input_length(1 << 12);
    auto model = SeqNetModel::build(spec, 1);
    Tensor p = model.forward(Tensor::full({1, 1, 1 << 12}, -1.0));
    EXPECT_NEAR(p.at({0, 0}) + p.at({0, 1}), 1.0, 1e-12);
}

TEST(Model, Classify) {
    EXPECT_EQ(classify(0.51), Label::malicious);
    EXPECT_EQ(classify(0.5), Label::benign);
    EXPECT_EQ(classify(0.0), Label::benign);
    EXPECT_EQ(classify(std::nextafter(0.5, 1.0)), Label::malicious);
}

TEST(Model, ClassifyInvariantUnderMonotoneLogitTransform) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> d(-5, 5);
    for (int i = 0; i < 200; ++i) {
        const double z0 = d(rng), z1 = d(rng);
        const double p = nn::softmax2(Tensor::from({1, 2}, {z0, z1})).at({0, 1});
        // y = 2 * z^3 + z is strictly increasing
        auto f = [](double z) { return 2 * z * z * z + z; };
        const double q = nn::softmax2(Tensor::from({1, 2}, {f(z0), f(z1)})).at({0, 1});
        EXPECT_EQ(classify(p), classify(q));
    }
}

TEST(Model, TapsCoverEveryStage) {
    std::mt19937_64 rng(6);
    auto model = SeqNetModel::build(toy_spec(), 1);
    Activations taps;
    model.logits(random_tensor({1, 1, 512}, rng), &taps);
    ASSERT_EQ(taps.size(), model.layer_tags().size());
    EXPECT_EQ(taps.size(), 10u);
    for (std::size_t i = 0; i < taps.size(); ++i) EXPECT_EQ(taps[i].first, model.layer_tags()[i]);
    EXPECT_EQ(taps.back().second.shape(), (Shape{1, 64, 64}));
}

TEST(Model, CloneIsDeep) {
    auto a = SeqNetModel::build(toy_spec(), 1);
    auto b = a.clone();
    b.parameters()[0].second.mutable_data()[0] += 1.0;
    EXPECT_NE(a.parameters()[0].second.data()[0], b.parameters()[0].second.data()[0]);
}

TEST(Cost, ClosedFormCounts) {
    EXPECT_EQ(cost::sdsc(4, 3, 8, 3), 132u);
    EXPECT_EQ(cost::common_conv_1d(10, 2, 3, 1), 60u);
    EXPECT_EQ(cost::common_conv_2d(2, 3, 8, 3), 4u * 8 * 3 * 9);
    EXPECT_EQ(cost::dsc_2d(2, 3, 8, 3), 4u * 3 * 9 + 4u * 8 * 3);
}

TEST(Cost, RatiosExactInRationalArithmetic) {
    using cost::Rational;
    for (std::int64_t k = 1; k <= 8; ++k)
        for (std::int64_t co = 1; co <= 256; ++co) {
            const Rational inv_k2(1, k * k);
            ASSERT_EQ(cost::dsc_ratio(5, 3, co, k), Rational(1, co) + inv_k2);
            ASSERT_EQ(cost::sdsc_ratio(5, 3, co, k), Rational(1, co * k) + inv_k2);
        }
    EXPECT_NEAR(cost::sdsc_ratio(4, 3, 128, 3).value(), 0.113715277777, 1e-11);
}

TEST(Cost, RationalNormalizes) {
    using cost::Rational;
    EXPECT_EQ(Rational(2, 4), Rational(1, 2));
    EXPECT_EQ(Rational(3, -6), Rational(-1, 2));
    EXPECT_EQ((Rational(1, 3) + Rational(1, 6)).str(), "1/2");
    EXPECT_THROW(Rational(1, 0), Error);
}

TEST(Cost, EmpiricalEqualsAnalytic) {
    std::mt19937_64 rng(7);
    for (int i = 0; i < 20; ++i) {
        auto spec = random_spec(rng);
        auto model = SeqNetModel::build(spec, i);
        const std::size_t batch = 1 + rng() % 3;
        EXPECT_EQ(empirical_cost(model, random_tensor({batch, 1, spec.input_length}, rng)),
                  batch * count_params(spec).total_macs);
    }
}

TEST(Cost, CsvHasHeaderAndTotals) {
    const auto rep = count_params(toy_spec());
    const std::string csv = rep.to_csv();
    EXPECT_EQ(csv.rfind("layer,name,n,c,c_out,k,params,macs\n", 0), 0u);
    EXPECT_NE(csv.find(",total,,,,," + std::to_string(rep.total_params) + "," + std::to_string(rep.total_macs)),
              std::string::npos);
}

TEST(Cost, DefaultPointwiseAndDepthwiseRows) {
    const auto rep = count_params(ModelSpec::default_spec());
    for (const auto& r : rep.rows) {
        if (r.name == "res1.pointwise") EXPECT_EQ(r.params, 16512u);
        if (r.name == "res1.depthwise") EXPECT_EQ(r.params, 512u);
    }
}

TEST(Serialize, RoundTripIsByteIdentical) {
    std::mt19937_64 rng(8);
    auto model = SeqNetModel::build(toy_spec(), 3);
    // make the running statistics non-trivial
    model.set_mode(nn::Mode::train);
    model.forward(random_tensor({4, 1, 512}, rng));
    model.set_mode(nn::Mode::eval);

    const auto p1 = temp_path("m1.bin"), p2 = temp_path("m2.bin");
    save_model(model, p1);
    auto loaded = load_model(p1);
    save_model(loaded, p2);
    EXPECT_EQ(slurp(p1), slurp(p2));

    Tensor x = random_tensor({2, 1, 512}, rng);
    Tensor a = model.forward(x), b = loaded.forward(x);
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a.data()[i], b.data()[i]);
    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
}

TEST(Serialize, CorruptFilesRejected) {
    auto model = SeqNetModel::build(toy_spec(), 3);
    const auto p = temp_path("m3.bin");
    save_model(model, p);
    std::string bytes = slurp(p);

    std::string bad = bytes;
    bad[0] = 'X';
    std::ofstream(p, std::ios::binary | std::ios::trunc) << bad;
    EXPECT_THROW(load_model(p), FormatError);

    bad = bytes;
    bad[8] = 9;  // version
    std::ofstream(p, std::ios::binary | std::ios::trunc) << bad;
    EXPECT_THROW(load_model(p), FormatError);

    std::ofstream(p, std::ios::binary | std::ios::trunc) << bytes.substr(0, bytes.size() - 5);
    EXPECT_THROW(load_model(p), FormatError);

    std::filesystem::remove(p);
    EXPECT_THROW(load_model(p), IoError);
}

// Full model at toy geometry: sampled coordinates of the input and of every
// parameter tensor. In train mode a bias feeding straight into batch-norm has
// an identically zero gradient (the mean subtraction removes it), so only
// eval mode probes those. Biases are randomised so pre-activations are not
// sitting exactly on ReLU kinks, and probes that cross a kink are redrawn.
TEST(ModelGradient, ToyGeometryMatchesFiniteDifferences) {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        auto model = SeqNetModel::build(toy_spec(), 100 + trial);
        const bool train = trial % 2 == 0;
        seqnet::testing::randomise_offsets(model, rng, !train);
        model.set_mode(train ? nn::Mode::train : nn::Mode::eval);
        Tensor x = random_tensor({2, 1, 512}, rng);
        const int labels[] = {0, 1};
        auto loss = [&](const Tensor&) { return nn::cross_entropy(model.logits(x), labels); };

        seqnet::testing::SmoothCheck acc;
        auto probe = [&](Tensor t) { seqnet::testing::smooth_gradient_check(loss, t, rng, 3, acc); };
        probe(x);
        std::size_t tensors = 1;
        for (auto& [name, t] : model.parameters()) {
            const bool feeds_bn = name.ends_with("conv.bias") || name.ends_with("depthwise.bias") ||
                                  name.ends_with("pointwise.bias");
            if (train && feeds_bn) continue;
            probe(t);
            ++tensors;
        }
        EXPECT_EQ(acc.probed, 3 * tensors) << "too many kink crossings";
        const double worst = acc.worst;
        EXPECT_LE(worst, 1e-4) << "trial " << trial << (train ? " (train)" : " (eval)");
    }
}
