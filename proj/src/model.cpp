#include "seqnet/model.hpp"

#include "io/binary_io.hpp"
#include "seqnet/errors.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace seqnet {

using nlohmann::json;

namespace {

constexpr char kModelMagic[8] = {'S', 'E', 'Q', 'N', 'E', 'T', 'M', '\0'};
constexpr std::uint32_t kModelVersion = 1;

// Default pools as powers of two: 16, 16, 4, 4.
constexpr int kDefaultPoolExponents[4] = {4, 4, 2, 2};
constexpr std::size_t kDefaultStageChannels[5] = {16, 32, 64, 128, 128};

const char* layout_name(nn::BlockLayout layout) {
    return layout == nn::BlockLayout::linear_depthwise ? "linear_depthwise" : "depthwise_bn_relu_pointwise_bn_relu";
}

nn::BlockLayout parse_layout(const std::string& s) {
    if (s == "linear_depthwise") return nn::BlockLayout::linear_depthwise;
    if (s == "depthwise_bn_relu_pointwise_bn_relu") return nn::BlockLayout::depthwise_bn_relu_pointwise_bn_relu;
    throw SpecError("unknown block layout '" + s + "'");
}

ModelSpec spec_with_exponents(std::size_t input_length, const int (&exps)[4]) {
    ModelSpec spec;
    spec.input_length = input_length;
    spec.stem = {1, kDefaultStageChannels[0], 3, 1, 1, true};
    for (std::size_t i = 0; i < 4; ++i) {
        StageSpec st;
        st.block = {nn::BlockKind::standard, kDefaultStageChannels[i], kDefaultStageChannels[i + 1], 3, spec.layout};
        st.pool_window = st.pool_stride = std::size_t{1} << exps[i];
        spec.stages.push_back(st);
    }
    spec.trunk_blocks = 5;
    spec.trunk_channels = kDefaultStageChannels[4];
    return spec;
}

void fill_uniform(Tensor& t, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : t.mutable_data()) v = dist(rng);
}

std::uint64_t checked_mul(std::initializer_list<std::uint64_t> factors) {
    std::uint64_t r = 1;
    for (auto f : factors) {
        if (__builtin_mul_overflow(r, f, &r)) throw SpecError("multiply-add count overflows 64 bits");
    }
    return r;
}

} // namespace

// ---------------------------------------------------------------------------

ModelSpec ModelSpec::default_spec() { return spec_with_exponents(kDefaultTargetLength, kDefaultPoolExponents); }

ModelSpec ModelSpec::for_input_length(std::size_t input_length) {
    // Shrink (or grow) the total pooling so that input_length / 2^sum is 64,
    // taking from the largest window first and giving to the smallest last.
    int exps[4];
    std::copy(std::begin(kDefaultPoolExponents), std::end(kDefaultPoolExponents), exps);
    int target = 0;
    while ((std::size_t{64} << (target + 1)) <= input_length) ++target;
    auto sum = [&] { return exps[0] + exps[1] + exps[2] + exps[3]; };
    while (sum() > target) {
        int best = 0;
        for (int i = 1; i < 4; ++i)
            if (exps[i] > exps[best]) best = i;
        --exps[best];
    }
    while (sum() < target) {
        int best = 3;
        for (int i = 2; i >= 0; --i)
            if (exps[i] < exps[best]) best = i;
        ++exps[best];
    }
    return spec_with_exponents(input_length, exps);
}

ModelSpec ModelSpec::with_channels_divided(std::size_t divisor) const {
    if (divisor == 0) throw SpecError("channel divisor must be positive");
    auto div = [divisor](std::size_t c) {
        if (c % divisor != 0 || c / divisor == 0) {
            throw SpecError("channel count " + std::to_string(c) + " is not divisible by " + std::to_string(divisor));
        }
        return c / divisor;
    };
    ModelSpec s = *this;
    s.stem.out_channels = div(stem.out_channels);
    for (auto& st : s.stages) {
        st.block.in_channels = div(st.block.in_channels);
        st.block.out_channels = div(st.block.out_channels);
    }
    s.trunk_channels = div(trunk_channels);
    return s;
}

void ModelSpec::validate() const {
    if (input_length == 0) throw SpecError("input_length must be positive");
    if (stem.in_channels != 1) throw SpecError("stem must take exactly 1 input channel");
    if (stem.kernel_length != 3) throw SpecError("stem kernel length must be 3");
    stem.validate();
    std::size_t channels = stem.out_channels;
    for (std::size_t i = 0; i < stages.size(); ++i) {
        const auto& st = stages[i];
        const std::string where = "stage " + std::to_string(i + 1);
        if (st.block.kind != nn::BlockKind::standard) throw SpecError(where + " must be a standard SDSC block");
        if (st.block.layout != layout) throw SpecError(where + " block layout differs from the model layout");
        if (st.block.in_channels != channels) {
            throw SpecError(where + " expects " + std::to_string(st.block.in_channels) + " channels but receives " +
                            std::to_string(channels));
        }
        if (st.pool_window == 0 || st.pool_stride == 0) throw SpecError(where + " pool window/stride must be positive");
        st.block.validate();
        channels = st.block.out_channels;
    }
    if (trunk_channels != channels) {
        throw SpecError("trunk_channels " + std::to_string(trunk_channels) + " does not match the last stage's " +
                        std::to_string(channels) + " channels");
    }
    std::size_t length = stem.output_length(input_length);
    for (std::size_t i = 0; i < stages.size(); ++i) {
        if (stages[i].pool_window > length) {
            throw SpecError("stage " + std::to_string(i + 1) + " output length would be < 1 (length " +
                            std::to_string(length) + ", pool " + std::to_string(stages[i].pool_window) + ")");
        }
        length = (length - stages[i].pool_window) / stages[i].pool_stride + 1;
    }
}

std::vector<std::size_t> ModelSpec::stage_input_lengths() const {
    validate();
    std::vector<std::size_t> out;
    std::size_t length = stem.output_length(input_length);
    for (const auto& st : stages) {
        out.push_back(length);
        length = (length - st.pool_window) / st.pool_stride + 1;
    }
    out.push_back(length);
    return out;
}

std::size_t ModelSpec::trunk_length() const { return stage_input_lengths().back(); }

std::string ModelSpec::to_json() const {
    json j;
    j["input_length"] = input_length;
    j["layout"] = layout_name(layout);
    j["stem"] = {{"out_channels", stem.out_channels}, {"kernel_length", stem.kernel_length},
                 {"stride", stem.stride},             {"padding", stem.padding},
                 {"has_bias", stem.has_bias}};
    j["stages"] = json::array();
    for (const auto& st : stages) {
        j["stages"].push_back({{"in_channels", st.block.in_channels},
                               {"out_channels", st.block.out_channels},
                               {"kernel_length", st.block.kernel_length},
                               {"pool_window", st.pool_window},
                               {"pool_stride", st.pool_stride}});
    }
    j["trunk_blocks"] = trunk_blocks;
    j["trunk_channels"] = trunk_channels;
    return j.dump();
}

ModelSpec ModelSpec::from_json(const std::string& text) {
    ModelSpec s;
    try {
        const json j = json::parse(text);
        s.input_length = j.at("input_length").get<std::size_t>();
        s.layout = parse_layout(j.at("layout").get<std::string>());
        const auto& stem = j.at("stem");
        s.stem = {1,
                  stem.at("out_channels").get<std::size_t>(),
                  stem.at("kernel_length").get<std::size_t>(),
                  stem.at("stride").get<std::size_t>(),
                  stem.at("padding").get<std::size_t>(),
                  stem.at("has_bias").get<bool>()};
        for (const auto& st : j.at("stages")) {
            StageSpec stage;
            stage.block = {nn::BlockKind::standard, st.at("in_channels").get<std::size_t>(),
                           st.at("out_channels").get<std::size_t>(), st.at("kernel_length").get<std::size_t>(),
                           s.layout};
            stage.pool_window = st.at("pool_window").get<std::size_t>();
            stage.pool_stride = st.at("pool_stride").get<std::size_t>();
            s.stages.push_back(stage);
        }
        s.trunk_blocks = j.at("trunk_blocks").get<std::size_t>();
        s.trunk_channels = j.at("trunk_channels").get<std::size_t>();
    } catch (const json::exception& e) {
        throw SpecError(std::string("malformed model spec: ") + e.what());
    }
    s.validate();
    return s;
}

bool ModelSpec::operator==(const ModelSpec& other) const { return to_json() == other.to_json(); }

// ---------------------------------------------------------------------------

SeqNetModel SeqNetModel::build(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    SeqNetModel m;
    m.spec_ = spec;
    m.stem_ = nn::Conv1D::create(spec.stem);
    m.stem_bn_ = nn::BatchNorm1D::create(spec.stem.out_channels);
    for (const auto& st : spec.stages) m.stages_.push_back(nn::SDSCBlock::create(st.block));
    for (std::size_t i = 0; i < spec.trunk_blocks; ++i) {
        m.trunk_.push_back(nn::SDSCBlock::create(
            {nn::BlockKind::residual, spec.trunk_channels, spec.trunk_channels, 3, spec.layout}));
    }
    m.head_ = nn::Dense::create(spec.trunk_channels, 2);

    std::mt19937_64 rng(seed);
    auto init = [&rng](Tensor& w, std::size_t fan_in) { fill_uniform(w, 1.0 / std::sqrt(double(fan_in)), rng); };
    init(m.stem_.weight, spec.stem.in_channels * spec.stem.kernel_length);
    for (auto* blocks : {&m.stages_, &m.trunk_}) {
        for (auto& b : *blocks) {
            init(b.depthwise.weight, b.spec.kernel_length);
            init(b.pointwise.weight, b.spec.in_channels);
        }
    }
    init(m.head_.weight, spec.trunk_channels);
    m.set_requires_grad(true);
    return m;
}

Tensor SeqNetModel::logits(const Tensor& x, Activations* taps) {
    if (x.rank() != 3 || x.dim(1) != 1 || x.dim(2) != spec_.input_length) {
        throw ShapeError("model expects input [batch, 1, " + std::to_string(spec_.input_length) + "], got " +
                         shape_string(x.shape()));
    }
    Tensor h = nn::relu(nn::batch_norm1d(stem_.forward(x), stem_bn_, mode_));
    if (taps) taps->emplace_back("stem", h);
    for (std::size_t i = 0; i < stages_.size(); ++i) {
        h = stages_[i].forward(h, mode_);
        if (taps) taps->emplace_back("stage" + std::to_string(i + 1), h);
        h = nn::avg_pool1d(h, spec_.stages[i].pool_window, spec_.stages[i].pool_stride);
    }
    for (std::size_t i = 0; i < trunk_.size(); ++i) {
        h = trunk_[i].forward(h, mode_);
        if (taps) taps->emplace_back("res" + std::to_string(i + 1), h);
    }
    return head_.forward(nn::global_avg_pool(h));
}

Tensor SeqNetModel::forward(const Tensor& x) { return nn::softmax2(logits(x)); }

nn::NamedTensors SeqNetModel::parameters() const {
    nn::NamedTensors out;
    out.emplace_back("stem.conv.weight", stem_.weight);
    if (stem_.bias.defined()) out.emplace_back("stem.conv.bias", stem_.bias);
    nn::collect_parameters(stem_bn_, "stem.bn", out);
    for (std::size_t i = 0; i < stages_.size(); ++i) stages_[i].collect_parameters("stage" + std::to_string(i + 1), out);
    for (std::size_t i = 0; i < trunk_.size(); ++i) trunk_[i].collect_parameters("res" + std::to_string(i + 1), out);
    out.emplace_back("head.dense.weight", head_.weight);
    out.emplace_back("head.dense.bias", head_.bias);
    return out;
}

nn::NamedTensors SeqNetModel::buffers() const {
    nn::NamedTensors out;
    nn::collect_buffers(stem_bn_, "stem.bn", out);
    for (std::size_t i = 0; i < stages_.size(); ++i) stages_[i].collect_buffers("stage" + std::to_string(i + 1), out);
    for (std::size_t i = 0; i < trunk_.size(); ++i) trunk_[i].collect_buffers("res" + std::to_string(i + 1), out);
    return out;
}

std::size_t SeqNetModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : parameters()) n += t.numel();
    return n;
}

void SeqNetModel::set_requires_grad(bool flag) {
    for (auto& [name, t] : parameters()) t.set_requires_grad(flag);
}

FrozenParameters::FrozenParameters(const SeqNetModel& model) : params_(model.parameters()) {
    for (auto& [name, t] : params_) {
        flags_.push_back(t.requires_grad());
        t.set_requires_grad(false);
    }
}

FrozenParameters::~FrozenParameters() {
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i].second.set_requires_grad(flags_[i]);
}

SeqNetModel SeqNetModel::clone() const {
    SeqNetModel copy = build(spec_, 0);
    copy.mode_ = mode_;
    auto src = parameters(), dst = copy.parameters();
    auto src_b = buffers(), dst_b = copy.buffers();
    src.insert(src.end(), src_b.begin(), src_b.end());
    dst.insert(dst.end(), dst_b.begin(), dst_b.end());
    for (std::size_t i = 0; i < src.size(); ++i) {
        auto from = src[i].second.data();
        std::copy(from.begin(), from.end(), dst[i].second.mutable_data().begin());
    }
    for (std::size_t i = 0; i < src.size(); ++i) dst[i].second.set_requires_grad(src[i].second.requires_grad());
    return copy;
}

std::vector<std::string> SeqNetModel::layer_tags() const {
    std::vector<std::string> tags{"stem"};
    for (std::size_t i = 0; i < stages_.size(); ++i) tags.push_back("stage" + std::to_string(i + 1));
    for (std::size_t i = 0; i < trunk_.size(); ++i) tags.push_back("res" + std::to_string(i + 1));
    return tags;
}

Label classify(double prob_malicious) { return prob_malicious > 0.5 ? Label::malicious : Label::benign; }

// ---------------------------------------------------------------------------

std::string CostReport::to_csv() const {
    std::ostringstream out;
    out << "layer,name,n,c,c_out,k,params,macs\n";
    for (const auto& r : rows) {
        out << r.index << ',' << r.name << ',' << r.n << ',' << r.c << ',' << r.c_out << ',' << r.k << ','
            << r.params << ',' << r.macs << '\n';
    }
    out << rows.size() << ",total,,,,," << total_params << ',' << total_macs << '\n';
    return out.str();
}

CostReport count_params(const ModelSpec& spec) {
    spec.validate();
    CostReport rep;
    auto add = [&rep](std::string name, std::size_t n, std::size_t c, std::size_t co, std::size_t k,
                      std::uint64_t params, std::uint64_t macs) {
        rep.rows.push_back({rep.rows.size(), std::move(name), n, c, co, k, params, macs});
        rep.total_params += params;
        rep.total_macs += macs;
    };
    auto add_block = [&](const std::string& prefix, const nn::SDSCBlockSpec& b, std::size_t n) {
        const auto dw = b.depthwise();
        const auto pw = b.pointwise();
        const std::size_t n_dw = dw.output_length(n);
        add(prefix + ".depthwise", n, b.in_channels, b.in_channels, dw.kernel_length, dw.param_count(),
            checked_mul({n_dw, b.in_channels, dw.kernel_length}));
        add(prefix + ".bn1", n_dw, b.in_channels, b.in_channels, 0, 2 * b.in_channels, 0);
        add(prefix + ".pointwise", n_dw, b.in_channels, b.out_channels, 1, pw.param_count(),
            checked_mul({n_dw, b.out_channels, b.in_channels}));
        add(prefix + ".bn2", n_dw, b.out_channels, b.out_channels, 0, 2 * b.out_channels, 0);
        return n_dw;
    };

    std::size_t n = spec.input_length;
    const std::size_t n_stem = spec.stem.output_length(n);
    add("stem.conv", n, 1, spec.stem.out_channels, spec.stem.kernel_length, spec.stem.param_count(),
        checked_mul({n_stem, spec.stem.out_channels, spec.stem.in_channels, spec.stem.kernel_length}));
    add("stem.bn", n_stem, spec.stem.out_channels, spec.stem.out_channels, 0, 2 * spec.stem.out_channels, 0);
    n = n_stem;
    for (std::size_t i = 0; i < spec.stages.size(); ++i) {
        const auto& st = spec.stages[i];
        const std::string prefix = "stage" + std::to_string(i + 1);
        n = add_block(prefix, st.block, n);
        const std::size_t pooled = (n - st.pool_window) / st.pool_stride + 1;
        add(prefix + ".pool", n, st.block.out_channels, st.block.out_channels, st.pool_window, 0, 0);
        n = pooled;
    }
    const nn::SDSCBlockSpec res{nn::BlockKind::residual, spec.trunk_channels, spec.trunk_channels, 3, spec.layout};
    for (std::size_t i = 0; i < spec.trunk_blocks; ++i) n = add_block("res" + std::to_string(i + 1), res, n);
    add("head.global_pool", n, spec.trunk_channels, spec.trunk_channels, n, 0, 0);
    add("head.dense", 1, spec.trunk_channels, 2, 1, spec.trunk_channels * 2 + 2, spec.trunk_channels * 2);
    return rep;
}

std::uint64_t empirical_cost(SeqNetModel& model, const Tensor& x) {
    NoGradGuard no_grad;
    const nn::Mode saved = model.mode();
    model.set_mode(nn::Mode::eval);
    nn::MacCounter counter;
    model.logits(x);
    model.set_mode(saved);
    return counter.total();
}

namespace cost {

std::uint64_t common_conv_2d(std::uint64_t n, std::uint64_t c, std::uint64_t c_out, std::uint64_t k) {
    return checked_mul({n, n, c_out, c, k, k});
}

std::uint64_t dsc_2d(std::uint64_t n, std::uint64_t c, std::uint64_t c_out, std::uint64_t k) {
    return checked_mul({n, n, c, k, k}) + checked_mul({n, n, c_out, c});
}

std::uint64_t common_conv_1d(std::uint64_t length, std::uint64_t c, std::uint64_t c_out, std::uint64_t k) {
    return checked_mul({length, c_out, c, k});
}

std::uint64_t sdsc(std::uint64_t length, std::uint64_t c, std::uint64_t c_out, std::uint64_t k) {
    return checked_mul({length, c, k}) + checked_mul({length, c_out, c});
}

Rational::Rational(std::int64_t n, std::int64_t d) {
    if (d == 0) throw Error("rational with zero denominator");
    if (d < 0) {
        n = -n;
        d = -d;
    }
    const std::int64_t g = std::gcd(n, d);
    num = g ? n / g : 0;
    den = g ? d / g : 1;
}

namespace {
std::int64_t narrow(__int128 v) {
    if (v > INT64_MAX || v < INT64_MIN) throw Error("rational arithmetic overflow");
    return static_cast<std::int64_t>(v);
}
Rational make(__int128 n, __int128 d) {
    // reduce in 128 bits before narrowing
    __int128 a = n < 0 ? -n : n, b = d < 0 ? -d : d;
    while (b) {
        const __int128 t = a % b;
        a = b;
        b = t;
    }
    if (a > 1) {
        n /= a;
        d /= a;
    }
    return Rational(narrow(n), narrow(d));
}
} // namespace

Rational Rational::operator+(const Rational& o) const {
    return make(static_cast<__int128>(num) * o.den + static_cast<__int128>(o.num) * den,
                static_cast<__int128>(den) * o.den);
}

Rational Rational::operator*(const Rational& o) const {
    return make(static_cast<__int128>(num) * o.num, static_cast<__int128>(den) * o.den);
}

Rational Rational::operator/(const Rational& o) const {
    if (o.num == 0) throw Error("rational division by zero");
    return make(static_cast<__int128>(num) * o.den, static_cast<__int128>(den) * o.num);
}

std::string Rational::str() const { return std::to_string(num) + "/" + std::to_string(den); }

Rational dsc_ratio(std::uint64_t n, std::uint64_t c, std::uint64_t c_out, std::uint64_t k) {
    return make(dsc_2d(n, c, c_out, k), common_conv_2d(n, c, c_out, k));
}

Rational sdsc_ratio(std::uint64_t n, std::uint64_t c, std::uint64_t c_out, std::uint64_t k) {
    return make(sdsc(n * n, c, c_out, k), common_conv_2d(n, c, c_out, k));
}

} // namespace cost

// ---------------------------------------------------------------------------

void save_model(const SeqNetModel& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write model file '" + path.string() + "'");
    out.write(kModelMagic, sizeof kModelMagic);
    io::put<std::uint32_t>(out, kModelVersion);
    io::put_string(out, model.spec().to_json());
    auto tensors = model.parameters();
    auto bufs = model.buffers();
    tensors.insert(tensors.end(), bufs.begin(), bufs.end());
    io::put<std::uint64_t>(out, tensors.size());
    for (const auto& [name, t] : tensors) {
        io::put_string(out, name);
        io::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) io::put<std::uint64_t>(out, d);
        io::put_doubles(out, t.data());
    }
    if (!out) throw IoError("error writing model file '" + path.string() + "'");
}

SeqNetModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open model file '" + path.string() + "'");
    const char* what = "model file";
    char magic[8];
    if (!in.read(magic, sizeof magic) || !std::equal(magic, magic + 8, kModelMagic)) {
        throw FormatError("'" + path.string() + "' is not a SeqNet model (bad magic)");
    }
    const auto version = io::get<std::uint32_t>(in, what);
    if (version != kModelVersion) {
        throw FormatError("model file version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kModelVersion) + ")");
    }
    ModelSpec spec;
    try {
        spec = ModelSpec::from_json(io::get_string(in, 1 << 20, what));
    } catch (const SpecError& e) {
        throw FormatError(std::string("model file: ") + e.what());
    }
    SeqNetModel model = SeqNetModel::build(spec, 0);
    auto tensors = model.parameters();
    auto bufs = model.buffers();
    tensors.insert(tensors.end(), bufs.begin(), bufs.end());

    const auto count = io::get<std::uint64_t>(in, what);
    if (count != tensors.size()) {
        throw FormatError("model file holds " + std::to_string(count) + " tensors, spec needs " +
                          std::to_string(tensors.size()));
    }
    for (auto& [name, t] : tensors) {
        const std::string stored = io::get_string(in, 4096, what);
        if (stored != name) throw FormatError("model file: expected tensor '" + name + "', found '" + stored + "'");
        const auto rank = io::get<std::uint32_t>(in, what);
        Shape shape(rank);
        for (auto& d : shape) d = io::get<std::uint64_t>(in, what);
        if (shape != t.shape()) {
            throw FormatError("model file: tensor '" + name + "' has shape " + shape_string(shape) + ", expected " +
                              shape_string(t.shape()));
        }
        io::get_doubles(in, t.mutable_data(), what);
    }
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError("model file: trailing bytes after last tensor");
    model.set_mode(nn::Mode::eval);
    return model;
}

} // namespace seqnet
