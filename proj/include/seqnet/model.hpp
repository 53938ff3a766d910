#pragma once

#include "seqnet/layers.hpp"
#include "seqnet/preprocess.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace seqnet {

struct StageSpec {
    nn::SDSCBlockSpec block;  // standard kind
    std::size_t pool_window = 2;
    std::size_t pool_stride = 2;
};

// Stem conv(1 -> c, k = 3) + BN + ReLU, then downsampling stages (standard SDSC
// block followed by an average pool), then residual SDSC blocks at
// trunk_channels, global average pool, one dense layer to 2 logits.
struct ModelSpec {
    std::size_t input_length = kDefaultTargetLength;
    nn::Conv1DSpec stem{1, 16, 3, 1, 1, true};
    std::vector<StageSpec> stages;
    std::size_t trunk_blocks = 5;
    std::size_t trunk_channels = 128;
    nn::BlockLayout layout = nn::kDefaultBlockLayout;

    // Channels 16 -> 32 -> 64 -> 128 -> 128, pools 16, 16, 4, 4: 2^18 -> 64.
    static ModelSpec default_spec();

    // Default channels with the pool windows rescaled so the trunk keeps the
    // default length (64) when input_length allows it.
    static ModelSpec for_input_length(std::size_t input_length);

    /// Every channel count divided by `divisor` (must divide evenly).
    ModelSpec with_channels_divided(std::size_t divisor) const;

    /// Throws SpecError naming the first violated invariant.
    void validate() const;

    /// Sequence length entering each stage, the trunk, and finally the trunk length.
    std::vector<std::size_t> stage_input_lengths() const;
    std::size_t trunk_length() const;

    std::string to_json() const;
    static ModelSpec from_json(const std::string& text);

    bool operator==(const ModelSpec& other) const;
};

using Activations = std::vector<std::pair<std::string, Tensor>>;

class SeqNetModel {
public:
    /// Fan-in uniform weights in +-1/sqrt(fan_in), zero biases, BN at gamma=1, beta=0.
    static SeqNetModel build(const ModelSpec& spec, std::uint64_t seed);

    const ModelSpec& spec() const { return spec_; }

    nn::Mode mode() const { return mode_; }
    void set_mode(nn::Mode mode) { mode_ = mode; }

    // x: [batch, 1, input_length]. Returns [batch, 2] logits. If `taps` is
    // given, the feature maps at "stem", "stage1".."stageN" (after the
    // block's ReLU, before pooling) and "res1".."resN" are appended to it.
    Tensor logits(const Tensor& x, Activations* taps = nullptr);

    /// softmax2(logits(x)); column 1 is P(malicious).
    Tensor forward(const Tensor& x);

    /// Trainable tensors in a fixed order.
    nn::NamedTensors parameters() const;
    /// Batch-norm running statistics.
    nn::NamedTensors buffers() const;
    std::size_t parameter_count() const;

    /// Turns gradient tracking of every parameter on or off.
    void set_requires_grad(bool flag);

    /// Deep copy of parameters and buffers.
    SeqNetModel clone() const;

    /// Names of the feature maps exposed through `taps`, stem first.
    std::vector<std::string> layer_tags() const;

private:
    ModelSpec spec_;
    nn::Mode mode_ = nn::Mode::eval;
    nn::Conv1D stem_;
    nn::BatchNorm1D stem_bn_;
    std::vector<nn::SDSCBlock> stages_;
    std::vector<nn::SDSCBlock> trunk_;
    nn::Dense head_;
};

// Switches gradient tracking of every parameter off for its lifetime, so
// input-gradient passes (attack, Grad-CAM) leave parameter gradients alone,
// then restores the previous flags.
class FrozenParameters {
public:
    explicit FrozenParameters(const SeqNetModel& model);
    ~FrozenParameters();
    FrozenParameters(const FrozenParameters&) = delete;
    FrozenParameters& operator=(const FrozenParameters&) = delete;

private:
    nn::NamedTensors params_;
    std::vector<bool> flags_;
};

/// Malicious iff p > 0.5 strictly.
Label classify(double prob_malicious);

// ---------------------------------------------------------------------------
// Cost accounting. Multiply-adds count only the multiplies of convolution and
// dense kernels (zero-padded taps included, bias additions excluded).

struct CostRow {
    std::size_t index = 0;
    std::string name;
    std::size_t n = 0;      // sequence length entering the layer
    std::size_t c = 0;      // input channels
    std::size_t c_out = 0;  // output channels
    std::size_t k = 0;      // kernel length
    std::uint64_t params = 0;
    std::uint64_t macs = 0;
};

struct CostReport {
    std::vector<CostRow> rows;
    std::uint64_t total_params = 0;
    std::uint64_t total_macs = 0;

    double mflops() const { return static_cast<double>(total_macs) / 1e6; }
    /// Header `layer,name,n,c,c_out,k,params,macs`, then one row per layer and a total row.
    std::string to_csv() const;
};

/// Analytic per-sample report for a spec.
CostReport count_params(const ModelSpec& spec);

/// Multiply-adds counted while running an inference forward pass on x.
std::uint64_t empirical_cost(SeqNetModel& model, const Tensor& x);

namespace cost {

// n is the side of the 2D feature map; for sequences n*n is replaced by the
// sequence length.
std::uint64_t common_conv_2d(std::uint64_t n, std::uint64_t c, std::uint64_t c_out, std::uint64_t k);
std::uint64_t dsc_2d(std::uint64_t n, std::uint64_t c, std::uint64_t c_out, std::uint64_t k);
std::uint64_t common_conv_1d(std::uint64_t length, std::uint64_t c, std::uint64_t c_out, std::uint64_t k);
std::uint64_t sdsc(std::uint64_t length, std::uint64_t c, std::uint64_t c_out, std::uint64_t k);

/// Exact fraction, always reduced with a positive denominator.
struct Rational {
    std::int64_t num = 0;
    std::int64_t den = 1;

    Rational() = default;
    Rational(std::int64_t n, std::int64_t d = 1);

    Rational operator+(const Rational& o) const;
    Rational operator*(const Rational& o) const;
    Rational operator/(const Rational& o) const;
    bool operator==(const Rational& o) const = default;
    double value() const { return static_cast<double>(num) / static_cast<double>(den); }
    std::string str() const;
};

/// Cal_DSC / Cal_com and Cal_SDSC / Cal_com formed from the counts.
Rational dsc_ratio(std::uint64_t n, std::uint64_t c, std::uint64_t c_out, std::uint64_t k);
Rational sdsc_ratio(std::uint64_t n, std::uint64_t c, std::uint64_t c_out, std::uint64_t k);

} // namespace cost

// ---------------------------------------------------------------------------
// Model container: "SEQNETM\0", u32 version, spec JSON (u64 length + bytes),
// u64 tensor count, then per tensor: name (u64 length + bytes), u32 rank,
// u64 extents, little-endian doubles. Parameters first, then buffers.

void save_model(const SeqNetModel& model, const std::filesystem::path& path);
SeqNetModel load_model(const std::filesystem::path& path);

} // namespace seqnet
