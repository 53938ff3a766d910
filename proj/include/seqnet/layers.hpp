#pragma once

#include "seqnet/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace seqnet::nn {

enum class Mode { train, eval };

// ---------------------------------------------------------------------------
// Layer geometry

struct Conv1DSpec {
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t kernel_length = 3;
    std::size_t stride = 1;
    std::size_t padding = 1; // zeros added at each end
    bool has_bias = true;

    /// floor((L + 2 * padding - k) / stride) + 1; throws if that is < 1.
    std::size_t output_length(std::size_t input_length) const;
    std::size_t param_count() const;
    void validate() const;
};

struct DepthwiseConv1DSpec {
    std::size_t channels = 1;
    std::size_t kernel_length = 3;
    std::size_t stride = 1;
    std::size_t padding = 1;
    bool has_bias = true;

    std::size_t output_length(std::size_t input_length) const;
    std::size_t param_count() const;
    void validate() const;
};

struct PointwiseConv1DSpec {
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    bool has_bias = true;

    std::size_t param_count() const;
    void validate() const;
};

enum class BlockKind { standard, residual };

// Order of normalization and activation inside an SDSC block.
//   depthwise_bn_relu_pointwise_bn_relu: dw -> BN -> ReLU -> pw -> BN -> ReLU
//   linear_depthwise:                    dw -> BN -> pw -> BN -> ReLU
enum class BlockLayout { depthwise_bn_relu_pointwise_bn_relu, linear_depthwise };

inline constexpr BlockLayout kDefaultBlockLayout = BlockLayout::depthwise_bn_relu_pointwise_bn_relu;

struct SDSCBlockSpec {
    BlockKind kind = BlockKind::standard;
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t kernel_length = 3; // depthwise taps, padded to keep the length
    BlockLayout layout = kDefaultBlockLayout;

    DepthwiseConv1DSpec depthwise() const;
    PointwiseConv1DSpec pointwise() const;
    std::size_t param_count() const; // convolutions + both batch-norms
    void validate() const;
};

// ---------------------------------------------------------------------------
// Multiply-add instrumentation. While a MacCounter is alive on a thread, every
// convolution and dense op executed on that thread adds the number of kernel
// multiply-adds it performed (padded taps included, bias additions excluded).

class MacCounter {
public:
    MacCounter();
    ~MacCounter();
    MacCounter(const MacCounter&) = delete;
    MacCounter& operator=(const MacCounter&) = delete;

    std::uint64_t total() const { return total_; }

private:
    friend void count_macs(std::uint64_t n);
    std::uint64_t total_ = 0;
    MacCounter* parent_;
};

void count_macs(std::uint64_t n);

// While alive, every relu evaluated on this thread folds its on/off pattern into
// a fingerprint. Two evaluations with equal fingerprints took the same linear
// piece, which is what a finite-difference check needs to know.
class ReluPattern {
public:
    ReluPattern();
    ~ReluPattern();
    ReluPattern(const ReluPattern&) = delete;
    ReluPattern& operator=(const ReluPattern&) = delete;

    std::uint64_t fingerprint() const { return hash_; }

private:
    friend Tensor relu(const Tensor& x);
    std::uint64_t hash_ = 1469598103934665603ull;
    ReluPattern* parent_;
};

// ---------------------------------------------------------------------------
// Functional layers. Shapes: sequences are [batch, channels, length].
// An undefined `bias` tensor means no bias.

Tensor conv1d(const Tensor& x, const Conv1DSpec& spec, const Tensor& weight, const Tensor& bias);
Tensor depthwise_conv1d(const Tensor& x, const DepthwiseConv1DSpec& spec, const Tensor& weight,
                        const Tensor& bias);
Tensor pointwise_conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias);

struct BatchNorm1D {
    std::size_t channels = 0;
    Tensor gamma;
    Tensor beta;
    Tensor running_mean;
    Tensor running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    static BatchNorm1D create(std::size_t channels);
};

// Train mode normalizes with batch statistics over batch x length and updates
// the running statistics (variance tracked unbiased); eval mode uses them.
Tensor batch_norm1d(const Tensor& x, BatchNorm1D& bn, Mode mode);

Tensor relu(const Tensor& x);
Tensor avg_pool1d(const Tensor& x, std::size_t window, std::size_t stride);
Tensor global_avg_pool(const Tensor& x);
Tensor dense(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Row-wise softmax of [batch, classes] logits, max-subtracted.
Tensor softmax2(const Tensor& logits);

/// Mean over the batch of -log softmax(logits)[label]; fused log-sum-exp.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

// ---------------------------------------------------------------------------
// Parameterised layers

struct Conv1D {
    Conv1DSpec spec;
    Tensor weight; // [out, in, k]
    Tensor bias;   // [out]

    static Conv1D create(const Conv1DSpec& spec);
    Tensor forward(const Tensor& x) const { return conv1d(x, spec, weight, bias); }
};

struct DepthwiseConv1D {
    DepthwiseConv1DSpec spec;
    Tensor weight; // [channels, k]
    Tensor bias;

    static DepthwiseConv1D create(const DepthwiseConv1DSpec& spec);
    Tensor forward(const Tensor& x) const { return depthwise_conv1d(x, spec, weight, bias); }
};

struct PointwiseConv1D {
    PointwiseConv1DSpec spec;
    Tensor weight; // [out, in]
    Tensor bias;

    static PointwiseConv1D create(const PointwiseConv1DSpec& spec);
    Tensor forward(const Tensor& x) const { return pointwise_conv1d(x, weight, bias); }
};

struct Dense {
    Tensor weight; // [out, in]
    Tensor bias;

    static Dense create(std::size_t in_features, std::size_t out_features);
    Tensor forward(const Tensor& x) const { return dense(x, weight, bias); }
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Depthwise-separable block over sequences: standard, or residual (x + block(x)).
struct SDSCBlock {
    SDSCBlockSpec spec;
    DepthwiseConv1D depthwise;
    BatchNorm1D bn1;
    PointwiseConv1D pointwise;
    BatchNorm1D bn2;

    /// Zero-initialised parameters, batch-norm at gamma=1, beta=0, stats (0, 1).
    static SDSCBlock create(const SDSCBlockSpec& spec);
    Tensor forward(const Tensor& x, Mode mode);

    void collect_parameters(const std::string& prefix, NamedTensors& out) const;
    void collect_buffers(const std::string& prefix, NamedTensors& out) const;
};

void collect_parameters(const BatchNorm1D& bn, const std::string& prefix, NamedTensors& out);
void collect_buffers(const BatchNorm1D& bn, const std::string& prefix, NamedTensors& out);

} // namespace seqnet::nn
