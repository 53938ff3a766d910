#include "seqnet/layers.hpp"

#include "seqnet/errors.hpp"
#include "seqnet/kernels.hpp"
#include "seqnet/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace seqnet::nn {

namespace {

thread_local MacCounter* t_counter = nullptr;
thread_local ReluPattern* t_pattern = nullptr;

void require_rank3(const char* op, const Tensor& x) {
    if (x.rank() != 3) {
        throw ShapeError(std::string(op) + ": expected [batch, channels, length], got " +
                         shape_string(x.shape()));
    }
}

void require_shape(const char* op, const char* what, const Tensor& t, const Shape& expected) {
    if (t.shape() != expected) {
        throw ShapeError(std::string(op) + ": " + what + " shape " + shape_string(t.shape()) +
                         " does not match expected " + shape_string(expected));
    }
}

std::size_t sliding_length(const char* op, std::size_t length, std::size_t k, std::size_t stride,
                           std::size_t padding) {
    if (length + 2 * padding < k) {
        throw ShapeError(std::string(op) + ": input too short for kernel/stride (length " +
                         std::to_string(length) + ", kernel " + std::to_string(k) + ")");
    }
    return (length + 2 * padding - k) / stride + 1;
}

std::vector<Tensor> inputs_of(const Tensor& x, const Tensor& w, const Tensor& b) {
    std::vector<Tensor> in{x, w};
    if (b.defined()) in.push_back(b);
    return in;
}

} // namespace

// ---------------------------------------------------------------------------

std::size_t Conv1DSpec::output_length(std::size_t input_length) const {
    validate();
    return sliding_length("conv1d", input_length, kernel_length, stride, padding);
}

std::size_t Conv1DSpec::param_count() const {
    return out_channels * in_channels * kernel_length + (has_bias ? out_channels : 0);
}

void Conv1DSpec::validate() const {
    if (!in_channels || !out_channels || !kernel_length || !stride) {
        throw SpecError("Conv1DSpec: channels, kernel length and stride must be positive");
    }
}

std::size_t DepthwiseConv1DSpec::output_length(std::size_t input_length) const {
    validate();
    return sliding_length("depthwise_conv1d", input_length, kernel_length, stride, padding);
}

std::size_t DepthwiseConv1DSpec::param_count() const {
    return channels * kernel_length + (has_bias ? channels : 0);
}

void DepthwiseConv1DSpec::validate() const {
    if (!channels || !kernel_length || !stride) {
        throw SpecError("DepthwiseConv1DSpec: channels, kernel length and stride must be positive");
    }
}

std::size_t PointwiseConv1DSpec::param_count() const {
    return out_channels * in_channels + (has_bias ? out_channels : 0);
}

void PointwiseConv1DSpec::validate() const {
    if (!in_channels || !out_channels) {
        throw SpecError("PointwiseConv1DSpec: channels must be positive");
    }
}

DepthwiseConv1DSpec SDSCBlockSpec::depthwise() const {
    return {in_channels, kernel_length, 1, kernel_length / 2, true};
}

PointwiseConv1DSpec SDSCBlockSpec::pointwise() const { return {in_channels, out_channels, true}; }

std::size_t SDSCBlockSpec::param_count() const {
    return depthwise().param_count() + 2 * in_channels + pointwise().param_count() + 2 * out_channels;
}

void SDSCBlockSpec::validate() const {
    if (!in_channels || !out_channels) {
        throw SpecError("SDSCBlockSpec: channels must be positive");
    }
    if (kernel_length % 2 == 0) {
        throw SpecError("SDSCBlockSpec: depthwise kernel length must be odd to preserve the length");
    }
    if (kind == BlockKind::residual && in_channels != out_channels) {
        throw SpecError("SDSCBlockSpec: residual block needs in_channels == out_channels (got " +
                        std::to_string(in_channels) + " -> " + std::to_string(out_channels) + ")");
    }
}

// ---------------------------------------------------------------------------

MacCounter::MacCounter() : parent_(t_counter) { t_counter = this; }

MacCounter::~MacCounter() {
    t_counter = parent_;
    if (parent_) parent_->total_ += total_;
}

void count_macs(std::uint64_t n) {
    if (t_counter) t_counter->total_ += n;
}

ReluPattern::ReluPattern() : parent_(t_pattern) { t_pattern = this; }
ReluPattern::~ReluPattern() { t_pattern = parent_; }

// ---------------------------------------------------------------------------

Tensor conv1d(const Tensor& x, const Conv1DSpec& spec, const Tensor& weight, const Tensor& bias) {
    require_rank3("conv1d", x);
    spec.validate();
    const std::size_t batch = x.dim(0), cin = x.dim(1), len = x.dim(2);
    const std::size_t cout = spec.out_channels, k = spec.kernel_length;
    if (cin != spec.in_channels) {
        throw ShapeError("conv1d: input has " + std::to_string(cin) + " channels, spec expects " +
                         std::to_string(spec.in_channels) + " (input " + shape_string(x.shape()) + ")");
    }
    require_shape("conv1d", "weight", weight, {cout, cin, k});
    if (spec.has_bias) require_shape("conv1d", "bias", bias, {cout});
    const std::size_t out_len = sliding_length("conv1d", len, k, spec.stride, spec.padding);

    const auto& kt = kernels::active();
    std::vector<double> y(batch * cout * out_len, 0.0);
    auto xd = x.data();
    auto wd = weight.data();
    const double* bd = spec.has_bias ? bias.data().data() : nullptr;
    parallel_for(batch, [&](std::size_t n) {
        for (std::size_t o = 0; o < cout; ++o) {
            double* yo = y.data() + (n * cout + o) * out_len;
            if (bd) std::fill_n(yo, out_len, bd[o]);
            for (std::size_t i = 0; i < cin; ++i) {
                kt.correlate(xd.data() + (n * cin + i) * len, len, wd.data() + (o * cin + i) * k, k,
                             spec.stride, spec.padding, yo, out_len);
            }
        }
    });
    count_macs(static_cast<std::uint64_t>(batch) * cout * out_len * cin * k);

    const Tensor b = spec.has_bias ? bias : Tensor();
    return make_result(
        {batch, cout, out_len}, std::move(y), inputs_of(x, weight, b), "conv1d",
        [x, weight, spec, batch, cin, cout, len, out_len, k](std::span<const double> gy,
                                                             std::span<const std::span<double>> g) {
            const auto& kt = kernels::active();
            auto xd = x.data();
            auto wd = weight.data();
            if (!g[0].empty()) {
                parallel_for(batch, [&](std::size_t n) {
                    for (std::size_t i = 0; i < cin; ++i) {
                        double* gx = g[0].data() + (n * cin + i) * len;
                        for (std::size_t o = 0; o < cout; ++o)
                            kt.correlate_grad_input(gy.data() + (n * cout + o) * out_len, out_len,
                                                    wd.data() + (o * cin + i) * k, k, spec.stride,
                                                    spec.padding, gx, len);
                    }
                });
            }
            if (!g[1].empty()) {
                parallel_for(cout, [&](std::size_t o) {
                    for (std::size_t n = 0; n < batch; ++n)
                        for (std::size_t i = 0; i < cin; ++i)
                            kt.correlate_grad_weight(gy.data() + (n * cout + o) * out_len, out_len,
                                                     xd.data() + (n * cin + i) * len, len, k, spec.stride,
                                                     spec.padding, g[1].data() + (o * cin + i) * k);
                });
            }
            if (g.size() > 2 && !g[2].empty()) {
                for (std::size_t n = 0; n < batch; ++n)
                    for (std::size_t o = 0; o < cout; ++o) {
                        const double* row = gy.data() + (n * cout + o) * out_len;
                        double s = 0.0;
                        for (std::size_t t = 0; t < out_len; ++t) s += row[t];
                        g[2][o] += s;
                    }
            }
        });
}

Tensor depthwise_conv1d(const Tensor& x, const DepthwiseConv1DSpec& spec, const Tensor& weight,
                        const Tensor& bias) {
    require_rank3("depthwise_conv1d", x);
    spec.validate();
    const std::size_t batch = x.dim(0), ch = x.dim(1), len = x.dim(2), k = spec.kernel_length;
    if (ch != spec.channels) {
        throw ShapeError("depthwise_conv1d: input has " + std::to_string(ch) + " channels, spec expects " +
                         std::to_string(spec.channels) + " (input " + shape_string(x.shape()) + ")");
    }
    require_shape("depthwise_conv1d", "weight", weight, {ch, k});
    if (spec.has_bias) require_shape("depthwise_conv1d", "bias", bias, {ch});
    const std::size_t out_len = sliding_length("depthwise_conv1d", len, k, spec.stride, spec.padding);

    const auto& kt = kernels::active();
    std::vector<double> y(batch * ch * out_len, 0.0);
    auto xd = x.data();
    auto wd = weight.data();
    const double* bd = spec.has_bias ? bias.data().data() : nullptr;
    parallel_for(batch, [&](std::size_t n) {
        for (std::size_t c = 0; c < ch; ++c) {
            double* yc = y.data() + (n * ch + c) * out_len;
            if (bd) std::fill_n(yc, out_len, bd[c]);
            kt.correlate(xd.data() + (n * ch + c) * len, len, wd.data() + c * k, k, spec.stride, spec.padding,
                         yc, out_len);
        }
    });
    count_macs(static_cast<std::uint64_t>(batch) * ch * out_len * k);

    const Tensor b = spec.has_bias ? bias : Tensor();
    return make_result(
        {batch, ch, out_len}, std::move(y), inputs_of(x, weight, b), "depthwise_conv1d",
        [x, weight, spec, batch, ch, len, out_len, k](std::span<const double> gy,
                                                      std::span<const std::span<double>> g) {
            const auto& kt = kernels::active();
            auto xd = x.data();
            auto wd = weight.data();
            if (!g[0].empty()) {
                parallel_for(batch, [&](std::size_t n) {
                    for (std::size_t c = 0; c < ch; ++c)
                        kt.correlate_grad_input(gy.data() + (n * ch + c) * out_len, out_len, wd.data() + c * k,
                                                k, spec.stride, spec.padding,
                                                g[0].data() + (n * ch + c) * len, len);
                });
            }
            if (!g[1].empty()) {
                parallel_for(ch, [&](std::size_t c) {
                    for (std::size_t n = 0; n < batch; ++n)
                        kt.correlate_grad_weight(gy.data() + (n * ch + c) * out_len, out_len,
                                                 xd.data() + (n * ch + c) * len, len, k, spec.stride,
                                                 spec.padding, g[1].data() + c * k);
                });
            }
            if (g.size() > 2 && !g[2].empty()) {
                for (std::size_t n = 0; n < batch; ++n)
                    for (std::size_t c = 0; c < ch; ++c) {
                        const double* row = gy.data() + (n * ch + c) * out_len;
                        double s = 0.0;
                        for (std::size_t t = 0; t < out_len; ++t) s += row[t];
                        g[2][c] += s;
                    }
            }
        });
}

Tensor pointwise_conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    require_rank3("pointwise_conv1d", x);
    if (weight.rank() != 2) {
        throw ShapeError("pointwise_conv1d: weight must be [out, in], got " + shape_string(weight.shape()));
    }
    const std::size_t batch = x.dim(0), cin = x.dim(1), len = x.dim(2), cout = weight.dim(0);
    if (weight.dim(1) != cin) {
        throw ShapeError("pointwise_conv1d: channel mismatch, weight " + shape_string(weight.shape()) +
                         " vs input " + shape_string(x.shape()));
    }
    if (bias.defined()) require_shape("pointwise_conv1d", "bias", bias, {cout});

    const auto& kt = kernels::active();
    std::vector<double> y(batch * cout * len, 0.0);
    auto xd = x.data();
    auto wd = weight.data();
    const double* bd = bias.defined() ? bias.data().data() : nullptr;
    parallel_for(batch, [&](std::size_t n) {
        double* yn = y.data() + n * cout * len;
        if (bd)
            for (std::size_t o = 0; o < cout; ++o) std::fill_n(yn + o * len, len, bd[o]);
        kt.gemm_acc(wd.data(), xd.data() + n * cin * len, yn, cout, cin, len);
    });
    count_macs(static_cast<std::uint64_t>(batch) * cout * cin * len);

    return make_result(
        {batch, cout, len}, std::move(y), inputs_of(x, weight, bias), "pointwise_conv1d",
        [x, weight, batch, cin, cout, len](std::span<const double> gy, std::span<const std::span<double>> g) {
            const auto& kt = kernels::active();
            auto xd = x.data();
            auto wd = weight.data();
            if (!g[0].empty()) {
                std::vector<double> wt(cin * cout);
                for (std::size_t o = 0; o < cout; ++o)
                    for (std::size_t i = 0; i < cin; ++i) wt[i * cout + o] = wd[o * cin + i];
                parallel_for(batch, [&](std::size_t n) {
                    kt.gemm_acc(wt.data(), gy.data() + n * cout * len, g[0].data() + n * cin * len, cin, cout,
                                len);
                });
            }
            if (!g[1].empty()) {
                constexpr std::size_t kRowBlock = 8;
                const std::size_t blocks = (cout + kRowBlock - 1) / kRowBlock;
                parallel_for(blocks, [&](std::size_t blk) {
                    const std::size_t o0 = blk * kRowBlock;
                    const std::size_t rows = std::min(kRowBlock, cout - o0);
                    for (std::size_t n = 0; n < batch; ++n)
                        kt.gemm_acc_bt(gy.data() + (n * cout + o0) * len, xd.data() + n * cin * len,
                                       g[1].data() + o0 * cin, rows, cin, len);
                });
            }
            if (g.size() > 2 && !g[2].empty()) {
                for (std::size_t n = 0; n < batch; ++n)
                    for (std::size_t o = 0; o < cout; ++o) {
                        const double* row = gy.data() + (n * cout + o) * len;
                        double s = 0.0;
                        for (std::size_t t = 0; t < len; ++t) s += row[t];
                        g[2][o] += s;
                    }
            }
        });
}

// ---------------------------------------------------------------------------

BatchNorm1D BatchNorm1D::create(std::size_t channels) {
    BatchNorm1D bn;
    bn.channels = channels;
    bn.gamma = Tensor::full({channels}, 1.0);
    bn.beta = Tensor::zeros({channels});
    bn.running_mean = Tensor::zeros({channels});
    bn.running_var = Tensor::full({channels}, 1.0);
    return bn;
}

Tensor batch_norm1d(const Tensor& x, BatchNorm1D& bn, Mode mode) {
    require_rank3("batch_norm1d", x);
    const std::size_t batch = x.dim(0), ch = x.dim(1), len = x.dim(2);
    if (ch != bn.channels) {
        throw ShapeError("batch_norm1d: input " + shape_string(x.shape()) + " has " + std::to_string(ch) +
                         " channels, layer has " + std::to_string(bn.channels));
    }
    const std::size_t count = batch * len;
    if (mode == Mode::train && count < 2) {
        throw ShapeError("batch_norm1d: train mode needs batch * length >= 2, got " + shape_string(x.shape()));
    }
    auto xd = x.data();
    auto gamma = bn.gamma.data();
    auto beta = bn.beta.data();

    std::vector<double> mean(ch), inv_std(ch);
    if (mode == Mode::train) {
        auto rm = bn.running_mean.mutable_data();
        auto rv = bn.running_var.mutable_data();
        for (std::size_t c = 0; c < ch; ++c) {
            double s = 0.0;
            for (std::size_t n = 0; n < batch; ++n) {
                const double* row = xd.data() + (n * ch + c) * len;
                for (std::size_t t = 0; t < len; ++t) s += row[t];
            }
            const double mu = s / static_cast<double>(count);
            double ss = 0.0;
            for (std::size_t n = 0; n < batch; ++n) {
                const double* row = xd.data() + (n * ch + c) * len;
                for (std::size_t t = 0; t < len; ++t) {
                    const double d = row[t] - mu;
                    ss += d * d;
                }
            }
            const double var = ss / static_cast<double>(count);
            mean[c] = mu;
            inv_std[c] = 1.0 / std::sqrt(var + bn.eps);
            rm[c] = (1.0 - bn.momentum) * rm[c] + bn.momentum * mu;
            rv[c] = (1.0 - bn.momentum) * rv[c] +
                    bn.momentum * ss / static_cast<double>(count - 1);
        }
    } else {
        auto rm = bn.running_mean.data();
        auto rv = bn.running_var.data();
        for (std::size_t c = 0; c < ch; ++c) {
            mean[c] = rm[c];
            inv_std[c] = 1.0 / std::sqrt(rv[c] + bn.eps);
        }
    }

    std::vector<double> y(xd.size());
    for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t c = 0; c < ch; ++c) {
            const std::size_t off = (n * ch + c) * len;
            const double scale = gamma[c] * inv_std[c];
            const double shift = beta[c] - mean[c] * scale;
            for (std::size_t t = 0; t < len; ++t) y[off + t] = scale * xd[off + t] + shift;
        }

    const bool train = mode == Mode::train;
    // x-hat is recomputed from x in the backward rule rather than stored.
    return make_result(
        x.shape(), std::move(y), {x, bn.gamma, bn.beta}, train ? "batch_norm1d_train" : "batch_norm1d_eval",
        [x, mean = std::move(mean), inv_std = std::move(inv_std), gamma_t = bn.gamma, train, batch, ch, len,
         count](std::span<const double> gy, std::span<const std::span<double>> g) {
            auto xd = x.data();
            auto gamma = gamma_t.data();
            for (std::size_t c = 0; c < ch; ++c) {
                const double mu = mean[c], is = inv_std[c];
                double sum_gy = 0.0, sum_gy_xhat = 0.0;
                for (std::size_t n = 0; n < batch; ++n) {
                    const std::size_t off = (n * ch + c) * len;
                    for (std::size_t t = 0; t < len; ++t) {
                        sum_gy += gy[off + t];
                        sum_gy_xhat += gy[off + t] * (xd[off + t] - mu) * is;
                    }
                }
                if (!g[1].empty()) g[1][c] += sum_gy_xhat;
                if (!g[2].empty()) g[2][c] += sum_gy;
                if (g[0].empty()) continue;
                const double scale = gamma[c] * is;
                if (train) {
                    const double inv_n = 1.0 / static_cast<double>(count);
                    const double m1 = sum_gy * inv_n, m2 = sum_gy_xhat * inv_n;
                    for (std::size_t n = 0; n < batch; ++n) {
                        const std::size_t off = (n * ch + c) * len;
                        for (std::size_t t = 0; t < len; ++t)
                            g[0][off + t] += scale * (gy[off + t] - m1 - (xd[off + t] - mu) * is * m2);
                    }
                } else {
                    for (std::size_t n = 0; n < batch; ++n) {
                        const std::size_t off = (n * ch + c) * len;
                        for (std::size_t t = 0; t < len; ++t) g[0][off + t] += scale * gy[off + t];
                    }
                }
            }
        });
}

Tensor relu(const Tensor& x) {
    auto xd = x.data();
    std::vector<double> y(xd.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = xd[i] > 0.0 ? xd[i] : 0.0;
    if (t_pattern) {
        // FNV-1a over the mask bits
        std::uint64_t h = t_pattern->hash_;
        for (double v : xd) h = (h ^ (v > 0.0 ? 0x9bu : 0x31u)) * 1099511628211ull;
        t_pattern->hash_ = h;
    }
    return make_result(x.shape(), std::move(y), {x}, "relu",
                       [x](std::span<const double> gy, std::span<const std::span<double>> g) {
                           auto xd = x.data();
                           for (std::size_t i = 0; i < gy.size(); ++i)
                               if (xd[i] > 0.0) g[0][i] += gy[i];
                       });
}

Tensor avg_pool1d(const Tensor& x, std::size_t window, std::size_t stride) {
    require_rank3("avg_pool1d", x);
    if (!window || !stride) {
        throw ShapeError("avg_pool1d: window and stride must be positive");
    }
    const std::size_t rows = x.dim(0) * x.dim(1), len = x.dim(2);
    if (window > len) {
        throw ShapeError("avg_pool1d: window " + std::to_string(window) + " exceeds length of " +
                         shape_string(x.shape()));
    }
    const std::size_t out_len = (len - window) / stride + 1;
    const double inv = 1.0 / static_cast<double>(window);
    auto xd = x.data();
    std::vector<double> y(rows * out_len);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t t = 0; t < out_len; ++t) {
            const double* src = xd.data() + r * len + t * stride;
            double s = 0.0;
            for (std::size_t j = 0; j < window; ++j) s += src[j];
            y[r * out_len + t] = s * inv;
        }
    return make_result({x.dim(0), x.dim(1), out_len}, std::move(y), {x}, "avg_pool1d",
                       [rows, len, out_len, window, stride, inv](std::span<const double> gy,
                                                                 std::span<const std::span<double>> g) {
                           for (std::size_t r = 0; r < rows; ++r)
                               for (std::size_t t = 0; t < out_len; ++t) {
                                   const double v = gy[r * out_len + t] * inv;
                                   double* dst = g[0].data() + r * len + t * stride;
                                   for (std::size_t j = 0; j < window; ++j) dst[j] += v;
                               }
                       });
}

Tensor global_avg_pool(const Tensor& x) {
    require_rank3("global_avg_pool", x);
    const std::size_t rows = x.dim(0) * x.dim(1), len = x.dim(2);
    const double inv = 1.0 / static_cast<double>(len);
    auto xd = x.data();
    std::vector<double> y(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t t = 0; t < len; ++t) s += xd[r * len + t];
        y[r] = s * inv;
    }
    return make_result({x.dim(0), x.dim(1)}, std::move(y), {x}, "global_avg_pool",
                       [len, inv](std::span<const double> gy, std::span<const std::span<double>> g) {
                           for (std::size_t r = 0; r < gy.size(); ++r) {
                               const double v = gy[r] * inv;
                               for (std::size_t t = 0; t < len; ++t) g[0][r * len + t] += v;
                           }
                       });
}

Tensor dense(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (x.rank() != 2 || weight.rank() != 2 || weight.dim(1) != x.dim(1)) {
        throw ShapeError("dense: input " + shape_string(x.shape()) + " incompatible with weight " +
                         shape_string(weight.shape()));
    }
    const std::size_t batch = x.dim(0), in = x.dim(1), out = weight.dim(0);
    if (bias.defined()) require_shape("dense", "bias", bias, {out});
    const auto& kt = kernels::active();
    auto xd = x.data();
    auto wd = weight.data();
    std::vector<double> y(batch * out);
    for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t o = 0; o < out; ++o)
            y[n * out + o] = (bias.defined() ? bias.data()[o] : 0.0) +
                             kt.dot(wd.data() + o * in, xd.data() + n * in, in);
    count_macs(static_cast<std::uint64_t>(batch) * out * in);
    return make_result({batch, out}, std::move(y), inputs_of(x, weight, bias), "dense",
                       [x, weight, batch, in, out](std::span<const double> gy,
                                                   std::span<const std::span<double>> g) {
                           auto xd = x.data();
                           auto wd = weight.data();
                           for (std::size_t n = 0; n < batch; ++n)
                               for (std::size_t o = 0; o < out; ++o) {
                                   const double v = gy[n * out + o];
                                   if (!g[0].empty())
                                       for (std::size_t i = 0; i < in; ++i) g[0][n * in + i] += v * wd[o * in + i];
                                   if (!g[1].empty())
                                       for (std::size_t i = 0; i < in; ++i) g[1][o * in + i] += v * xd[n * in + i];
                                   if (g.size() > 2 && !g[2].empty()) g[2][o] += v;
                               }
                       });
}

Tensor softmax2(const Tensor& logits) {
    if (logits.rank() != 2) {
        throw ShapeError("softmax2: expected [batch, classes], got " + shape_string(logits.shape()));
    }
    const std::size_t batch = logits.dim(0), cls = logits.dim(1);
    auto z = logits.data();
    std::vector<double> p(z.size());
    for (std::size_t n = 0; n < batch; ++n) {
        const double* row = z.data() + n * cls;
        const double m = *std::max_element(row, row + cls);
        double s = 0.0;
        for (std::size_t j = 0; j < cls; ++j) {
            p[n * cls + j] = std::exp(row[j] - m);
            s += p[n * cls + j];
        }
        for (std::size_t j = 0; j < cls; ++j) p[n * cls + j] /= s;
    }
    std::vector<double> saved = p;
    return make_result(logits.shape(), std::move(p), {logits}, "softmax",
                       [saved = std::move(saved), batch, cls](std::span<const double> gy,
                                                              std::span<const std::span<double>> g) {
                           for (std::size_t n = 0; n < batch; ++n) {
                               double dotp = 0.0;
                               for (std::size_t j = 0; j < cls; ++j) dotp += gy[n * cls + j] * saved[n * cls + j];
                               for (std::size_t j = 0; j < cls; ++j)
                                   g[0][n * cls + j] += saved[n * cls + j] * (gy[n * cls + j] - dotp);
                           }
                       });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
    if (logits.rank() != 2) {
        throw ShapeError("cross_entropy: expected [batch, classes], got " + shape_string(logits.shape()));
    }
    const std::size_t batch = logits.dim(0), cls = logits.dim(1);
    if (labels.empty()) {
        throw ShapeError("cross_entropy: empty batch");
    }
    if (labels.size() != batch) {
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         shape_string(logits.shape()));
    }
    auto z = logits.data();
    std::vector<double> probs(z.size());
    double loss = 0.0;
    for (std::size_t n = 0; n < batch; ++n) {
        if (labels[n] < 0 || static_cast<std::size_t>(labels[n]) >= cls) {
            throw ShapeError("cross_entropy: label " + std::to_string(labels[n]) + " out of range");
        }
        const double* row = z.data() + n * cls;
        const double m = *std::max_element(row, row + cls);
        double s = 0.0;
        for (std::size_t j = 0; j < cls; ++j) s += std::exp(row[j] - m);
        const double lse = m + std::log(s);
        loss += lse - row[labels[n]];
        for (std::size_t j = 0; j < cls; ++j) probs[n * cls + j] = std::exp(row[j] - lse);
    }
    loss /= static_cast<double>(batch);
    std::vector<int> lab(labels.begin(), labels.end());
    return make_result({1}, {loss}, {logits}, "cross_entropy",
                       [probs = std::move(probs), lab = std::move(lab), batch, cls](
                           std::span<const double> up, std::span<const std::span<double>> g) {
                           const double s = up[0] / static_cast<double>(batch);
                           for (std::size_t n = 0; n < batch; ++n)
                               for (std::size_t j = 0; j < cls; ++j) {
                                   const double target = static_cast<int>(j) == lab[n] ? 1.0 : 0.0;
                                   g[0][n * cls + j] += s * (probs[n * cls + j] - target);
                               }
                       });
}

// ---------------------------------------------------------------------------

Conv1D Conv1D::create(const Conv1DSpec& spec) {
    spec.validate();
    Conv1D c;
    c.spec = spec;
    c.weight = Tensor::zeros({spec.out_channels, spec.in_channels, spec.kernel_length});
    if (spec.has_bias) c.bias = Tensor::zeros({spec.out_channels});
    return c;
}

DepthwiseConv1D DepthwiseConv1D::create(const DepthwiseConv1DSpec& spec) {
    spec.validate();
    DepthwiseConv1D c;
    c.spec = spec;
    c.weight = Tensor::zeros({spec.channels, spec.kernel_length});
    if (spec.has_bias) c.bias = Tensor::zeros({spec.channels});
    return c;
}

PointwiseConv1D PointwiseConv1D::create(const PointwiseConv1DSpec& spec) {
    spec.validate();
    PointwiseConv1D c;
    c.spec = spec;
    c.weight = Tensor::zeros({spec.out_channels, spec.in_channels});
    if (spec.has_bias) c.bias = Tensor::zeros({spec.out_channels});
    return c;
}

Dense Dense::create(std::size_t in_features, std::size_t out_features) {
    Dense d;
    d.weight = Tensor::zeros({out_features, in_features});
    d.bias = Tensor::zeros({out_features});
    return d;
}

SDSCBlock SDSCBlock::create(const SDSCBlockSpec& spec) {
    spec.validate();
    SDSCBlock b;
    b.spec = spec;
    b.depthwise = DepthwiseConv1D::create(spec.depthwise());
    b.bn1 = BatchNorm1D::create(spec.in_channels);
    b.pointwise = PointwiseConv1D::create(spec.pointwise());
    b.bn2 = BatchNorm1D::create(spec.out_channels);
    return b;
}

Tensor SDSCBlock::forward(const Tensor& x, Mode mode) {
    Tensor h = batch_norm1d(depthwise.forward(x), bn1, mode);
    if (spec.layout == BlockLayout::depthwise_bn_relu_pointwise_bn_relu) h = relu(h);
    h = relu(batch_norm1d(pointwise.forward(h), bn2, mode));
    if (spec.kind == BlockKind::residual) {
        if (h.shape() != x.shape()) {
            throw ShapeError("residual SDSC block: skip shape " + shape_string(x.shape()) + " vs path " +
                             shape_string(h.shape()));
        }
        auto xd = x.data();
        auto hd = h.data();
        std::vector<double> y(xd.size());
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = xd[i] + hd[i];
        return make_result(x.shape(), std::move(y), {x, h}, "residual_add",
                           [](std::span<const double> up, std::span<const std::span<double>> g) {
                               for (const auto& gi : g)
                                   if (!gi.empty())
                                       for (std::size_t i = 0; i < up.size(); ++i) gi[i] += up[i];
                           });
    }
    return h;
}

void collect_parameters(const BatchNorm1D& bn, const std::string& prefix, NamedTensors& out) {
    out.emplace_back(prefix + ".gamma", bn.gamma);
    out.emplace_back(prefix + ".beta", bn.beta);
}

void collect_buffers(const BatchNorm1D& bn, const std::string& prefix, NamedTensors& out) {
    out.emplace_back(prefix + ".running_mean", bn.running_mean);
    out.emplace_back(prefix + ".running_var", bn.running_var);
}

void SDSCBlock::collect_parameters(const std::string& prefix, NamedTensors& out) const {
    out.emplace_back(prefix + ".depthwise.weight", depthwise.weight);
    if (depthwise.bias.defined()) out.emplace_back(prefix + ".depthwise.bias", depthwise.bias);
    nn::collect_parameters(bn1, prefix + ".bn1", out);
    out.emplace_back(prefix + ".pointwise.weight", pointwise.weight);
    if (pointwise.bias.defined()) out.emplace_back(prefix + ".pointwise.bias", pointwise.bias);
    nn::collect_parameters(bn2, prefix + ".bn2", out);
}

void SDSCBlock::collect_buffers(const std::string& prefix, NamedTensors& out) const {
    nn::collect_buffers(bn1, prefix + ".bn1", out);
    nn::collect_buffers(bn2, prefix + ".bn2", out);
}

} // namespace seqnet::nn
