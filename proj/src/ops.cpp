#include "seqnet/ops.hpp"

#include "seqnet/errors.hpp"

#include <numeric>

namespace seqnet::ops {

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
    }
}

void require_rank3(const char* op, const Tensor& x) {
    if (x.rank() != 3) {
        throw ShapeError(std::string(op) + ": expected [batch, channels, length], got " +
                         shape_string(x.shape()));
    }
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    std::vector<double> out(a.numel());
    auto da = a.data();
    auto db = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
    return make_result(a.shape(), std::move(out), {a, b}, "add",
                       [](std::span<const double> up, std::span<const std::span<double>> g) {
                           for (const auto& gi : g) {
                               if (gi.empty()) continue;
                               for (std::size_t i = 0; i < up.size(); ++i) gi[i] += up[i];
                           }
                       });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    std::vector<double> out(a.numel());
    auto da = a.data();
    auto db = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * db[i];
    return make_result(a.shape(), std::move(out), {a, b}, "mul",
                       [a, b](std::span<const double> up, std::span<const std::span<double>> g) {
                           auto da = a.data();
                           auto db = b.data();
                           if (!g[0].empty())
                               for (std::size_t i = 0; i < up.size(); ++i) g[0][i] += up[i] * db[i];
                           if (!g[1].empty())
                               for (std::size_t i = 0; i < up.size(); ++i) g[1][i] += up[i] * da[i];
                       });
}

Tensor scale(const Tensor& x, double factor) {
    std::vector<double> out(x.numel());
    auto dx = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * dx[i];
    return make_result(x.shape(), std::move(out), {x}, "scale",
                       [factor](std::span<const double> up, std::span<const std::span<double>> g) {
                           for (std::size_t i = 0; i < up.size(); ++i) g[0][i] += factor * up[i];
                       });
}

Tensor sum(const Tensor& x) {
    auto dx = x.data();
    const double total = std::accumulate(dx.begin(), dx.end(), 0.0);
    return make_result({1}, {total}, {x}, "sum",
                       [](std::span<const double> up, std::span<const std::span<double>> g) {
                           for (double& v : g[0]) v += up[0];
                       });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor weighted_sum(const Tensor& x, std::span<const double> weights) {
    if (weights.size() != x.numel()) {
        throw ShapeError("weighted_sum: " + std::to_string(weights.size()) + " weights for shape " +
                         shape_string(x.shape()));
    }
    auto dx = x.data();
    double total = 0.0;
    for (std::size_t i = 0; i < dx.size(); ++i) total += weights[i] * dx[i];
    std::vector<double> w(weights.begin(), weights.end());
    return make_result({1}, {total}, {x}, "weighted_sum",
                       [w = std::move(w)](std::span<const double> up, std::span<const std::span<double>> g) {
                           for (std::size_t i = 0; i < w.size(); ++i) g[0][i] += up[0] * w[i];
                       });
}

Tensor concat_length(const std::vector<Tensor>& parts) {
    if (parts.empty()) {
        throw ShapeError("concat_length: no inputs");
    }
    for (const Tensor& p : parts) require_rank3("concat_length", p);
    const std::size_t batch = parts[0].dim(0);
    const std::size_t channels = parts[0].dim(1);
    std::vector<std::size_t> lengths;
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        if (p.dim(0) != batch || p.dim(1) != channels) {
            throw ShapeError("concat_length: shape mismatch " + shape_string(parts[0].shape()) + " vs " +
                             shape_string(p.shape()));
        }
        lengths.push_back(p.dim(2));
        total += p.dim(2);
    }
    std::vector<double> out(batch * channels * total);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        auto src = parts[k].data();
        for (std::size_t row = 0; row < batch * channels; ++row) {
            std::copy_n(src.begin() + row * lengths[k], lengths[k], out.begin() + row * total + offset);
        }
        offset += lengths[k];
    }
    return make_result({batch, channels, total}, std::move(out), parts, "concat_length",
                       [lengths, total, rows = batch * channels](std::span<const double> up,
                                                                 std::span<const std::span<double>> g) {
                           std::size_t offset = 0;
                           for (std::size_t k = 0; k < lengths.size(); ++k) {
                               if (!g[k].empty()) {
                                   for (std::size_t row = 0; row < rows; ++row)
                                       for (std::size_t t = 0; t < lengths[k]; ++t)
                                           g[k][row * lengths[k] + t] += up[row * total + offset + t];
                               }
                               offset += lengths[k];
                           }
                       });
}

Tensor slice_length(const Tensor& x, std::size_t begin, std::size_t end) {
    require_rank3("slice_length", x);
    const std::size_t length = x.dim(2);
    if (begin >= end || end > length) {
        throw ShapeError("slice_length: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for " + shape_string(x.shape()));
    }
    const std::size_t rows = x.dim(0) * x.dim(1);
    const std::size_t width = end - begin;
    std::vector<double> out(rows * width);
    auto src = x.data();
    for (std::size_t row = 0; row < rows; ++row) {
        std::copy_n(src.begin() + row * length + begin, width, out.begin() + row * width);
    }
    return make_result({x.dim(0), x.dim(1), width}, std::move(out), {x}, "slice_length",
                       [rows, width, length, begin](std::span<const double> up,
                                                    std::span<const std::span<double>> g) {
                           for (std::size_t row = 0; row < rows; ++row)
                               for (std::size_t t = 0; t < width; ++t)
                                   g[0][row * length + begin + t] += up[row * width + t];
                       });
}

Tensor select_column(const Tensor& x, std::size_t index) {
    if (x.rank() != 2 || index >= x.dim(1)) {
        throw ShapeError("select_column: column " + std::to_string(index) + " invalid for " +
                         shape_string(x.shape()));
    }
    const std::size_t rows = x.dim(0);
    const std::size_t cols = x.dim(1);
    std::vector<double> out(rows);
    auto src = x.data();
    for (std::size_t r = 0; r < rows; ++r) out[r] = src[r * cols + index];
    return make_result({rows}, std::move(out), {x}, "select_column",
                       [cols, index](std::span<const double> up, std::span<const std::span<double>> g) {
                           for (std::size_t r = 0; r < up.size(); ++r) g[0][r * cols + index] += up[r];
                       });
}

} // namespace seqnet::ops
