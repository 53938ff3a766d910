#include "kernel_tables.hpp"

#include <algorithm>

namespace seqnet::kernels {

namespace {

double dot(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void gemm_acc(const double* w, const double* x, double* y, std::size_t rows, std::size_t inner,
              std::size_t length) {
    for (std::size_t o = 0; o < rows; ++o) {
        double* yo = y + o * length;
        for (std::size_t i = 0; i < inner; ++i) {
            const double wi = w[o * inner + i];
            const double* xi = x + i * length;
            for (std::size_t t = 0; t < length; ++t) yo[t] += wi * xi[t];
        }
    }
}

void gemm_acc_bt(const double* a, const double* b, double* g, std::size_t rows, std::size_t inner,
                 std::size_t length) {
    for (std::size_t o = 0; o < rows; ++o)
        for (std::size_t i = 0; i < inner; ++i) g[o * inner + i] += dot(a + o * length, b + i * length, length);
}

void correlate(const double* x, std::size_t in_len, const double* w, std::size_t k, std::size_t stride,
               std::size_t pad, double* y, std::size_t out_len) {
    for (std::size_t t = 0; t < out_len; ++t) {
        double acc = y[t];
        const std::size_t base = t * stride;
        for (std::size_t j = 0; j < k; ++j) {
            const std::size_t p = base + j;
            if (p >= pad && p - pad < in_len) acc += w[j] * x[p - pad];
        }
        y[t] = acc;
    }
}

void correlate_grad_input(const double* gy, std::size_t out_len, const double* w, std::size_t k,
                          std::size_t stride, std::size_t pad, double* gx, std::size_t in_len) {
    for (std::size_t t = 0; t < out_len; ++t) {
        const std::size_t base = t * stride;
        for (std::size_t j = 0; j < k; ++j) {
            const std::size_t p = base + j;
            if (p >= pad && p - pad < in_len) gx[p - pad] += w[j] * gy[t];
        }
    }
}

void correlate_grad_weight(const double* gy, std::size_t out_len, const double* x, std::size_t in_len,
                           std::size_t k, std::size_t stride, std::size_t pad, double* gw) {
    for (std::size_t j = 0; j < k; ++j) {
        double s = 0.0;
        for (std::size_t t = 0; t < out_len; ++t) {
            const std::size_t p = t * stride + j;
            if (p >= pad && p - pad < in_len) s += gy[t] * x[p - pad];
        }
        gw[j] += s;
    }
}

} // namespace

const KernelTable kScalarKernels{
    Isa::scalar,  "scalar",    dot, axpy, gemm_acc, gemm_acc_bt, correlate, correlate_grad_input,
    correlate_grad_weight,
};

} // namespace seqnet::kernels
