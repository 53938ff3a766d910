#pragma once

#include <cstddef>
#include <string_view>

// Inner-loop kernels behind the convolution, dense and reduction ops.
//
// Every kernel has a scalar reference implementation and, on x86-64, an AVX2+FMA
// variant. The variant is picked once at startup from CPU features; the
// SEQNET_ISA environment variable ("scalar" or "avx2") overrides the choice.
// Variants agree to rounding (FMA and lane-wise reductions reorder sums) and are
// equivalence-tested against the reference.
namespace seqnet::kernels {

enum class Isa { scalar, avx2 };

struct KernelTable {
    Isa isa;
    const char* name;

    // sum_i a[i] * b[i]
    double (*dot)(const double* a, const double* b, std::size_t n);

    // y[i] += alpha * x[i]
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);

    // Y[o, t] += sum_i W[o, i] * X[i, t]
    //   W: rows x inner, X: inner x length, Y: rows x length (all row-major).
    void (*gemm_acc)(const double* w, const double* x, double* y, std::size_t rows, std::size_t inner,
                     std::size_t length);

    // G[o, i] += sum_t A[o, t] * B[i, t]
    //   A: rows x length, B: inner x length, G: rows x inner.
    void (*gemm_acc_bt)(const double* a, const double* b, double* g, std::size_t rows,
                        std::size_t inner, std::size_t length);

    // y[t] += sum_j w[j] * x_pad[t * stride + j] where x_pad is x with `pad`
    // zeros on both ends; t < out_len.
    void (*correlate)(const double* x, std::size_t in_len, const double* w, std::size_t k,
                      std::size_t stride, std::size_t pad, double* y, std::size_t out_len);

    // Adjoint of correlate with respect to x: gx[t * stride + j - pad] += w[j] * gy[t].
    void (*correlate_grad_input)(const double* gy, std::size_t out_len, const double* w, std::size_t k,
                                 std::size_t stride, std::size_t pad, double* gx, std::size_t in_len);

    // Adjoint of correlate with respect to w: gw[j] += sum_t gy[t] * x_pad[t * stride + j].
    void (*correlate_grad_weight)(const double* gy, std::size_t out_len, const double* x,
                                  std::size_t in_len, std::size_t k, std::size_t stride,
                                  std::size_t pad, double* gw);
};

bool isa_supported(Isa isa);
const KernelTable& table(Isa isa);

/// Kernel table in use by the layers.
const KernelTable& active();
Isa active_isa();

/// Switches the active table; throws if the CPU lacks the ISA. Not safe to
/// call while other threads are running ops.
void set_active_isa(Isa isa);

std::string_view isa_name(Isa isa);

} // namespace seqnet::kernels
