// AVX2 + FMA variants. This translation unit is compiled with -mavx2 -mfma and
// must only be entered after a runtime CPU check (see dispatch.cpp).
#include "kernel_tables.hpp"

#if defined(SEQNET_HAVE_AVX2_KERNELS)

#include <immintrin.h>

#include <algorithm>
#include <cmath>

namespace seqnet::kernels {

namespace {

inline double hsum(__m256d v) {
    const __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    const __m128d s = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot(const double* a, const double* b, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    }
    double s = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) s = std::fma(a[i], b[i], s);
    return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    }
    for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

constexpr std::size_t kTile = 256;

void gemm_acc(const double* w, const double* x, double* y, std::size_t rows, std::size_t inner,
              std::size_t length) {
    for (std::size_t t0 = 0; t0 < length; t0 += kTile) {
        const std::size_t t1 = std::min(length, t0 + kTile);
        const std::size_t tv = t0 + (t1 - t0) / 8 * 8;
        std::size_t o = 0;
        for (; o + 4 <= rows; o += 4) {
            const double* w0 = w + (o + 0) * inner;
            const double* w1 = w + (o + 1) * inner;
            const double* w2 = w + (o + 2) * inner;
            const double* w3 = w + (o + 3) * inner;
            double* y0 = y + (o + 0) * length;
            double* y1 = y + (o + 1) * length;
            double* y2 = y + (o + 2) * length;
            double* y3 = y + (o + 3) * length;
            for (std::size_t t = t0; t < tv; t += 8) {
                __m256d a00 = _mm256_loadu_pd(y0 + t), a01 = _mm256_loadu_pd(y0 + t + 4);
                __m256d a10 = _mm256_loadu_pd(y1 + t), a11 = _mm256_loadu_pd(y1 + t + 4);
                __m256d a20 = _mm256_loadu_pd(y2 + t), a21 = _mm256_loadu_pd(y2 + t + 4);
                __m256d a30 = _mm256_loadu_pd(y3 + t), a31 = _mm256_loadu_pd(y3 + t + 4);
                for (std::size_t i = 0; i < inner; ++i) {
                    const double* xi = x + i * length + t;
                    const __m256d x0 = _mm256_loadu_pd(xi);
                    const __m256d x1 = _mm256_loadu_pd(xi + 4);
                    __m256d c = _mm256_broadcast_sd(w0 + i);
                    a00 = _mm256_fmadd_pd(c, x0, a00);
                    a01 = _mm256_fmadd_pd(c, x1, a01);
                    c = _mm256_broadcast_sd(w1 + i);
                    a10 = _mm256_fmadd_pd(c, x0, a10);
                    a11 = _mm256_fmadd_pd(c, x1, a11);
                    c = _mm256_broadcast_sd(w2 + i);
                    a20 = _mm256_fmadd_pd(c, x0, a20);
                    a21 = _mm256_fmadd_pd(c, x1, a21);
                    c = _mm256_broadcast_sd(w3 + i);
                    a30 = _mm256_fmadd_pd(c, x0, a30);
                    a31 = _mm256_fmadd_pd(c, x1, a31);
                }
                _mm256_storeu_pd(y0 + t, a00);
                _mm256_storeu_pd(y0 + t + 4, a01);
                _mm256_storeu_pd(y1 + t, a10);
                _mm256_storeu_pd(y1 + t + 4, a11);
                _mm256_storeu_pd(y2 + t, a20);
                _mm256_storeu_pd(y2 + t + 4, a21);
                _mm256_storeu_pd(y3 + t, a30);
                _mm256_storeu_pd(y3 + t + 4, a31);
            }
            for (std::size_t r = 0; r < 4; ++r) {
                const double* wr = w + (o + r) * inner;
                double* yr = y + (o + r) * length;
                for (std::size_t t = tv; t < t1; ++t) {
                    double acc = yr[t];
                    for (std::size_t i = 0; i < inner; ++i) acc = std::fma(wr[i], x[i * length + t], acc);
                    yr[t] = acc;
                }
            }
        }
        for (; o < rows; ++o) {
            const double* wr = w + o * inner;
            double* yr = y + o * length;
            for (std::size_t t = t0; t < tv; t += 8) {
                __m256d a0 = _mm256_loadu_pd(yr + t);
                __m256d a1 = _mm256_loadu_pd(yr + t + 4);
                for (std::size_t i = 0; i < inner; ++i) {
                    const __m256d c = _mm256_broadcast_sd(wr + i);
                    a0 = _mm256_fmadd_pd(c, _mm256_loadu_pd(x + i * length + t), a0);
                    a1 = _mm256_fmadd_pd(c, _mm256_loadu_pd(x + i * length + t + 4), a1);
                }
                _mm256_storeu_pd(yr + t, a0);
                _mm256_storeu_pd(yr + t + 4, a1);
            }
            for (std::size_t t = tv; t < t1; ++t) {
                double acc = yr[t];
                for (std::size_t i = 0; i < inner; ++i) acc = std::fma(wr[i], x[i * length + t], acc);
                yr[t] = acc;
            }
        }
    }
}

constexpr std::size_t kReduceTile = 512;

void gemm_acc_bt(const double* a, const double* b, double* g, std::size_t rows, std::size_t inner,
                 std::size_t length) {
    for (std::size_t t0 = 0; t0 < length; t0 += kReduceTile) {
        const std::size_t n = std::min(length, t0 + kReduceTile) - t0;
        const std::size_t nv = n / 4 * 4;
        std::size_t o = 0;
        for (; o + 2 <= rows; o += 2) {
            const double* a0 = a + (o + 0) * length + t0;
            const double* a1 = a + (o + 1) * length + t0;
            std::size_t i = 0;
            for (; i + 2 <= inner; i += 2) {
                const double* b0 = b + (i + 0) * length + t0;
                const double* b1 = b + (i + 1) * length + t0;
                __m256d s00 = _mm256_setzero_pd(), s01 = _mm256_setzero_pd();
                __m256d s10 = _mm256_setzero_pd(), s11 = _mm256_setzero_pd();
                for (std::size_t t = 0; t < nv; t += 4) {
                    const __m256d va0 = _mm256_loadu_pd(a0 + t);
                    const __m256d va1 = _mm256_loadu_pd(a1 + t);
                    const __m256d vb0 = _mm256_loadu_pd(b0 + t);
                    const __m256d vb1 = _mm256_loadu_pd(b1 + t);
                    s00 = _mm256_fmadd_pd(va0, vb0, s00);
                    s01 = _mm256_fmadd_pd(va0, vb1, s01);
                    s10 = _mm256_fmadd_pd(va1, vb0, s10);
                    s11 = _mm256_fmadd_pd(va1, vb1, s11);
                }
                double r00 = hsum(s00), r01 = hsum(s01), r10 = hsum(s10), r11 = hsum(s11);
                for (std::size_t t = nv; t < n; ++t) {
                    r00 = std::fma(a0[t], b0[t], r00);
                    r01 = std::fma(a0[t], b1[t], r01);
                    r10 = std::fma(a1[t], b0[t], r10);
                    r11 = std::fma(a1[t], b1[t], r11);
                }
                g[(o + 0) * inner + i + 0] += r00;
                g[(o + 0) * inner + i + 1] += r01;
                g[(o + 1) * inner + i + 0] += r10;
                g[(o + 1) * inner + i + 1] += r11;
            }
            for (; i < inner; ++i) {
                const double* bi = b + i * length + t0;
                g[(o + 0) * inner + i] += dot(a0, bi, n);
                g[(o + 1) * inner + i] += dot(a1, bi, n);
            }
        }
        for (; o < rows; ++o) {
            const double* ao = a + o * length + t0;
            for (std::size_t i = 0; i < inner; ++i) g[o * inner + i] += dot(ao, b + i * length + t0, n);
        }
    }
}

// [lo, hi) range of output positions whose every tap lands inside x.
inline void interior(std::size_t in_len, std::size_t k, std::size_t pad, std::size_t out_len,
                     std::size_t& lo, std::size_t& hi) {
    lo = std::min(pad, out_len);
    hi = lo;
    if (in_len + pad + 1 > k) hi = std::max(lo, std::min(out_len, in_len + pad + 1 - k));
}

void correlate(const double* x, std::size_t in_len, const double* w, std::size_t k, std::size_t stride,
               std::size_t pad, double* y, std::size_t out_len) {
    if (stride != 1) {
        kScalarKernels.correlate(x, in_len, w, k, stride, pad, y, out_len);
        return;
    }
    auto edge = [&](std::size_t t) {
        double acc = y[t];
        for (std::size_t j = 0; j < k; ++j) {
            const std::size_t p = t + j;
            if (p >= pad && p - pad < in_len) acc = std::fma(w[j], x[p - pad], acc);
        }
        y[t] = acc;
    };
    std::size_t lo, hi;
    interior(in_len, k, pad, out_len, lo, hi);
    for (std::size_t t = 0; t < lo; ++t) edge(t);
    std::size_t t = lo;
    if (k == 3) {
        const __m256d w0 = _mm256_set1_pd(w[0]);
        const __m256d w1 = _mm256_set1_pd(w[1]);
        const __m256d w2 = _mm256_set1_pd(w[2]);
        for (; t + 4 <= hi; t += 4) {
            const double* xt = x + (t - pad);
            __m256d acc = _mm256_loadu_pd(y + t);
            acc = _mm256_fmadd_pd(w0, _mm256_loadu_pd(xt), acc);
            acc = _mm256_fmadd_pd(w1, _mm256_loadu_pd(xt + 1), acc);
            acc = _mm256_fmadd_pd(w2, _mm256_loadu_pd(xt + 2), acc);
            _mm256_storeu_pd(y + t, acc);
        }
    } else {
        for (; t + 4 <= hi; t += 4) {
            const double* xt = x + (t - pad);
            __m256d acc = _mm256_loadu_pd(y + t);
            for (std::size_t j = 0; j < k; ++j)
                acc = _mm256_fmadd_pd(_mm256_set1_pd(w[j]), _mm256_loadu_pd(xt + j), acc);
            _mm256_storeu_pd(y + t, acc);
        }
    }
    for (; t < out_len; ++t) edge(t);
}

void correlate_grad_input(const double* gy, std::size_t out_len, const double* w, std::size_t k,
                          std::size_t stride, std::size_t pad, double* gx, std::size_t in_len) {
    if (stride != 1) {
        kScalarKernels.correlate_grad_input(gy, out_len, w, k, stride, pad, gx, in_len);
        return;
    }
    // gx[p] += sum_j w[j] * gy[p + pad - j], taken in ascending output order.
    auto edge = [&](std::size_t p) {
        double acc = gx[p];
        for (std::size_t jj = k; jj-- > 0;) {
            const std::size_t q = p + pad;
            if (q >= jj && q - jj < out_len) acc = std::fma(w[jj], gy[q - jj], acc);
        }
        gx[p] = acc;
    };
    const std::size_t lo = std::min(in_len, k - 1 > pad ? k - 1 - pad : 0);
    std::size_t hi = lo;
    if (out_len > pad) hi = std::max(lo, std::min(in_len, out_len - pad));
    for (std::size_t p = 0; p < lo; ++p) edge(p);
    std::size_t p = lo;
    for (; p + 4 <= hi; p += 4) {
        __m256d acc = _mm256_loadu_pd(gx + p);
        for (std::size_t jj = k; jj-- > 0;)
            acc = _mm256_fmadd_pd(_mm256_set1_pd(w[jj]), _mm256_loadu_pd(gy + p + pad - jj), acc);
        _mm256_storeu_pd(gx + p, acc);
    }
    for (; p < in_len; ++p) edge(p);
}

void correlate_grad_weight(const double* gy, std::size_t out_len, const double* x, std::size_t in_len,
                           std::size_t k, std::size_t stride, std::size_t pad, double* gw) {
    if (stride != 1) {
        kScalarKernels.correlate_grad_weight(gy, out_len, x, in_len, k, stride, pad, gw);
        return;
    }
    for (std::size_t j = 0; j < k; ++j) {
        // valid t: pad - j <= t < in_len + pad - j, t < out_len
        const std::size_t t_lo = pad > j ? pad - j : 0;
        std::size_t t_hi = in_len + pad > j ? in_len + pad - j : 0;
        t_hi = std::min(t_hi, out_len);
        if (t_hi > t_lo) gw[j] += dot(gy + t_lo, x + (t_lo + j - pad), t_hi - t_lo);
    }
}

} // namespace

const KernelTable kAvx2Kernels{
    Isa::avx2, "avx2", dot, axpy, gemm_acc, gemm_acc_bt, correlate, correlate_grad_input, correlate_grad_weight,
};

} // namespace seqnet::kernels

#endif
