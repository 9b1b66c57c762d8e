#pragma once

// Row-major dense kernels used by the convolution layers. Summation order is
// fixed so results are reproducible run to run.

#include <cstddef>

namespace ascfuse::nnet::kernels {

/// C[M×N] += A[M×K] · B[K×N]
template <class T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* __restrict A, const T* __restrict B,
             T* __restrict C) {
    for (std::size_t i = 0; i < M; ++i) {
        T* c = C + i * N;
        for (std::size_t k = 0; k < K; ++k) {
            const T a = A[i * K + k];
            const T* b = B + k * N;
            for (std::size_t j = 0; j < N; ++j) c[j] += a * b[j];
        }
    }
}

/// C[M×N] += Aᵀ · B with A[K×M], B[K×N]
template <class T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* __restrict A, const T* __restrict B,
             T* __restrict C) {
    for (std::size_t k = 0; k < K; ++k) {
        const T* b = B + k * N;
        for (std::size_t i = 0; i < M; ++i) {
            const T a = A[k * M + i];
            T* c = C + i * N;
            for (std::size_t j = 0; j < N; ++j) c[j] += a * b[j];
        }
    }
}

template <class T>
T dot(const T* __restrict a, const T* __restrict b, std::size_t n) {
    T acc[8] = {};
    std::size_t p = 0;
    for (; p + 8 <= n; p += 8)
        for (std::size_t l = 0; l < 8; ++l) acc[l] += a[p + l] * b[p + l];
    T s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (; p < n; ++p) s += a[p] * b[p];
    return s;
}

/// C[M×N] += A · Bᵀ with A[M×K], B[N×K]
template <class T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* __restrict A, const T* __restrict B,
             T* __restrict C) {
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) C[i * N + j] += dot(A + i * K, B + j * K, K);
}

struct ConvGeometry {
    int in_c, in_h, in_w;
    int k_h, k_w, stride, pad;
    int out_h, out_w;
    std::size_t col_rows() const { return static_cast<std::size_t>(in_c) * k_h * k_w; }
    std::size_t col_cols() const { return static_cast<std::size_t>(out_h) * out_w; }
};

/// One image (C×H×W) to a (C·kh·kw) × (oh·ow) column matrix.
template <class T>
void im2col(const ConvGeometry& g, const T* img, T* col) {
    const std::size_t P = g.col_cols();
    for (int c = 0; c < g.in_c; ++c)
        for (int kh = 0; kh < g.k_h; ++kh)
            for (int kw = 0; kw < g.k_w; ++kw) {
                T* row = col + ((static_cast<std::size_t>(c) * g.k_h + kh) * g.k_w + kw) * P;
                for (int oh = 0; oh < g.out_h; ++oh) {
                    const int ih = oh * g.stride - g.pad + kh;
                    T* dst = row + static_cast<std::size_t>(oh) * g.out_w;
                    if (ih < 0 || ih >= g.in_h) {
                        for (int ow = 0; ow < g.out_w; ++ow) dst[ow] = T(0);
                        continue;
                    }
                    const T* src = img + (static_cast<std::size_t>(c) * g.in_h + ih) * g.in_w;
                    for (int ow = 0; ow < g.out_w; ++ow) {
                        const int iw = ow * g.stride - g.pad + kw;
                        dst[ow] = (iw >= 0 && iw < g.in_w) ? src[iw] : T(0);
                    }
                }
            }
}

/// Scatter-add a column matrix back into an image gradient.
template <class T>
void col2im(const ConvGeometry& g, const T* col, T* img) {
    const std::size_t P = g.col_cols();
    for (int c = 0; c < g.in_c; ++c)
        for (int kh = 0; kh < g.k_h; ++kh)
            for (int kw = 0; kw < g.k_w; ++kw) {
                const T* row = col + ((static_cast<std::size_t>(c) * g.k_h + kh) * g.k_w + kw) * P;
                for (int oh = 0; oh < g.out_h; ++oh) {
                    const int ih = oh * g.stride - g.pad + kh;
                    if (ih < 0 || ih >= g.in_h) continue;
                    T* dst = img + (static_cast<std::size_t>(c) * g.in_h + ih) * g.in_w;
                    const T* src = row + static_cast<std::size_t>(oh) * g.out_w;
                    for (int ow = 0; ow < g.out_w; ++ow) {
                        const int iw = ow * g.stride - g.pad + kw;
                        if (iw >= 0 && iw < g.in_w) dst[iw] += src[ow];
                    }
                }
            }
}

}  // namespace ascfuse::nnet::kernels
