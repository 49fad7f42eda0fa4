#pragma once

#include <cstdint>

#include "scan/tensor.hpp"

namespace scan {

// Parallel kernels. Every kernel partitions work so that each output
// element is written by exactly one thread and accumulated in a fixed
// serial order, so results are bit-identical for any thread count.
namespace kernels {

// y[M,N] = x[M,K] * w[K,N]
void matmul(const Tensor& x, const Tensor& w, Tensor& y);
// y[M,N] = x[M,K] * w[N,K]^T
void matmul_nt(const Tensor& x, const Tensor& w, Tensor& y);
// y[K,N] = x[M,K]^T * g[M,N]
void matmul_tn(const Tensor& x, const Tensor& g, Tensor& y);

// x[N,C,H,W], w[O,C,kh,kw], b[O] (may be empty) -> y[N,O,OH,OW]
void conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                    int64_t stride, int64_t pad, Tensor& y);
void conv2d_backward_input(const Tensor& gy, const Tensor& w, int64_t stride,
                           int64_t pad, Tensor& gx);
// accumulates into gw/gb
void conv2d_backward_weight(const Tensor& gy, const Tensor& x, int64_t stride,
                            int64_t pad, Tensor& gw, Tensor& gb);

// x[N,C,H,W], w[C,O,kh,kw], b[O] -> y[N,O,OH,OW], OH = (H-1)*stride - 2*pad + kh
void conv_transpose2d_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                              int64_t stride, int64_t pad, Tensor& y);
void conv_transpose2d_backward_input(const Tensor& gy, const Tensor& w,
                                     int64_t stride, int64_t pad, Tensor& gx);
void conv_transpose2d_backward_weight(const Tensor& gy, const Tensor& x,
                                      int64_t stride, int64_t pad, Tensor& gw,
                                      Tensor& gb);

// Separable Gaussian blur with reflect-101 padding; x[C,H,W].
void gaussian_blur(const Tensor& x, int64_t kernel_size, double sigma, Tensor& y);

// Stable row softmax, x[M,N] -> y[M,N].
void softmax_rows(const Tensor& x, Tensor& y);

// x[C,H,W] or [H,W]; H,W divisible by out side.
Tensor avg_pool_to(const Tensor& x, int64_t out_side);
// Bilinear, half-pixel centers; x[...,H,W] -> [...,out_side,out_side].
Tensor bilinear_upsample(const Tensor& x, int64_t out_side);

}  // namespace kernels

// Naive single-thread reference implementations kept as independent
// oracles for the parallel kernels; exercised by tests and the benchmark.
namespace ref {

void matmul(const Tensor& x, const Tensor& w, Tensor& y);
void matmul_nt(const Tensor& x, const Tensor& w, Tensor& y);
void matmul_tn(const Tensor& x, const Tensor& g, Tensor& y);

void conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                    int64_t stride, int64_t pad, Tensor& y);
void conv2d_backward_input(const Tensor& gy, const Tensor& w, int64_t stride,
                           int64_t pad, Tensor& gx);
void conv2d_backward_weight(const Tensor& gy, const Tensor& x, int64_t stride,
                            int64_t pad, Tensor& gw, Tensor& gb);

void conv_transpose2d_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                              int64_t stride, int64_t pad, Tensor& y);

// Full 2-D convolution with the outer-product kernel (non-separable route).
void gaussian_blur(const Tensor& x, int64_t kernel_size, double sigma, Tensor& y);

void softmax_rows(const Tensor& x, Tensor& y);

}  // namespace ref

// Index fold for reflect-101 padding (no edge repeat), valid for any
// offset magnitude.
inline int64_t reflect_index(int64_t t, int64_t n) {
    if (n == 1) return 0;
    const int64_t period = 2 * (n - 1);
    t %= period;
    if (t < 0) t += period;
    return t < n ? t : period - t;
}

}  // namespace scan
