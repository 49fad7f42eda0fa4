#include <cmath>
#include <stdexcept>
#include <vector>

#include "scan/kernels.hpp"

// Deliberately naive: straight loop nests in textbook order, no pointer
// hoisting, no parallelism. These double as correctness oracles.
namespace scan::ref {

void matmul(const Tensor& x, const Tensor& w, Tensor& y) {
    const int64_t M = x.dim(0), K = x.dim(1), N = w.dim(1);
    y = Tensor({M, N});
    for (int64_t m = 0; m < M; ++m)
        for (int64_t n = 0; n < N; ++n) {
            double acc = 0.0;
            for (int64_t k = 0; k < K; ++k) acc += x.at(m, k) * w.at(k, n);
            y.at(m, n) = acc;
        }
}

void matmul_nt(const Tensor& x, const Tensor& w, Tensor& y) {
    const int64_t M = x.dim(0), K = x.dim(1), N = w.dim(0);
    y = Tensor({M, N});
    for (int64_t m = 0; m < M; ++m)
        for (int64_t n = 0; n < N; ++n) {
            double acc = 0.0;
            for (int64_t k = 0; k < K; ++k) acc += x.at(m, k) * w.at(n, k);
            y.at(m, n) = acc;
        }
}

void matmul_tn(const Tensor& x, const Tensor& g, Tensor& y) {
    const int64_t M = x.dim(0), K = x.dim(1), N = g.dim(1);
    y = Tensor({K, N});
    for (int64_t k = 0; k < K; ++k)
        for (int64_t n = 0; n < N; ++n) {
            double acc = 0.0;
            for (int64_t m = 0; m < M; ++m) acc += x.at(m, k) * g.at(m, n);
            y.at(k, n) = acc;
        }
}

void conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                    int64_t stride, int64_t pad, Tensor& y) {
    const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t O = w.dim(0), KH = w.dim(2), KW = w.dim(3);
    const int64_t OH = (H + 2 * pad - KH) / stride + 1;
    const int64_t OW = (W + 2 * pad - KW) / stride + 1;
    y = Tensor({N, O, OH, OW});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t o = 0; o < O; ++o)
            for (int64_t i = 0; i < OH; ++i)
                for (int64_t j = 0; j < OW; ++j) {
                    double acc = b.numel() > 0 ? b[o] : 0.0;
                    for (int64_t c = 0; c < C; ++c)
                        for (int64_t a = 0; a < KH; ++a)
                            for (int64_t q = 0; q < KW; ++q) {
                                const int64_t ih = i * stride - pad + a;
                                const int64_t iw = j * stride - pad + q;
                                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                                acc += x.at(n, c, ih, iw) * w.at(o, c, a, q);
                            }
                    y.at(n, o, i, j) = acc;
                }
}

void conv2d_backward_input(const Tensor& gy, const Tensor& w, int64_t stride,
                           int64_t pad, Tensor& gx) {
    const int64_t N = gy.dim(0), O = gy.dim(1), OH = gy.dim(2), OW = gy.dim(3);
    const int64_t C = w.dim(1), KH = w.dim(2), KW = w.dim(3);
    const int64_t H = gx.dim(2), W = gx.dim(3);
    gx.fill(0.0);
    for (int64_t n = 0; n < N; ++n)
        for (int64_t o = 0; o < O; ++o)
            for (int64_t i = 0; i < OH; ++i)
                for (int64_t j = 0; j < OW; ++j)
                    for (int64_t c = 0; c < C; ++c)
                        for (int64_t a = 0; a < KH; ++a)
                            for (int64_t q = 0; q < KW; ++q) {
                                const int64_t ih = i * stride - pad + a;
                                const int64_t iw = j * stride - pad + q;
                                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                                gx.at(n, c, ih, iw) += gy.at(n, o, i, j) * w.at(o, c, a, q);
                            }
}

void conv2d_backward_weight(const Tensor& gy, const Tensor& x, int64_t stride,
                            int64_t pad, Tensor& gw, Tensor& gb) {
    const int64_t N = gy.dim(0), O = gy.dim(1), OH = gy.dim(2), OW = gy.dim(3);
    const int64_t C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t KH = gw.dim(2), KW = gw.dim(3);
    for (int64_t n = 0; n < N; ++n)
        for (int64_t o = 0; o < O; ++o)
            for (int64_t i = 0; i < OH; ++i)
                for (int64_t j = 0; j < OW; ++j) {
                    const double g = gy.at(n, o, i, j);
                    if (gb.numel() > 0) gb[o] += g;
                    for (int64_t c = 0; c < C; ++c)
                        for (int64_t a = 0; a < KH; ++a)
                            for (int64_t q = 0; q < KW; ++q) {
                                const int64_t ih = i * stride - pad + a;
                                const int64_t iw = j * stride - pad + q;
                                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                                gw.at(o, c, a, q) += g * x.at(n, c, ih, iw);
                            }
                }
}

void conv_transpose2d_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                              int64_t stride, int64_t pad, Tensor& y) {
    // Scatter form: every input pixel stamps the kernel onto the output.
    const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t O = w.dim(1), KH = w.dim(2), KW = w.dim(3);
    const int64_t OH = (H - 1) * stride - 2 * pad + KH;
    const int64_t OW = (W - 1) * stride - 2 * pad + KW;
    y = Tensor({N, O, OH, OW});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t h = 0; h < H; ++h)
                for (int64_t v = 0; v < W; ++v)
                    for (int64_t o = 0; o < O; ++o)
                        for (int64_t a = 0; a < KH; ++a)
                            for (int64_t q = 0; q < KW; ++q) {
                                const int64_t i = h * stride - pad + a;
                                const int64_t j = v * stride - pad + q;
                                if (i < 0 || i >= OH || j < 0 || j >= OW) continue;
                                y.at(n, o, i, j) += x.at(n, c, h, v) * w.at(c, o, a, q);
                            }
    if (b.numel() > 0)
        for (int64_t n = 0; n < N; ++n)
            for (int64_t o = 0; o < O; ++o)
                for (int64_t i = 0; i < OH; ++i)
                    for (int64_t j = 0; j < OW; ++j) y.at(n, o, i, j) += b[o];
}

void gaussian_blur(const Tensor& x, int64_t kernel_size, double sigma, Tensor& y) {
    const int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int64_t half = kernel_size / 2;
    std::vector<double> taps(static_cast<size_t>(kernel_size));
    double sum = 0.0;
    for (int64_t i = 0; i < kernel_size; ++i) {
        const double d = static_cast<double>(i - half);
        taps[static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
        sum += taps[static_cast<size_t>(i)];
    }
    for (double& t : taps) t /= sum;

    y = Tensor({C, H, W});
    for (int64_t c = 0; c < C; ++c)
        for (int64_t h = 0; h < H; ++h)
            for (int64_t w = 0; w < W; ++w) {
                double acc = 0.0;
                for (int64_t a = -half; a <= half; ++a)
                    for (int64_t q = -half; q <= half; ++q) {
                        const double kv = taps[static_cast<size_t>(a + half)] *
                                          taps[static_cast<size_t>(q + half)];
                        acc += kv * x.at(c, reflect_index(h + a, H), reflect_index(w + q, W));
                    }
                y.at(c, h, w) = acc;
            }
}

void softmax_rows(const Tensor& x, Tensor& y) {
    const int64_t M = x.dim(0), N = x.dim(1);
    y = Tensor({M, N});
    for (int64_t m = 0; m < M; ++m) {
        double mx = x.at(m, 0);
        for (int64_t n = 1; n < N; ++n) mx = std::max(mx, x.at(m, n));
        double sum = 0.0;
        for (int64_t n = 0; n < N; ++n) sum += std::exp(x.at(m, n) - mx);
        for (int64_t n = 0; n < N; ++n) y.at(m, n) = std::exp(x.at(m, n) - mx) / sum;
    }
}

}  // namespace scan::ref
