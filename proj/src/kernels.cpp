#include "scan/kernels.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace scan::kernels {

namespace {

void check_matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw std::invalid_argument("matmul: rank-2 tensors required");
}

struct ConvDims {
    int64_t n, c, h, w, o, kh, kw, oh, ow;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int64_t stride, int64_t pad) {
    ConvDims d{};
    d.n = x.dim(0);
    d.c = x.dim(1);
    d.h = x.dim(2);
    d.w = x.dim(3);
    d.o = w.dim(0);
    d.kh = w.dim(2);
    d.kw = w.dim(3);
    if (w.dim(1) != d.c)
        throw std::invalid_argument("conv2d: channel mismatch");
    d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
    d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
    return d;
}

std::vector<double> gaussian_taps(int64_t k, double sigma) {
    if (k < 1 || k % 2 == 0)
        throw std::invalid_argument("gaussian_blur: kernel size must be odd positive");
    if (!(sigma > 0.0))
        throw std::invalid_argument("gaussian_blur: sigma must be positive");
    std::vector<double> taps(static_cast<size_t>(k));
    const int64_t c = k / 2;
    double sum = 0.0;
    for (int64_t i = 0; i < k; ++i) {
        const double d = static_cast<double>(i - c);
        taps[static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
        sum += taps[static_cast<size_t>(i)];
    }
    for (double& t : taps) t /= sum;
    return taps;
}

}  // namespace

void matmul(const Tensor& x, const Tensor& w, Tensor& y) {
    check_matmul(x, w);
    const int64_t M = x.dim(0), K = x.dim(1), N = w.dim(1);
    if (w.dim(0) != K) throw std::invalid_argument("matmul: inner dim mismatch");
    y = Tensor({M, N});
    const double* xp = x.data();
    const double* wp = w.data();
    double* yp = y.data();
#pragma omp parallel for schedule(static)
    for (int64_t m = 0; m < M; ++m) {
        double* yr = yp + m * N;
        const double* xr = xp + m * K;
        for (int64_t k = 0; k < K; ++k) {
            const double a = xr[k];
            const double* wr = wp + k * N;
            for (int64_t n = 0; n < N; ++n) yr[n] += a * wr[n];
        }
    }
}

void matmul_nt(const Tensor& x, const Tensor& w, Tensor& y) {
    check_matmul(x, w);
    const int64_t M = x.dim(0), K = x.dim(1), N = w.dim(0);
    if (w.dim(1) != K) throw std::invalid_argument("matmul_nt: inner dim mismatch");
    y = Tensor({M, N});
    const double* xp = x.data();
    const double* wp = w.data();
    double* yp = y.data();
#pragma omp parallel for schedule(static)
    for (int64_t m = 0; m < M; ++m) {
        const double* xr = xp + m * K;
        double* yr = yp + m * N;
        for (int64_t n = 0; n < N; ++n) {
            const double* wr = wp + n * K;
            double acc = 0.0;
            for (int64_t k = 0; k < K; ++k) acc += xr[k] * wr[k];
            yr[n] = acc;
        }
    }
}

void matmul_tn(const Tensor& x, const Tensor& g, Tensor& y) {
    check_matmul(x, g);
    const int64_t M = x.dim(0), K = x.dim(1), N = g.dim(1);
    if (g.dim(0) != M) throw std::invalid_argument("matmul_tn: outer dim mismatch");
    y = Tensor({K, N});
    const double* xp = x.data();
    const double* gp = g.data();
    double* yp = y.data();
#pragma omp parallel for schedule(static)
    for (int64_t k = 0; k < K; ++k) {
        double* yr = yp + k * N;
        for (int64_t m = 0; m < M; ++m) {
            const double a = xp[m * K + k];
            const double* gr = gp + m * N;
            for (int64_t n = 0; n < N; ++n) yr[n] += a * gr[n];
        }
    }
}

void conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                    int64_t stride, int64_t pad, Tensor& y) {
    const ConvDims d = conv_dims(x, w, stride, pad);
    y = Tensor({d.n, d.o, d.oh, d.ow});
    const bool has_bias = b.numel() > 0;
    const double* xp = x.data();
    const double* wp = w.data();
    const double* bp = b.data();
    double* yp = y.data();
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t n = 0; n < d.n; ++n) {
        for (int64_t o = 0; o < d.o; ++o) {
            const double* wo = wp + o * d.c * d.kh * d.kw;
            const double bias = has_bias ? bp[o] : 0.0;
            for (int64_t i = 0; i < d.oh; ++i) {
                for (int64_t j = 0; j < d.ow; ++j) {
                    double acc = bias;
                    for (int64_t c = 0; c < d.c; ++c) {
                        const double* xc = xp + (n * d.c + c) * d.h * d.w;
                        const double* wc = wo + c * d.kh * d.kw;
                        for (int64_t a = 0; a < d.kh; ++a) {
                            const int64_t ih = i * stride - pad + a;
                            if (ih < 0 || ih >= d.h) continue;
                            const double* xr = xc + ih * d.w;
                            const double* wr = wc + a * d.kw;
                            for (int64_t bb = 0; bb < d.kw; ++bb) {
                                const int64_t iw = j * stride - pad + bb;
                                if (iw < 0 || iw >= d.w) continue;
                                acc += xr[iw] * wr[bb];
                            }
                        }
                    }
                    yp[((n * d.o + o) * d.oh + i) * d.ow + j] = acc;
                }
            }
        }
    }
}

void conv2d_backward_input(const Tensor& gy, const Tensor& w, int64_t stride,
                           int64_t pad, Tensor& gx) {
    const int64_t N = gy.dim(0), O = gy.dim(1), OH = gy.dim(2), OW = gy.dim(3);
    const int64_t C = w.dim(1), KH = w.dim(2), KW = w.dim(3);
    const int64_t H = gx.dim(2), W = gx.dim(3);
    gx.fill(0.0);
    const double* gp = gy.data();
    const double* wp = w.data();
    double* xp = gx.data();
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t n = 0; n < N; ++n) {
        for (int64_t c = 0; c < C; ++c) {
            double* xc = xp + (n * C + c) * H * W;
            for (int64_t o = 0; o < O; ++o) {
                const double* go = gp + (n * O + o) * OH * OW;
                const double* wc = wp + (o * C + c) * KH * KW;
                for (int64_t i = 0; i < OH; ++i) {
                    for (int64_t j = 0; j < OW; ++j) {
                        const double g = go[i * OW + j];
                        if (g == 0.0) continue;
                        for (int64_t a = 0; a < KH; ++a) {
                            const int64_t ih = i * stride - pad + a;
                            if (ih < 0 || ih >= H) continue;
                            for (int64_t bb = 0; bb < KW; ++bb) {
                                const int64_t iw = j * stride - pad + bb;
                                if (iw < 0 || iw >= W) continue;
                                xc[ih * W + iw] += g * wc[a * KW + bb];
                            }
                        }
                    }
                }
            }
        }
    }
}

void conv2d_backward_weight(const Tensor& gy, const Tensor& x, int64_t stride,
                            int64_t pad, Tensor& gw, Tensor& gb) {
    const int64_t N = gy.dim(0), O = gy.dim(1), OH = gy.dim(2), OW = gy.dim(3);
    const int64_t C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t KH = gw.dim(2), KW = gw.dim(3);
    const double* gp = gy.data();
    const double* xp = x.data();
    double* wp = gw.data();
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t o = 0; o < O; ++o) {
        for (int64_t c = 0; c < C; ++c) {
            double* wc = wp + (o * C + c) * KH * KW;
            for (int64_t n = 0; n < N; ++n) {
                const double* go = gp + (n * O + o) * OH * OW;
                const double* xc = xp + (n * C + c) * H * W;
                for (int64_t i = 0; i < OH; ++i) {
                    for (int64_t j = 0; j < OW; ++j) {
                        const double g = go[i * OW + j];
                        if (g == 0.0) continue;
                        for (int64_t a = 0; a < KH; ++a) {
                            const int64_t ih = i * stride - pad + a;
                            if (ih < 0 || ih >= H) continue;
                            for (int64_t bb = 0; bb < KW; ++bb) {
                                const int64_t iw = j * stride - pad + bb;
                                if (iw < 0 || iw >= W) continue;
                                wc[a * KW + bb] += g * xc[ih * W + iw];
                            }
                        }
                    }
                }
            }
        }
    }
    if (gb.numel() > 0) {
        double* bp = gb.data();
#pragma omp parallel for schedule(static)
        for (int64_t o = 0; o < O; ++o) {
            double acc = 0.0;
            for (int64_t n = 0; n < N; ++n) {
                const double* go = gp + (n * O + o) * OH * OW;
                for (int64_t t = 0; t < OH * OW; ++t) acc += go[t];
            }
            bp[o] += acc;
        }
    }
}

void conv_transpose2d_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                              int64_t stride, int64_t pad, Tensor& y) {
    const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t O = w.dim(1), KH = w.dim(2), KW = w.dim(3);
    if (w.dim(0) != C)
        throw std::invalid_argument("conv_transpose2d: channel mismatch");
    const int64_t OH = (H - 1) * stride - 2 * pad + KH;
    const int64_t OW = (W - 1) * stride - 2 * pad + KW;
    y = Tensor({N, O, OH, OW});
    const bool has_bias = b.numel() > 0;
    const double* xp = x.data();
    const double* wp = w.data();
    const double* bp = b.data();
    double* yp = y.data();
    // Gather form: each output pixel pulls from the inputs that map onto it.
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t n = 0; n < N; ++n) {
        for (int64_t o = 0; o < O; ++o) {
            double* yo = yp + (n * O + o) * OH * OW;
            for (int64_t i = 0; i < OH; ++i) {
                for (int64_t j = 0; j < OW; ++j) {
                    double acc = has_bias ? bp[o] : 0.0;
                    for (int64_t a = 0; a < KH; ++a) {
                        const int64_t num_h = i + pad - a;
                        if (num_h < 0 || num_h % stride != 0) continue;
                        const int64_t h = num_h / stride;
                        if (h >= H) continue;
                        for (int64_t bb = 0; bb < KW; ++bb) {
                            const int64_t num_w = j + pad - bb;
                            if (num_w < 0 || num_w % stride != 0) continue;
                            const int64_t ww = num_w / stride;
                            if (ww >= W) continue;
                            for (int64_t c = 0; c < C; ++c) {
                                acc += xp[((n * C + c) * H + h) * W + ww] *
                                       wp[((c * O + o) * KH + a) * KW + bb];
                            }
                        }
                    }
                    yo[i * OW + j] = acc;
                }
            }
        }
    }
}

void conv_transpose2d_backward_input(const Tensor& gy, const Tensor& w,
                                     int64_t stride, int64_t pad, Tensor& gx) {
    // d/dx of the transposed conv is an ordinary strided convolution of gy
    // with the same kernel: gx[n,c,h,w] = sum_{o,a,b} gy[n,o,h*s-p+a,w*s-p+b]*w[c,o,a,b].
    const int64_t N = gy.dim(0), O = gy.dim(1), OH = gy.dim(2), OW = gy.dim(3);
    const int64_t C = w.dim(0), KH = w.dim(2), KW = w.dim(3);
    const int64_t H = gx.dim(2), W = gx.dim(3);
    const double* gp = gy.data();
    const double* wp = w.data();
    double* xp = gx.data();
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t n = 0; n < N; ++n) {
        for (int64_t c = 0; c < C; ++c) {
            double* xc = xp + (n * C + c) * H * W;
            for (int64_t h = 0; h < H; ++h) {
                for (int64_t v = 0; v < W; ++v) {
                    double acc = 0.0;
                    for (int64_t o = 0; o < O; ++o) {
                        const double* go = gp + (n * O + o) * OH * OW;
                        const double* wc = wp + (c * O + o) * KH * KW;
                        for (int64_t a = 0; a < KH; ++a) {
                            const int64_t i = h * stride - pad + a;
                            if (i < 0 || i >= OH) continue;
                            for (int64_t bb = 0; bb < KW; ++bb) {
                                const int64_t j = v * stride - pad + bb;
                                if (j < 0 || j >= OW) continue;
                                acc += go[i * OW + j] * wc[a * KW + bb];
                            }
                        }
                    }
                    xc[h * W + v] = acc;
                }
            }
        }
    }
}

void conv_transpose2d_backward_weight(const Tensor& gy, const Tensor& x,
                                      int64_t stride, int64_t pad, Tensor& gw,
                                      Tensor& gb) {
    const int64_t N = gy.dim(0), O = gy.dim(1), OH = gy.dim(2), OW = gy.dim(3);
    const int64_t C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t KH = gw.dim(2), KW = gw.dim(3);
    const double* gp = gy.data();
    const double* xp = x.data();
    double* wp = gw.data();
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t o = 0; o < O; ++o) {
            double* wc = wp + (c * O + o) * KH * KW;
            for (int64_t n = 0; n < N; ++n) {
                const double* go = gp + (n * O + o) * OH * OW;
                const double* xc = xp + (n * C + c) * H * W;
                for (int64_t h = 0; h < H; ++h) {
                    for (int64_t v = 0; v < W; ++v) {
                        const double xv = xc[h * W + v];
                        if (xv == 0.0) continue;
                        for (int64_t a = 0; a < KH; ++a) {
                            const int64_t i = h * stride - pad + a;
                            if (i < 0 || i >= OH) continue;
                            for (int64_t bb = 0; bb < KW; ++bb) {
                                const int64_t j = v * stride - pad + bb;
                                if (j < 0 || j >= OW) continue;
                                wc[a * KW + bb] += xv * go[i * OW + j];
                            }
                        }
                    }
                }
            }
        }
    }
    if (gb.numel() > 0) {
        double* bp = gb.data();
#pragma omp parallel for schedule(static)
        for (int64_t o = 0; o < O; ++o) {
            double acc = 0.0;
            for (int64_t n = 0; n < N; ++n) {
                const double* go = gp + (n * O + o) * OH * OW;
                for (int64_t t = 0; t < OH * OW; ++t) acc += go[t];
            }
            bp[o] += acc;
        }
    }
}

void gaussian_blur(const Tensor& x, int64_t kernel_size, double sigma, Tensor& y) {
    if (x.rank() != 3)
        throw std::invalid_argument("gaussian_blur: [C,H,W] tensor required");
    const auto taps = gaussian_taps(kernel_size, sigma);
    const int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int64_t half = kernel_size / 2;
    Tensor tmp({C, H, W});
    y = Tensor({C, H, W});
    const double* xp = x.data();
    double* tp = tmp.data();
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t h = 0; h < H; ++h) {
            const double* row = xp + (c * H + h) * W;
            double* out = tp + (c * H + h) * W;
            for (int64_t w = 0; w < W; ++w) {
                double acc = 0.0;
                for (int64_t t = -half; t <= half; ++t)
                    acc += taps[static_cast<size_t>(t + half)] * row[reflect_index(w + t, W)];
                out[w] = acc;
            }
        }
    }
    double* yp = y.data();
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t w = 0; w < W; ++w) {
            const double* col = tp + c * H * W;
            double* out = yp + c * H * W;
            for (int64_t h = 0; h < H; ++h) {
                double acc = 0.0;
                for (int64_t t = -half; t <= half; ++t)
                    acc += taps[static_cast<size_t>(t + half)] * col[reflect_index(h + t, H) * W + w];
                out[h * W + w] = acc;
            }
        }
    }
}

void softmax_rows(const Tensor& x, Tensor& y) {
    const int64_t M = x.dim(0), N = x.dim(1);
    y = Tensor({M, N});
    const double* xp = x.data();
    double* yp = y.data();
#pragma omp parallel for schedule(static)
    for (int64_t m = 0; m < M; ++m) {
        const double* xr = xp + m * N;
        double* yr = yp + m * N;
        double mx = xr[0];
        for (int64_t n = 1; n < N; ++n) mx = std::max(mx, xr[n]);
        double sum = 0.0;
        for (int64_t n = 0; n < N; ++n) {
            yr[n] = std::exp(xr[n] - mx);
            sum += yr[n];
        }
        for (int64_t n = 0; n < N; ++n) yr[n] /= sum;
    }
}

Tensor avg_pool_to(const Tensor& x, int64_t out_side) {
    const bool has_c = x.rank() == 3;
    const int64_t C = has_c ? x.dim(0) : 1;
    const int64_t H = x.dim(has_c ? 1 : 0), W = x.dim(has_c ? 2 : 1);
    if (H % out_side != 0 || W % out_side != 0)
        throw std::invalid_argument("avg_pool_to: side not divisible by target");
    const int64_t fh = H / out_side, fw = W / out_side;
    Tensor y = has_c ? Tensor({C, out_side, out_side}) : Tensor({out_side, out_side});
    const double* xp = x.data();
    double* yp = y.data();
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t i = 0; i < out_side; ++i) {
            for (int64_t j = 0; j < out_side; ++j) {
                double acc = 0.0;
                for (int64_t a = 0; a < fh; ++a)
                    for (int64_t b = 0; b < fw; ++b)
                        acc += xp[(c * H + i * fh + a) * W + j * fw + b];
                yp[(c * out_side + i) * out_side + j] = acc / static_cast<double>(fh * fw);
            }
        }
    }
    return y;
}

Tensor bilinear_upsample(const Tensor& x, int64_t out_side) {
    const bool has_c = x.rank() == 3;
    const int64_t C = has_c ? x.dim(0) : 1;
    const int64_t H = x.dim(has_c ? 1 : 0), W = x.dim(has_c ? 2 : 1);
    Tensor y = has_c ? Tensor({C, out_side, out_side}) : Tensor({out_side, out_side});
    const double sh = static_cast<double>(H) / static_cast<double>(out_side);
    const double sw = static_cast<double>(W) / static_cast<double>(out_side);
    const double* xp = x.data();
    double* yp = y.data();
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t i = 0; i < out_side; ++i) {
            const double fy = (static_cast<double>(i) + 0.5) * sh - 0.5;
            const int64_t y0 = std::max<int64_t>(0, std::min<int64_t>(H - 1, static_cast<int64_t>(std::floor(fy))));
            const int64_t y1 = std::min<int64_t>(H - 1, y0 + 1);
            const double wy = std::min(1.0, std::max(0.0, fy - static_cast<double>(y0)));
            for (int64_t j = 0; j < out_side; ++j) {
                const double fx = (static_cast<double>(j) + 0.5) * sw - 0.5;
                const int64_t x0 = std::max<int64_t>(0, std::min<int64_t>(W - 1, static_cast<int64_t>(std::floor(fx))));
                const int64_t x1 = std::min<int64_t>(W - 1, x0 + 1);
                const double wx = std::min(1.0, std::max(0.0, fx - static_cast<double>(x0)));
                const double* xc = xp + c * H * W;
                const double v = (1.0 - wy) * ((1.0 - wx) * xc[y0 * W + x0] + wx * xc[y0 * W + x1]) +
                                 wy * ((1.0 - wx) * xc[y1 * W + x0] + wx * xc[y1 * W + x1]);
                yp[(c * out_side + i) * out_side + j] = v;
            }
        }
    }
    return y;
}

}  // namespace scan::kernels
