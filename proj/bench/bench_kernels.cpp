// Times the parallel kernels against their serial reference implementations
// on decoder-shaped workloads and reports speedup plus max elementwise
// divergence (expected 0 for matmul/conv; tiny for the separable blur).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>

#include "scan/kernels.hpp"
#include "scan/rng.hpp"
#include "scan/tensor.hpp"

using scan::Tensor;

namespace {

Tensor randn(const std::vector<int64_t>& shape, scan::Rng& rng) {
    Tensor t(shape);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal();
    return t;
}

double time_of(const std::function<void()>& fn, int reps) {
    fn();  // warm up
    const auto t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < reps; ++r) fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double>(t1 - t0).count() / reps;
}

double max_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

void report(const std::string& name, double flops, double t_par, double t_ref,
            double diff) {
    std::printf("%-24s par %8.3f ms  ref %8.3f ms  speedup %5.2fx  %6.2f GFLOP/s  max|d| %.3g\n",
                name.c_str(), t_par * 1e3, t_ref * 1e3, t_ref / t_par,
                flops / t_par / 1e9, diff);
}

}  // namespace

int main() {
    scan::Rng rng(42);

    {
        const int64_t M = 256, K = 256, N = 256;
        Tensor x = randn({M, K}, rng), w = randn({K, N}, rng);
        Tensor yp({M, N}), yr({M, N});
        const double t_par = time_of([&] { scan::kernels::matmul(x, w, yp); }, 5);
        const double t_ref = time_of([&] { scan::ref::matmul(x, w, yr); }, 5);
        report("matmul 256^3", 2.0 * M * K * N, t_par, t_ref, max_diff(yp, yr));
    }
    {
        // decoder stage shape: batch of feature maps through a 3x3 conv
        const int64_t N = 32, C = 64, H = 8, O = 64, k = 3;
        Tensor x = randn({N, C, H, H}, rng), w = randn({O, C, k, k}, rng);
        Tensor b = randn({O}, rng);
        Tensor yp({N, O, H, H}), yr({N, O, H, H});
        const double flops = 2.0 * N * O * H * H * C * k * k;
        const double t_par =
            time_of([&] { scan::kernels::conv2d_forward(x, w, b, 1, 1, yp); }, 5);
        const double t_ref =
            time_of([&] { scan::ref::conv2d_forward(x, w, b, 1, 1, yr); }, 5);
        report("conv3x3 32x64x8x8", flops, t_par, t_ref, max_diff(yp, yr));
    }
    {
        const int64_t N = 32, C = 64, H = 8, O = 64, k = 3;
        Tensor gy = randn({N, O, H, H}, rng), w = randn({O, C, k, k}, rng);
        Tensor gp({N, C, H, H}), gr({N, C, H, H});
        const double flops = 2.0 * N * O * H * H * C * k * k;
        const double t_par = time_of(
            [&] { scan::kernels::conv2d_backward_input(gy, w, 1, 1, gp); }, 5);
        const double t_ref =
            time_of([&] { scan::ref::conv2d_backward_input(gy, w, 1, 1, gr); }, 5);
        report("conv3x3 bwd input", flops, t_par, t_ref, max_diff(gp, gr));
    }
    {
        const int64_t N = 32, C = 64, H = 8, O = 64, k = 3;
        Tensor gy = randn({N, O, H, H}, rng), x = randn({N, C, H, H}, rng);
        Tensor gwp({O, C, k, k}), gbp({O}), gwr({O, C, k, k}), gbr({O});
        const double flops = 2.0 * N * O * H * H * C * k * k;
        const double t_par = time_of(
            [&] {
                gwp.fill(0.0);
                gbp.fill(0.0);
                scan::kernels::conv2d_backward_weight(gy, x, 1, 1, gwp, gbp);
            },
            5);
        const double t_ref = time_of(
            [&] {
                gwr.fill(0.0);
                gbr.fill(0.0);
                scan::ref::conv2d_backward_weight(gy, x, 1, 1, gwr, gbr);
            },
            5);
        report("conv3x3 bwd weight", flops, t_par, t_ref, max_diff(gwp, gwr));
    }
    {
        const int64_t N = 32, C = 64, H = 8, O = 32, k = 4;
        Tensor x = randn({N, C, H, H}, rng), w = randn({C, O, k, k}, rng);
        Tensor b = randn({O}, rng);
        const int64_t OH = (H - 1) * 2 - 2 + k;
        Tensor yp({N, O, OH, OH}), yr({N, O, OH, OH});
        const double flops = 2.0 * N * C * H * H * O * k * k;
        const double t_par = time_of(
            [&] { scan::kernels::conv_transpose2d_forward(x, w, b, 2, 1, yp); }, 5);
        const double t_ref = time_of(
            [&] { scan::ref::conv_transpose2d_forward(x, w, b, 2, 1, yr); }, 5);
        report("tconv4x4 s2", flops, t_par, t_ref, max_diff(yp, yr));
    }
    {
        const int64_t C = 3, H = 224, k = 33;
        const double sigma = 8.0;
        Tensor x = randn({C, H, H}, rng);
        Tensor yp({C, H, H}), yr({C, H, H});
        // separable cost for the parallel path, full 2-D for the reference
        const double flops = 2.0 * C * H * H * 2 * k;
        const double t_par =
            time_of([&] { scan::kernels::gaussian_blur(x, k, sigma, yp); }, 3);
        const double t_ref =
            time_of([&] { scan::ref::gaussian_blur(x, k, sigma, yr); }, 3);
        report("blur 224 k33", flops, t_par, t_ref, max_diff(yp, yr));
    }
    {
        const int64_t M = 4096, N = 64;
        Tensor x = randn({M, N}, rng);
        Tensor yp({M, N}), yr({M, N});
        const double flops = 4.0 * M * N;
        const double t_par = time_of([&] { scan::kernels::softmax_rows(x, yp); }, 10);
        const double t_ref = time_of([&] { scan::ref::softmax_rows(x, yr); }, 10);
        report("softmax 4096x64", flops, t_par, t_ref, max_diff(yp, yr));
    }
    return 0;
}
