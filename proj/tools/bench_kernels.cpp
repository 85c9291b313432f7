// Benchmarks the OpenMP kernels against the serial reference implementations
// and reports speedups plus agreement.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <vector>

#include <omp.h>

#include "bevpred/common.hpp"
#include "bevpred/kernels.hpp"

using namespace bevpred;

namespace {

double time_best_of(int reps, const std::function<void()>& fn) {
    double best = 1e30;
    for (int r = 0; r < reps; r++) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
    }
    return best;
}

double max_abs_diff(const std::vector<scalar>& a, const std::vector<scalar>& b) {
    double m = 0;
    for (size_t i = 0; i < a.size(); i++)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

std::vector<scalar> randvec(size_t n, Rng& rng) {
    std::vector<scalar> v(n);
    for (auto& x : v) x = static_cast<scalar>(rng.uniform(-1.0, 1.0));
    return v;
}

void report(const char* name, double t_serial, double t_parallel, double diff) {
    std::printf("%-28s %10.3f ms %10.3f ms %8.2fx   max|d| %.3e\n", name, t_serial * 1e3,
                t_parallel * 1e3, t_serial / t_parallel, diff);
}

}  // namespace

int main() {
    Rng rng(42);
    std::printf("threads: %d\n", omp_get_max_threads());
    std::printf("%-28s %13s %13s %9s\n", "kernel", "serial", "openmp", "speedup");

    {  // matmul 384^3
        const int64_t m = 384, k = 384, n = 384;
        auto a = randvec(static_cast<size_t>(m * k), rng);
        auto b = randvec(static_cast<size_t>(k * n), rng);
        std::vector<scalar> c1(static_cast<size_t>(m * n)), c2(c1.size());
        const double ts =
            time_best_of(3, [&] { kernels::serial::matmul(c1.data(), a.data(), b.data(), m, k, n); });
        const double tp = time_best_of(
            3, [&] { kernels::matmul(c2.data(), a.data(), b.data(), m, k, n, false); });
        report("matmul 384x384x384", ts, tp, max_abs_diff(c1, c2));
    }
    {  // conv2d
        const int64_t nb = 4, ci = 32, co = 32, h = 48, w = 48, kk = 3;
        auto x = randvec(static_cast<size_t>(nb * ci * h * w), rng);
        auto wt = randvec(static_cast<size_t>(co * ci * kk * kk), rng);
        auto bias = randvec(static_cast<size_t>(co), rng);
        std::vector<scalar> y1(static_cast<size_t>(nb * co * h * w)), y2(y1.size());
        const double ts = time_best_of(3, [&] {
            kernels::serial::conv2d_forward(y1.data(), x.data(), wt.data(), bias.data(), nb, ci, h, w, co,
                                   kk, kk, 1, 1);
        });
        const double tp = time_best_of(3, [&] {
            kernels::conv2d_forward(y2.data(), x.data(), wt.data(), bias.data(), nb, ci, h, w,
                                    co, kk, kk, 1, 1);
        });
        report("conv2d 4x32x48x48 k3", ts, tp, max_abs_diff(y1, y2));
    }
    {  // softmax rows
        const int64_t rows = 4096, cols = 1024;
        auto x = randvec(static_cast<size_t>(rows * cols), rng);
        std::vector<scalar> y1(x.size()), y2(x.size());
        const double ts = time_best_of(
            3, [&] { kernels::serial::softmax_lastaxis(y1.data(), x.data(), rows, cols); });
        const double tp = time_best_of(
            3, [&] { kernels::softmax_lastaxis(y2.data(), x.data(), rows, cols); });
        report("softmax 4096x1024", ts, tp, max_abs_diff(y1, y2));
    }
    {  // layer norm
        const int64_t rows = 8192, cols = 256;
        auto x = randvec(static_cast<size_t>(rows * cols), rng);
        auto g = randvec(static_cast<size_t>(cols), rng);
        auto b = randvec(static_cast<size_t>(cols), rng);
        std::vector<scalar> y1(x.size()), y2(x.size());
        std::vector<scalar> mean(static_cast<size_t>(rows)), rstd(static_cast<size_t>(rows));
        const double ts = time_best_of(3, [&] {
            kernels::serial::layer_norm_forward(y1.data(), x.data(), g.data(), b.data(), rows, cols);
        });
        const double tp = time_best_of(3, [&] {
            kernels::layer_norm_forward(y2.data(), mean.data(), rstd.data(), x.data(), g.data(),
                                        b.data(), rows, cols);
        });
        report("layer_norm 8192x256", ts, tp, max_abs_diff(y1, y2));
    }
    {  // bilinear sampling
        const int64_t c = 32, h = 64, w = 96, p = 65536;
        auto feat = randvec(static_cast<size_t>(c * h * w), rng);
        std::vector<scalar> coords(static_cast<size_t>(p * 2));
        for (int64_t i = 0; i < p; i++) {
            coords[static_cast<size_t>(2 * i)] = static_cast<scalar>(rng.uniform(-2.0, w + 2.0));
            coords[static_cast<size_t>(2 * i + 1)] =
                static_cast<scalar>(rng.uniform(-2.0, h + 2.0));
        }
        std::vector<scalar> y1(static_cast<size_t>(p * c)), y2(y1.size());
        const double ts = time_best_of(3, [&] {
            kernels::serial::bilinear_sample_forward(y1.data(), feat.data(), coords.data(), c, h, w, p);
        });
        const double tp = time_best_of(3, [&] {
            kernels::bilinear_sample_forward(y2.data(), feat.data(), coords.data(), c, h, w, p);
        });
        report("bilinear 64k pts x32ch", ts, tp, max_abs_diff(y1, y2));
    }
    {  // gelu
        const int64_t n = 1 << 22;
        auto x = randvec(static_cast<size_t>(n), rng);
        std::vector<scalar> y1(x.size()), y2(x.size());
        const double ts = time_best_of(3, [&] { kernels::serial::gelu(y1.data(), x.data(), n); });
        const double tp = time_best_of(3, [&] { kernels::gelu(y2.data(), x.data(), n); });
        report("gelu 4M", ts, tp, max_abs_diff(y1, y2));
    }
    return 0;
}
