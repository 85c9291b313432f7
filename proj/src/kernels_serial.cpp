#include "bevpred/kernels.hpp"

#include <cmath>

// Naive single-threaded references, written independently of the parallel
// kernels (different loop orders, float accumulation) so the two can vouch
// for each other in tests and the benchmark.

namespace bevpred::kernels::serial {

void matmul(scalar* c, const scalar* a, const scalar* b, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; i++) {
        for (int64_t j = 0; j < n; j++) {
            scalar acc = 0;
            for (int64_t p = 0; p < k; p++) acc += a[i * k + p] * b[p * n + j];
            c[i * n + j] = acc;
        }
    }
}

void conv2d_forward(scalar* out, const scalar* x, const scalar* w, const scalar* bias, int64_t n,
                    int64_t cin, int64_t h, int64_t wd, int64_t cout, int64_t kh, int64_t kw,
                    int64_t stride, int64_t pad) {
    const int64_t ho = (h + 2 * pad - kh) / stride + 1;
    const int64_t wo = (wd + 2 * pad - kw) / stride + 1;
    for (int64_t ni = 0; ni < n; ni++)
        for (int64_t oc = 0; oc < cout; oc++)
            for (int64_t oy = 0; oy < ho; oy++)
                for (int64_t ox = 0; ox < wo; ox++) {
                    scalar acc = bias ? bias[oc] : scalar(0);
                    for (int64_t ic = 0; ic < cin; ic++)
                        for (int64_t ky = 0; ky < kh; ky++)
                            for (int64_t kx = 0; kx < kw; kx++) {
                                const int64_t iy = oy * stride + ky - pad;
                                const int64_t ix = ox * stride + kx - pad;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                                acc += x[((ni * cin + ic) * h + iy) * wd + ix]
                                     * w[((oc * cin + ic) * kh + ky) * kw + kx];
                            }
                    out[((ni * cout + oc) * ho + oy) * wo + ox] = acc;
                }
}

void softmax_lastaxis(scalar* out, const scalar* x, int64_t rows, int64_t cols) {
    for (int64_t r = 0; r < rows; r++) {
        scalar mx = x[r * cols];
        for (int64_t j = 1; j < cols; j++) mx = std::max(mx, x[r * cols + j]);
        scalar denom = 0;
        for (int64_t j = 0; j < cols; j++) {
            out[r * cols + j] = std::exp(x[r * cols + j] - mx);
            denom += out[r * cols + j];
        }
        for (int64_t j = 0; j < cols; j++) out[r * cols + j] /= denom;
    }
}

void layer_norm_forward(scalar* out, const scalar* x, const scalar* gamma, const scalar* beta,
                        int64_t rows, int64_t cols) {
    for (int64_t r = 0; r < rows; r++) {
        scalar mean = 0;
        for (int64_t j = 0; j < cols; j++) mean += x[r * cols + j];
        mean /= scalar(cols);
        scalar var = 0;
        for (int64_t j = 0; j < cols; j++) {
            const scalar d = x[r * cols + j] - mean;
            var += d * d;
        }
        var /= scalar(cols);
        const scalar rstd = scalar(1) / std::sqrt(var + scalar(1e-5));
        for (int64_t j = 0; j < cols; j++)
            out[r * cols + j] = (x[r * cols + j] - mean) * rstd * gamma[j] + beta[j];
    }
}

void bilinear_sample_forward(scalar* out, const scalar* feat, const scalar* coords, int64_t c,
                             int64_t h, int64_t wd, int64_t p) {
    auto at = [&](int64_t ch, int64_t y, int64_t x) -> scalar {
        if (y < 0 || y >= h || x < 0 || x >= wd) return 0;
        return feat[(ch * h + y) * wd + x];
    };
    for (int64_t i = 0; i < p; i++) {
        const scalar u = coords[i * 2 + 0];
        const scalar v = coords[i * 2 + 1];
        const auto x0 = static_cast<int64_t>(std::floor(u));
        const auto y0 = static_cast<int64_t>(std::floor(v));
        const scalar fx = u - scalar(x0);
        const scalar fy = v - scalar(y0);
        for (int64_t ch = 0; ch < c; ch++)
            out[i * c + ch] = at(ch, y0, x0) * (1 - fx) * (1 - fy)
                            + at(ch, y0, x0 + 1) * fx * (1 - fy)
                            + at(ch, y0 + 1, x0) * (1 - fx) * fy
                            + at(ch, y0 + 1, x0 + 1) * fx * fy;
    }
}

void gelu(scalar* out, const scalar* x, int64_t n) {
    for (int64_t i = 0; i < n; i++)
        out[i] = scalar(0.5) * x[i] * (scalar(1) + std::erf(x[i] / std::sqrt(scalar(2))));
}

}  // namespace bevpred::kernels::serial
