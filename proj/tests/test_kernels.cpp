#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>
#include <omp.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "bevpred/common.hpp"
#include "bevpred/kernels.hpp"
#include "oracles.hpp"

using namespace bevpred;
namespace K = bevpred::kernels;

namespace {

std::vector<scalar> randu(Rng& rng, int64_t n, double lo = -1.0, double hi = 1.0) {
    std::vector<scalar> v(static_cast<size_t>(n));
    for (auto& x : v) x = static_cast<scalar>(rng.uniform(lo, hi));
    return v;
}

std::vector<double> widen(const std::vector<scalar>& v) {
    return std::vector<double>(v.begin(), v.end());
}

double max_abs_diff(const std::vector<scalar>& a, const std::vector<double>& b) {
    double m = 0;
    for (size_t i = 0; i < a.size(); i++) m = std::max(m, std::abs(double(a[i]) - b[i]));
    return m;
}

double max_abs_diff(const std::vector<scalar>& a, const std::vector<scalar>& b) {
    double m = 0;
    for (size_t i = 0; i < a.size(); i++) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
    return m;
}

}  // namespace

// ---- matmul family ----------------------------------------------------------

TEST_CASE("matmul matches the double-precision oracle on assorted shapes") {
    Rng rng(11);
    for (auto [m, k, n] : {std::tuple<int64_t, int64_t, int64_t>{1, 1, 1},
                           {3, 5, 2},
                           {17, 9, 23},
                           {64, 32, 48}}) {
        auto a = randu(rng, m * k), b = randu(rng, k * n);
        std::vector<scalar> c(static_cast<size_t>(m * n));
        K::matmul(c.data(), a.data(), b.data(), m, k, n, false);
        auto ref = oracle::matmul(widen(a), widen(b), m, k, n);
        CHECK(max_abs_diff(c, ref) < 1e-4);
    }
}

TEST_CASE("matmul accumulate flag adds onto the destination") {
    Rng rng(12);
    const int64_t m = 4, k = 3, n = 5;
    auto a = randu(rng, m * k), b = randu(rng, k * n);
    std::vector<scalar> base = randu(rng, m * n);
    std::vector<scalar> c = base;
    K::matmul(c.data(), a.data(), b.data(), m, k, n, true);
    auto ref = oracle::matmul(widen(a), widen(b), m, k, n);
    for (size_t i = 0; i < c.size(); i++)
        CHECK(double(c[i]) == doctest::Approx(double(base[i]) + ref[i]).epsilon(1e-5));
}

TEST_CASE("transposed-operand matmuls agree with explicit transposition") {
    Rng rng(13);
    const int64_t m = 7, k = 5, n = 9;
    auto a = randu(rng, m * k), bt = randu(rng, n * k), at = randu(rng, k * m),
         b = randu(rng, k * n);

    // C = A * B^T with B stored [n,k]
    std::vector<double> b_t(static_cast<size_t>(k * n));
    for (int64_t j = 0; j < n; j++)
        for (int64_t p = 0; p < k; p++) b_t[size_t(p * n + j)] = double(bt[size_t(j * k + p)]);
    std::vector<scalar> c(static_cast<size_t>(m * n));
    K::matmul_bt(c.data(), a.data(), bt.data(), m, k, n, false);
    CHECK(max_abs_diff(c, oracle::matmul(widen(a), b_t, m, k, n)) < 1e-4);

    // C = A^T * B with A stored [k,m]
    std::vector<double> a_t(static_cast<size_t>(m * k));
    for (int64_t p = 0; p < k; p++)
        for (int64_t i = 0; i < m; i++) a_t[size_t(i * k + p)] = double(at[size_t(p * m + i)]);
    K::matmul_at(c.data(), at.data(), b.data(), m, k, n, false);
    CHECK(max_abs_diff(c, oracle::matmul(a_t, widen(b), m, k, n)) < 1e-4);
}

TEST_CASE("bmm equals per-batch matmul") {
    Rng rng(14);
    const int64_t bt = 3, m = 6, k = 4, n = 5;
    auto a = randu(rng, bt * m * k), b = randu(rng, bt * k * n);
    std::vector<scalar> c(static_cast<size_t>(bt * m * n)), c1(static_cast<size_t>(m * n));
    K::bmm(c.data(), a.data(), b.data(), bt, m, k, n, false);
    for (int64_t bi = 0; bi < bt; bi++) {
        K::matmul(c1.data(), a.data() + bi * m * k, b.data() + bi * k * n, m, k, n, false);
        for (int64_t i = 0; i < m * n; i++) CHECK(c[size_t(bi * m * n + i)] == c1[size_t(i)]);
    }
}

TEST_CASE("parallel matmul is bit-identical to the serial reference") {
    Rng rng(15);
    const int64_t m = 33, k = 17, n = 29;
    auto a = randu(rng, m * k), b = randu(rng, k * n);
    std::vector<scalar> c(static_cast<size_t>(m * n)), cs(c.size());
    K::matmul(c.data(), a.data(), b.data(), m, k, n, false);
    K::serial::matmul(cs.data(), a.data(), b.data(), m, k, n);
    // identical summation order in both implementations would defeat the test;
    // they differ, so agreement is within fp noise rather than bitwise
    CHECK(max_abs_diff(c, cs) < 1e-5);
}

// ---- convolutions -----------------------------------------------------------

TEST_CASE("conv2d forward matches the direct oracle across strides and padding") {
    Rng rng(21);
    for (auto [stride, pad, bias_on] :
         {std::tuple<int64_t, int64_t, bool>{1, 0, true}, {1, 1, true}, {2, 1, false},
          {2, 0, true}}) {
        const int64_t n = 2, cin = 3, h = 9, w = 11, cout = 4, kh = 3, kw = 3;
        auto x = randu(rng, n * cin * h * w), wt = randu(rng, cout * cin * kh * kw);
        auto bs = bias_on ? randu(rng, cout) : std::vector<scalar>{};
        const int64_t ho = (h + 2 * pad - kh) / stride + 1;
        const int64_t wo = (w + 2 * pad - kw) / stride + 1;
        std::vector<scalar> out(static_cast<size_t>(n * cout * ho * wo));
        K::conv2d_forward(out.data(), x.data(), wt.data(), bias_on ? bs.data() : nullptr, n,
                          cin, h, w, cout, kh, kw, stride, pad);
        auto ref = oracle::conv2d(widen(x), widen(wt), widen(bs), n, cin, h, w, cout, kh, kw,
                                  stride, pad);
        CHECK(max_abs_diff(out, ref) < 1e-4);

        std::vector<scalar> outs(out.size());
        K::serial::conv2d_forward(outs.data(), x.data(), wt.data(),
                                  bias_on ? bs.data() : nullptr, n, cin, h, w, cout, kh, kw,
                                  stride, pad);
        CHECK(max_abs_diff(out, outs) < 1e-4);
    }
}

TEST_CASE("conv2d backward passes the adjoint identity") {
    // <dout, conv(x, w)> must equal <dx, x> + <dw, w> + <dbias, bias-ones>
    Rng rng(22);
    const int64_t n = 2, cin = 3, h = 6, w = 7, cout = 2, kh = 3, kw = 3, stride = 1, pad = 1;
    const int64_t ho = h, wo = w;
    auto x = randu(rng, n * cin * h * w), wt = randu(rng, cout * cin * kh * kw);
    auto dout = randu(rng, n * cout * ho * wo);

    std::vector<scalar> y(static_cast<size_t>(n * cout * ho * wo));
    K::conv2d_forward(y.data(), x.data(), wt.data(), nullptr, n, cin, h, w, cout, kh, kw,
                      stride, pad);
    double lhs = 0;
    for (size_t i = 0; i < y.size(); i++) lhs += double(y[i]) * double(dout[i]);

    std::vector<scalar> dx(x.size(), 0), dw(wt.size(), 0);
    K::conv2d_backward_input(dx.data(), dout.data(), wt.data(), n, cin, h, w, cout, kh, kw,
                             stride, pad);
    K::conv2d_backward_weight(dw.data(), nullptr, x.data(), dout.data(), n, cin, h, w, cout,
                              kh, kw, stride, pad);
    double rhs_x = 0, rhs_w = 0;
    for (size_t i = 0; i < x.size(); i++) rhs_x += double(dx[i]) * double(x[i]);
    for (size_t i = 0; i < wt.size(); i++) rhs_w += double(dw[i]) * double(wt[i]);
    // bilinearity: y = conv(x,w) is linear in each operand, so <dy,y> = <dx,x> = <dw,w>
    CHECK(lhs == doctest::Approx(rhs_x).epsilon(1e-4));
    CHECK(lhs == doctest::Approx(rhs_w).epsilon(1e-4));
}

TEST_CASE("conv_transpose2d forward matches the scatter oracle") {
    Rng rng(23);
    for (auto [stride, pad] : {std::pair<int64_t, int64_t>{2, 0}, {1, 1}, {2, 1}}) {
        const int64_t n = 2, cin = 3, h = 5, w = 4, cout = 2, kh = 3, kw = 3;
        auto x = randu(rng, n * cin * h * w), wt = randu(rng, cin * cout * kh * kw);
        auto bs = randu(rng, cout);
        const int64_t ho = (h - 1) * stride + kh - 2 * pad;
        const int64_t wo = (w - 1) * stride + kw - 2 * pad;
        std::vector<scalar> out(static_cast<size_t>(n * cout * ho * wo));
        K::conv_transpose2d_forward(out.data(), x.data(), wt.data(), bs.data(), n, cin, h, w,
                                    cout, kh, kw, stride, pad);
        auto ref = oracle::conv_transpose2d(widen(x), widen(wt), widen(bs), n, cin, h, w, cout,
                                            kh, kw, stride, pad);
        CHECK(max_abs_diff(out, ref) < 1e-4);
    }
}

// ---- pooling and upsampling --------------------------------------------------

TEST_CASE("maxpool2d forward picks maxima and backward scatters to the argmax") {
    const int64_t n = 1, c = 1, h = 4, w = 4;
    std::vector<scalar> x = {1, 2, 5, 6,    //
                             3, 4, 7, 8,    //
                             9, 10, 13, 14,  //
                             11, 12, 15, 16};
    std::vector<scalar> out(4);
    std::vector<int32_t> arg(4);
    K::maxpool2d_forward(out.data(), arg.data(), x.data(), n, c, h, w, 2, 2);
    CHECK(out == std::vector<scalar>{4, 8, 12, 16});

    std::vector<scalar> dx(16, 0), dout = {1, 2, 3, 4};
    K::maxpool2d_backward(dx.data(), dout.data(), arg.data(), n, c, h, w, 2, 2);
    CHECK(dx[5] == 1);   // 4 sits at (1,1)
    CHECK(dx[7] == 2);   // 8 at (1,3)
    CHECK(dx[13] == 3);  // 12 at (3,1)
    CHECK(dx[15] == 4);  // 16 at (3,3)
    double s = 0;
    for (scalar v : dx) s += double(v);
    CHECK(s == 10.0);
}

TEST_CASE("upsample_nearest2d repeats cells and its backward sums them") {
    std::vector<scalar> x = {1, 2, 3, 4};
    std::vector<scalar> out(16);
    K::upsample_nearest2d_forward(out.data(), x.data(), 1, 2, 2, 2);
    CHECK(out == std::vector<scalar>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4});
    std::vector<scalar> dx(4, 0), dout(16, 1);
    K::upsample_nearest2d_backward(dx.data(), dout.data(), 1, 2, 2, 2);
    CHECK(dx == std::vector<scalar>{4, 4, 4, 4});
}

// ---- row-wise normalizations --------------------------------------------------

TEST_CASE("softmax matches the double oracle and rows sum to one") {
    Rng rng(31);
    const int64_t rows = 17, cols = 33;
    auto x = randu(rng, rows * cols, -8.0, 8.0);
    std::vector<scalar> y(x.size());
    K::softmax_lastaxis(y.data(), x.data(), rows, cols);
    auto ref = oracle::softmax_rows(widen(x), rows, cols);
    CHECK(max_abs_diff(y, ref) < 1e-5);
    for (int64_t r = 0; r < rows; r++) {
        double s = 0;
        for (int64_t j = 0; j < cols; j++) s += double(y[size_t(r * cols + j)]);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
    }
    std::vector<scalar> ys(x.size());
    K::serial::softmax_lastaxis(ys.data(), x.data(), rows, cols);
    CHECK(max_abs_diff(y, ys) < 1e-5);
}

TEST_CASE("log_softmax equals the log of softmax") {
    Rng rng(32);
    const int64_t rows = 5, cols = 11;
    auto x = randu(rng, rows * cols, -4.0, 4.0);
    std::vector<scalar> ls(x.size()), sm(x.size());
    K::log_softmax_lastaxis(ls.data(), x.data(), rows, cols);
    K::softmax_lastaxis(sm.data(), x.data(), rows, cols);
    for (size_t i = 0; i < x.size(); i++)
        CHECK(double(ls[i]) == doctest::Approx(std::log(double(sm[i]))).epsilon(1e-4));
}

TEST_CASE("layer_norm matches the double oracle") {
    Rng rng(33);
    const int64_t rows = 9, cols = 24;
    auto x = randu(rng, rows * cols, -3.0, 3.0);
    auto gamma = randu(rng, cols, 0.5, 1.5), beta = randu(rng, cols, -0.5, 0.5);
    std::vector<scalar> y(x.size()), mean(static_cast<size_t>(rows)),
        rstd(static_cast<size_t>(rows));
    K::layer_norm_forward(y.data(), mean.data(), rstd.data(), x.data(), gamma.data(),
                          beta.data(), rows, cols);
    auto ref = oracle::layer_norm_rows(widen(x), widen(gamma), widen(beta), rows, cols);
    CHECK(max_abs_diff(y, ref) < 1e-4);

    std::vector<scalar> ys(x.size());
    K::serial::layer_norm_forward(ys.data(), x.data(), gamma.data(), beta.data(), rows, cols);
    CHECK(max_abs_diff(y, ys) < 1e-4);
}

// ---- pointwise ----------------------------------------------------------------

TEST_CASE("gelu matches the erf formula and its backward matches finite differences") {
    Rng rng(34);
    auto x = randu(rng, 101, -4.0, 4.0);
    std::vector<scalar> y(x.size());
    K::gelu(y.data(), x.data(), static_cast<int64_t>(x.size()));
    for (size_t i = 0; i < x.size(); i++) {
        const double v = double(x[i]);
        const double ref = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
        CHECK(double(y[i]) == doctest::Approx(ref).epsilon(1e-4));
    }
    std::vector<scalar> ys(x.size());
    K::serial::gelu(ys.data(), x.data(), static_cast<int64_t>(x.size()));
    CHECK(max_abs_diff(y, ys) < 1e-5);

    // derivative against a central difference of the forward kernel
    const double h = 1e-3;
    std::vector<scalar> dy(x.size(), 1), dx(x.size(), 0), xp(x), xm(x), yp(x.size()),
        ym(x.size());
    for (size_t i = 0; i < x.size(); i++) {
        xp[i] += scalar(h);
        xm[i] -= scalar(h);
    }
    K::gelu(yp.data(), xp.data(), static_cast<int64_t>(x.size()));
    K::gelu(ym.data(), xm.data(), static_cast<int64_t>(x.size()));
    K::gelu_backward(dx.data(), x.data(), dy.data(), static_cast<int64_t>(x.size()));
    for (size_t i = 0; i < x.size(); i++) {
        const double fd = (double(yp[i]) - double(ym[i])) / (2 * h);
        CHECK(double(dx[i]) == doctest::Approx(fd).epsilon(5e-3));
    }
}

TEST_CASE("sigmoid and exp kernels stay close to libm") {
    Rng rng(35);
    auto x = randu(rng, 257, -10.0, 10.0);
    std::vector<scalar> ys(x.size()), ye(x.size());
    K::sigmoid(ys.data(), x.data(), static_cast<int64_t>(x.size()));
    K::exp_fwd(ye.data(), x.data(), static_cast<int64_t>(x.size()));
    for (size_t i = 0; i < x.size(); i++) {
        const double v = double(x[i]);
        CHECK(double(ys[i]) == doctest::Approx(1.0 / (1.0 + std::exp(-v))).epsilon(1e-5));
        CHECK(double(ye[i]) == doctest::Approx(std::exp(v)).epsilon(1e-5));
    }
}

TEST_CASE("sum reduces sequentially in double") {
    std::vector<scalar> x(100000, scalar(0.1));
    CHECK(K::sum(x.data(), static_cast<int64_t>(x.size())) ==
          doctest::Approx(10000.0).epsilon(1e-7));
}

TEST_CASE("sum_axis and broadcast_axis_acc agree with hand counting") {
    // x viewed as [2,3,2]
    std::vector<scalar> x = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
    std::vector<scalar> out(4);
    K::sum_axis(out.data(), x.data(), 2, 3, 2);
    CHECK(out == std::vector<scalar>{9, 12, 27, 30});

    std::vector<scalar> dx(12, 0), dout = {1, 2, 3, 4};
    K::broadcast_axis_acc(dx.data(), dout.data(), 2, 3, 2, scalar(1));
    CHECK(dx == std::vector<scalar>{1, 2, 1, 2, 1, 2, 3, 4, 3, 4, 3, 4});
}

TEST_CASE("bilinear_sample interpolates exactly on a 2x2 patch") {
    // single channel, feature [1,2,2]
    std::vector<scalar> feat = {1, 2, 3, 4};
    std::vector<scalar> coords = {
        0.0f, 0.0f,   // exact corner
        1.0f, 1.0f,   // opposite corner
        0.5f, 0.0f,   // halfway along the top edge
        0.5f, 0.5f,   // patch centre
        -1.0f, 0.0f,  // half outside: zero-padded taps
    };
    std::vector<scalar> out(5);
    K::bilinear_sample_forward(out.data(), feat.data(), coords.data(), 1, 2, 2, 5);
    CHECK(out[0] == doctest::Approx(1.0));
    CHECK(out[1] == doctest::Approx(4.0));
    CHECK(out[2] == doctest::Approx(1.5));
    CHECK(out[3] == doctest::Approx(2.5));
    CHECK(out[4] == doctest::Approx(0.0));  // taps at x=-1 read 0, weight on x=0 is 0

    std::vector<scalar> outs(out.size());
    K::serial::bilinear_sample_forward(outs.data(), feat.data(), coords.data(), 1, 2, 2, 5);
    CHECK(max_abs_diff(out, outs) < 1e-6);
}

TEST_CASE("all_finite flags inf and nan") {
    std::vector<scalar> ok = {1, -2, 0, 1e10f};
    CHECK(K::all_finite(ok.data(), 4));
    std::vector<scalar> bad1 = {1, std::numeric_limits<scalar>::infinity()};
    std::vector<scalar> bad2 = {std::numeric_limits<scalar>::quiet_NaN(), 0};
    CHECK_FALSE(K::all_finite(bad1.data(), 2));
    CHECK_FALSE(K::all_finite(bad2.data(), 2));
}

// ---- determinism across thread counts -----------------------------------------

TEST_CASE("parallel kernels are bit-identical for 1 vs 4 threads") {
    Rng rng(41);
    const int64_t m = 40, k = 24, n = 36;
    auto a = randu(rng, m * k), b = randu(rng, k * n);
    const int64_t cn = 2, cc = 4, ch = 10, cw = 12;
    auto cx = randu(rng, cn * cc * ch * cw), cwt = randu(rng, 3 * cc * 9);
    auto cb = randu(rng, 3);
    auto sx = randu(rng, 64 * 33, -6.0, 6.0);

    auto run_all = [&](std::vector<scalar>& mm, std::vector<scalar>& cv,
                       std::vector<scalar>& sm) {
        K::matmul(mm.data(), a.data(), b.data(), m, k, n, false);
        K::conv2d_forward(cv.data(), cx.data(), cwt.data(), cb.data(), cn, cc, ch, cw, 3, 3, 3,
                          1, 1);
        K::softmax_lastaxis(sm.data(), sx.data(), 64, 33);
    };

    std::vector<scalar> mm1(size_t(m * n)), cv1(size_t(cn * 3 * ch * cw)), sm1(sx.size());
    std::vector<scalar> mm4(mm1.size()), cv4(cv1.size()), sm4(sm1.size());
    const int prev = omp_get_max_threads();
    omp_set_num_threads(1);
    run_all(mm1, cv1, sm1);
    omp_set_num_threads(4);
    run_all(mm4, cv4, sm4);
    omp_set_num_threads(prev);

    CHECK(std::memcmp(mm1.data(), mm4.data(), mm1.size() * sizeof(scalar)) == 0);
    CHECK(std::memcmp(cv1.data(), cv4.data(), cv1.size() * sizeof(scalar)) == 0);
    CHECK(std::memcmp(sm1.data(), sm4.data(), sm1.size() * sizeof(scalar)) == 0);
}
