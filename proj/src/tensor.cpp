#include "bevpred/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "bevpred/kernels.hpp"

namespace bevpred {

double Rng::normal() {
    // Box-Muller without caching the second value
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
}

int64_t shape_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<int64_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); i++) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

// ---- Tensor -----------------------------------------------------------------

Tensor::Tensor(std::vector<int64_t> shape, bool requires_grad) {
    d_ = std::make_shared<TensorData>();
    const int64_t n = shape_numel(shape);
    if (n < 0) throw ShapeError("tensor: negative extent in " + shape_str(shape));
    d_->shape = std::move(shape);
    d_->values.assign(static_cast<size_t>(n), scalar(0));
    d_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(std::vector<int64_t> shape, bool requires_grad) {
    return Tensor(std::move(shape), requires_grad);
}

Tensor Tensor::full(std::vector<int64_t> shape, scalar v, bool requires_grad) {
    Tensor t(std::move(shape), requires_grad);
    std::fill(t.d_->values.begin(), t.d_->values.end(), v);
    return t;
}

Tensor Tensor::from(std::vector<int64_t> shape, std::vector<scalar> values, bool requires_grad) {
    Tensor t;
    t.d_ = std::make_shared<TensorData>();
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
        throw ShapeError("from: " + shape_str(shape) + " does not hold "
                         + std::to_string(values.size()) + " values");
    t.d_->shape = std::move(shape);
    t.d_->values = std::move(values);
    t.d_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::randn(std::vector<int64_t> shape, Rng& rng, scalar stddev, bool requires_grad) {
    Tensor t(std::move(shape), requires_grad);
    for (auto& v : t.d_->values) v = static_cast<scalar>(rng.normal()) * stddev;
    return t;
}

Tensor Tensor::uniform(std::vector<int64_t> shape, Rng& rng, scalar lo, scalar hi,
                       bool requires_grad) {
    Tensor t(std::move(shape), requires_grad);
    for (auto& v : t.d_->values) v = static_cast<scalar>(rng.uniform(lo, hi));
    return t;
}

scalar* Tensor::grad() {
    if (d_->grad.empty()) d_->grad.assign(d_->values.size(), scalar(0));
    return d_->grad.data();
}

const scalar* Tensor::grad() const { return d_->grad.empty() ? nullptr : d_->grad.data(); }

void Tensor::zero_grad() {
    if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), scalar(0));
}

scalar Tensor::item() const {
    if (numel() != 1) throw ShapeError("item: tensor has " + std::to_string(numel()) + " elements");
    return d_->values[0];
}

Tensor Tensor::clone() const {
    Tensor t;
    t.d_ = std::make_shared<TensorData>();
    t.d_->shape = d_->shape;
    t.d_->values = d_->values;
    t.d_->requires_grad = d_->requires_grad;
    return t;
}

Tensor Tensor::detach() const {
    Tensor t = clone();
    t.d_->requires_grad = false;
    return t;
}

// ---- tape -------------------------------------------------------------------

namespace {
thread_local GradTape* g_active_tape = nullptr;
}

GradTape* GradTape::active() { return g_active_tape; }

void GradTape::record(std::function<void()> backward_fn) {
    if (consumed_) throw NumericError("tape: recording onto a consumed tape");
    nodes_.push_back(std::move(backward_fn));
}

void GradTape::run_backward() {
    if (consumed_) throw NumericError("tape: backward called twice on the same tape");
    consumed_ = true;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    nodes_.clear();
}

TapeScope::TapeScope(GradTape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = prev_; }

void backward(const Tensor& loss, GradTape& tape) {
    if (loss.numel() != 1) throw NumericError("backward: loss must be a single element");
    if (!std::isfinite(double(loss.item()))) throw NumericError("backward: loss is not finite");
    auto d = loss.ptr();
    if (d->grad.empty()) d->grad.assign(1, scalar(0));
    d->grad[0] += scalar(1);
    tape.run_backward();
}

// ---- shared op helpers --------------------------------------------------------

namespace {

using Data = std::shared_ptr<TensorData>;

void check_finite(const Tensor& t, const char* op) {
    if (!kernels::all_finite(t.data(), t.numel()))
        throw NumericError(std::string(op) + ": non-finite input");
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " vs "
                         + shape_str(b.shape()));
}

bool tracing(std::initializer_list<const Tensor*> ins) {
    if (!g_active_tape) return false;
    for (const Tensor* t : ins)
        if (t->defined() && t->requires_grad()) return true;
    return false;
}

const scalar* out_grad(const Data& d) { return d->grad.empty() ? nullptr : d->grad.data(); }

scalar* ensure_grad(const Data& d) {
    if (d->grad.empty()) d->grad.assign(d->values.size(), scalar(0));
    return d->grad.data();
}

// dst[i] += g[i] * src[i]
void madd(scalar* dst, const scalar* g, const scalar* src, int64_t n) {
    #pragma omp parallel for
    for (int64_t i = 0; i < n; i++) dst[i] += g[i] * src[i];
}

int normalize_axis(int axis, int rank, const char* op) {
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank)
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of rank "
                         + std::to_string(rank));
    return axis;
}

}  // namespace

// ---- elementwise --------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    check_finite(a, "add");
    check_finite(b, "add");
    check_same_shape(a, b, "add");
    Tensor out(a.shape());
    kernels::add(out.data(), a.data(), b.data(), a.numel());
    if (tracing({&a, &b})) {
        out.set_requires_grad(true);
        Data ad = a.ptr(), bd = b.ptr(), od = out.ptr();
        g_active_tape->record([ad, bd, od] {
            const scalar* g = out_grad(od);
            if (!g) return;
            const auto n = static_cast<int64_t>(od->values.size());
            if (ad->requires_grad) kernels::accumulate(ensure_grad(ad), g, n);
            if (bd->requires_grad) kernels::accumulate(ensure_grad(bd), g, n);
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_finite(a, "sub");
    check_finite(b, "sub");
    check_same_shape(a, b, "sub");
    Tensor out(a.shape());
    kernels::sub(out.data(), a.data(), b.data(), a.numel());
    if (tracing({&a, &b})) {
        out.set_requires_grad(true);
        Data ad = a.ptr(), bd = b.ptr(), od = out.ptr();
        g_active_tape->record([ad, bd, od] {
            const scalar* g = out_grad(od);
            if (!g) return;
            const auto n = static_cast<int64_t>(od->values.size());
            if (ad->requires_grad) kernels::accumulate(ensure_grad(ad), g, n);
            if (bd->requires_grad) kernels::axpy(ensure_grad(bd), scalar(-1), g, n);
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_finite(a, "mul");
    check_finite(b, "mul");
    check_same_shape(a, b, "mul");
    Tensor out(a.shape());
    kernels::mul(out.data(), a.data(), b.data(), a.numel());
    if (tracing({&a, &b})) {
        out.set_requires_grad(true);
        Data ad = a.ptr(), bd = b.ptr(), od = out.ptr();
        g_active_tape->record([ad, bd, od] {
            const scalar* g = out_grad(od);
            if (!g) return;
            const auto n = static_cast<int64_t>(od->values.size());
            if (ad->requires_grad) madd(ensure_grad(ad), g, bd->values.data(), n);
            if (bd->requires_grad) madd(ensure_grad(bd), g, ad->values.data(), n);
        });
    }
    return out;
}

Tensor scale(const Tensor& a, scalar c) {
    check_finite(a, "scale");
    if (!std::isfinite(double(c))) throw NumericError("scale: non-finite factor");
    Tensor out(a.shape());
    kernels::scale(out.data(), a.data(), c, a.numel());
    if (tracing({&a})) {
        out.set_requires_grad(true);
        Data ad = a.ptr(), od = out.ptr();
        g_active_tape->record([ad, od, c] {
            const scalar* g = out_grad(od);
            if (!g) return;
            kernels::axpy(ensure_grad(ad), c, g, static_cast<int64_t>(od->values.size()));
        });
    }
    return out;
}

Tensor add_scalar(const Tensor& a, scalar c) {
    check_finite(a, "add_scalar");
    if (!std::isfinite(double(c))) throw NumericError("add_scalar: non-finite addend");
    Tensor out(a.shape());
    const scalar* x = a.data();
    scalar* y = out.data();
    const int64_t n = a.numel();
    #pragma omp parallel for
    for (int64_t i = 0; i < n; i++) y[i] = x[i] + c;
    if (tracing({&a})) {
        out.set_requires_grad(true);
        Data ad = a.ptr(), od = out.ptr();
        g_active_tape->record([ad, od] {
            const scalar* g = out_grad(od);
            if (!g) return;
            kernels::accumulate(ensure_grad(ad), g, static_cast<int64_t>(od->values.size()));
        });
    }
    return out;
}

// ---- matmul -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_finite(a, "matmul");
    check_finite(b, "matmul");
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out({m, n});
    kernels::matmul(out.data(), a.data(), b.data(), m, k, n, false);
    if (tracing({&a, &b})) {
        out.set_requires_grad(true);
        Data ad = a.ptr(), bd = b.ptr(), od = out.ptr();
        g_active_tape->record([ad, bd, od, m, k, n] {
            const scalar* g = out_grad(od);
            if (!g) return;
            if (ad->requires_grad)
                kernels::matmul_bt(ensure_grad(ad), g, bd->values.data(), m, n, k, true);
            if (bd->requires_grad)
                kernels::matmul_at(ensure_grad(bd), ad->values.data(), g, k, m, n, true);
        });
    }
    return out;
}

Tensor bmm(const Tensor& a, const Tensor& b) {
    check_finite(a, "bmm");
    check_finite(b, "bmm");
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
        throw ShapeError("bmm: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const int64_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    Tensor out({batch, m, n});
    kernels::bmm(out.data(), a.data(), b.data(), batch, m, k, n, false);
    if (tracing({&a, &b})) {
        out.set_requires_grad(true);
        Data ad = a.ptr(), bd = b.ptr(), od = out.ptr();
        g_active_tape->record([ad, bd, od, batch, m, k, n] {
            const scalar* g = out_grad(od);
            if (!g) return;
            if (ad->requires_grad)
                kernels::bmm_bt(ensure_grad(ad), g, bd->values.data(), batch, m, n, k, true);
            if (bd->requires_grad)
                kernels::bmm_at(ensure_grad(bd), ad->values.data(), g, batch, k, m, n, true);
        });
    }
    return out;
}

// ---- convolutions ---------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int64_t stride, int64_t pad) {
    check_finite(x, "conv2d");
    check_finite(w, "conv2d");
    if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(1))
        throw ShapeError("conv2d: x " + shape_str(x.shape()) + " w " + shape_str(w.shape()));
    const int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int64_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (bias.defined()) {
        check_finite(bias, "conv2d");
        if (bias.numel() != cout) throw ShapeError("conv2d: bias " + shape_str(bias.shape()));
    }
    const int64_t ho = (h + 2 * pad - kh) / stride + 1;
    const int64_t wo = (wd + 2 * pad - kw) / stride + 1;
    if (ho <= 0 || wo <= 0)
        throw ShapeError("conv2d: kernel " + shape_str(w.shape()) + " too large for input "
                         + shape_str(x.shape()));
    Tensor out({n, cout, ho, wo});
    kernels::conv2d_forward(out.data(), x.data(), w.data(), bias.defined() ? bias.data() : nullptr,
                            n, cin, h, wd, cout, kh, kw, stride, pad);
    if (tracing({&x, &w, &bias})) {
        out.set_requires_grad(true);
        Data xd = x.ptr(), wdta = w.ptr(), od = out.ptr();
        Data bd = bias.defined() ? bias.ptr() : nullptr;
        g_active_tape->record([xd, wdta, bd, od, n, cin, h, wd, cout, kh, kw, stride, pad] {
            const scalar* g = out_grad(od);
            if (!g) return;
            if (xd->requires_grad)
                kernels::conv2d_backward_input(ensure_grad(xd), g, wdta->values.data(), n, cin, h,
                                               wd, cout, kh, kw, stride, pad);
            const bool need_w = wdta->requires_grad;
            const bool need_b = bd && bd->requires_grad;
            if (need_w || need_b) {
                std::vector<scalar> scratch;
                scalar* dw = need_w ? ensure_grad(wdta) : nullptr;
                if (!dw) {
                    scratch.assign(wdta->values.size(), scalar(0));
                    dw = scratch.data();
                }
                kernels::conv2d_backward_weight(dw, need_b ? ensure_grad(bd) : nullptr,
                                                xd->values.data(), g, n, cin, h, wd, cout, kh, kw,
                                                stride, pad);
            }
        });
    }
    return out;
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& bias, int64_t stride,
                        int64_t pad) {
    check_finite(x, "conv_transpose2d");
    check_finite(w, "conv_transpose2d");
    if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(0))
        throw ShapeError("conv_transpose2d: x " + shape_str(x.shape()) + " w "
                         + shape_str(w.shape()));
    const int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int64_t cout = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    if (bias.defined()) {
        check_finite(bias, "conv_transpose2d");
        if (bias.numel() != cout)
            throw ShapeError("conv_transpose2d: bias " + shape_str(bias.shape()));
    }
    const int64_t ho = (h - 1) * stride + kh - 2 * pad;
    const int64_t wo = (wd - 1) * stride + kw - 2 * pad;
    if (ho <= 0 || wo <= 0) throw ShapeError("conv_transpose2d: empty output");
    Tensor out({n, cout, ho, wo});
    kernels::conv_transpose2d_forward(out.data(), x.data(), w.data(),
                                      bias.defined() ? bias.data() : nullptr, n, cin, h, wd, cout,
                                      kh, kw, stride, pad);
    if (tracing({&x, &w, &bias})) {
        out.set_requires_grad(true);
        Data xd = x.ptr(), wdta = w.ptr(), od = out.ptr();
        Data bd = bias.defined() ? bias.ptr() : nullptr;
        g_active_tape->record([xd, wdta, bd, od, n, cin, h, wd, cout, kh, kw, stride, pad] {
            const scalar* g = out_grad(od);
            if (!g) return;
            if (xd->requires_grad)
                kernels::conv_transpose2d_backward_input(ensure_grad(xd), g, wdta->values.data(),
                                                         n, cin, h, wd, cout, kh, kw, stride, pad);
            const bool need_w = wdta->requires_grad;
            const bool need_b = bd && bd->requires_grad;
            if (need_w || need_b) {
                std::vector<scalar> scratch;
                scalar* dw = need_w ? ensure_grad(wdta) : nullptr;
                if (!dw) {
                    scratch.assign(wdta->values.size(), scalar(0));
                    dw = scratch.data();
                }
                kernels::conv_transpose2d_backward_weight(dw, need_b ? ensure_grad(bd) : nullptr,
                                                          xd->values.data(), g, n, cin, h, wd,
                                                          cout, kh, kw, stride, pad);
            }
        });
    }
    return out;
}

Tensor maxpool2d(const Tensor& x, int64_t k, int64_t stride) {
    check_finite(x, "maxpool2d");
    if (x.rank() != 4) throw ShapeError("maxpool2d: x " + shape_str(x.shape()));
    const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    if (k > h || k > wd) throw ShapeError("maxpool2d: window larger than input");
    const int64_t ho = (h - k) / stride + 1;
    const int64_t wo = (wd - k) / stride + 1;
    Tensor out({n, c, ho, wo});
    auto argmax = std::make_shared<std::vector<int32_t>>(static_cast<size_t>(n * c * ho * wo));
    kernels::maxpool2d_forward(out.data(), argmax->data(), x.data(), n, c, h, wd, k, stride);
    if (tracing({&x})) {
        out.set_requires_grad(true);
        Data xd = x.ptr(), od = out.ptr();
        g_active_tape->record([xd, od, argmax, n, c, h, wd, ho, wo] {
            const scalar* g = out_grad(od);
            if (!g) return;
            if (xd->requires_grad)
                kernels::maxpool2d_backward(ensure_grad(xd), g, argmax->data(), n, c, h, wd, ho,
                                            wo);
        });
    }
    return out;
}

Tensor upsample_nearest2d(const Tensor& x, int64_t factor) {
    check_finite(x, "upsample_nearest2d");
    if (x.rank() < 2 || factor < 1) throw ShapeError("upsample_nearest2d: x " + shape_str(x.shape()));
    const int64_t h = x.dim(x.rank() - 2), wd = x.dim(x.rank() - 1);
    const int64_t nc = x.numel() / (h * wd);
    std::vector<int64_t> oshape = x.shape();
    oshape[oshape.size() - 2] = h * factor;
    oshape[oshape.size() - 1] = wd * factor;
    Tensor out(std::move(oshape));
    kernels::upsample_nearest2d_forward(out.data(), x.data(), nc, h, wd, factor);
    if (tracing({&x})) {
        out.set_requires_grad(true);
        Data xd = x.ptr(), od = out.ptr();
        g_active_tape->record([xd, od, nc, h, wd, factor] {
            const scalar* g = out_grad(od);
            if (!g) return;
            if (xd->requires_grad)
                kernels::upsample_nearest2d_backward(ensure_grad(xd), g, nc, h, wd, factor);
        });
    }
    return out;
}

// ---- reductions ----------------------------------------------------------------

Tensor sum(const Tensor& a) {
    check_finite(a, "sum");
    Tensor out = Tensor::from({1}, {static_cast<scalar>(kernels::sum(a.data(), a.numel()))});
    if (tracing({&a})) {
        out.set_requires_grad(true);
        Data ad = a.ptr(), od = out.ptr();
        g_active_tape->record([ad, od] {
            const scalar* g = out_grad(od);
            if (!g || !ad->requires_grad) return;
            scalar* da = ensure_grad(ad);
            const scalar gv = g[0];
            const auto n = static_cast<int64_t>(ad->values.size());
            #pragma omp parallel for
            for (int64_t i = 0; i < n; i++) da[i] += gv;
        });
    }
    return out;
}

Tensor mean(const Tensor& a) {
    check_finite(a, "mean");
    const int64_t n = a.numel();
    if (n == 0) throw ShapeError("mean: empty tensor");
    Tensor out = Tensor::from({1}, {static_cast<scalar>(kernels::sum(a.data(), n) / double(n))});
    if (tracing({&a})) {
        out.set_requires_grad(true);
        Data ad = a.ptr(), od = out.ptr();
        g_active_tape->record([ad, od, n] {
            const scalar* g = out_grad(od);
            if (!g || !ad->requires_grad) return;
            scalar* da = ensure_grad(ad);
            const scalar gv = g[0] / scalar(n);
            #pragma omp parallel for
            for (int64_t i = 0; i < n; i++) da[i] += gv;
        });
    }
    return out;
}

namespace {
void axis_extents(const Tensor& a, int axis, int64_t& outer, int64_t& k, int64_t& inner) {
    outer = 1;
    for (int i = 0; i < axis; i++) outer *= a.dim(i);
    k = a.dim(axis);
    inner = 1;
    for (int i = axis + 1; i < a.rank(); i++) inner *= a.dim(i);
}
}  // namespace

Tensor sum_axis(const Tensor& a, int axis) {
    check_finite(a, "sum_axis");
    axis = normalize_axis(axis, a.rank(), "sum_axis");
    int64_t outer, k, inner;
    axis_extents(a, axis, outer, k, inner);
    std::vector<int64_t> oshape;
    for (int i = 0; i < a.rank(); i++)
        if (i != axis) oshape.push_back(a.dim(i));
    if (oshape.empty()) oshape.push_back(1);
    Tensor out(std::move(oshape));
    kernels::sum_axis(out.data(), a.data(), outer, k, inner);
    if (tracing({&a})) {
        out.set_requires_grad(true);
        Data ad = a.ptr(), od = out.ptr();
        g_active_tape->record([ad, od, outer, k, inner] {
            const scalar* g = out_grad(od);
            if (!g || !ad->requires_grad) return;
            kernels::broadcast_axis_acc(ensure_grad(ad), g, outer, k, inner, scalar(1));
        });
    }
    return out;
}

Tensor mean_axis(const Tensor& a, int axis) {
    check_finite(a, "mean_axis");
    axis = normalize_axis(axis, a.rank(), "mean_axis");
    int64_t outer, k, inner;
    axis_extents(a, axis, outer, k, inner);
    std::vector<int64_t> oshape;
    for (int i = 0; i < a.rank(); i++)
        if (i != axis) oshape.push_back(a.dim(i));
    if (oshape.empty()) oshape.push_back(1);
    Tensor out(std::move(oshape));
    kernels::sum_axis(out.data(), a.data(), outer, k, inner);
    kernels::scale(out.data(), out.data(), scalar(1) / scalar(k), out.numel());
    if (tracing({&a})) {
        out.set_requires_grad(true);
        Data ad = a.ptr(), od = out.ptr();
        g_active_tape->record([ad, od, outer, k, inner] {
            const scalar* g = out_grad(od);
            if (!g || !ad->requires_grad) return;
            kernels::broadcast_axis_acc(ensure_grad(ad), g, outer, k, inner, scalar(1) / scalar(k));
        });
    }
    return out;
}

// ---- shape ops -------------------------------------------------------------------

Tensor reshape(const Tensor& a, std::vector<int64_t> shape) {
    check_finite(a, "reshape");
    if (shape_numel(shape) != a.numel())
        throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
    Tensor out = Tensor::from(std::move(shape), a.values());
    if (tracing({&a})) {
        out.set_requires_grad(true);
        Data ad = a.ptr(), od = out.ptr();
        g_active_tape->record([ad, od] {
            const scalar* g = out_grad(od);
            if (!g || !ad->requires_grad) return;
            kernels::accumulate(ensure_grad(ad), g, static_cast<int64_t>(od->values.size()));
        });
    }
    return out;
}

namespace {

std::vector<int64_t> strides_of(const std::vector<int64_t>& shape) {
    std::vector<int64_t> s(shape.size(), 1);
    for (int i = static_cast<int>(shape.size()) - 2; i >= 0; i--) s[i] = s[i + 1] * shape[i + 1];
    return s;
}

// out linear index -> source linear index for a permutation
void permute_map(const std::vector<int64_t>& in_shape, const std::vector<int>& dims,
                 std::vector<int64_t>& out_shape, std::vector<int64_t>& src_stride_for_out_axis) {
    const auto in_strides = strides_of(in_shape);
    out_shape.resize(dims.size());
    src_stride_for_out_axis.resize(dims.size());
    for (size_t j = 0; j < dims.size(); j++) {
        out_shape[j] = in_shape[static_cast<size_t>(dims[j])];
        src_stride_for_out_axis[j] = in_strides[static_cast<size_t>(dims[j])];
    }
}

}  // namespace

Tensor permute(const Tensor& a, std::vector<int> dims) {
    check_finite(a, "permute");
    const int r = a.rank();
    if (static_cast<int>(dims.size()) != r) throw ShapeError("permute: dims rank mismatch");
    std::vector<bool> seen(static_cast<size_t>(r), false);
    for (int d : dims) {
        if (d < 0 || d >= r || seen[static_cast<size_t>(d)])
            throw ShapeError("permute: invalid permutation");
        seen[static_cast<size_t>(d)] = true;
    }
    std::vector<int64_t> oshape, sstride;
    permute_map(a.shape(), dims, oshape, sstride);
    Tensor out(oshape);
    const auto ostrides = strides_of(oshape);
    const scalar* src = a.data();
    scalar* dst = out.data();
    const int64_t total = out.numel();
    const int rr = r;
    #pragma omp parallel for
    for (int64_t o = 0; o < total; o++) {
        int64_t rem = o, si = 0;
        for (int j = 0; j < rr; j++) {
            const int64_t q = rem / ostrides[static_cast<size_t>(j)];
            rem -= q * ostrides[static_cast<size_t>(j)];
            si += q * sstride[static_cast<size_t>(j)];
        }
        dst[o] = src[si];
    }
    if (tracing({&a})) {
        out.set_requires_grad(true);
        Data ad = a.ptr(), od = out.ptr();
        g_active_tape->record([ad, od, ostrides, sstride, total, rr] {
            const scalar* g = out_grad(od);
            if (!g || !ad->requires_grad) return;
            scalar* da = ensure_grad(ad);
            // bijective index map: writes are disjoint
            #pragma omp parallel for
            for (int64_t o = 0; o < total; o++) {
                int64_t rem = o, si = 0;
                for (int j = 0; j < rr; j++) {
                    const int64_t q = rem / ostrides[static_cast<size_t>(j)];
                    rem -= q * ostrides[static_cast<size_t>(j)];
                    si += q * sstride[static_cast<size_t>(j)];
                }
                da[si] += g[o];
            }
        });
    }
    return out;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const int r = parts[0].rank();
    axis = normalize_axis(axis, r, "concat");
    int64_t total_axis = 0;
    for (const Tensor& p : parts) {
        check_finite(p, "concat");
        if (p.rank() != r) throw ShapeError("concat: rank mismatch");
        for (int i = 0; i < r; i++)
            if (i != axis && p.dim(i) != parts[0].dim(i))
                throw ShapeError("concat: " + shape_str(p.shape()) + " vs "
                                 + shape_str(parts[0].shape()));
        total_axis += p.dim(axis);
    }
    std::vector<int64_t> oshape = parts[0].shape();
    oshape[static_cast<size_t>(axis)] = total_axis;
    Tensor out(oshape);

    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; i++) outer *= oshape[static_cast<size_t>(i)];
    for (int i = axis + 1; i < r; i++) inner *= oshape[static_cast<size_t>(i)];

    scalar* dst = out.data();
    int64_t axis_off = 0;
    for (const Tensor& p : parts) {
        const int64_t pa = p.dim(axis);
        const scalar* src = p.data();
        #pragma omp parallel for
        for (int64_t o = 0; o < outer; o++)
            std::memcpy(dst + (o * total_axis + axis_off) * inner, src + o * pa * inner,
                        sizeof(scalar) * static_cast<size_t>(pa * inner));
        axis_off += pa;
    }

    bool any_grad = false;
    for (const Tensor& p : parts) any_grad |= p.requires_grad();
    if (g_active_tape && any_grad) {
        out.set_requires_grad(true);
        std::vector<Data> pds;
        std::vector<int64_t> offs;
        int64_t off = 0;
        for (const Tensor& p : parts) {
            pds.push_back(p.ptr());
            offs.push_back(off);
            off += p.dim(axis);
        }
        Data od = out.ptr();
        g_active_tape->record([pds, offs, od, outer, inner, total_axis, axis] {
            const scalar* g = out_grad(od);
            if (!g) return;
            for (size_t pi = 0; pi < pds.size(); pi++) {
                const Data& pd = pds[pi];
                if (!pd->requires_grad) continue;
                const int64_t pa = pd->shape[static_cast<size_t>(axis)];
                scalar* dp = ensure_grad(pd);
                const int64_t axis_off2 = offs[pi];
                #pragma omp parallel for
                for (int64_t o = 0; o < outer; o++) {
                    const scalar* gs = g + (o * total_axis + axis_off2) * inner;
                    scalar* dd = dp + o * pa * inner;
                    for (int64_t i = 0; i < pa * inner; i++) dd[i] += gs[i];
                }
            }
        });
    }
    return out;
}

Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len) {
    check_finite(a, "slice");
    axis = normalize_axis(axis, a.rank(), "slice");
    if (start < 0 || len <= 0 || start + len > a.dim(axis))
        throw ShapeError("slice: [" + std::to_string(start) + "," + std::to_string(start + len)
                         + ") out of extent " + std::to_string(a.dim(axis)));
    std::vector<int64_t> oshape = a.shape();
    oshape[static_cast<size_t>(axis)] = len;
    Tensor out(oshape);
    int64_t outer, k, inner;
    axis_extents(a, axis, outer, k, inner);
    const scalar* src = a.data();
    scalar* dst = out.data();
    #pragma omp parallel for
    for (int64_t o = 0; o < outer; o++)
        std::memcpy(dst + o * len * inner, src + (o * k + start) * inner,
                    sizeof(scalar) * static_cast<size_t>(len * inner));
    if (tracing({&a})) {
        out.set_requires_grad(true);
        Data ad = a.ptr(), od = out.ptr();
        g_active_tape->record([ad, od, outer, k, inner, start, len] {
            const scalar* g = out_grad(od);
            if (!g || !ad->requires_grad) return;
            scalar* da = ensure_grad(ad);
            #pragma omp parallel for
            for (int64_t o = 0; o < outer; o++) {
                const scalar* gs = g + o * len * inner;
                scalar* dd = da + (o * k + start) * inner;
                for (int64_t i = 0; i < len * inner; i++) dd[i] += gs[i];
            }
        });
    }
    return out;
}

Tensor expand(const Tensor& a, std::vector<int64_t> shape) {
    check_finite(a, "expand");
    if (static_cast<int>(shape.size()) != a.rank())
        throw ShapeError("expand: rank mismatch " + shape_str(a.shape()) + " -> "
                         + shape_str(shape));
    for (int i = 0; i < a.rank(); i++)
        if (a.dim(i) != shape[static_cast<size_t>(i)] && a.dim(i) != 1)
            throw ShapeError("expand: " + shape_str(a.shape()) + " -> " + shape_str(shape));
    const auto in_strides = strides_of(a.shape());
    const auto out_strides = strides_of(shape);
    std::vector<int64_t> eff(in_strides);  // stride 0 on broadcast axes
    for (int i = 0; i < a.rank(); i++)
        if (a.dim(i) == 1 && shape[static_cast<size_t>(i)] != 1) eff[static_cast<size_t>(i)] = 0;
    Tensor out(shape);
    const scalar* src = a.data();
    scalar* dst = out.data();
    const int64_t total = out.numel();
    const int r = a.rank();
    #pragma omp parallel for
    for (int64_t o = 0; o < total; o++) {
        int64_t rem = o, si = 0;
        for (int j = 0; j < r; j++) {
            const int64_t q = rem / out_strides[static_cast<size_t>(j)];
            rem -= q * out_strides[static_cast<size_t>(j)];
            si += q * eff[static_cast<size_t>(j)];
        }
        dst[o] = src[si];
    }
    if (tracing({&a})) {
        out.set_requires_grad(true);
        Data ad = a.ptr(), od = out.ptr();
        g_active_tape->record([ad, od, out_strides, eff, total, r] {
            const scalar* g = out_grad(od);
            if (!g || !ad->requires_grad) return;
            scalar* da = ensure_grad(ad);
            // many->one scatter: keep it sequential so accumulation order is fixed
            for (int64_t o = 0; o < total; o++) {
                int64_t rem = o, si = 0;
                for (int j = 0; j < r; j++) {
                    const int64_t q = rem / out_strides[static_cast<size_t>(j)];
                    rem -= q * out_strides[static_cast<size_t>(j)];
                    si += q * eff[static_cast<size_t>(j)];
                }
                da[si] += g[o];
            }
        });
    }
    return out;
}

// ---- nonlinearities ---------------------------------------------------------------

Tensor softmax(const Tensor& a) {
    check_finite(a, "softmax");
    if (a.rank() < 1) throw ShapeError("softmax: rank 0");
    const int64_t cols = a.dim(a.rank() - 1);
    const int64_t rows = a.numel() / cols;
    Tensor out(a.shape());
    kernels::softmax_lastaxis(out.data(), a.data(), rows, cols);
    if (tracing({&a})) {
        out.set_requires_grad(true);
        Data ad = a.ptr(), od = out.ptr();
        g_active_tape->record([ad, od, rows, cols] {
            const scalar* g = out_grad(od);
            if (!g || !ad->requires_grad) return;
            kernels::softmax_backward(ensure_grad(ad), od->values.data(), g, rows, cols);
        });
    }
    return out;
}

Tensor log_softmax(const Tensor& a) {
    check_finite(a, "log_softmax");
    if (a.rank() < 1) throw ShapeError("log_softmax: rank 0");
    const int64_t cols = a.dim(a.rank() - 1);
    const int64_t rows = a.numel() / cols;
    Tensor out(a.shape());
    kernels::log_softmax_lastaxis(out.data(), a.data(), rows, cols);
    if (tracing({&a})) {
        out.set_requires_grad(true);
        Data ad = a.ptr(), od = out.ptr();
        g_active_tape->record([ad, od, rows, cols] {
            const scalar* g = out_grad(od);
            if (!g || !ad->requires_grad) return;
            kernels::log_softmax_backward(ensure_grad(ad), od->values.data(), g, rows, cols);
        });
    }
    return out;
}

Tensor sigmoid(const Tensor& a) {
    check_finite(a, "sigmoid");
    Tensor out(a.shape());
    kernels::sigmoid(out.data(), a.data(), a.numel());
    if (tracing({&a})) {
        out.set_requires_grad(true);
        Data ad = a.ptr(), od = out.ptr();
        g_active_tape->record([ad, od] {
            const scalar* g = out_grad(od);
            if (!g || !ad->requires_grad) return;
            kernels::sigmoid_backward(ensure_grad(ad), od->values.data(), g,
                                      static_cast<int64_t>(od->values.size()));
        });
    }
    return out;
}

Tensor gelu(const Tensor& a) {
    check_finite(a, "gelu");
    Tensor out(a.shape());
    kernels::gelu(out.data(), a.data(), a.numel());
    if (tracing({&a})) {
        out.set_requires_grad(true);
        Data ad = a.ptr(), od = out.ptr();
        g_active_tape->record([ad, od] {
            const scalar* g = out_grad(od);
            if (!g || !ad->requires_grad) return;
            kernels::gelu_backward(ensure_grad(ad), ad->values.data(), g,
                                   static_cast<int64_t>(od->values.size()));
        });
    }
    return out;
}

Tensor exp(const Tensor& a) {
    check_finite(a, "exp");
    Tensor out(a.shape());
    kernels::exp_fwd(out.data(), a.data(), a.numel());
    if (tracing({&a})) {
        out.set_requires_grad(true);
        Data ad = a.ptr(), od = out.ptr();
        g_active_tape->record([ad, od] {
            const scalar* g = out_grad(od);
            if (!g || !ad->requires_grad) return;
            madd(ensure_grad(ad), g, od->values.data(), static_cast<int64_t>(od->values.size()));
        });
    }
    return out;
}

Tensor abs(const Tensor& a) {
    check_finite(a, "abs");
    Tensor out(a.shape());
    kernels::abs_fwd(out.data(), a.data(), a.numel());
    if (tracing({&a})) {
        out.set_requires_grad(true);
        Data ad = a.ptr(), od = out.ptr();
        g_active_tape->record([ad, od] {
            const scalar* g = out_grad(od);
            if (!g || !ad->requires_grad) return;
            scalar* da = ensure_grad(ad);
            const scalar* x = ad->values.data();
            const auto n = static_cast<int64_t>(od->values.size());
            // subgradient 0 at the kink
            #pragma omp parallel for
            for (int64_t i = 0; i < n; i++)
                da[i] += g[i] * (x[i] > 0 ? scalar(1) : (x[i] < 0 ? scalar(-1) : scalar(0)));
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta) {
    check_finite(a, "layer_norm");
    check_finite(gamma, "layer_norm");
    check_finite(beta, "layer_norm");
    if (a.rank() < 1) throw ShapeError("layer_norm: rank 0");
    const int64_t cols = a.dim(a.rank() - 1);
    if (gamma.numel() != cols || beta.numel() != cols)
        throw ShapeError("layer_norm: gamma/beta " + shape_str(gamma.shape()) + "/"
                         + shape_str(beta.shape()) + " vs cols " + std::to_string(cols));
    const int64_t rows = a.numel() / cols;
    Tensor out(a.shape());
    auto mean_save = std::make_shared<std::vector<scalar>>(static_cast<size_t>(rows));
    auto rstd_save = std::make_shared<std::vector<scalar>>(static_cast<size_t>(rows));
    kernels::layer_norm_forward(out.data(), mean_save->data(), rstd_save->data(), a.data(),
                                gamma.data(), beta.data(), rows, cols);
    if (tracing({&a, &gamma, &beta})) {
        out.set_requires_grad(true);
        Data ad = a.ptr(), gd = gamma.ptr(), bd = beta.ptr(), od = out.ptr();
        g_active_tape->record([ad, gd, bd, od, mean_save, rstd_save, rows, cols] {
            const scalar* g = out_grad(od);
            if (!g) return;
            std::vector<scalar> sx, sg, sb;
            scalar* dx = ad->requires_grad ? ensure_grad(ad) : nullptr;
            if (!dx) {
                sx.assign(ad->values.size(), scalar(0));
                dx = sx.data();
            }
            scalar* dgm = gd->requires_grad ? ensure_grad(gd) : nullptr;
            if (!dgm) {
                sg.assign(gd->values.size(), scalar(0));
                dgm = sg.data();
            }
            scalar* dbt = bd->requires_grad ? ensure_grad(bd) : nullptr;
            if (!dbt) {
                sb.assign(bd->values.size(), scalar(0));
                dbt = sb.data();
            }
            kernels::layer_norm_backward(dx, dgm, dbt, ad->values.data(), gd->values.data(),
                                         mean_save->data(), rstd_save->data(), g, rows, cols);
        });
    }
    return out;
}

// ---- lookup / sampling ---------------------------------------------------------------

Tensor embedding(const Tensor& table, const std::vector<int64_t>& idx) {
    check_finite(table, "embedding");
    if (table.rank() != 2) throw ShapeError("embedding: table " + shape_str(table.shape()));
    const int64_t v = table.dim(0), dim = table.dim(1);
    for (int64_t i : idx)
        if (i < 0 || i >= v)
            throw ShapeError("embedding: index " + std::to_string(i) + " out of vocabulary "
                             + std::to_string(v));
    const auto n = static_cast<int64_t>(idx.size());
    Tensor out({n, dim});
    kernels::embedding_forward(out.data(), table.data(), idx.data(), n, dim);
    if (tracing({&table})) {
        out.set_requires_grad(true);
        auto idx_copy = std::make_shared<std::vector<int64_t>>(idx);
        Data td = table.ptr(), od = out.ptr();
        g_active_tape->record([td, od, idx_copy, n, dim] {
            const scalar* g = out_grad(od);
            if (!g || !td->requires_grad) return;
            kernels::embedding_backward(ensure_grad(td), g, idx_copy->data(), n, dim);
        });
    }
    return out;
}

Tensor bilinear_sample(const Tensor& feat, const Tensor& coords) {
    check_finite(feat, "bilinear_sample");
    check_finite(coords, "bilinear_sample");
    if (feat.rank() != 3 || coords.rank() != 2 || coords.dim(1) != 2)
        throw ShapeError("bilinear_sample: feat " + shape_str(feat.shape()) + " coords "
                         + shape_str(coords.shape()));
    if (coords.requires_grad())
        throw ShapeError("bilinear_sample: gradients w.r.t. coordinates are not supported");
    const int64_t c = feat.dim(0), h = feat.dim(1), wd = feat.dim(2), p = coords.dim(0);
    Tensor out({p, c});
    kernels::bilinear_sample_forward(out.data(), feat.data(), coords.data(), c, h, wd, p);
    if (tracing({&feat})) {
        out.set_requires_grad(true);
        Data fd = feat.ptr(), cd = coords.ptr(), od = out.ptr();
        g_active_tape->record([fd, cd, od, c, h, wd, p] {
            const scalar* g = out_grad(od);
            if (!g || !fd->requires_grad) return;
            kernels::bilinear_sample_backward(ensure_grad(fd), g, cd->values.data(), c, h, wd, p);
        });
    }
    return out;
}

// ---- finite differences ---------------------------------------------------------------

GradCheckResult finite_diff_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                  const std::vector<Tensor>& inputs, double eps,
                                  double denom_eps) {
    std::vector<Tensor> work;
    work.reserve(inputs.size());
    for (const Tensor& t : inputs) {
        Tensor c = t.clone();
        work.push_back(c);
    }

    GradTape tape;
    {
        TapeScope scope(tape);
        Tensor loss = f(work);
        if (loss.numel() != 1) throw ShapeError("finite_diff_check: f must return one element");
        backward(loss, tape);
    }

    auto eval = [&]() -> double {
        Tensor v = f(work);  // no active tape: pure forward
        return double(v.item());
    };

    GradCheckResult res;
    for (Tensor& t : work) {
        if (!t.requires_grad()) continue;
        const scalar* g = t.grad();  // zeros if the input never saw gradient
        for (int64_t e = 0; e < t.numel(); e++) {
            const scalar orig = t.data()[e];
            t.data()[e] = orig + static_cast<scalar>(eps);
            const double fp = eval();
            t.data()[e] = orig - static_cast<scalar>(eps);
            const double fm = eval();
            t.data()[e] = orig;
            const double num = (fp - fm) / (2.0 * eps);
            const double ana = double(g[e]);
            const double abs_err = std::abs(ana - num);
            const double rel = abs_err / (std::abs(ana) + std::abs(num) + denom_eps);
            res.max_abs_err = std::max(res.max_abs_err, abs_err);
            res.max_rel_err = std::max(res.max_rel_err, rel);
            res.checked++;
        }
    }
    return res;
}

}  // namespace bevpred
