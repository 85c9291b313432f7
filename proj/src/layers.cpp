#include "bevpred/layers.hpp"

#include <cmath>

namespace bevpred {

Tensor init_normal(Rng& rng, std::vector<int64_t> shape, double fan_in, double gain) {
    double std = gain / std::sqrt(fan_in > 0 ? fan_in : 1.0);
    return Tensor::randn(std::move(shape), rng, static_cast<scalar>(std), true);
}

// ---- Linear ----

Linear::Linear(ParamMap& pm, const std::string& name, int64_t in_dim, int64_t out_dim, Rng& rng,
               bool bias, double gain)
    : in(in_dim), out(out_dim) {
    w = pm.add(name + ".w", init_normal(rng, {in_dim, out_dim}, static_cast<double>(in_dim), gain));
    if (bias) b = pm.add(name + ".b", Tensor::zeros({out_dim}, true));
}

Tensor Linear::forward(const Tensor& x) const {
    int64_t rows = x.numel() / in;
    Tensor flat = reshape(x, {rows, in});
    Tensor y = matmul(flat, w);
    if (b.defined()) {
        Tensor bb = expand(reshape(b, {1, out}), {rows, out});
        y = add(y, bb);
    }
    std::vector<int64_t> out_shape(x.shape().begin(), x.shape().end());
    out_shape.back() = out;
    return reshape(y, std::move(out_shape));
}

// ---- Conv2dLayer ----

Conv2dLayer::Conv2dLayer(ParamMap& pm, const std::string& name, int64_t in_ch, int64_t out_ch,
                         int64_t k, int64_t stride_, int64_t pad_, Rng& rng, bool bias,
                         double gain)
    : stride(stride_), pad(pad_) {
    double fan_in = static_cast<double>(in_ch * k * k);
    w = pm.add(name + ".w", init_normal(rng, {out_ch, in_ch, k, k}, fan_in, gain));
    if (bias) b = pm.add(name + ".b", Tensor::zeros({out_ch}, true));
}

Tensor Conv2dLayer::forward(const Tensor& x) const { return conv2d(x, w, b, stride, pad); }

// ---- ConvTranspose2dLayer ----

ConvTranspose2dLayer::ConvTranspose2dLayer(ParamMap& pm, const std::string& name, int64_t in_ch,
                                           int64_t out_ch, int64_t k, int64_t stride_,
                                           int64_t pad_, Rng& rng, bool bias)
    : stride(stride_), pad(pad_) {
    double fan_in = static_cast<double>(in_ch * k * k);
    w = pm.add(name + ".w", init_normal(rng, {in_ch, out_ch, k, k}, fan_in));
    if (bias) b = pm.add(name + ".b", Tensor::zeros({out_ch}, true));
}

Tensor ConvTranspose2dLayer::forward(const Tensor& x) const {
    return conv_transpose2d(x, w, b, stride, pad);
}

// ---- ChannelLayerNorm ----

ChannelLayerNorm::ChannelLayerNorm(ParamMap& pm, const std::string& name, int64_t channels) {
    gamma = pm.add(name + ".gamma", Tensor::full({channels}, 1, true));
    beta = pm.add(name + ".beta", Tensor::zeros({channels}, true));
}

Tensor ChannelLayerNorm::forward(const Tensor& x) const {
    if (x.rank() != 4) throw ShapeError("ChannelLayerNorm expects NCHW");
    Tensor t = permute(x, {0, 2, 3, 1});
    t = layer_norm(t, gamma, beta);
    return permute(t, {0, 3, 1, 2});
}

// ---- TokenLayerNorm ----

TokenLayerNorm::TokenLayerNorm(ParamMap& pm, const std::string& name, int64_t dim) {
    gamma = pm.add(name + ".gamma", Tensor::full({dim}, 1, true));
    beta = pm.add(name + ".beta", Tensor::zeros({dim}, true));
}

Tensor TokenLayerNorm::forward(const Tensor& x) const { return layer_norm(x, gamma, beta); }

// ---- ConvBlock ----

ConvBlock::ConvBlock(ParamMap& pm, const std::string& name, int64_t in_ch, int64_t out_ch,
                     int64_t stride, Rng& rng)
    : conv(pm, name + ".conv", in_ch, out_ch, 3, stride, 1, rng, true, std::sqrt(2.0)),
      norm(pm, name + ".norm", out_ch) {}

Tensor ConvBlock::forward(const Tensor& x) const { return gelu(norm.forward(conv.forward(x))); }

// ---- MultiHeadSelfAttention ----

MultiHeadSelfAttention::MultiHeadSelfAttention(ParamMap& pm, const std::string& name, int64_t dim_,
                                               int64_t heads_, Rng& rng)
    : heads(heads_), dim(dim_) {
    if (dim_ % heads_ != 0) throw ShapeError("attention dim must be divisible by heads");
    wq = Linear(pm, name + ".wq", dim_, dim_, rng);
    wk = Linear(pm, name + ".wk", dim_, dim_, rng);
    wv = Linear(pm, name + ".wv", dim_, dim_, rng);
    wo = Linear(pm, name + ".wo", dim_, dim_, rng);
}

Tensor MultiHeadSelfAttention::forward(const Tensor& x) const {
    if (x.rank() != 3 || x.dim(2) != dim) throw ShapeError("mhsa expects [B,T,D]");
    int64_t bsz = x.dim(0), t = x.dim(1), dh = dim / heads;

    auto split = [&](const Tensor& y) {
        // [B,T,D] -> [B*heads, T, dh]
        Tensor r = reshape(y, {bsz, t, heads, dh});
        r = permute(r, {0, 2, 1, 3});
        return reshape(r, {bsz * heads, t, dh});
    };
    Tensor q = split(wq.forward(x));
    Tensor k = split(wk.forward(x));
    Tensor v = split(wv.forward(x));

    Tensor scores = bmm(q, permute(k, {0, 2, 1}));
    scores = scale(scores, static_cast<scalar>(1.0 / std::sqrt(static_cast<double>(dh))));
    Tensor attn = softmax(scores);
    Tensor ctx = bmm(attn, v);  // [B*heads, T, dh]

    ctx = reshape(ctx, {bsz, heads, t, dh});
    ctx = permute(ctx, {0, 2, 1, 3});
    ctx = reshape(ctx, {bsz, t, dim});
    return wo.forward(ctx);
}

// ---- GluFeedForward ----

GluFeedForward::GluFeedForward(ParamMap& pm, const std::string& name, int64_t dim, int64_t hidden,
                               Rng& rng)
    : wa(pm, name + ".wa", dim, hidden, rng),
      wb(pm, name + ".wb", dim, hidden, rng),
      wc(pm, name + ".wc", hidden, dim, rng) {}

Tensor GluFeedForward::forward(const Tensor& x) const {
    return wc.forward(mul(wa.forward(x), sigmoid(wb.forward(x))));
}

}  // namespace bevpred
