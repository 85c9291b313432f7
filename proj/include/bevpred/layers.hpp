#pragma once

#include <string>

#include "bevpred/checkpoint.hpp"
#include "bevpred/tensor.hpp"

namespace bevpred {

// ---- parameter initializers ----

// fan-in scaled normal, std = gain / sqrt(fan_in)
Tensor init_normal(Rng& rng, std::vector<int64_t> shape, double fan_in, double gain = 1.0);

// ---- linear ----

// y = x @ w + b over the last axis; x may have any rank >= 1.
struct Linear {
    Tensor w;  // [in, out]
    Tensor b;  // [out] or undefined when bias=false
    int64_t in = 0, out = 0;

    Linear() = default;
    Linear(ParamMap& pm, const std::string& name, int64_t in_dim, int64_t out_dim, Rng& rng,
           bool bias = true, double gain = 1.0);
    Tensor forward(const Tensor& x) const;
};

// ---- conv ----

struct Conv2dLayer {
    Tensor w;  // [out, in, k, k]
    Tensor b;  // [out] or undefined
    int64_t stride = 1, pad = 0;

    Conv2dLayer() = default;
    Conv2dLayer(ParamMap& pm, const std::string& name, int64_t in_ch, int64_t out_ch, int64_t k,
                int64_t stride, int64_t pad, Rng& rng, bool bias = true, double gain = 1.0);
    Tensor forward(const Tensor& x) const;
};

struct ConvTranspose2dLayer {
    Tensor w;  // [in, out, k, k]
    Tensor b;
    int64_t stride = 1, pad = 0;

    ConvTranspose2dLayer() = default;
    ConvTranspose2dLayer(ParamMap& pm, const std::string& name, int64_t in_ch, int64_t out_ch,
                         int64_t k, int64_t stride, int64_t pad, Rng& rng, bool bias = true);
    Tensor forward(const Tensor& x) const;
};

// ---- normalization ----

// LayerNorm over the channel axis of an NCHW tensor (permute -> normalize -> permute back).
struct ChannelLayerNorm {
    Tensor gamma;  // [C]
    Tensor beta;   // [C]

    ChannelLayerNorm() = default;
    ChannelLayerNorm(ParamMap& pm, const std::string& name, int64_t channels);
    Tensor forward(const Tensor& x) const;  // [N,C,H,W]
};

// LayerNorm over the last axis of a token tensor.
struct TokenLayerNorm {
    Tensor gamma;
    Tensor beta;

    TokenLayerNorm() = default;
    TokenLayerNorm(ParamMap& pm, const std::string& name, int64_t dim);
    Tensor forward(const Tensor& x) const;
};

// ---- composite blocks ----

// conv3x3 -> channel LayerNorm -> gelu. Zero input with zero-init biases maps to zero output.
struct ConvBlock {
    Conv2dLayer conv;
    ChannelLayerNorm norm;

    ConvBlock() = default;
    ConvBlock(ParamMap& pm, const std::string& name, int64_t in_ch, int64_t out_ch,
              int64_t stride, Rng& rng);
    Tensor forward(const Tensor& x) const;
};

// Multi-head self-attention over the middle axis of [B, T, D].
struct MultiHeadSelfAttention {
    Linear wq, wk, wv, wo;
    int64_t heads = 1, dim = 0;

    MultiHeadSelfAttention() = default;
    MultiHeadSelfAttention(ParamMap& pm, const std::string& name, int64_t dim_, int64_t heads_,
                           Rng& rng);
    Tensor forward(const Tensor& x) const;  // [B,T,D] -> [B,T,D]
};

// Gated linear unit feed-forward: (x Wa) * sigmoid(x Wb) -> Wc.
struct GluFeedForward {
    Linear wa, wb, wc;

    GluFeedForward() = default;
    GluFeedForward(ParamMap& pm, const std::string& name, int64_t dim, int64_t hidden, Rng& rng);
    Tensor forward(const Tensor& x) const;
};

}  // namespace bevpred
