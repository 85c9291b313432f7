#pragma once

#include "bevpred/geometry.hpp"
#include "bevpred/layers.hpp"

namespace bevpred {

struct BevEncoderConfig {
    int64_t c_bev = 32;    // BEV embedding width (equals fused image feature width)
    int64_t n_layers = 2;  // encoder layers, unshared weights
    int64_t heads = 4;
    int64_t ffn_mult = 4;
    int64_t feat_stride = 8;  // image-to-feature downsampling of the fused map
};

// One post-norm encoder layer: self-attention over BEV tokens, deformable-style
// cross-attention into the camera features at projected reference pixels, FFN.
struct BevEncoderLayer {
    MultiHeadSelfAttention self_attn;
    Linear cq, ck, cv, co;  // cross-attention projections
    Linear f1, f2;          // FFN
    TokenLayerNorm ln1, ln2, ln3;
    int64_t heads = 1, dim = 0;

    BevEncoderLayer() = default;
    BevEncoderLayer(ParamMap& pm, const std::string& name, const BevEncoderConfig& cfg, Rng& rng);

    // x [N,D] BEV tokens for one frame; sampled [S,N,Cf] per-slice camera features;
    // valid01/penalty [S,N] masks (constant tensors).
    Tensor forward(const Tensor& x, const Tensor& sampled, const Tensor& valid01,
                   const Tensor& penalty, const Tensor& any_valid) const;
};

// Small encoder-decoder refiner over the per-frame BEV maps, with skip
// concatenation. Input/output: [T, C, H, W], H and W divisible by 4.
struct SparseUnet {
    ConvBlock e0, e1, e2;
    ConvTranspose2dLayer up1, up0;
    ConvBlock d1, d0;

    SparseUnet() = default;
    SparseUnet(ParamMap& pm, const std::string& name, int64_t c, Rng& rng);
    Tensor forward(const Tensor& x) const;
};

// Learned BEV queries attended against multi-camera features, one pass per input
// frame (queries shared across frames), followed by the UNet refiner.
class BevEncoder {
public:
    BevEncoder() = default;
    BevEncoder(ParamMap& pm, const std::string& name, const BevEncoderConfig& cfg, int64_t bev_h,
               int64_t bev_w, Rng& rng);

    // fused camera features [T_in*N_cam, Cf, Hf, Wf] plus projected reference pixels.
    // Returns raw per-frame BEV maps [T_in, C, H, W] (before the UNet).
    Tensor encode(const Tensor& fused, const ReferenceSet& refs) const;
    // encode + UNet refinement
    Tensor forward(const Tensor& fused, const ReferenceSet& refs) const;

    const Tensor& queries() const { return queries_; }
    const BevEncoderConfig& config() const { return cfg_; }

private:
    BevEncoderConfig cfg_;
    int64_t h_ = 0, w_ = 0;
    Tensor queries_;  // [H*W, C]
    std::vector<BevEncoderLayer> layers_;
    SparseUnet unet_;
};

}  // namespace bevpred
