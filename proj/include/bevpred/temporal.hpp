#pragma once

#include "bevpred/layers.hpp"

namespace bevpred {

struct TemporalConfig {
    std::string pattern = "TST";  // "none", "TS", "TST" or "TSST"
    int64_t n_blocks = 2;         // pattern repetitions
    int64_t patch = 4;
    int64_t heads = 4;
    int64_t ff_mult = 2;       // GLU hidden width multiplier
    int64_t diff_kernel = 3;   // difference-weighting conv kernel
    int64_t diff_stride = 2;   // difference-weighting conv stride (with matching upsample)
};

// Frame-difference enhancement: each frame gains a gated, conv-transformed copy of
// its difference to the previous frame. Identical consecutive frames pass through
// untouched; the first frame always does.
struct DifferenceModule {
    Conv2dLayer wconv;  // 1 -> 1, no bias; produces the sigmoid gate
    Conv2dLayer bconv;  // C -> C, no bias; produces the injected features
    int64_t stride = 2;

    DifferenceModule() = default;
    DifferenceModule(ParamMap& pm, const std::string& name, int64_t c, const TemporalConfig& cfg,
                     Rng& rng);
    Tensor forward(const Tensor& f) const;  // [T,C,H,W] -> [T,C,H,W]
};

// Non-overlapping p x p patches -> linear projection + fixed sinusoidal position
// encoding (added once, before the first attention layer).
struct PatchEmbed {
    Linear proj;
    Tensor pos;  // [N_p, D], constant
    int64_t patch = 4, c = 0, d = 0;

    PatchEmbed() = default;
    PatchEmbed(ParamMap& pm, const std::string& name, int64_t c_, int64_t d_, int64_t patch_,
               int64_t hp, int64_t wp, Rng& rng);
    Tensor forward(const Tensor& f) const;  // [T,C,H,W] -> [T,N_p,D]
};

struct Unpatch {
    Linear proj;
    int64_t patch = 4, c = 0;

    Unpatch() = default;
    Unpatch(ParamMap& pm, const std::string& name, int64_t d, int64_t c_, int64_t patch_,
            Rng& rng);
    Tensor forward(const Tensor& tokens, int64_t hp, int64_t wp) const;  // -> [T,C,H,W]
};

// Pre-norm attention + GLU feed-forward along one axis of the [T, N_p, D] token
// grid: 'T' attends across time per patch, 'S' across patches per frame.
struct GatedAttentionLayer {
    char axis = 'S';
    TokenLayerNorm ln1, ln2;
    MultiHeadSelfAttention attn;
    GluFeedForward ff;

    GatedAttentionLayer() = default;
    GatedAttentionLayer(ParamMap& pm, const std::string& name, char axis_, int64_t dim,
                        const TemporalConfig& cfg, Rng& rng);
    Tensor forward(const Tensor& tokens) const;
};

// Full temporal encoder: difference enhancement feeds a stack of divided
// space-time attention layers arranged by `pattern`, repeated n_blocks times.
// Pattern "none" keeps the difference features and skips the attention stack.
class TemporalEncoder {
public:
    TemporalEncoder() = default;
    TemporalEncoder(ParamMap& pm, const std::string& name, int64_t c, int64_t bev_h,
                    int64_t bev_w, const TemporalConfig& cfg, Rng& rng);

    Tensor difference(const Tensor& f) const { return diff_.forward(f); }
    Tensor encode(const Tensor& f_diff) const;  // attention stack only
    Tensor forward(const Tensor& f) const { return encode(diff_.forward(f)); }

    // axis sequence implied by (pattern, n_blocks); throws on unknown patterns
    static std::vector<char> layer_plan(const std::string& pattern, int64_t n_blocks);
    const TemporalConfig& config() const { return cfg_; }

private:
    TemporalConfig cfg_;
    int64_t hp_ = 0, wp_ = 0, dim_ = 0;
    DifferenceModule diff_;
    PatchEmbed embed_;
    std::vector<GatedAttentionLayer> layers_;
    Unpatch unpatch_;
};

}  // namespace bevpred
