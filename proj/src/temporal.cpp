#include "bevpred/temporal.hpp"

#include <cmath>

namespace bevpred {

// ---- DifferenceModule ----

DifferenceModule::DifferenceModule(ParamMap& pm, const std::string& name, int64_t c,
                                   const TemporalConfig& cfg, Rng& rng)
    : wconv(pm, name + ".wconv", 1, 1, cfg.diff_kernel, cfg.diff_stride, cfg.diff_kernel / 2, rng,
            /*bias=*/false),
      bconv(pm, name + ".bconv", c, c, cfg.diff_kernel, cfg.diff_stride, cfg.diff_kernel / 2, rng,
            /*bias=*/false),
      stride(cfg.diff_stride) {}

Tensor DifferenceModule::forward(const Tensor& f) const {
    if (f.rank() != 4) throw ShapeError("difference module expects [T,C,H,W]");
    const int64_t t = f.dim(0), c = f.dim(1), h = f.dim(2), w = f.dim(3);
    if (stride > 1 && (h % stride != 0 || w % stride != 0))
        throw ShapeError("difference module needs H,W divisible by its stride");

    std::vector<Tensor> out;
    out.reserve(static_cast<size_t>(t));
    out.push_back(slice(f, 0, 0, 1));  // d_0 = 0, so frame 0 passes through exactly
    for (int64_t i = 1; i < t; i++) {
        Tensor cur = slice(f, 0, i, 1);
        Tensor d = sub(cur, slice(f, 0, i - 1, 1));                 // [1,C,H,W]
        Tensor mag = reshape(mean_axis(abs(d), 1), {1, 1, h, w});   // channel-mean |d|
        Tensor gate = sigmoid(wconv.forward(mag));                  // [1,1,h/s,w/s]
        Tensor bias = bconv.forward(d);                             // [1,C,h/s,w/s]
        Tensor inj = mul(expand(gate, {1, c, h / stride, w / stride}), bias);
        if (stride > 1) inj = upsample_nearest2d(inj, stride);
        out.push_back(add(cur, inj));
    }
    return concat(out, 0);
}

// ---- PatchEmbed / Unpatch ----

namespace {
// classic sinusoidal encoding over the flat patch index; injective for n < 10^4
Tensor sinusoidal_pos(int64_t n, int64_t d) {
    Tensor pe({n, d});
    for (int64_t p = 0; p < n; p++) {
        for (int64_t i = 0; i < d; i += 2) {
            const double omega = std::pow(10000.0, -static_cast<double>(i) / d);
            pe.data()[p * d + i] = static_cast<scalar>(std::sin(p * omega));
            if (i + 1 < d) pe.data()[p * d + i + 1] = static_cast<scalar>(std::cos(p * omega));
        }
    }
    return pe;
}
}  // namespace

PatchEmbed::PatchEmbed(ParamMap& pm, const std::string& name, int64_t c_, int64_t d_,
                       int64_t patch_, int64_t hp, int64_t wp, Rng& rng)
    : proj(pm, name + ".proj", c_ * patch_ * patch_, d_, rng), patch(patch_), c(c_), d(d_) {
    pos = sinusoidal_pos(hp * wp, d_);
}

Tensor PatchEmbed::forward(const Tensor& f) const {
    const int64_t t = f.dim(0), h = f.dim(2), w = f.dim(3);
    if (f.dim(1) != c || h % patch != 0 || w % patch != 0)
        throw ShapeError("patch embed expects [T,C,H,W] with H,W divisible by the patch size");
    const int64_t hp = h / patch, wp = w / patch, np = hp * wp;
    Tensor x = reshape(f, {t, c, hp, patch, wp, patch});
    x = permute(x, {0, 2, 4, 1, 3, 5});              // [T,Hp,Wp,C,p,p]
    x = reshape(x, {t, np, c * patch * patch});
    Tensor tokens = proj.forward(x);                 // [T,Np,D]
    return add(tokens, expand(reshape(pos, {1, np, d}), {t, np, d}));
}

Unpatch::Unpatch(ParamMap& pm, const std::string& name, int64_t d, int64_t c_, int64_t patch_,
                 Rng& rng)
    : proj(pm, name + ".proj", d, c_ * patch_ * patch_, rng), patch(patch_), c(c_) {}

Tensor Unpatch::forward(const Tensor& tokens, int64_t hp, int64_t wp) const {
    const int64_t t = tokens.dim(0);
    Tensor x = proj.forward(tokens);                 // [T,Np,C*p*p]
    x = reshape(x, {t, hp, wp, c, patch, patch});
    x = permute(x, {0, 3, 1, 4, 2, 5});              // [T,C,Hp,p,Wp,p]
    return reshape(x, {t, c, hp * patch, wp * patch});
}

// ---- GatedAttentionLayer ----

GatedAttentionLayer::GatedAttentionLayer(ParamMap& pm, const std::string& name, char axis_,
                                         int64_t dim, const TemporalConfig& cfg, Rng& rng)
    : axis(axis_),
      ln1(pm, name + ".ln1", dim),
      ln2(pm, name + ".ln2", dim),
      attn(pm, name + ".attn", dim, cfg.heads, rng),
      ff(pm, name + ".ff", dim, dim * cfg.ff_mult, rng) {}

Tensor GatedAttentionLayer::forward(const Tensor& tokens) const {
    // 'S': batch = frames, sequence = patches. 'T': batch = patches, sequence = frames.
    Tensor x = axis == 'T' ? permute(tokens, {1, 0, 2}) : tokens;
    x = add(x, attn.forward(ln1.forward(x)));
    x = add(x, ff.forward(ln2.forward(x)));
    return axis == 'T' ? permute(x, {1, 0, 2}) : x;
}

// ---- TemporalEncoder ----

std::vector<char> TemporalEncoder::layer_plan(const std::string& pattern, int64_t n_blocks) {
    if (pattern == "none") return {};
    if (pattern != "TS" && pattern != "TST" && pattern != "TSST")
        throw ShapeError("unknown temporal pattern: " + pattern);
    std::vector<char> plan;
    for (int64_t b = 0; b < n_blocks; b++)
        for (char a : pattern) plan.push_back(a);
    return plan;
}

TemporalEncoder::TemporalEncoder(ParamMap& pm, const std::string& name, int64_t c, int64_t bev_h,
                                 int64_t bev_w, const TemporalConfig& cfg, Rng& rng)
    : cfg_(cfg), dim_(2 * c), diff_(pm, name + ".diff", c, cfg, rng) {
    if (bev_h % cfg.patch != 0 || bev_w % cfg.patch != 0)
        throw ShapeError("BEV grid must be divisible by the patch size");
    hp_ = bev_h / cfg.patch;
    wp_ = bev_w / cfg.patch;
    const auto plan = layer_plan(cfg.pattern, cfg.n_blocks);
    if (!plan.empty()) {
        embed_ = PatchEmbed(pm, name + ".embed", c, dim_, cfg.patch, hp_, wp_, rng);
        layers_.reserve(plan.size());
        for (size_t i = 0; i < plan.size(); i++)
            layers_.emplace_back(pm, name + ".l" + std::to_string(i) + plan[i], plan[i], dim_,
                                 cfg, rng);
        unpatch_ = Unpatch(pm, name + ".unpatch", dim_, c, cfg.patch, rng);
    }
}

Tensor TemporalEncoder::encode(const Tensor& f_diff) const {
    if (layers_.empty()) return f_diff;  // "none": difference features pass straight through
    Tensor tokens = embed_.forward(f_diff);
    for (const auto& layer : layers_) tokens = layer.forward(tokens);
    return unpatch_.forward(tokens, hp_, wp_);
}

}  // namespace bevpred
