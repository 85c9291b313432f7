#include "bevpred/bev_encoder.hpp"

#include <cmath>

namespace bevpred {

// ---- BevEncoderLayer ----

BevEncoderLayer::BevEncoderLayer(ParamMap& pm, const std::string& name,
                                 const BevEncoderConfig& cfg, Rng& rng)
    : self_attn(pm, name + ".self", cfg.c_bev, cfg.heads, rng),
      cq(pm, name + ".cq", cfg.c_bev, cfg.c_bev, rng),
      ck(pm, name + ".ck", cfg.c_bev, cfg.c_bev, rng),
      cv(pm, name + ".cv", cfg.c_bev, cfg.c_bev, rng),
      co(pm, name + ".co", cfg.c_bev, cfg.c_bev, rng),
      f1(pm, name + ".f1", cfg.c_bev, cfg.c_bev * cfg.ffn_mult, rng),
      f2(pm, name + ".f2", cfg.c_bev * cfg.ffn_mult, cfg.c_bev, rng),
      ln1(pm, name + ".ln1", cfg.c_bev),
      ln2(pm, name + ".ln2", cfg.c_bev),
      ln3(pm, name + ".ln3", cfg.c_bev),
      heads(cfg.heads),
      dim(cfg.c_bev) {}

Tensor BevEncoderLayer::forward(const Tensor& x, const Tensor& sampled, const Tensor& valid01,
                                const Tensor& penalty, const Tensor& any_valid) const {
    const int64_t n = x.dim(0), s = sampled.dim(0), dh = dim / heads;

    // self-attention over the BEV tokens (post-norm residual)
    Tensor sa = reshape(self_attn.forward(reshape(x, {1, n, dim})), {n, dim});
    Tensor h1 = ln1.forward(add(x, sa));

    // cross-attention: each token attends over its own S sampled camera features
    Tensor q = cq.forward(h1);        // [N,D]
    Tensor k = ck.forward(sampled);   // [S,N,D]
    Tensor v = cv.forward(sampled);   // [S,N,D]

    Tensor qe = expand(reshape(q, {1, n, dim}), {s, n, dim});
    Tensor scores = sum_axis(reshape(mul(qe, k), {s, n, heads, dh}), 3);  // [S,N,heads]
    scores = scale(scores, static_cast<scalar>(1.0 / std::sqrt(static_cast<double>(dh))));
    scores = add(scores, expand(reshape(penalty, {s, n, 1}), {s, n, heads}));

    Tensor w = softmax(permute(scores, {1, 2, 0}));  // [N,heads,S]
    // invalid references get exactly zero weight even after the softmax floor
    w = mul(w, expand(reshape(permute(valid01, {1, 0}), {n, 1, s}), {n, heads, s}));

    Tensor wfull = reshape(expand(reshape(permute(w, {2, 0, 1}), {s, n, heads, 1}),
                                  {s, n, heads, dh}),
                           {s, n, dim});
    Tensor ctx = sum_axis(mul(wfull, v), 0);  // [N,D]
    ctx = mul(ctx, expand(reshape(any_valid, {n, 1}), {n, dim}));
    Tensor h2 = ln2.forward(add(h1, co.forward(ctx)));

    Tensor ff = f2.forward(gelu(f1.forward(h2)));
    return ln3.forward(add(h2, ff));
}

// ---- SparseUnet ----

SparseUnet::SparseUnet(ParamMap& pm, const std::string& name, int64_t c, Rng& rng)
    : e0(pm, name + ".e0", c, c, 1, rng),
      e1(pm, name + ".e1", c, 2 * c, 1, rng),
      e2(pm, name + ".e2", 2 * c, 4 * c, 1, rng),
      up1(pm, name + ".up1", 4 * c, 2 * c, 2, 2, 0, rng),
      up0(pm, name + ".up0", 2 * c, c, 2, 2, 0, rng),
      d1(pm, name + ".d1", 4 * c, 2 * c, 1, rng),
      d0(pm, name + ".d0", 2 * c, c, 1, rng) {}

Tensor SparseUnet::forward(const Tensor& x) const {
    if (x.rank() != 4 || x.dim(2) % 4 != 0 || x.dim(3) % 4 != 0)
        throw ShapeError("unet expects [T,C,H,W] with H,W divisible by 4");
    Tensor a0 = e0.forward(x);
    Tensor a1 = e1.forward(maxpool2d(a0, 2, 2));
    Tensor a2 = e2.forward(maxpool2d(a1, 2, 2));
    Tensor b1 = d1.forward(concat({up1.forward(a2), a1}, 1));
    return d0.forward(concat({up0.forward(b1), a0}, 1));
}

// ---- BevEncoder ----

BevEncoder::BevEncoder(ParamMap& pm, const std::string& name, const BevEncoderConfig& cfg,
                       int64_t bev_h, int64_t bev_w, Rng& rng)
    : cfg_(cfg), h_(bev_h), w_(bev_w) {
    queries_ = pm.add(name + ".queries",
                      Tensor::randn({bev_h * bev_w, cfg.c_bev}, rng, 0.02f, true));
    layers_.reserve(static_cast<size_t>(cfg.n_layers));
    for (int64_t i = 0; i < cfg.n_layers; i++)
        layers_.emplace_back(pm, name + ".layer" + std::to_string(i), cfg, rng);
    unet_ = SparseUnet(pm, name + ".unet", cfg.c_bev, rng);
}

Tensor BevEncoder::encode(const Tensor& fused, const ReferenceSet& refs) const {
    const int64_t n = h_ * w_;
    if (refs.hw != n) throw ShapeError("reference set does not match the BEV grid");
    if (fused.rank() != 4 ||
        fused.dim(0) != static_cast<int64_t>(refs.t_in) * refs.n_cam)
        throw ShapeError("bev encoder expects [T_in*N_cam,Cf,Hf,Wf] fused features");
    const int64_t s = static_cast<int64_t>(refs.n_cam) * refs.n_z;
    const int64_t cf = fused.dim(1);
    const double inv_stride = 1.0 / static_cast<double>(cfg_.feat_stride);

    std::vector<Tensor> frame_maps;
    frame_maps.reserve(static_cast<size_t>(refs.t_in));
    for (int f = 0; f < refs.t_in; f++) {
        // gather per-slice samples plus masks
        std::vector<Tensor> slices;
        slices.reserve(static_cast<size_t>(s));
        Tensor valid01({s, n}), penalty({s, n}), any_valid({n});
        std::fill_n(any_valid.data(), n, scalar(0));
        for (int c = 0; c < refs.n_cam; c++) {
            Tensor feat = reshape(slice(fused, 0, f * refs.n_cam + c, 1),
                                  {cf, fused.dim(2), fused.dim(3)});
            for (int zi = 0; zi < refs.n_z; zi++) {
                const int si = c * refs.n_z + zi;
                const Tensor& px = refs.pixels[static_cast<size_t>(refs.index(f, c, zi))];
                const Tensor& vd = refs.valid[static_cast<size_t>(refs.index(f, c, zi))];
                Tensor coords({n, 2});
                for (int64_t i = 0; i < n; i++) {
                    // image pixel centre (u) -> feature-map index space
                    coords.data()[2 * i] =
                        static_cast<scalar>(px.data()[2 * i] * inv_stride - 0.5);
                    coords.data()[2 * i + 1] =
                        static_cast<scalar>(px.data()[2 * i + 1] * inv_stride - 0.5);
                }
                for (int64_t i = 0; i < n; i++) {
                    const bool ok = vd.data()[i] > scalar(0.5);
                    valid01.data()[si * n + i] = ok ? scalar(1) : scalar(0);
                    penalty.data()[si * n + i] = ok ? scalar(0) : scalar(-1e9);
                    if (ok) any_valid.data()[i] = scalar(1);
                }
                slices.push_back(reshape(bilinear_sample(feat, coords), {1, n, cf}));
            }
        }
        Tensor sampled = concat(slices, 0);  // [S,N,Cf]

        Tensor x = queries_;  // shared across frames
        for (const auto& layer : layers_) x = layer.forward(x, sampled, valid01, penalty, any_valid);

        // token i = iy*W+ix -> BEV map cell (iy, ix)
        Tensor map = permute(reshape(x, {h_, w_, cfg_.c_bev}), {2, 0, 1});
        frame_maps.push_back(reshape(map, {1, cfg_.c_bev, h_, w_}));
    }
    return concat(frame_maps, 0);
}

Tensor BevEncoder::forward(const Tensor& fused, const ReferenceSet& refs) const {
    return unet_.forward(encode(fused, refs));
}

}  // namespace bevpred
