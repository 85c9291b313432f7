#include "bevpred/heads.hpp"

#include <cmath>

namespace bevpred {

Heads::Heads(ParamMap& pm, const std::string& name, const HeadsConfig& cfg, Rng& rng)
    : cfg_(cfg),
      p0_(pm, name + ".p0", cfg.c, cfg.c, 1, rng),
      p1_(pm, name + ".p1", cfg.c, 2 * cfg.c, 2, rng),
      p2_(pm, name + ".p2", 2 * cfg.c, 4 * cfg.c, 2, rng),
      pred0_(pm, name + ".pred0", cfg.t_in * cfg.c, cfg.t_out * cfg.c, 1, 1, 0, rng),
      pred1_(pm, name + ".pred1", cfg.t_in * 2 * cfg.c, cfg.t_out * 2 * cfg.c, 1, 1, 0, rng),
      pred2_(pm, name + ".pred2", cfg.t_in * 4 * cfg.c, cfg.t_out * 4 * cfg.c, 1, 1, 0, rng),
      lat0_(pm, name + ".lat0", cfg.c, cfg.c, 1, 1, 0, rng),
      lat1_(pm, name + ".lat1", 2 * cfg.c, cfg.c, 1, 1, 0, rng),
      lat2_(pm, name + ".lat2", 4 * cfg.c, cfg.c, 1, 1, 0, rng),
      fuse_(pm, name + ".fuse", cfg.c, cfg.c, 3, 1, 1, rng, true, std::sqrt(2.0)),
      seg_(pm, name + ".seg", cfg.c, 2, 1, 1, 0, rng),
      flow_(pm, name + ".flow", cfg.c, 2, 1, 1, 0, rng),
      center_(pm, name + ".center", cfg.c, 1, 1, 1, 0, rng),
      offset_(pm, name + ".offset", cfg.c, 2, 1, 1, 0, rng),
      aux1_(pm, name + ".aux1", cfg.c, 2, 1, 1, 0, rng),
      aux2_(pm, name + ".aux2", cfg.c, 2, 1, 1, 0, rng) {}

PredictionOutput Heads::forward(const Tensor& f_temporal, bool with_aux) const {
    if (f_temporal.rank() != 4 || f_temporal.dim(0) != cfg_.t_in || f_temporal.dim(1) != cfg_.c)
        throw ShapeError("heads expect [T_in,C,H,W], got " + shape_str(f_temporal.shape()));
    const int64_t h = f_temporal.dim(2), w = f_temporal.dim(3);
    if (h % 4 != 0 || w % 4 != 0) throw ShapeError("heads need H,W divisible by 4");

    Tensor s0 = p0_.forward(f_temporal);  // [T_in, C, H, W]
    Tensor s1 = p1_.forward(s0);          // [T_in, 2C, H/2, W/2]
    Tensor s2 = p2_.forward(s1);          // [T_in, 4C, H/4, W/4]

    // fold observed frames into channels, predict all future frames at once
    auto predict = [&](const Tensor& s, const Conv2dLayer& pred, int64_t cs) {
        Tensor packed = reshape(s, {1, cfg_.t_in * cs, s.dim(2), s.dim(3)});
        Tensor fut = pred.forward(packed);
        return reshape(fut, {cfg_.t_out, cs, s.dim(2), s.dim(3)});
    };
    Tensor f0 = predict(s0, pred0_, cfg_.c);
    Tensor f1 = predict(s1, pred1_, 2 * cfg_.c);
    Tensor f2 = predict(s2, pred2_, 4 * cfg_.c);

    // FPN-style top-down merge at the future frames
    Tensor m2 = lat2_.forward(f2);
    Tensor m1 = add(lat1_.forward(f1), upsample_nearest2d(m2, 2));
    Tensor m0 = add(lat0_.forward(f0), upsample_nearest2d(m1, 2));
    Tensor fused = gelu(fuse_.forward(m0));

    PredictionOutput out;
    out.seg_logits = seg_.forward(fused);
    out.flow = flow_.forward(fused);
    out.centerness = sigmoid(center_.forward(fused));
    out.offset = offset_.forward(fused);
    if (with_aux) {
        out.aux_seg.push_back(aux1_.forward(m1));
        out.aux_seg.push_back(aux2_.forward(m2));
    }
    return out;
}

}  // namespace bevpred
