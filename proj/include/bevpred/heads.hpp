#pragma once

#include "bevpred/layers.hpp"

namespace bevpred {

struct HeadsConfig {
    int64_t c = 32;      // input channel width
    int64_t t_in = 3;    // observed frames
    int64_t t_out = 6;   // output frames (t_pred + 2)
};

struct PredictionOutput {
    Tensor seg_logits;  // [T_out,2,H,W]
    Tensor flow;        // [T_out,2,H,W]  (dx, dy) toward the previous frame, cells
    Tensor centerness;  // [T_out,1,H,W]  sigmoid-activated
    Tensor offset;      // [T_out,2,H,W]  cell -> instance centre
    // auxiliary per-scale segmentation logits, coarse scales only; populated only
    // when requested for training
    std::vector<Tensor> aux_seg;  // { [T_out,2,H/2,W/2], [T_out,2,H/4,W/4] }
};

// Multi-scale future decoder: a 3-level pyramid over the temporal features, a
// per-scale reshaping predictor that maps T_in observed frames to T_out future
// frames, and an FPN-style top-down decoder with per-task 1x1 output heads.
class Heads {
public:
    Heads() = default;
    Heads(ParamMap& pm, const std::string& name, const HeadsConfig& cfg, Rng& rng);

    PredictionOutput forward(const Tensor& f_temporal, bool with_aux = false) const;

private:
    HeadsConfig cfg_;
    ConvBlock p0_, p1_, p2_;             // pyramid: C@1x, 2C@1/2x, 4C@1/4x
    Conv2dLayer pred0_, pred1_, pred2_;  // 1x1, T_in*Cs -> T_out*Cs
    Conv2dLayer lat0_, lat1_, lat2_;     // 1x1 laterals to C
    Conv2dLayer fuse_;                   // 3x3 after top-down merge
    Conv2dLayer seg_, flow_, center_, offset_;
    Conv2dLayer aux1_, aux2_;            // aux seg heads on the coarse scales
};

}  // namespace bevpred
