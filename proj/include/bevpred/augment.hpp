#pragma once

#include "bevpred/scene.hpp"

namespace bevpred {

struct AugmentConfig {
    double zoom_min = 0.9, zoom_max = 1.1;  // image zoom about the centre
    double rot_max_deg = 5.0;               // image roll, compensated in the extrinsics
    double bev_rot_max_deg = 10.0;          // rigid BEV-frame jitter
    double bev_trans_max = 2.0;             // metres, per axis
};

// Consistent train-time augmentation: one zoom+roll applied to every camera
// image (with intrinsics scaled and extrinsics roll-compensated so projections
// still line up), plus one rigid BEV transform applied coherently to all ground
// truth maps. The sample keeps its ego poses; the jittered BEV anchor is stored
// in grid_pose. Drawing the identity transform reproduces the input exactly.
SequenceSample augment_sample(const SequenceSample& s, Rng& rng,
                              const AugmentConfig& cfg = {});

// Exposed for tests: zoom+roll image warp about the centre (bilinear, zero pad).
Tensor warp_image(const Tensor& chw, double zoom, double roll);

}  // namespace bevpred
