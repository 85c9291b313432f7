#pragma once

#include <array>
#include <vector>

#include "bevpred/tensor.hpp"

namespace bevpred {

// All geometry runs in double precision regardless of the tensor scalar type;
// projection round-trips are held to 1e-5 m.

struct Vec3 {
    double x = 0, y = 0, z = 0;
};

// Rigid transform: p_out = rotation * p_in + translation.
struct Pose {
    std::array<double, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major
    std::array<double, 3> translation{0, 0, 0};

    static Pose identity() { return Pose{}; }
    static Pose translate(double x, double y, double z);
    static Pose rot_z(double theta);       // yaw about +z
    static Pose rot_y(double theta);       // pitch about +y
    static Pose rot_x(double theta);       // roll about +x
};

Pose compose(const Pose& a, const Pose& b);  // a∘b: apply b first, then a
Pose inverse(const Pose& p);
Vec3 apply(const Pose& p, const Vec3& v);
// a⁻¹∘b: takes b-frame coordinates into a-frame
Pose relative_pose(const Pose& a, const Pose& b);
// true iff rotation is orthonormal with det +1 within tol
bool pose_valid(const Pose& p, double tol = 1e-6);

struct CameraIntrinsics {
    double fx = 0, fy = 0, cx = 0, cy = 0;
    int width = 0, height = 0;
};

// Camera frame: +z forward (optical axis), +x right, +y down.
// `extrinsic` is the camera's pose in the ego frame (camera -> ego).
struct Camera {
    Pose extrinsic;
    CameraIntrinsics intr;
};

using Rig = std::vector<Camera>;

struct BEVGridConfig {
    int H = 32, W = 32;
    double x_range = 16.0;  // half extents: cells cover [-x_range, x_range]
    double y_range = 16.0;
    std::vector<double> z_anchors{-1.0, 1.0 / 3.0, 5.0 / 3.0, 3.0};

    double dx() const { return 2.0 * x_range / W; }
    double dy() const { return 2.0 * y_range / H; }
    // center of cell (iy, ix); indices may be fractional
    double cell_x(double ix) const { return -x_range + (ix + 0.5) * dx(); }
    double cell_y(double iy) const { return -y_range + (iy + 0.5) * dy(); }
    // continuous cell coordinates of a metric point
    double ix_of(double x) const { return (x + x_range) / dx() - 0.5; }
    double iy_of(double y) const { return (y + y_range) / dy() - 0.5; }
};

constexpr double kDepthEps = 0.1;  // minimum camera-frame depth for a valid projection

// Cell centers lifted to every z anchor, in the grid's own (present-ego)
// frame. Ordering is fixed: anchor-major, then y rows, then x columns —
// index = (zi*H + iy)*W + ix.
Tensor build_bev_grid(const BEVGridConfig& cfg);

// Transforms present-ego points into the past frame's camera and applies the
// pinhole model. pixels [P,2] as (u,v); valid [P] is 1 where depth > z_eps
// and the pixel lands inside the image. Invalid entries hold sentinel (-1,-1).
void project_points(const Tensor& points, const Pose& ego_present, const Pose& ego_past,
                    const Pose& cam_extrinsic, const CameraIntrinsics& intr, Tensor& pixels,
                    Tensor& valid, double z_eps = kDepthEps);

// camera-frame point for pixel (u,v) at depth z
Vec3 unproject_pixel(const CameraIntrinsics& intr, double u, double v, double z);

// Precomputed projections of the (single, present-frame) BEV grid through
// every past frame's cameras: ego-motion compensation happens here, so
// attention layers only ever sample.
struct ReferenceSet {
    int t_in = 0, n_cam = 0, n_z = 0;
    int hw = 0;                  // points per (frame, camera, anchor) slice
    std::vector<Tensor> pixels;  // each [H*W, 2]
    std::vector<Tensor> valid;   // each [H*W]

    int index(int frame, int cam, int zi) const { return (frame * n_cam + cam) * n_z + zi; }
};

ReferenceSet build_reference_set(const BEVGridConfig& cfg, const Rig& rig,
                                 const std::vector<Pose>& ego_poses, double z_eps = kDepthEps);
// grid anchored at an explicit pose instead of the newest ego pose (used when the
// BEV frame is jittered for augmentation)
ReferenceSet build_reference_set(const BEVGridConfig& cfg, const Rig& rig,
                                 const std::vector<Pose>& ego_poses, const Pose& grid_pose,
                                 double z_eps = kDepthEps);

// Rigid remap of a BEV map: content moves by (rotation θ, translation tx,ty
// meters); each output cell bilinearly samples the source at the inverse
// transform, out-of-range reads 0.
Tensor warp_bev(const Tensor& map, double theta, double tx, double ty, const BEVGridConfig& cfg);

// Same transform with nearest-neighbor lookup on an integer label image
// (out-of-range reads `fill`).
std::vector<int> warp_bev_nearest(const std::vector<int>& labels, double theta, double tx,
                                  double ty, const BEVGridConfig& cfg, int fill = 0);

}  // namespace bevpred
