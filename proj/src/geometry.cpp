#include "bevpred/geometry.hpp"

#include <cmath>

namespace bevpred {

Pose Pose::translate(double x, double y, double z) {
    Pose p;
    p.translation = {x, y, z};
    return p;
}

Pose Pose::rot_z(double t) {
    Pose p;
    const double c = std::cos(t), s = std::sin(t);
    p.rotation = {c, -s, 0, s, c, 0, 0, 0, 1};
    return p;
}

Pose Pose::rot_y(double t) {
    Pose p;
    const double c = std::cos(t), s = std::sin(t);
    p.rotation = {c, 0, s, 0, 1, 0, -s, 0, c};
    return p;
}

Pose Pose::rot_x(double t) {
    Pose p;
    const double c = std::cos(t), s = std::sin(t);
    p.rotation = {1, 0, 0, 0, c, -s, 0, s, c};
    return p;
}

Pose compose(const Pose& a, const Pose& b) {
    Pose r;
    for (int i = 0; i < 3; i++) {
        for (int j = 0; j < 3; j++) {
            double acc = 0;
            for (int k = 0; k < 3; k++) acc += a.rotation[i * 3 + k] * b.rotation[k * 3 + j];
            r.rotation[i * 3 + j] = acc;
        }
        r.translation[i] = a.translation[i];
        for (int k = 0; k < 3; k++) r.translation[i] += a.rotation[i * 3 + k] * b.translation[k];
    }
    return r;
}

Pose inverse(const Pose& p) {
    Pose r;
    for (int i = 0; i < 3; i++)
        for (int j = 0; j < 3; j++) r.rotation[i * 3 + j] = p.rotation[j * 3 + i];
    for (int i = 0; i < 3; i++) {
        double acc = 0;
        for (int k = 0; k < 3; k++) acc += r.rotation[i * 3 + k] * p.translation[k];
        r.translation[i] = -acc;
    }
    return r;
}

Vec3 apply(const Pose& p, const Vec3& v) {
    const auto& m = p.rotation;
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z + p.translation[0],
            m[3] * v.x + m[4] * v.y + m[5] * v.z + p.translation[1],
            m[6] * v.x + m[7] * v.y + m[8] * v.z + p.translation[2]};
}

Pose relative_pose(const Pose& a, const Pose& b) { return compose(inverse(a), b); }

bool pose_valid(const Pose& p, double tol) {
    const auto& m = p.rotation;
    // orthonormality: R^T R = I
    for (int i = 0; i < 3; i++) {
        for (int j = 0; j < 3; j++) {
            double acc = 0;
            for (int k = 0; k < 3; k++) acc += m[k * 3 + i] * m[k * 3 + j];
            if (std::abs(acc - (i == j ? 1.0 : 0.0)) > tol) return false;
        }
    }
    const double det = m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
                     + m[2] * (m[3] * m[7] - m[4] * m[6]);
    return std::abs(det - 1.0) <= tol;
}

Tensor build_bev_grid(const BEVGridConfig& cfg) {
    const auto nz = static_cast<int64_t>(cfg.z_anchors.size());
    Tensor out({static_cast<int64_t>(cfg.H) * cfg.W * nz, 3});
    scalar* p = out.data();
    int64_t row = 0;
    for (int64_t zi = 0; zi < nz; zi++)
        for (int iy = 0; iy < cfg.H; iy++)
            for (int ix = 0; ix < cfg.W; ix++, row++) {
                p[row * 3 + 0] = static_cast<scalar>(cfg.cell_x(ix));
                p[row * 3 + 1] = static_cast<scalar>(cfg.cell_y(iy));
                p[row * 3 + 2] = static_cast<scalar>(cfg.z_anchors[static_cast<size_t>(zi)]);
            }
    return out;
}

void project_points(const Tensor& points, const Pose& ego_present, const Pose& ego_past,
                    const Pose& cam_extrinsic, const CameraIntrinsics& intr, Tensor& pixels,
                    Tensor& valid, double z_eps) {
    const int64_t p = points.dim(0);
    pixels = Tensor({p, 2});
    valid = Tensor({p});
    // present-ego -> world -> past-ego -> camera
    const Pose to_cam = compose(inverse(cam_extrinsic), compose(inverse(ego_past), ego_present));
    const scalar* src = points.data();
    scalar* px = pixels.data();
    scalar* vd = valid.data();
    for (int64_t i = 0; i < p; i++) {
        const Vec3 c = apply(to_cam, {double(src[i * 3]), double(src[i * 3 + 1]),
                                      double(src[i * 3 + 2])});
        bool ok = c.z > z_eps;
        double u = -1.0, v = -1.0;
        if (ok) {
            u = intr.fx * c.x / c.z + intr.cx;
            v = intr.fy * c.y / c.z + intr.cy;
            ok = u >= 0.0 && u < intr.width && v >= 0.0 && v < intr.height;
        }
        if (!ok) u = v = -1.0;  // sentinel keeps downstream sampling finite
        px[i * 2 + 0] = static_cast<scalar>(u);
        px[i * 2 + 1] = static_cast<scalar>(v);
        vd[i] = ok ? scalar(1) : scalar(0);
    }
}

Vec3 unproject_pixel(const CameraIntrinsics& intr, double u, double v, double z) {
    return {(u - intr.cx) / intr.fx * z, (v - intr.cy) / intr.fy * z, z};
}

ReferenceSet build_reference_set(const BEVGridConfig& cfg, const Rig& rig,
                                 const std::vector<Pose>& ego_poses, double z_eps) {
    if (ego_poses.empty()) throw ShapeError("build_reference_set: no ego poses");
    return build_reference_set(cfg, rig, ego_poses, ego_poses.back(), z_eps);
}

ReferenceSet build_reference_set(const BEVGridConfig& cfg, const Rig& rig,
                                 const std::vector<Pose>& ego_poses, const Pose& grid_pose,
                                 double z_eps) {
    if (ego_poses.empty()) throw ShapeError("build_reference_set: no ego poses");
    ReferenceSet rs;
    rs.t_in = static_cast<int>(ego_poses.size());
    rs.n_cam = static_cast<int>(rig.size());
    rs.n_z = static_cast<int>(cfg.z_anchors.size());
    rs.hw = cfg.H * cfg.W;
    const Tensor grid = build_bev_grid(cfg);  // anchor-major slices of H*W points
    const Pose& present = grid_pose;          // frame the grid points live in
    rs.pixels.resize(static_cast<size_t>(rs.t_in * rs.n_cam * rs.n_z));
    rs.valid.resize(rs.pixels.size());
    for (int f = 0; f < rs.t_in; f++) {
        for (int c = 0; c < rs.n_cam; c++) {
            Tensor all_px, all_vd;
            project_points(grid, present, ego_poses[static_cast<size_t>(f)],
                           rig[static_cast<size_t>(c)].extrinsic, rig[static_cast<size_t>(c)].intr,
                           all_px, all_vd, z_eps);
            for (int zi = 0; zi < rs.n_z; zi++) {
                Tensor px({rs.hw, 2}), vd({rs.hw});
                const int64_t off = static_cast<int64_t>(zi) * rs.hw;
                std::copy_n(all_px.data() + off * 2, rs.hw * 2, px.data());
                std::copy_n(all_vd.data() + off, rs.hw, vd.data());
                rs.pixels[static_cast<size_t>(rs.index(f, c, zi))] = std::move(px);
                rs.valid[static_cast<size_t>(rs.index(f, c, zi))] = std::move(vd);
            }
        }
    }
    return rs;
}

Tensor warp_bev(const Tensor& map, double theta, double tx, double ty, const BEVGridConfig& cfg) {
    if (map.rank() != 3 || map.dim(1) != cfg.H || map.dim(2) != cfg.W)
        throw ShapeError("warp_bev: map " + shape_str(map.shape()));
    const int64_t c = map.dim(0);
    const double cth = std::cos(theta), sth = std::sin(theta);
    Tensor out(map.shape());
    const scalar* src = map.data();
    scalar* dst = out.data();
    auto tap = [&](int64_t ch, int64_t iy, int64_t ix) -> double {
        if (iy < 0 || iy >= cfg.H || ix < 0 || ix >= cfg.W) return 0.0;
        return double(src[(ch * cfg.H + iy) * cfg.W + ix]);
    };
    for (int iy = 0; iy < cfg.H; iy++) {
        for (int ix = 0; ix < cfg.W; ix++) {
            // inverse transform of this cell's metric center
            const double x = cfg.cell_x(ix) - tx;
            const double y = cfg.cell_y(iy) - ty;
            const double sx = cth * x + sth * y;   // R(-theta)
            const double sy = -sth * x + cth * y;
            const double fx = cfg.ix_of(sx);
            const double fy = cfg.iy_of(sy);
            const auto x0 = static_cast<int64_t>(std::floor(fx));
            const auto y0 = static_cast<int64_t>(std::floor(fy));
            const double ax = fx - double(x0), ay = fy - double(y0);
            for (int64_t ch = 0; ch < c; ch++) {
                const double v = tap(ch, y0, x0) * (1 - ax) * (1 - ay)
                               + tap(ch, y0, x0 + 1) * ax * (1 - ay)
                               + tap(ch, y0 + 1, x0) * (1 - ax) * ay
                               + tap(ch, y0 + 1, x0 + 1) * ax * ay;
                dst[(ch * cfg.H + iy) * cfg.W + ix] = static_cast<scalar>(v);
            }
        }
    }
    return out;
}

std::vector<int> warp_bev_nearest(const std::vector<int>& labels, double theta, double tx,
                                  double ty, const BEVGridConfig& cfg, int fill) {
    if (static_cast<int>(labels.size()) != cfg.H * cfg.W)
        throw ShapeError("warp_bev_nearest: label count mismatch");
    const double cth = std::cos(theta), sth = std::sin(theta);
    std::vector<int> out(labels.size(), fill);
    for (int iy = 0; iy < cfg.H; iy++) {
        for (int ix = 0; ix < cfg.W; ix++) {
            const double x = cfg.cell_x(ix) - tx;
            const double y = cfg.cell_y(iy) - ty;
            const double sx = cth * x + sth * y;
            const double sy = -sth * x + cth * y;
            const auto jx = static_cast<int64_t>(std::lround(cfg.ix_of(sx)));
            const auto jy = static_cast<int64_t>(std::lround(cfg.iy_of(sy)));
            if (jx < 0 || jx >= cfg.W || jy < 0 || jy >= cfg.H) continue;
            out[static_cast<size_t>(iy * cfg.W + ix)] =
                labels[static_cast<size_t>(jy * cfg.W + jx)];
        }
    }
    return out;
}

}  // namespace bevpred
