#include "bevpred/scene.hpp"

#include <algorithm>
#include <cmath>

namespace bevpred {

namespace {

double yaw_of(const Pose& p) { return std::atan2(p.rotation[3], p.rotation[0]); }

Pose planar_pose(double x, double y, double yaw) {
    Pose p = Pose::rot_z(yaw);
    p.translation = {x, y, 0.0};
    return p;
}

// exact circular-arc step (straight line when |omega| is tiny)
void advance(double& x, double& y, double& yaw, double v, double omega, double dt) {
    if (std::abs(omega) < 1e-9) {
        x += v * dt * std::cos(yaw);
        y += v * dt * std::sin(yaw);
    } else {
        const double r = v / omega;
        x += r * (std::sin(yaw + omega * dt) - std::sin(yaw));
        y -= r * (std::cos(yaw + omega * dt) - std::cos(yaw));
        yaw += omega * dt;
    }
}

std::vector<Pose> roll_out(double x, double y, double yaw, double v, double omega, double dt,
                           int frames) {
    std::vector<Pose> traj;
    traj.reserve(static_cast<size_t>(frames));
    for (int t = 0; t < frames; t++) {
        traj.push_back(planar_pose(x, y, yaw));
        advance(x, y, yaw, v, omega, dt);
    }
    return traj;
}

double half_diag(const AgentTrack& a) { return 0.5 * std::hypot(a.length, a.width); }

// conservative bounding-circle separation over the whole sequence
bool tracks_clear(const AgentTrack& a, const AgentTrack& b, double margin) {
    const double need = half_diag(a) + half_diag(b) + margin;
    for (size_t t = 0; t < a.traj.size(); t++) {
        const double dx = a.traj[t].translation[0] - b.traj[t].translation[0];
        const double dy = a.traj[t].translation[1] - b.traj[t].translation[1];
        if (std::hypot(dx, dy) < need) return false;
    }
    return true;
}

}  // namespace

Rig default_rig(int im_w, int im_h) {
    // camera axes in the ego frame: +z forward, +x right (ego -y), +y down (ego -z)
    Pose base;
    base.rotation = {0, 0, 1, -1, 0, 0, 0, -1, 0};
    const double hfov = 55.0 * M_PI / 180.0;
    CameraIntrinsics intr;
    intr.width = im_w;
    intr.height = im_h;
    intr.fx = (im_w / 2.0) / std::tan(hfov / 2.0);
    intr.fy = intr.fx;
    intr.cx = im_w / 2.0;
    intr.cy = im_h / 2.0;
    Rig rig;
    for (double yaw : {25.0 * M_PI / 180.0, -25.0 * M_PI / 180.0}) {
        Camera cam;
        cam.extrinsic = compose(Pose::rot_z(yaw), base);
        cam.extrinsic.translation = {1.0, yaw > 0 ? 0.4 : -0.4, 1.5};
        cam.intr = intr;
        rig.push_back(cam);
    }
    return rig;
}

Scenario generate_scenario(uint64_t seed, const GenConfig& cfg) {
    Rng rng(seed);
    Scenario scn;
    scn.seed = seed;
    scn.frame_dt = cfg.frame_dt;
    scn.t_in = cfg.t_in;
    scn.t_pred = cfg.t_pred;
    scn.rig = default_rig(cfg.im_w, cfg.im_h);
    if (static_cast<int>(scn.rig.size()) > cfg.n_cams)
        scn.rig.resize(static_cast<size_t>(cfg.n_cams));

    const int frames = scn.t_total();
    const double ego_v = rng.uniform(0.0, cfg.ego_speed_max);
    const double ego_w = rng.uniform(-cfg.ego_turn_rate_max, cfg.ego_turn_rate_max);
    scn.ego = roll_out(0, 0, 0, ego_v, ego_w, cfg.frame_dt, frames);

    const int n_agents = static_cast<int>(rng.uniform_int(cfg.min_agents, cfg.max_agents));
    for (int i = 0; i < n_agents; i++) {
        bool placed = false;
        for (int attempt = 0; attempt < cfg.max_place_retries && !placed; attempt++) {
            AgentTrack a;
            a.id = i + 1;
            a.length = rng.uniform(cfg.agent_length_min, cfg.agent_length_max);
            a.width = rng.uniform(cfg.agent_width_min, cfg.agent_width_max);
            a.height = 1.6;
            // spawn inside the forward frustum so cameras actually see it
            const double x = rng.uniform(4.0, 12.0);
            const double y = rng.uniform(-7.0, 7.0);
            const double yaw = rng.uniform(-M_PI, M_PI);
            const double v = rng.uniform(cfg.speed_min, cfg.speed_max);
            const double w = rng.uniform() < 0.5
                                 ? 0.0
                                 : rng.uniform(-cfg.turn_rate_max, cfg.turn_rate_max);
            a.traj = roll_out(x, y, yaw, v, w, cfg.frame_dt, frames);
            a.speed.assign(static_cast<size_t>(frames), v);
            bool clear = true;
            for (const AgentTrack& other : scn.agents)
                clear = clear && tracks_clear(a, other, 0.5);
            if (clear) {
                scn.agents.push_back(std::move(a));
                placed = true;
            }
        }
        if (!placed)
            throw GenerationError("could not place agent " + std::to_string(i + 1) + " of "
                                  + std::to_string(n_agents) + " after "
                                  + std::to_string(cfg.max_place_retries) + " retries");
    }
    return scn;
}

// ---- rendering -----------------------------------------------------------------

namespace {

struct Rgb {
    double r, g, b;
};

Rgb agent_color(int id) {
    uint64_t z = static_cast<uint64_t>(id) * 0x9e3779b97f4a7c15ull + 0x632be59bd9b4e019ull;
    auto mix = [&z] {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        return 0.25 + 0.7 * double(z >> 40) / double(1 << 24);
    };
    const double r = mix(), g = mix(), b = mix();
    return {r, g, b};
}

std::vector<std::array<double, 2>> convex_hull(std::vector<std::array<double, 2>> pts) {
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    const size_t n = pts.size();
    if (n < 3) return pts;
    auto cross = [](const std::array<double, 2>& o, const std::array<double, 2>& a,
                    const std::array<double, 2>& b) {
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    };
    std::vector<std::array<double, 2>> hull(2 * n);
    size_t k = 0;
    for (size_t i = 0; i < n; i++) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) k--;
        hull[k++] = pts[i];
    }
    for (size_t i = n - 1, t = k + 1; i-- > 0;) {
        while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) k--;
        hull[k++] = pts[i];
    }
    hull.resize(k - 1);
    return hull;
}

bool inside_hull(const std::vector<std::array<double, 2>>& hull, double x, double y) {
    const size_t n = hull.size();
    if (n < 3) return false;
    for (size_t i = 0; i < n; i++) {
        const auto& a = hull[i];
        const auto& b = hull[(i + 1) % n];
        const double c = (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]);
        if (c < 0) return false;  // hull is counter-clockwise
    }
    return true;
}

void box_corners(const AgentTrack& a, const Pose& world_pose, std::array<Vec3, 8>& out) {
    int k = 0;
    for (double sz : {0.0, a.height})
        for (double sx : {-0.5, 0.5})
            for (double sy : {-0.5, 0.5})
                out[static_cast<size_t>(k++)] =
                    apply(world_pose, {sx * a.length, sy * a.width, sz});
}

}  // namespace

Tensor render_frame(const Scenario& scn, int t) {
    if (t < 0 || t >= scn.t_total()) throw ShapeError("render_frame: frame out of range");
    const int n_cam = static_cast<int>(scn.rig.size());
    const CameraIntrinsics& intr0 = scn.rig[0].intr;
    const int h = intr0.height, w = intr0.width;
    Tensor out({n_cam, 3, h, w});
    scalar* img = out.data();
    const Pose& ego = scn.ego[static_cast<size_t>(t)];

    for (int ci = 0; ci < n_cam; ci++) {
        const Camera& cam = scn.rig[static_cast<size_t>(ci)];
        const Pose cam_world = compose(ego, cam.extrinsic);
        const Pose world_to_cam = inverse(cam_world);
        scalar* rp = img + (static_cast<int64_t>(ci) * 3 + 0) * h * w;
        scalar* gp = img + (static_cast<int64_t>(ci) * 3 + 1) * h * w;
        scalar* bp = img + (static_cast<int64_t>(ci) * 3 + 2) * h * w;

        // background: distance along each pixel ray to the ground plane
        for (int py = 0; py < h; py++) {
            for (int px = 0; px < w; px++) {
                const Vec3 dc = unproject_pixel(cam.intr, px + 0.5, py + 0.5, 1.0);
                const double norm = std::sqrt(dc.x * dc.x + dc.y * dc.y + dc.z * dc.z);
                Vec3 dw = apply(cam_world, dc);
                dw.x -= cam_world.translation[0];
                dw.y -= cam_world.translation[1];
                dw.z -= cam_world.translation[2];
                double a = 0.0;
                bool sky = dw.z >= -1e-9;
                if (!sky) {
                    const double dist = -cam_world.translation[2] / dw.z * norm;
                    a = 1.0 / (1.0 + dist / 20.0);
                }
                const int64_t pi = static_cast<int64_t>(py) * w + px;
                if (sky) {
                    rp[pi] = scalar(0.70);
                    gp[pi] = scalar(0.80);
                    bp[pi] = scalar(0.90);
                } else {
                    rp[pi] = static_cast<scalar>(0.15 + 0.35 * a);
                    gp[pi] = static_cast<scalar>(0.20 + 0.40 * a);
                    bp[pi] = static_cast<scalar>(0.25 + 0.45 * a);
                }
            }
        }

        // painter's order: farthest agent first, id breaks ties
        std::vector<std::pair<double, const AgentTrack*>> order;
        for (const AgentTrack& a : scn.agents) {
            const auto& tr = a.traj[static_cast<size_t>(t)].translation;
            const double dx = tr[0] - cam_world.translation[0];
            const double dy = tr[1] - cam_world.translation[1];
            order.emplace_back(-std::hypot(dx, dy), &a);
        }
        std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
            return a.first < b.first || (a.first == b.first && a.second->id < b.second->id);
        });

        for (const auto& [negdist, agent] : order) {
            std::array<Vec3, 8> corners;
            box_corners(*agent, agent->traj[static_cast<size_t>(t)], corners);
            std::vector<std::array<double, 2>> px;
            for (const Vec3& c : corners) {
                const Vec3 cc = apply(world_to_cam, c);
                if (cc.z <= kDepthEps) continue;
                px.push_back({cam.intr.fx * cc.x / cc.z + cam.intr.cx,
                              cam.intr.fy * cc.y / cc.z + cam.intr.cy});
            }
            if (px.size() < 3) continue;
            const auto hull = convex_hull(std::move(px));
            if (hull.size() < 3) continue;
            double x0 = 1e18, x1 = -1e18, y0 = 1e18, y1 = -1e18;
            for (const auto& p : hull) {
                x0 = std::min(x0, p[0]);
                x1 = std::max(x1, p[0]);
                y0 = std::min(y0, p[1]);
                y1 = std::max(y1, p[1]);
            }
            const Rgb col = agent_color(agent->id);
            const int bx0 = std::max(0, static_cast<int>(std::floor(x0)));
            const int bx1 = std::min(w - 1, static_cast<int>(std::ceil(x1)));
            const int by0 = std::max(0, static_cast<int>(std::floor(y0)));
            const int by1 = std::min(h - 1, static_cast<int>(std::ceil(y1)));
            for (int py = by0; py <= by1; py++) {
                for (int pxi = bx0; pxi <= bx1; pxi++) {
                    if (!inside_hull(hull, pxi + 0.5, py + 0.5)) continue;
                    const int64_t pi = static_cast<int64_t>(py) * w + pxi;
                    rp[pi] = static_cast<scalar>(col.r);
                    gp[pi] = static_cast<scalar>(col.g);
                    bp[pi] = static_cast<scalar>(col.b);
                }
            }
        }
    }
    return out;
}

// ---- ground truth ---------------------------------------------------------------

namespace {

struct InstanceStat {
    bool present = false;
    int64_t sum_x = 0, sum_y = 0, count = 0;
    int cx = 0, cy = 0;  // rounded centroid cell
};

// labels for one frame plus per-agent centers
void rasterize_frame(const Scenario& scn, int t, const BEVGridConfig& cfg, const Pose& grid_pose,
                     std::vector<int>& labels, std::vector<InstanceStat>& stats) {
    labels.assign(static_cast<size_t>(cfg.H) * cfg.W, 0);
    stats.assign(scn.agents.size() + 1, InstanceStat{});
    const Pose to_grid = inverse(grid_pose);
    for (const AgentTrack& a : scn.agents) {
        const Pose ag = compose(to_grid, a.traj[static_cast<size_t>(t)]);
        const double ax = ag.translation[0], ay = ag.translation[1];
        const double yaw = yaw_of(ag);
        const double c = std::cos(yaw), s = std::sin(yaw);
        const double hl = 0.5 * a.length, hw = 0.5 * a.width;
        const double reach = std::hypot(hl, hw);
        // candidate cell window around the footprint
        const int ix0 = std::max(0, static_cast<int>(std::floor(cfg.ix_of(ax - reach))));
        const int ix1 = std::min(cfg.W - 1, static_cast<int>(std::ceil(cfg.ix_of(ax + reach))));
        const int iy0 = std::max(0, static_cast<int>(std::floor(cfg.iy_of(ay - reach))));
        const int iy1 = std::min(cfg.H - 1, static_cast<int>(std::ceil(cfg.iy_of(ay + reach))));
        InstanceStat& st = stats[static_cast<size_t>(a.id)];
        for (int iy = iy0; iy <= iy1; iy++) {
            for (int ix = ix0; ix <= ix1; ix++) {
                const double dx = cfg.cell_x(ix) - ax;
                const double dy = cfg.cell_y(iy) - ay;
                const double u = c * dx + s * dy;   // into the agent frame
                const double v = -s * dx + c * dy;
                if (std::abs(u) <= hl && std::abs(v) <= hw) {
                    labels[static_cast<size_t>(iy * cfg.W + ix)] = a.id;
                    st.present = true;
                    st.sum_x += ix;
                    st.sum_y += iy;
                    st.count++;
                }
            }
        }
    }
    for (auto& st : stats) {
        if (st.present) {
            st.cx = static_cast<int>(std::lround(double(st.sum_x) / double(st.count)));
            st.cy = static_cast<int>(std::lround(double(st.sum_y) / double(st.count)));
        }
    }
}

}  // namespace

GroundTruth rasterize_gt(const Scenario& scn, int present_idx, const BEVGridConfig& cfg) {
    return rasterize_gt(scn, present_idx, cfg, scn.ego[static_cast<size_t>(present_idx)]);
}

GroundTruth rasterize_gt(const Scenario& scn, int present_idx, const BEVGridConfig& cfg,
                         const Pose& grid_pose) {
    const int t_out = scn.t_pred + 2;
    const int first = present_idx - 1;  // one frame before present
    if (first < 1 || first + t_out > scn.t_total())
        throw ShapeError("rasterize_gt: trajectory too short for the output window");

    const int hw = cfg.H * cfg.W;
    GroundTruth gt;
    gt.seg = Tensor({t_out, cfg.H, cfg.W});
    gt.flow = Tensor({t_out, 2, cfg.H, cfg.W});
    gt.centerness = Tensor({t_out, 1, cfg.H, cfg.W});
    gt.offset = Tensor({t_out, 2, cfg.H, cfg.W});
    gt.instances.resize(static_cast<size_t>(t_out));

    // frame before the window feeds the first frame's flow
    std::vector<int> prev_labels;
    std::vector<InstanceStat> prev_stats;
    rasterize_frame(scn, first - 1, cfg, grid_pose, prev_labels, prev_stats);

    std::vector<int> labels;
    std::vector<InstanceStat> stats;
    for (int k = 0; k < t_out; k++) {
        rasterize_frame(scn, first + k, cfg, grid_pose, labels, stats);
        gt.instances[static_cast<size_t>(k)] = labels;
        scalar* seg = gt.seg.data() + static_cast<int64_t>(k) * hw;
        scalar* fx = gt.flow.data() + (static_cast<int64_t>(k) * 2 + 0) * hw;
        scalar* fy = gt.flow.data() + (static_cast<int64_t>(k) * 2 + 1) * hw;
        scalar* ctr = gt.centerness.data() + static_cast<int64_t>(k) * hw;
        scalar* ox = gt.offset.data() + (static_cast<int64_t>(k) * 2 + 0) * hw;
        scalar* oy = gt.offset.data() + (static_cast<int64_t>(k) * 2 + 1) * hw;

        for (int iy = 0; iy < cfg.H; iy++) {
            for (int ix = 0; ix < cfg.W; ix++) {
                const int li = iy * cfg.W + ix;
                const int id = labels[static_cast<size_t>(li)];
                if (!id) continue;
                const InstanceStat& st = stats[static_cast<size_t>(id)];
                seg[li] = 1;
                ox[li] = static_cast<scalar>(st.cx - ix);
                oy[li] = static_cast<scalar>(st.cy - iy);
                const InstanceStat& pv = prev_stats[static_cast<size_t>(id)];
                if (pv.present) {
                    fx[li] = static_cast<scalar>(pv.cx - st.cx);
                    fy[li] = static_cast<scalar>(pv.cy - st.cy);
                }
            }
        }
        // centerness: max over instances of a unit-peak gaussian at the center cell
        for (size_t id = 1; id < stats.size(); id++) {
            if (!stats[id].present) continue;
            const double cx = stats[id].cx, cy = stats[id].cy;
            for (int iy = 0; iy < cfg.H; iy++) {
                for (int ix = 0; ix < cfg.W; ix++) {
                    const double d2 = (ix - cx) * (ix - cx) + (iy - cy) * (iy - cy);
                    const double v = std::exp(-d2 / (2.0 * kCenterSigma * kCenterSigma));
                    scalar& cell = ctr[iy * cfg.W + ix];
                    cell = std::max(cell, static_cast<scalar>(v));
                }
            }
        }
        prev_labels = labels;
        prev_stats = stats;
    }
    return gt;
}

SequenceSample generate_sample(uint64_t seed, const GenConfig& cfg) {
    const Scenario scn = generate_scenario(seed, cfg);
    SequenceSample s;
    s.meta.t_in = cfg.t_in;
    s.meta.t_pred = cfg.t_pred;
    s.meta.t_out = cfg.t_pred + 2;
    s.meta.n_cam = static_cast<int>(scn.rig.size());
    s.meta.im_h = cfg.im_h;
    s.meta.im_w = cfg.im_w;
    s.meta.frame_dt = cfg.frame_dt;
    s.meta.bev = cfg.bev;
    s.rig = scn.rig;
    const int n_cam = s.meta.n_cam;
    s.images = Tensor({cfg.t_in, n_cam, 3, cfg.im_h, cfg.im_w});
    const int64_t frame_sz = static_cast<int64_t>(n_cam) * 3 * cfg.im_h * cfg.im_w;
    for (int t = 0; t < cfg.t_in; t++) {
        const Tensor f = render_frame(scn, t);
        std::copy_n(f.data(), frame_sz, s.images.data() + t * frame_sz);
        s.ego_poses.push_back(scn.ego[static_cast<size_t>(t)]);
    }
    s.gt = rasterize_gt(scn, scn.present(), cfg.bev);
    return s;
}

std::vector<SequenceSample> generate_samples(uint64_t base_seed, int count,
                                             const GenConfig& cfg) {
    std::vector<SequenceSample> out;
    out.reserve(static_cast<size_t>(count));
    uint64_t candidate = base_seed;
    int skipped = 0;
    const int skip_budget = 100 + 20 * count;
    while (static_cast<int>(out.size()) < count) {
        try {
            out.push_back(generate_sample(candidate++, cfg));
        } catch (const GenerationError&) {
            if (++skipped > skip_budget)
                throw GenerationError("too many placement failures; loosen the scene config");
        }
    }
    return out;
}

}  // namespace bevpred
