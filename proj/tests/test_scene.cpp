#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <cstring>
#include <vector>

#include "bevpred/scene.hpp"

using namespace bevpred;

namespace {

double yaw_of(const Pose& p) { return std::atan2(p.rotation[3], p.rotation[0]); }

Pose planar(double x, double y, double yaw) {
    Pose p = Pose::rot_z(yaw);
    p.translation = {x, y, 0};
    return p;
}

AgentTrack make_track(int id, const std::vector<std::array<double, 3>>& xyyaw, double len = 4.5,
                      double wid = 1.9) {
    AgentTrack a;
    a.id = id;
    a.length = len;
    a.width = wid;
    for (const auto& s : xyyaw) a.traj.push_back(planar(s[0], s[1], s[2]));
    a.speed.assign(xyyaw.size(), 0.0);
    return a;
}

Scenario base_scenario() {
    Scenario scn;
    scn.t_in = 3;
    scn.t_pred = 4;
    scn.frame_dt = 0.5;
    scn.rig = default_rig(96, 64);
    for (int t = 0; t < scn.t_total(); t++) scn.ego.push_back(Pose::identity());
    return scn;
}

// separating-axis overlap test for two oriented boxes (independent of the
// bounding-circle logic inside the generator)
bool obb_overlap(double ax, double ay, double ayaw, double al, double aw, double bx, double by,
                 double byaw, double bl, double bw) {
    auto corners = [](double x, double y, double yaw, double l, double w) {
        std::array<std::array<double, 2>, 4> c;
        const double ch = std::cos(yaw), sh = std::sin(yaw);
        int k = 0;
        for (double sx : {-0.5, 0.5})
            for (double sy : {-0.5, 0.5}) {
                c[size_t(k)][0] = x + ch * sx * l - sh * sy * w;
                c[size_t(k)][1] = y + sh * sx * l + ch * sy * w;
                k++;
            }
        return c;
    };
    const auto ca = corners(ax, ay, ayaw, al, aw);
    const auto cb = corners(bx, by, byaw, bl, bw);
    const double axes[4][2] = {{std::cos(ayaw), std::sin(ayaw)},
                               {-std::sin(ayaw), std::cos(ayaw)},
                               {std::cos(byaw), std::sin(byaw)},
                               {-std::sin(byaw), std::cos(byaw)}};
    for (const auto& ax2 : axes) {
        double alo = 1e18, ahi = -1e18, blo = 1e18, bhi = -1e18;
        for (const auto& p : ca) {
            const double d = p[0] * ax2[0] + p[1] * ax2[1];
            alo = std::min(alo, d);
            ahi = std::max(ahi, d);
        }
        for (const auto& p : cb) {
            const double d = p[0] * ax2[0] + p[1] * ax2[1];
            blo = std::min(blo, d);
            bhi = std::max(bhi, d);
        }
        if (ahi < blo || bhi < alo) return false;  // separating axis found
    }
    return true;
}

int64_t diff_pixels(const Tensor& a, const Tensor& b) {
    int64_t n = 0;
    for (int64_t i = 0; i < a.numel(); i++) n += a.data()[i] != b.data()[i];
    return n;
}

}  // namespace

// ---- scenario generation ----------------------------------------------------------

TEST_CASE("generate_scenario is a pure function of seed and config") {
    GenConfig cfg;
    const auto a = generate_scenario(123, cfg);
    const auto b = generate_scenario(123, cfg);
    REQUIRE(a.agents.size() == b.agents.size());
    for (size_t i = 0; i < a.agents.size(); i++) {
        CHECK(a.agents[i].length == b.agents[i].length);
        for (size_t t = 0; t < a.agents[i].traj.size(); t++) {
            CHECK(a.agents[i].traj[t].translation == b.agents[i].traj[t].translation);
            CHECK(a.agents[i].traj[t].rotation == b.agents[i].traj[t].rotation);
        }
    }
    const auto c = generate_scenario(124, cfg);
    bool differs = a.agents.size() != c.agents.size();
    if (!differs)
        differs = a.agents[0].traj[0].translation != c.agents[0].traj[0].translation;
    CHECK(differs);
}

TEST_CASE("generated scenarios respect configured bounds") {
    GenConfig cfg;
    cfg.min_agents = 2;
    cfg.max_agents = 4;
    cfg.speed_min = 0.5;
    cfg.speed_max = 1.5;
    for (uint64_t seed : {1ull, 2ull, 3ull, 5ull, 8ull}) {
        Scenario scn;
        try {
            scn = generate_scenario(seed, cfg);
        } catch (const GenerationError&) {
            continue;  // placement failures are a legitimate outcome per seed
        }
        CHECK(int(scn.agents.size()) >= cfg.min_agents);
        CHECK(int(scn.agents.size()) <= cfg.max_agents);
        CHECK(int(scn.ego.size()) == scn.t_total());
        for (const auto& a : scn.agents) {
            CHECK(int(a.traj.size()) == scn.t_total());
            CHECK(a.speed[0] >= cfg.speed_min);
            CHECK(a.speed[0] <= cfg.speed_max);
            CHECK(a.length >= cfg.agent_length_min);
            CHECK(a.length <= cfg.agent_length_max);
            CHECK(a.width >= cfg.agent_width_min);
            CHECK(a.width <= cfg.agent_width_max);
        }
    }
}

TEST_CASE("agents never overlap in any frame") {
    GenConfig cfg;
    cfg.min_agents = 3;
    cfg.max_agents = 5;
    int scenarios = 0;
    for (uint64_t seed = 100; seed < 130 && scenarios < 10; seed++) {
        Scenario scn;
        try {
            scn = generate_scenario(seed, cfg);
        } catch (const GenerationError&) {
            continue;
        }
        scenarios++;
        for (int t = 0; t < scn.t_total(); t++) {
            for (size_t i = 0; i < scn.agents.size(); i++) {
                for (size_t j = i + 1; j < scn.agents.size(); j++) {
                    const auto& a = scn.agents[i];
                    const auto& b = scn.agents[j];
                    const auto& pa = a.traj[size_t(t)];
                    const auto& pb = b.traj[size_t(t)];
                    CHECK_FALSE(obb_overlap(pa.translation[0], pa.translation[1], yaw_of(pa),
                                            a.length, a.width, pb.translation[0],
                                            pb.translation[1], yaw_of(pb), b.length, b.width));
                }
            }
        }
    }
    CHECK(scenarios >= 5);
}

TEST_CASE("zero speed ranges freeze every trajectory") {
    GenConfig cfg;
    cfg.speed_min = 0;
    cfg.speed_max = 0;
    cfg.ego_speed_max = 0;
    const auto scn = generate_scenario(7, cfg);
    for (int t = 1; t < scn.t_total(); t++) {
        CHECK(scn.ego[size_t(t)].translation == scn.ego[0].translation);
        for (const auto& a : scn.agents)
            CHECK(a.traj[size_t(t)].translation == a.traj[0].translation);
    }
}

TEST_CASE("turning agents move on circles of radius v over omega") {
    GenConfig cfg;
    cfg.speed_min = 1.0;  // make arcs measurable
    cfg.speed_max = 2.0;
    int checked_turning = 0, checked_straight = 0;
    for (uint64_t seed = 200; seed < 230; seed++) {
        Scenario scn;
        try {
            scn = generate_scenario(seed, cfg);
        } catch (const GenerationError&) {
            continue;
        }
        for (const auto& a : scn.agents) {
            const double y0 = yaw_of(a.traj[0]), y1 = yaw_of(a.traj[1]);
            const double dyaw = std::remainder(y1 - y0, 2 * M_PI);
            const double v = a.speed[0];
            if (std::abs(dyaw) > 1e-6) {
                const double omega = dyaw / scn.frame_dt;
                const double r = v / omega;
                // circle centre from the unicycle closed form at frame 0
                const double cx = a.traj[0].translation[0] - r * std::sin(y0);
                const double cy = a.traj[0].translation[1] + r * std::cos(y0);
                for (const auto& p : a.traj) {
                    const double d = std::hypot(p.translation[0] - cx, p.translation[1] - cy);
                    CHECK(d == doctest::Approx(std::abs(r)).epsilon(1e-6));
                }
                checked_turning++;
            } else {
                // straight: equal steps along a fixed heading
                const double step = v * scn.frame_dt;
                for (size_t t = 1; t < a.traj.size(); t++) {
                    const double dx = a.traj[t].translation[0] - a.traj[t - 1].translation[0];
                    const double dy = a.traj[t].translation[1] - a.traj[t - 1].translation[1];
                    CHECK(std::hypot(dx, dy) == doctest::Approx(step).epsilon(1e-9));
                    CHECK(yaw_of(a.traj[t]) == doctest::Approx(y0).epsilon(1e-9));
                }
                checked_straight++;
            }
        }
        if (checked_turning >= 3 && checked_straight >= 3) break;
    }
    CHECK(checked_turning >= 3);
    CHECK(checked_straight >= 3);
}

// ---- rendering ------------------------------------------------------------------------

TEST_CASE("render_frame produces deterministic unit-range images of the right shape") {
    GenConfig cfg;
    const auto scn = generate_scenario(21, cfg);
    const auto img = render_frame(scn, 0);
    REQUIRE(img.shape() == std::vector<int64_t>{int64_t(scn.rig.size()), 3, 64, 96});
    for (int64_t i = 0; i < img.numel(); i++) {
        CHECK(img.data()[i] >= 0);
        CHECK(img.data()[i] <= 1);
    }
    const auto again = render_frame(scn, 0);
    CHECK(std::memcmp(img.data(), again.data(), sizeof(scalar) * size_t(img.numel())) == 0);
    CHECK_THROWS_AS(render_frame(scn, scn.t_total()), ShapeError);
}

TEST_CASE("an agent behind every camera renders exactly like an empty scene") {
    Scenario scn = base_scenario();
    const auto empty = render_frame(scn, 0);
    scn.agents.push_back(
        make_track(1, std::vector<std::array<double, 3>>(7, {{-20.0, 0.0, 0.0}})));
    const auto with_agent = render_frame(scn, 0);
    CHECK(diff_pixels(empty, with_agent) == 0);
}

TEST_CASE("projected agent size shrinks monotonically with distance") {
    Scenario scn = base_scenario();
    const auto empty = render_frame(scn, 0);
    std::vector<int64_t> counts;
    for (double x : {6.0, 11.0, 21.0}) {  // 5, 10, 20 m ahead of the cameras at x=1
        Scenario s = scn;
        s.agents.push_back(make_track(1, std::vector<std::array<double, 3>>(7, {{x, 0.0, 0.0}})));
        counts.push_back(diff_pixels(empty, render_frame(s, 0)));
    }
    CHECK(counts[0] > counts[1]);
    CHECK(counts[1] > counts[2]);
    CHECK(counts[2] > 0);
}

// ---- ground-truth rasterization ----------------------------------------------------------

TEST_CASE("static agent with static ego rasterizes to zero flow and constant maps") {
    Scenario scn = base_scenario();
    scn.agents.push_back(make_track(1, std::vector<std::array<double, 3>>(7, {{6.0, 1.0, 0.0}})));
    BEVGridConfig cfg;  // 32x32, 1 m cells
    const auto gt = rasterize_gt(scn, scn.present(), cfg);
    const int hw = cfg.H * cfg.W;
    REQUIRE(gt.seg.shape() == std::vector<int64_t>{6, 32, 32});
    REQUIRE(gt.flow.shape() == std::vector<int64_t>{6, 2, 32, 32});

    int64_t occupied = 0;
    for (int k = 0; k < 6; k++) {
        for (int i = 0; i < hw; i++) {
            CHECK(gt.seg.data()[k * hw + i] == gt.seg.data()[i]);  // frames identical
            CHECK(gt.instances[size_t(k)][size_t(i)] == gt.instances[0][size_t(i)]);
            if (gt.seg.data()[k * hw + i] != 0) {
                occupied++;
                CHECK(gt.flow.data()[(k * 2 + 0) * hw + i] == 0);
                CHECK(gt.flow.data()[(k * 2 + 1) * hw + i] == 0);
            }
        }
    }
    // box footprint: |x-6|<=2.25 -> 4 columns, |y-1|<=0.95 -> 2 rows, all frames
    CHECK(occupied == 6 * 8);

    // rounded centroid cell: ix mean 21.5 -> 22, iy mean 16.5 -> 17
    const int cx = 22, cy = 17;
    CHECK(gt.instances[0][size_t(cy * cfg.W + cx)] == 1);
    CHECK(gt.offset.data()[0 * hw + cy * cfg.W + cx] == 0);
    CHECK(gt.offset.data()[1 * hw + cy * cfg.W + cx] == 0);
    CHECK(gt.centerness.data()[cy * cfg.W + cx] == scalar(1));
    // a neighbouring occupied cell points at the centre
    CHECK(gt.offset.data()[0 * hw + cy * cfg.W + cx - 1] == 1);
    // centerness decays away from the peak
    CHECK(gt.centerness.data()[cy * cfg.W + cx + 3]
          < gt.centerness.data()[cy * cfg.W + cx + 1]);
}

TEST_CASE("constant +2 cells per frame motion yields flow (-2,0) everywhere occupied") {
    Scenario scn = base_scenario();
    std::vector<std::array<double, 3>> states;
    for (int t = 0; t < 7; t++) states.push_back({-6.0 + 2.0 * t, 1.0, 0.0});
    scn.agents.push_back(make_track(1, states));
    BEVGridConfig cfg;
    const auto gt = rasterize_gt(scn, scn.present(), cfg);
    const int hw = cfg.H * cfg.W;
    int64_t occupied = 0;
    for (int k = 0; k < 6; k++) {
        for (int i = 0; i < hw; i++) {
            if (gt.seg.data()[k * hw + i] == 0) continue;
            occupied++;
            CHECK(gt.flow.data()[(k * 2 + 0) * hw + i] == scalar(-2));
            CHECK(gt.flow.data()[(k * 2 + 1) * hw + i] == scalar(0));
        }
    }
    CHECK(occupied == 6 * 8);
}

TEST_CASE("ego-motion-compensated ground truth pins static agents to fixed cells") {
    Scenario scn = base_scenario();
    scn.ego.clear();
    for (int t = 0; t < 7; t++) scn.ego.push_back(planar(0.6 * t, 0.0, 0.0));
    scn.agents.push_back(make_track(1, std::vector<std::array<double, 3>>(7, {{8.0, -2.0, 0.0}})));
    BEVGridConfig cfg;
    const auto gt = rasterize_gt(scn, scn.present(), cfg);
    const int hw = cfg.H * cfg.W;
    for (int k = 1; k < 6; k++)
        for (int i = 0; i < hw; i++) CHECK(gt.seg.data()[k * hw + i] == gt.seg.data()[i]);
    for (int k = 0; k < 6; k++)
        for (int i = 0; i < hw; i++)
            if (gt.seg.data()[k * hw + i] != 0) {
                CHECK(gt.flow.data()[(k * 2 + 0) * hw + i] == 0);
                CHECK(gt.flow.data()[(k * 2 + 1) * hw + i] == 0);
            }
}

TEST_CASE("rasterize_gt rejects windows without a preceding frame") {
    Scenario scn = base_scenario();
    scn.agents.push_back(make_track(1, std::vector<std::array<double, 3>>(7, {{6.0, 0.0, 0.0}})));
    BEVGridConfig cfg;
    CHECK_THROWS_AS(rasterize_gt(scn, 1, cfg), ShapeError);  // needs frame -1 for flow
    CHECK_THROWS_AS(rasterize_gt(scn, 3, cfg), ShapeError);  // window runs past the end
}

TEST_CASE("labels propagate through ground-truth flow") {
    GenConfig cfg;
    int64_t match = 0, total = 0;
    for (const auto& s : generate_samples(3000, 6, cfg)) {
        const int hw = s.meta.bev.H * s.meta.bev.W;
        for (int k = 1; k < s.meta.t_out; k++) {
            const auto& cur = s.gt.instances[size_t(k)];
            const auto& prev = s.gt.instances[size_t(k - 1)];
            for (int iy = 0; iy < s.meta.bev.H; iy++)
                for (int ix = 0; ix < s.meta.bev.W; ix++) {
                    const int li = iy * s.meta.bev.W + ix;
                    if (cur[size_t(li)] == 0) continue;
                    total++;
                    const int sx = ix + int(s.gt.flow.data()[(int64_t(k) * 2 + 0) * hw + li]);
                    const int sy = iy + int(s.gt.flow.data()[(int64_t(k) * 2 + 1) * hw + li]);
                    if (sx < 0 || sx >= s.meta.bev.W || sy < 0 || sy >= s.meta.bev.H) continue;
                    match += prev[size_t(sy * s.meta.bev.W + sx)] == cur[size_t(li)];
                }
        }
    }
    REQUIRE(total > 200);
    CHECK(double(match) / double(total) >= 0.99);
}

// ---- full samples ---------------------------------------------------------------------

TEST_CASE("generate_sample fills meta, images and ground truth consistently") {
    GenConfig cfg;
    cfg.im_h = 32;
    cfg.im_w = 48;
    cfg.bev.H = 16;
    cfg.bev.W = 16;
    const auto s = generate_sample(11, cfg);
    CHECK(s.meta.t_in == 3);
    CHECK(s.meta.t_pred == 4);
    CHECK(s.meta.t_out == 6);
    CHECK(s.meta.im_h == 32);
    CHECK(s.meta.n_cam == 2);
    REQUIRE(s.images.shape() == std::vector<int64_t>{3, 2, 3, 32, 48});
    for (int64_t i = 0; i < s.images.numel(); i++) {
        CHECK(s.images.data()[i] >= 0);
        CHECK(s.images.data()[i] <= 1);
    }
    CHECK(s.ego_poses.size() == 3);
    REQUIRE(s.gt.seg.shape() == std::vector<int64_t>{6, 16, 16});
    REQUIRE(s.gt.instances.size() == 6);
    CHECK_FALSE(s.has_grid_pose);  // raw samples anchor at the present ego pose
}

TEST_CASE("generate_samples is deterministic and skips failing seeds in order") {
    GenConfig cfg;
    cfg.im_h = 32;
    cfg.im_w = 48;
    cfg.bev.H = 16;
    cfg.bev.W = 16;
    const auto a = generate_samples(500, 4, cfg);
    const auto b = generate_samples(500, 4, cfg);
    REQUIRE(a.size() == 4);
    for (size_t i = 0; i < a.size(); i++) {
        CHECK(std::memcmp(a[i].images.data(), b[i].images.data(),
                          sizeof(scalar) * size_t(a[i].images.numel())) == 0);
        CHECK(a[i].gt.instances == b[i].gt.instances);
    }

    // contract: output equals generate_sample over the non-throwing candidates
    std::vector<SequenceSample> manual;
    for (uint64_t cand = 500; manual.size() < 4; cand++) {
        try {
            manual.push_back(generate_sample(cand, cfg));
        } catch (const GenerationError&) {
        }
    }
    for (size_t i = 0; i < a.size(); i++)
        CHECK(std::memcmp(a[i].images.data(), manual[i].images.data(),
                          sizeof(scalar) * size_t(a[i].images.numel())) == 0);
}
