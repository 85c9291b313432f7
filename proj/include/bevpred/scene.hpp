#pragma once

#include <cstdint>
#include <vector>

#include "bevpred/geometry.hpp"
#include "bevpred/tensor.hpp"

namespace bevpred {

struct GenerationError : std::runtime_error {
    explicit GenerationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Kinematic box agent: world poses for every frame of the sequence.
struct AgentTrack {
    int id = 0;  // stable, 1-based
    double length = 4.5, width = 1.9, height = 1.6;
    std::vector<Pose> traj;     // planar world poses (yaw only)
    std::vector<double> speed;  // m/s per frame
};

struct Scenario {
    uint64_t seed = 0;
    std::vector<AgentTrack> agents;
    std::vector<Pose> ego;  // world poses, t_in + t_pred frames
    Rig rig;
    double frame_dt = 0.5;
    int t_in = 3, t_pred = 4;

    int t_total() const { return t_in + t_pred; }
    int present() const { return t_in - 1; }
};

struct GenConfig {
    int t_in = 3, t_pred = 4;
    double frame_dt = 0.5;  // 2 Hz
    int min_agents = 1, max_agents = 5;
    double speed_min = 0.0, speed_max = 2.0;
    double turn_rate_max = 0.3;  // |rad/s| for turning agents
    double ego_speed_max = 1.0;
    double ego_turn_rate_max = 0.08;
    double agent_length_min = 3.6, agent_length_max = 5.0;
    double agent_width_min = 1.8, agent_width_max = 2.1;
    int im_h = 64, im_w = 96;
    int n_cams = 2;
    BEVGridConfig bev;
    int max_place_retries = 200;
};

// Ground truth over the output window, everything expressed in the grid
// (present-ego) frame so static agents occupy identical cells in all frames.
//   frame k of T_out covers sequence time present-1+k
//   flow[k]   = per-instance center displacement, center(t-1) - center(t), in cells
//   offset[k] = vector from each occupied cell to its instance's center cell
struct GroundTruth {
    Tensor seg;                               // [T_out, H, W], 0/1
    std::vector<std::vector<int>> instances;  // per frame: H*W labels, 0 = background
    Tensor flow;                              // [T_out, 2, H, W], ch0 = dx (cols), ch1 = dy (rows)
    Tensor centerness;                        // [T_out, 1, H, W]
    Tensor offset;                            // [T_out, 2, H, W]
};

struct SampleMeta {
    int t_in = 3, t_pred = 4, t_out = 6;
    int n_cam = 2, im_h = 64, im_w = 96;
    double frame_dt = 0.5;
    BEVGridConfig bev;
};

struct SequenceSample {
    SampleMeta meta;
    Tensor images;                // [T_in, N_cam, 3, H_im, W_im] in [0,1]
    Rig rig;
    std::vector<Pose> ego_poses;  // world poses of the input frames
    GroundTruth gt;
    // BEV anchor; defaults to the present ego pose, overridden by augmentation
    bool has_grid_pose = false;
    Pose grid_pose;

    Pose bev_anchor() const { return has_grid_pose ? grid_pose : ego_poses.back(); }
};

// Two-camera forward rig covering roughly 100 degrees in front of the ego.
Rig default_rig(int im_w, int im_h);

// Deterministic function of (seed, cfg). Agents follow straight or constant
// turn-rate motion and never overlap in any frame; throws GenerationError
// when placement retries run out.
Scenario generate_scenario(uint64_t seed, const GenConfig& cfg);

// Flat-ground render of frame t: painter-ordered solid boxes over a gradient
// that encodes ray/ground-plane distance.
Tensor render_frame(const Scenario& scn, int t);

// Rasterizes segmentation/instances/flow/centerness/offset for the T_out
// output frames starting one step before `present_idx`. `grid_pose` anchors
// the BEV lattice; when absent the ego pose at present_idx is used.
GroundTruth rasterize_gt(const Scenario& scn, int present_idx, const BEVGridConfig& cfg);
GroundTruth rasterize_gt(const Scenario& scn, int present_idx, const BEVGridConfig& cfg,
                         const Pose& grid_pose);

// Full sample: inputs rendered for the first t_in frames plus ground truth.
SequenceSample generate_sample(uint64_t seed, const GenConfig& cfg);

// Batch generation. Seeds whose placement fails are skipped deterministically
// (the candidate seed advances), so the output depends only on (base_seed,
// count, cfg). Throws GenerationError if the skip budget runs out.
std::vector<SequenceSample> generate_samples(uint64_t base_seed, int count,
                                             const GenConfig& cfg);

// centerness falloff, in cells
constexpr double kCenterSigma = 1.5;

}  // namespace bevpred
