#include "bevpred/dataset.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "bevpred/serialize.hpp"

namespace bevpred {

namespace {

constexpr char kMagic[4] = {'B', 'P', 'F', 'D'};
constexpr uint32_t kVersion = 1;

void write_pose(io::Sink& s, const Pose& p) {
    for (double v : p.rotation) s.f32(static_cast<float>(v));
    for (double v : p.translation) s.f32(static_cast<float>(v));
}

Pose read_pose(io::Source& s) {
    Pose p;
    for (double& v : p.rotation) v = s.f32();
    for (double& v : p.translation) v = s.f32();
    return p;
}

void write_sample(io::Sink& s, const SequenceSample& sm) {
    s.crc_reset();
    // config block
    s.u32(static_cast<uint32_t>(sm.meta.t_in));
    s.u32(static_cast<uint32_t>(sm.meta.t_pred));
    s.u32(static_cast<uint32_t>(sm.meta.t_out));
    s.u32(static_cast<uint32_t>(sm.meta.bev.H));
    s.u32(static_cast<uint32_t>(sm.meta.bev.W));
    s.f32(static_cast<float>(sm.meta.bev.x_range));
    s.f32(static_cast<float>(sm.meta.bev.y_range));
    s.u32(static_cast<uint32_t>(sm.meta.n_cam));
    s.u32(static_cast<uint32_t>(sm.meta.im_h));
    s.u32(static_cast<uint32_t>(sm.meta.im_w));
    s.f32(static_cast<float>(sm.meta.frame_dt));
    s.u32(static_cast<uint32_t>(sm.meta.bev.z_anchors.size()));
    for (double z : sm.meta.bev.z_anchors) s.f32(static_cast<float>(z));
    // calibration block: cameras then input-frame ego poses
    for (const Camera& cam : sm.rig) {
        write_pose(s, cam.extrinsic);
        s.f32(static_cast<float>(cam.intr.fx));
        s.f32(static_cast<float>(cam.intr.fy));
        s.f32(static_cast<float>(cam.intr.cx));
        s.f32(static_cast<float>(cam.intr.cy));
        s.f32(static_cast<float>(cam.intr.width));
        s.f32(static_cast<float>(cam.intr.height));
    }
    for (const Pose& p : sm.ego_poses) write_pose(s, p);
    // tensors; integer labels ride along as floats (small ints are exact)
    io::write_named_tensor(s, "images", sm.images);
    io::write_named_tensor(s, "seg", sm.gt.seg);
    io::write_named_tensor(s, "flow", sm.gt.flow);
    io::write_named_tensor(s, "centerness", sm.gt.centerness);
    io::write_named_tensor(s, "offset", sm.gt.offset);
    Tensor inst({sm.meta.t_out, sm.meta.bev.H, sm.meta.bev.W});
    const int hw = sm.meta.bev.H * sm.meta.bev.W;
    for (int t = 0; t < sm.meta.t_out; t++)
        for (int i = 0; i < hw; i++)
            inst.data()[static_cast<int64_t>(t) * hw + i] =
                static_cast<scalar>(sm.gt.instances[static_cast<size_t>(t)][static_cast<size_t>(i)]);
    io::write_named_tensor(s, "instances", inst);
    s.write_crc();
}

SequenceSample read_sample(io::Source& s) {
    s.crc_reset();
    SequenceSample sm;
    sm.meta.t_in = static_cast<int>(s.u32());
    sm.meta.t_pred = static_cast<int>(s.u32());
    sm.meta.t_out = static_cast<int>(s.u32());
    sm.meta.bev.H = static_cast<int>(s.u32());
    sm.meta.bev.W = static_cast<int>(s.u32());
    sm.meta.bev.x_range = s.f32();
    sm.meta.bev.y_range = s.f32();
    sm.meta.n_cam = static_cast<int>(s.u32());
    sm.meta.im_h = static_cast<int>(s.u32());
    sm.meta.im_w = static_cast<int>(s.u32());
    sm.meta.frame_dt = s.f32();
    const uint32_t nz = s.u32();
    sm.meta.bev.z_anchors.clear();
    for (uint32_t i = 0; i < nz; i++) sm.meta.bev.z_anchors.push_back(s.f32());
    for (int c = 0; c < sm.meta.n_cam; c++) {
        Camera cam;
        cam.extrinsic = read_pose(s);
        cam.intr.fx = s.f32();
        cam.intr.fy = s.f32();
        cam.intr.cx = s.f32();
        cam.intr.cy = s.f32();
        cam.intr.width = static_cast<int>(std::lround(s.f32()));
        cam.intr.height = static_cast<int>(std::lround(s.f32()));
        sm.rig.push_back(cam);
    }
    for (int t = 0; t < sm.meta.t_in; t++) sm.ego_poses.push_back(read_pose(s));

    auto expect = [&](const char* name) -> Tensor {
        auto [n, t] = io::read_named_tensor(s);
        if (n != name)
            throw FileFormatError("dataset: expected tensor '" + std::string(name) + "', found '"
                                  + n + "'");
        return t;
    };
    sm.images = expect("images");
    sm.gt.seg = expect("seg");
    sm.gt.flow = expect("flow");
    sm.gt.centerness = expect("centerness");
    sm.gt.offset = expect("offset");
    const Tensor inst = expect("instances");
    const int hw = sm.meta.bev.H * sm.meta.bev.W;
    sm.gt.instances.resize(static_cast<size_t>(sm.meta.t_out));
    for (int t = 0; t < sm.meta.t_out; t++) {
        auto& lab = sm.gt.instances[static_cast<size_t>(t)];
        lab.resize(static_cast<size_t>(hw));
        for (int i = 0; i < hw; i++)
            lab[static_cast<size_t>(i)] = static_cast<int>(
                std::lround(inst.data()[static_cast<int64_t>(t) * hw + i]));
    }
    s.check_crc("dataset sample");
    return sm;
}

void read_header(io::Source& src, const std::string& path, uint32_t& count) {
    char magic[4];
    src.get(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw FileFormatError(path + ": not a sequence dataset (bad magic)");
    const uint32_t version = src.u32();
    if (version != kVersion)
        throw VersionError(path + ": dataset version " + std::to_string(version) + ", expected "
                           + std::to_string(kVersion));
    count = src.u32();
}

}  // namespace

void write_dataset(const std::string& path, const std::vector<SequenceSample>& samples) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FileFormatError("cannot open for writing: " + path);
    io::Sink sink(os);
    sink.put(kMagic, 4);
    sink.u32(kVersion);
    sink.u32(static_cast<uint32_t>(samples.size()));
    for (const SequenceSample& s : samples) write_sample(sink, s);
    os.flush();
    if (!os) throw FileFormatError("write failed: " + path);
}

std::vector<SequenceSample> read_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FileFormatError("cannot open: " + path);
    io::Source src(is);
    uint32_t count = 0;
    read_header(src, path, count);
    std::vector<SequenceSample> out;
    out.reserve(count);
    for (uint32_t i = 0; i < count; i++) out.push_back(read_sample(src));
    return out;
}

uint32_t dataset_sample_count(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FileFormatError("cannot open: " + path);
    io::Source src(is);
    uint32_t count = 0;
    read_header(src, path, count);
    return count;
}

}  // namespace bevpred
