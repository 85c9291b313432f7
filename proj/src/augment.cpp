#include "bevpred/augment.hpp"

#include <cmath>

#include "bevpred/kernels.hpp"

namespace bevpred {

Tensor warp_image(const Tensor& chw, double zoom, double roll) {
    if (chw.rank() != 3) throw ShapeError("warp_image expects [C,H,W]");
    const int64_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
    const double cu = 0.5 * static_cast<double>(w), cv = 0.5 * static_cast<double>(h);
    const double cs = std::cos(roll), sn = std::sin(roll);
    Tensor coords({h * w, 2});
    for (int64_t py = 0; py < h; py++) {
        for (int64_t px = 0; px < w; px++) {
            // output pixel centre -> source pixel centre: p_src = R(-roll) (p-c)/z + c
            const double du = (static_cast<double>(px) + 0.5 - cu) / zoom;
            const double dv = (static_cast<double>(py) + 0.5 - cv) / zoom;
            const double su = cs * du + sn * dv + cu;
            const double sv = -sn * du + cs * dv + cv;
            coords.data()[(py * w + px) * 2] = static_cast<scalar>(su - 0.5);
            coords.data()[(py * w + px) * 2 + 1] = static_cast<scalar>(sv - 0.5);
        }
    }
    Tensor flat({h * w, c});
    kernels::bilinear_sample_forward(flat.data(), chw.data(), coords.data(), c, h, w, h * w);
    // [H*W, C] -> [C, H, W]
    Tensor out({c, h, w});
    for (int64_t i = 0; i < h * w; i++)
        for (int64_t ch = 0; ch < c; ch++) out.data()[ch * h * w + i] = flat.data()[i * c + ch];
    return out;
}

SequenceSample augment_sample(const SequenceSample& s, Rng& rng, const AugmentConfig& cfg) {
    const double zoom = rng.uniform(cfg.zoom_min, cfg.zoom_max);
    const double roll = rng.uniform(-cfg.rot_max_deg, cfg.rot_max_deg) * M_PI / 180.0;
    const double theta = rng.uniform(-cfg.bev_rot_max_deg, cfg.bev_rot_max_deg) * M_PI / 180.0;
    const double tx = rng.uniform(-cfg.bev_trans_max, cfg.bev_trans_max);
    const double ty = rng.uniform(-cfg.bev_trans_max, cfg.bev_trans_max);

    SequenceSample out = s;
    const int64_t t_in = s.images.dim(0), n_cam = s.images.dim(1);
    const int64_t ih = s.images.dim(3), iw = s.images.dim(4);

    // ---- images + calibration ----
    Tensor images(s.images.shape());
    for (int64_t f = 0; f < t_in; f++) {
        for (int64_t cam = 0; cam < n_cam; cam++) {
            Tensor src({3, ih, iw});
            std::copy_n(s.images.data() + ((f * n_cam + cam) * 3) * ih * iw, 3 * ih * iw,
                        src.data());
            Tensor dst = warp_image(src, zoom, roll);
            std::copy_n(dst.data(), 3 * ih * iw,
                        images.data() + ((f * n_cam + cam) * 3) * ih * iw);
        }
    }
    out.images = images;
    for (auto& cam : out.rig) {
        // zoom about the image centre scales the focal lengths and pulls the
        // principal point toward the centre; the roll becomes a camera-frame
        // rotation about the optical axis (exact for square pixels)
        const double cu = 0.5 * cam.intr.width, cv = 0.5 * cam.intr.height;
        cam.intr.fx *= zoom;
        cam.intr.fy *= zoom;
        cam.intr.cx = zoom * (cam.intr.cx - cu) + cu;
        cam.intr.cy = zoom * (cam.intr.cy - cv) + cv;
        cam.extrinsic = compose(cam.extrinsic, Pose::rot_z(-roll));
    }

    // ---- rigid BEV jitter g: x' = R(theta) x + t, applied to every GT map ----
    const BEVGridConfig& grid = s.meta.bev;
    const int64_t t_out = s.gt.seg.dim(0), h = grid.H, wd = grid.W;
    GroundTruth gt;
    gt.seg = Tensor({t_out, h, wd});
    gt.flow = Tensor({t_out, 2, h, wd});
    gt.centerness = Tensor({t_out, 1, h, wd});
    gt.offset = Tensor({t_out, 2, h, wd});
    gt.instances.resize(static_cast<size_t>(t_out));

    const double cs = std::cos(theta), sn = std::sin(theta);
    const double cell_w = grid.dx(), cell_h = grid.dy();
    auto rotate_cells = [&](Tensor& vec2, const Tensor& seg_frame) {
        // channels are (dx, dy) in cell units; rotate in metric space
        const int64_t hw = h * wd;
        for (int64_t i = 0; i < hw; i++) {
            if (seg_frame.data()[i] < scalar(0.5)) {
                vec2.data()[i] = 0;
                vec2.data()[hw + i] = 0;
                continue;
            }
            const double mx = static_cast<double>(vec2.data()[i]) * cell_w;
            const double my = static_cast<double>(vec2.data()[hw + i]) * cell_h;
            vec2.data()[i] = static_cast<scalar>((cs * mx - sn * my) / cell_w);
            vec2.data()[hw + i] = static_cast<scalar>((sn * mx + cs * my) / cell_h);
        }
    };

    for (int64_t f = 0; f < t_out; f++) {
        gt.instances[static_cast<size_t>(f)] =
            warp_bev_nearest(s.gt.instances[static_cast<size_t>(f)], theta, tx, ty, grid);
        // segmentation follows the warped labels so the two stay consistent
        Tensor seg_f({1, h, wd});
        for (int64_t i = 0; i < h * wd; i++)
            seg_f.data()[i] = gt.instances[static_cast<size_t>(f)][static_cast<size_t>(i)] != 0
                                  ? scalar(1)
                                  : scalar(0);
        std::copy_n(seg_f.data(), h * wd, gt.seg.data() + f * h * wd);

        Tensor cen({1, h, wd});
        std::copy_n(s.gt.centerness.data() + f * h * wd, h * wd, cen.data());
        Tensor cen_w = warp_bev(cen, theta, tx, ty, grid);
        std::copy_n(cen_w.data(), h * wd, gt.centerness.data() + f * h * wd);

        for (Tensor* pair : {&gt.flow, &gt.offset}) {
            const Tensor& src = pair == &gt.flow ? s.gt.flow : s.gt.offset;
            Tensor v({2, h, wd});
            std::copy_n(src.data() + f * 2 * h * wd, 2 * h * wd, v.data());
            Tensor vw = warp_bev(v, theta, tx, ty, grid);
            rotate_cells(vw, seg_f);
            std::copy_n(vw.data(), 2 * h * wd, pair->data() + f * 2 * h * wd);
        }
    }
    out.gt = std::move(gt);

    // new BEV anchor: grid' = grid o g^-1
    Pose g = Pose::rot_z(theta);
    g.translation = {tx, ty, 0.0};
    out.grid_pose = compose(s.bev_anchor(), inverse(g));
    out.has_grid_pose = true;
    return out;
}

}  // namespace bevpred
