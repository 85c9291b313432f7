#include "bevpred/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numeric>

#include "bevpred/imageio.hpp"
#include "bevpred/losses.hpp"
#include "bevpred/metrics.hpp"
#include "bevpred/optim.hpp"
#include "bevpred/postprocess.hpp"

namespace bevpred {

ModelConfig model_config_from(const TrainConfig& cfg) {
    ModelConfig mc;
    mc.t_in = cfg.t_in;
    mc.t_pred = cfg.t_pred;
    mc.grid.H = cfg.bev_h;
    mc.grid.W = cfg.bev_w;
    mc.grid.x_range = cfg.x_range;
    mc.grid.y_range = cfg.y_range;
    mc.img.c1 = cfg.c1;
    mc.img.c2 = cfg.c2;
    mc.img.c_f = cfg.c_bev;
    mc.bev.c_bev = cfg.c_bev;
    mc.bev.n_layers = cfg.n_bev_layers;
    mc.bev.heads = cfg.attn_heads;
    mc.temporal.pattern = cfg.pattern;
    mc.temporal.n_blocks = cfg.n_blocks;
    mc.temporal.patch = cfg.patch;
    mc.temporal.heads = cfg.attn_heads;
    return mc;
}

namespace {

std::vector<SequenceSample> load_train_dataset(const TrainConfig& cfg) {
    if (cfg.dataset.empty()) throw std::runtime_error("no dataset path configured");
    std::vector<SequenceSample> samples = read_dataset(cfg.dataset);
    if (samples.empty()) throw std::runtime_error("dataset is empty: " + cfg.dataset);
    const auto& bev = samples[0].meta.bev;
    if (bev.H != cfg.bev_h || bev.W != cfg.bev_w)
        throw std::runtime_error("config BEV grid does not match the dataset grid");
    for (const auto& s : samples)
        if (s.meta.t_in != cfg.t_in || s.meta.t_pred != cfg.t_pred)
            throw std::runtime_error("config horizon does not match the dataset");
    return samples;
}

std::vector<Tensor> collect_params(ParamMap& pm, const std::vector<std::string>& prefixes) {
    std::vector<Tensor> out;
    for (auto& [name, t] : pm.items()) {
        for (const auto& p : prefixes) {
            if (name.rfind(p, 0) == 0) {
                out.push_back(t);
                break;
            }
        }
    }
    return out;
}

ReferenceSet refs_for(const SequenceSample& s) {
    return build_reference_set(s.meta.bev, s.rig, s.ego_poses, s.bev_anchor());
}

// 0/1 ground-truth segmentation pooled by any-occupied over f x f cells, for the
// coarse auxiliary heads
Tensor pool_seg(const Tensor& seg, int64_t f) {
    const int64_t t = seg.dim(0), h = seg.dim(1), w = seg.dim(2);
    Tensor out({t, h / f, w / f});
    for (int64_t fr = 0; fr < t; fr++) {
        for (int64_t y = 0; y < h / f; y++) {
            for (int64_t x = 0; x < w / f; x++) {
                scalar v = 0;
                for (int64_t dy = 0; dy < f; dy++)
                    for (int64_t dx = 0; dx < f; dx++)
                        v = std::max(v, seg.data()[(fr * h + y * f + dy) * w + x * f + dx]);
                out.data()[(fr * (h / f) + y) * (w / f) + x] = v;
            }
        }
    }
    return out;
}

// [T,...] -> [1,...] copy of one frame
Tensor gt_frame(const Tensor& maps, int64_t frame) {
    std::vector<int64_t> shape(maps.shape().begin(), maps.shape().end());
    shape[0] = 1;
    Tensor out(shape);
    const int64_t stride = maps.numel() / maps.dim(0);
    std::copy_n(maps.data() + frame * stride, stride, out.data());
    return out;
}

Tensor stage1_sample_loss(const Model& model, const SequenceSample& s, const std::string& mode) {
    ReferenceSet refs = refs_for(s);
    Tensor f = model.encode_trunk(s.images, refs);
    Tensor logits = model.stage1_logits(f);
    // output frame 1 is the present time
    return seg_loss(logits, gt_frame(s.gt.seg, 1), mode);
}

Tensor stage2_sample_loss(const Model& model, const Tensor& f_trunk, const SequenceSample& s,
                          const std::string& mode) {
    PredictionOutput p = model.predict(f_trunk, /*with_aux=*/true);
    Tensor l_seg = seg_loss(p.seg_logits, s.gt.seg, mode);
    // deep supervision on the coarse decoder scales
    l_seg = add(l_seg, scale(seg_loss(p.aux_seg[0], pool_seg(s.gt.seg, 2), mode), 0.5f));
    l_seg = add(l_seg, scale(seg_loss(p.aux_seg[1], pool_seg(s.gt.seg, 4), mode), 0.25f));
    Tensor l_flow = flow_loss(p.flow, s.gt.flow, s.gt.seg);
    Tensor l_cen = centerness_loss(p.centerness, s.gt.centerness);
    Tensor l_off = offset_loss(p.offset, s.gt.offset, s.gt.seg);
    return total_loss(l_seg, l_flow, l_cen, l_off, model.log_vars());
}

void load_trunk(Model& model, const std::string& path) {
    if (path.empty())
        throw std::runtime_error("stage 2 requires init_checkpoint (the stage-1 output)");
    auto tensors = load_tensors(path);
    std::map<std::string, Tensor> by_name;
    for (auto& [name, t] : tensors) by_name.emplace(name, t);
    for (auto& [name, param] : model.params().items()) {
        bool is_trunk = false;
        for (const auto& p : Model::trunk_prefixes())
            if (name.rfind(p, 0) == 0) is_trunk = true;
        if (!is_trunk) continue;  // temporal/heads/loss keep this run's own init
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw std::runtime_error("checkpoint is missing trunk parameter " + name);
        if (it->second.shape() != param.shape())
            throw ShapeError("checkpoint shape mismatch for " + name + ": " +
                             shape_str(it->second.shape()) + " vs " + shape_str(param.shape()));
        std::copy_n(it->second.data(), param.numel(), param.ptr()->values.data());
    }
}

std::vector<size_t> shuffled_order(size_t n, Rng& rng) {
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    for (size_t i = n; i > 1; i--) {
        const size_t j = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1));
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

double stage1_train_iou(const Model& model, const std::vector<SequenceSample>& samples) {
    const int64_t h = samples[0].meta.bev.H, w = samples[0].meta.bev.W;
    double acc = 0;
    for (const auto& s : samples) {
        ReferenceSet refs = refs_for(s);
        Tensor logits = model.stage1_logits(model.encode_trunk(s.images, refs));
        std::vector<uint8_t> pm(static_cast<size_t>(h) * w), gm(pm.size());
        for (int64_t i = 0; i < h * w; i++) {
            pm[static_cast<size_t>(i)] = logits.data()[h * w + i] > logits.data()[i] ? 1 : 0;
            gm[static_cast<size_t>(i)] = s.gt.seg.data()[h * w + i] > scalar(0.5) ? 1 : 0;
        }
        acc += iou_metric({pm}, {gm});
    }
    return acc / static_cast<double>(samples.size());
}

TrainResult run_training(const TrainConfig& cfg) {
    const bool stage2 = cfg.stage == 2;
    std::vector<SequenceSample> samples = load_train_dataset(cfg);
    Model model(model_config_from(cfg), cfg.seed);
    if (stage2) {
        load_trunk(model, cfg.init_checkpoint);
        model.set_trunk_requires_grad(false);
    }

    const std::vector<std::string> train_prefixes =
        stage2 ? std::vector<std::string>{"temporal.", "heads.", "loss."}
               : std::vector<std::string>{"img.", "bev.", "stage1."};
    std::vector<Tensor> opt_params = collect_params(model.params(), train_prefixes);
    AdamWConfig acfg;
    acfg.weight_decay = cfg.weight_decay;
    AdamW opt(opt_params, acfg);

    const size_t n = samples.size();
    const int bs = std::max(1, cfg.batch_size);
    const int64_t steps_per_epoch =
        static_cast<int64_t>((n + static_cast<size_t>(bs) - 1) / static_cast<size_t>(bs));
    const int64_t total_steps =
        cfg.max_steps > 0 ? cfg.max_steps : steps_per_epoch * std::max(1, cfg.epochs);

    Rng order_rng(cfg.seed ^ 0x9E3779B97F4A7C15ull);
    Rng aug_rng(cfg.seed ^ 0xC2B2AE3D27D4EB4Full);

    // frozen trunk + fixed inputs: the refined BEV features never change, so they
    // are computed once per sample
    std::vector<Tensor> trunk_cache;
    if (stage2 && !cfg.augment) {
        trunk_cache.reserve(n);
        for (const auto& s : samples)
            trunk_cache.push_back(model.encode_trunk(s.images, refs_for(s)));
    }

    TrainResult result;
    result.loss_trace.reserve(static_cast<size_t>(total_steps));
    int64_t step = 0;
    for (int epoch = 0; step < total_steps; epoch++) {
        std::vector<size_t> order = shuffled_order(n, order_rng);
        for (size_t pos = 0; pos < n && step < total_steps; pos += static_cast<size_t>(bs)) {
            const size_t b_actual = std::min(static_cast<size_t>(bs), n - pos);
            opt.zero_grad();
            double batch_loss = 0;
            for (size_t k = 0; k < b_actual; k++) {
                const size_t idx = order[pos + k];
                const scalar inv_b = static_cast<scalar>(1.0 / static_cast<double>(b_actual));
                GradTape tape;
                Tensor loss;
                if (!stage2) {
                    SequenceSample aug =
                        cfg.augment ? augment_sample(samples[idx], aug_rng) : samples[idx];
                    TapeScope scope(tape);
                    loss = scale(stage1_sample_loss(model, aug, cfg.seg_topk), inv_b);
                } else {
                    // the frozen trunk always runs outside the tape, so gradients
                    // on it are structurally impossible, not merely zero
                    const SequenceSample* sp = &samples[idx];
                    SequenceSample aug;
                    Tensor f_trunk;
                    if (cfg.augment) {
                        aug = augment_sample(samples[idx], aug_rng);
                        sp = &aug;
                        f_trunk = model.encode_trunk(aug.images, refs_for(aug));
                    } else {
                        f_trunk = trunk_cache[idx];
                    }
                    TapeScope scope(tape);
                    loss = scale(stage2_sample_loss(model, f_trunk, *sp, cfg.seg_topk), inv_b);
                }
                batch_loss += static_cast<double>(loss.item());
                backward(loss, tape);
            }
            if (!std::isfinite(batch_loss))
                throw NumericError("training diverged: non-finite loss at step " +
                                   std::to_string(step));
            clip_grad_norm(opt_params, cfg.grad_clip);
            const double lr = one_cycle_lr(step, total_steps, cfg.max_lr, cfg.warmup_frac);
            opt.step(lr);
            result.loss_trace.push_back(batch_loss);
            if (cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == total_steps))
                std::printf("stage %d  step %6lld/%lld  lr %.3e  loss %.6f\n", cfg.stage,
                            static_cast<long long>(step), static_cast<long long>(total_steps),
                            lr, batch_loss);
            step++;
        }
    }

    if (stage2) {
        EvalResult ev = evaluate_model(model, samples, cfg.min_cells);
        result.train_iou = ev.iou;
        result.train_vpq = ev.vpq;
    } else {
        result.train_seg_iou = stage1_train_iou(model, samples);
    }
    save_checkpoint(cfg.out_checkpoint, model.params());
    result.checkpoint = cfg.out_checkpoint;
    if (cfg.log_every > 0) {
        if (stage2)
            std::printf("stage 2 done: train IoU %.4f  VPQ %.4f  -> %s\n", result.train_iou,
                        result.train_vpq, cfg.out_checkpoint.c_str());
        else
            std::printf("stage 1 done: present-frame IoU %.4f  -> %s\n", result.train_seg_iou,
                        cfg.out_checkpoint.c_str());
    }
    return result;
}

}  // namespace

TrainResult train_stage1(const TrainConfig& cfg) {
    TrainConfig c = cfg;
    c.stage = 1;
    return run_training(c);
}

TrainResult train_stage2(const TrainConfig& cfg) {
    TrainConfig c = cfg;
    c.stage = 2;
    return run_training(c);
}

EvalResult evaluate_model(const Model& model, const std::vector<SequenceSample>& samples,
                          int min_cells) {
    if (samples.empty()) throw std::runtime_error("evaluate: empty sample list");
    const int64_t t_out = model.config().t_out();
    const int eval_frames = static_cast<int>(t_out) - 1;  // present + T_pred futures
    EvalResult res;
    res.frame_iou.assign(static_cast<size_t>(eval_frames), 0.0);
    res.frame_vpq.assign(static_cast<size_t>(eval_frames), 0.0);

    for (const auto& s : samples) {
        ReferenceSet refs = refs_for(s);
        Tensor f = model.encode_trunk(s.images, refs);
        PredictionOutput p = model.predict(f, false);
        const int64_t h = p.seg_logits.dim(2), w = p.seg_logits.dim(3);
        auto labels = make_instance_prediction(p.seg_logits, p.flow, min_cells);

        std::vector<std::vector<uint8_t>> pm, gm;
        std::vector<std::vector<int>> pl, gl;
        for (int64_t fr = 1; fr < t_out; fr++) {
            std::vector<uint8_t> pmask(static_cast<size_t>(h) * w), gmask(pmask.size());
            const scalar* l0 = p.seg_logits.data() + fr * 2 * h * w;
            const scalar* l1 = l0 + h * w;
            const scalar* gseg = s.gt.seg.data() + fr * h * w;
            for (int64_t i = 0; i < h * w; i++) {
                pmask[static_cast<size_t>(i)] = l1[i] > l0[i] ? 1 : 0;
                gmask[static_cast<size_t>(i)] = gseg[i] > scalar(0.5) ? 1 : 0;
            }
            pm.push_back(std::move(pmask));
            gm.push_back(std::move(gmask));
            pl.push_back(labels[static_cast<size_t>(fr)]);
            gl.push_back(s.gt.instances[static_cast<size_t>(fr)]);
        }
        res.iou += iou_metric(pm, gm);
        std::vector<VpqFrame> detail;
        res.vpq += vpq_metric(pl, gl, &detail);
        for (int fr = 0; fr < eval_frames; fr++) {
            res.frame_iou[static_cast<size_t>(fr)] +=
                iou_metric({pm[static_cast<size_t>(fr)]}, {gm[static_cast<size_t>(fr)]});
            res.frame_vpq[static_cast<size_t>(fr)] += detail[static_cast<size_t>(fr)].term;
        }
    }
    const double inv = 1.0 / static_cast<double>(samples.size());
    res.iou *= inv;
    res.vpq *= inv;
    for (auto& v : res.frame_iou) v *= inv;
    for (auto& v : res.frame_vpq) v *= inv;
    res.n_samples = static_cast<int>(samples.size());
    return res;
}

void infer_sample(const Model& model, const SequenceSample& sample, const std::string& out_dir,
                  int min_cells) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    ReferenceSet refs = refs_for(sample);
    Tensor f = model.encode_trunk(sample.images, refs);
    PredictionOutput p = model.predict(f, false);
    const int64_t t_out = p.seg_logits.dim(0), h = p.seg_logits.dim(2), w = p.seg_logits.dim(3);
    auto labels = make_instance_prediction(p.seg_logits, p.flow, min_cells);

    char name[64];
    for (int64_t fr = 0; fr < t_out; fr++) {
        Tensor prob({h, w}), cen({h, w});
        const scalar* l0 = p.seg_logits.data() + fr * 2 * h * w;
        const scalar* l1 = l0 + h * w;
        for (int64_t i = 0; i < h * w; i++) {
            const double m = std::max(l0[i], l1[i]);
            const double e0 = std::exp(static_cast<double>(l0[i]) - m);
            const double e1 = std::exp(static_cast<double>(l1[i]) - m);
            prob.data()[i] = static_cast<scalar>(e1 / (e0 + e1));
        }
        std::copy_n(p.centerness.data() + fr * h * w, h * w, cen.data());
        std::snprintf(name, sizeof name, "seg_%02d.pgm", static_cast<int>(fr));
        write_heatmap_pgm((fs::path(out_dir) / name).string(), prob);
        std::snprintf(name, sizeof name, "center_%02d.pgm", static_cast<int>(fr));
        write_heatmap_pgm((fs::path(out_dir) / name).string(), cen);
        std::snprintf(name, sizeof name, "instances_%02d.png", static_cast<int>(fr));
        write_label_png((fs::path(out_dir) / name).string(), labels[static_cast<size_t>(fr)],
                        static_cast<int>(h), static_cast<int>(w));
    }
    save_tensors((fs::path(out_dir) / "prediction.bpft").string(),
                 {{"seg_logits", p.seg_logits},
                  {"flow", p.flow},
                  {"centerness", p.centerness},
                  {"offset", p.offset}});
}

std::vector<AblateRow> run_ablation(const TrainConfig& base) {
    std::vector<std::pair<std::string, int>> grid{{"none", 0}, {"TS", 1}, {"TS", 2},
                                                  {"TST", 1},  {"TST", 2}, {"TSST", 1},
                                                  {"TSST", 2}};
    std::vector<SequenceSample> val =
        read_dataset(base.val_dataset.empty() ? base.dataset : base.val_dataset);

    std::vector<AblateRow> rows;
    for (const auto& [pattern, blocks] : grid) {
        TrainConfig c = base;
        c.stage = 2;
        c.pattern = pattern;
        c.n_blocks = std::max(1, blocks);
        c.out_checkpoint = base.out_checkpoint + "." + pattern + std::to_string(blocks);
        TrainResult tr = train_stage2(c);

        Model model(model_config_from(c), c.seed);
        load_checkpoint(tr.checkpoint, model.params());
        EvalResult ev = evaluate_model(model, val, c.min_cells);
        rows.push_back({pattern, blocks, ev.iou, ev.vpq});
        if (c.log_every > 0)
            std::printf("ablate %-5s x%d: val IoU %.4f  VPQ %.4f\n", pattern.c_str(), blocks,
                        ev.iou, ev.vpq);
    }
    return rows;
}

}  // namespace bevpred
