#pragma once

#include <string>
#include <vector>

#include "bevpred/augment.hpp"
#include "bevpred/dataset.hpp"
#include "bevpred/model.hpp"

namespace bevpred {

// Flat training configuration; the JSON config file and CLI flags mirror these
// field names exactly.
struct TrainConfig {
    int stage = 1;
    int epochs = 30;
    double max_lr = 3e-4;
    int batch_size = 1;  // gradient accumulation count
    uint64_t seed = 1;

    std::string pattern = "TST";
    int n_blocks = 2;

    int bev_h = 32, bev_w = 32;
    double x_range = 16.0, y_range = 16.0;
    int c_bev = 32;
    int n_bev_layers = 2;
    int attn_heads = 4;
    int c1 = 32, c2 = 64;
    int patch = 4;
    int t_in = 3, t_pred = 4;

    bool augment = true;
    std::string seg_topk = "loss";  // or "confidence"
    int min_cells = 2;

    double grad_clip = 5.0;
    double weight_decay = 0.01;
    double warmup_frac = 0.3;
    int max_steps = 0;  // 0: epochs decide; otherwise hard cap on optimizer steps
    int log_every = 10;

    std::string dataset;
    std::string val_dataset;
    std::string init_checkpoint;  // stage 2: trunk source (required)
    std::string out_checkpoint = "model.bpft";
};

ModelConfig model_config_from(const TrainConfig& cfg);

struct TrainResult {
    std::vector<double> loss_trace;  // batch-mean total loss per optimizer step
    double train_seg_iou = -1;       // stage 1: present-frame segmentation IoU
    double train_iou = -1;           // stage 2: Eq.-style IoU on the training set
    double train_vpq = -1;
    std::string checkpoint;
};

TrainResult train_stage1(const TrainConfig& cfg);
TrainResult train_stage2(const TrainConfig& cfg);

struct EvalResult {
    double iou = 0;
    double vpq = 0;
    int n_samples = 0;
    std::vector<double> frame_iou;  // per evaluated future frame (t = 0..T_pred)
    std::vector<double> frame_vpq;
};

// Shared evaluation path: full forward, instance post-processing, metrics over
// the evaluated window (present frame plus T_pred futures).
EvalResult evaluate_model(const Model& model, const std::vector<SequenceSample>& samples,
                          int min_cells = 2);

// writes per-frame heatmaps (16-bit PGM), colored instance maps (PNG) and the raw
// prediction tensors into out_dir
void infer_sample(const Model& model, const SequenceSample& sample, const std::string& out_dir,
                  int min_cells = 2);

struct AblateRow {
    std::string pattern;
    int n_blocks = 0;
    double val_iou = 0, val_vpq = 0;
};

// {TS,TST,TSST} x {1,2} plus the no-temporal baseline, each trained with stage 2
// from the same trunk checkpoint and evaluated on the validation set.
std::vector<AblateRow> run_ablation(const TrainConfig& base);

}  // namespace bevpred
