#pragma once

#include "bevpred/bev_encoder.hpp"
#include "bevpred/heads.hpp"
#include "bevpred/image_encoder.hpp"
#include "bevpred/temporal.hpp"

namespace bevpred {

struct ModelConfig {
    int64_t t_in = 3;
    int64_t t_pred = 4;
    BEVGridConfig grid;
    ImageEncoderConfig img;
    BevEncoderConfig bev;
    TemporalConfig temporal;

    int64_t t_out() const { return t_pred + 2; }  // one past frame, present, t_pred futures
};

// Full pipeline: camera encoder -> query-based BEV projection -> UNet refiner
// (the "trunk"), then difference-guided temporal attention and multi-scale
// prediction heads. A small present-frame segmentation head supports the
// trunk-only pretraining stage.
class Model {
public:
    explicit Model(const ModelConfig& cfg, uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    ParamMap& params() { return params_; }
    const ParamMap& params() const { return params_; }

    // images [T_in, N_cam, 3, H_im, W_im] -> refined BEV features [T_in, C, H, W]
    Tensor encode_trunk(const Tensor& images, const ReferenceSet& refs) const;
    // present-frame segmentation logits for pretraining: [1, 2, H, W]
    Tensor stage1_logits(const Tensor& f_refined) const;
    // difference features + temporal attention + heads
    PredictionOutput predict(const Tensor& f_refined, bool with_aux = false) const;

    Tensor log_vars() const { return log_vars_; }
    std::vector<char> layer_plan() const {
        return TemporalEncoder::layer_plan(cfg_.temporal.pattern, cfg_.temporal.n_blocks);
    }

    // parameter name prefixes owned by the trunk (frozen in stage 2)
    static const std::vector<std::string>& trunk_prefixes();
    void set_trunk_requires_grad(bool rg);

private:
    ModelConfig cfg_;
    ParamMap params_;
    ImageEncoder img_;
    BevEncoder bev_;
    Conv2dLayer stage1_head_;
    TemporalEncoder temporal_;
    Heads heads_;
    Tensor log_vars_;  // [4] uncertainty log-variances for the combined loss
};

}  // namespace bevpred
