#include "bevpred/model.hpp"

namespace bevpred {

namespace {
Rng make_rng(uint64_t seed) { return Rng(seed); }
}  // namespace

Model::Model(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
    Rng rng = make_rng(seed);
    // construction order fixes the rng stream: the trunk draws first so its
    // initial weights match across temporal-pattern variants of the same seed
    img_ = ImageEncoder(params_, "img", cfg.img, rng);
    bev_ = BevEncoder(params_, "bev", cfg.bev, cfg.grid.H, cfg.grid.W, rng);
    stage1_head_ = Conv2dLayer(params_, "stage1.seg", cfg.bev.c_bev, 2, 1, 1, 0, rng);
    temporal_ = TemporalEncoder(params_, "temporal", cfg.bev.c_bev, cfg.grid.H, cfg.grid.W,
                                cfg.temporal, rng);
    HeadsConfig hc;
    hc.c = cfg.bev.c_bev;
    hc.t_in = cfg.t_in;
    hc.t_out = cfg.t_out();
    heads_ = Heads(params_, "heads", hc, rng);
    log_vars_ = params_.add("loss.log_vars", Tensor::zeros({4}, true));
}

Tensor Model::encode_trunk(const Tensor& images, const ReferenceSet& refs) const {
    if (images.rank() != 5 || images.dim(0) != cfg_.t_in || images.dim(2) != 3)
        throw ShapeError("model expects images [T_in,N_cam,3,H,W], got " +
                         shape_str(images.shape()));
    Tensor flat = reshape(images, {images.dim(0) * images.dim(1), 3, images.dim(3),
                                   images.dim(4)});
    Tensor fused = img_.forward(flat);
    return bev_.forward(fused, refs);
}

Tensor Model::stage1_logits(const Tensor& f_refined) const {
    Tensor present = slice(f_refined, 0, cfg_.t_in - 1, 1);
    return stage1_head_.forward(present);
}

PredictionOutput Model::predict(const Tensor& f_refined, bool with_aux) const {
    Tensor f_tmp = temporal_.forward(f_refined);
    return heads_.forward(f_tmp, with_aux);
}

const std::vector<std::string>& Model::trunk_prefixes() {
    static const std::vector<std::string> p{"img.", "bev.", "stage1."};
    return p;
}

void Model::set_trunk_requires_grad(bool rg) {
    for (const auto& prefix : trunk_prefixes()) params_.set_requires_grad_prefix(prefix, rg);
}

}  // namespace bevpred
