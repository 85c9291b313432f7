#include "bevpred/image_encoder.hpp"

namespace bevpred {

ImageEncoder::ImageEncoder(ParamMap& pm, const std::string& name, const ImageEncoderConfig& cfg,
                           Rng& rng)
    : cfg_(cfg),
      s1_(pm, name + ".s1", 3, cfg.c1 / 4, 2, rng),
      s2_(pm, name + ".s2", cfg.c1 / 4, cfg.c1 / 2, 2, rng),
      s3_(pm, name + ".s3", cfg.c1 / 2, cfg.c1, 2, rng),
      s4_(pm, name + ".s4", cfg.c1, cfg.c2, 2, rng),
      n1_(pm, name + ".n1", cfg.c1 + cfg.c2, cfg.c_f, 1, rng),
      n2_(pm, name + ".n2", cfg.c_f, cfg.c_f, 1, rng) {}

std::pair<Tensor, Tensor> ImageEncoder::backbone(const Tensor& images) const {
    if (images.rank() != 4 || images.dim(1) != 3)
        throw ShapeError("image encoder expects [B,3,H,W], got " + shape_str(images.shape()));
    if (images.dim(2) % 16 != 0 || images.dim(3) % 16 != 0)
        throw ShapeError("image H and W must be divisible by 16");
    Tensor x = s1_.forward(images);   // stride 2
    x = s2_.forward(x);               // stride 4
    Tensor f8 = s3_.forward(x);       // stride 8
    Tensor f16 = s4_.forward(f8);     // stride 16
    return {f8, f16};
}

Tensor ImageEncoder::neck(const Tensor& feat8, const Tensor& feat16) const {
    Tensor up = upsample_nearest2d(feat16, 2);
    Tensor cat = concat({feat8, up}, 1);
    return n2_.forward(n1_.forward(cat));
}

Tensor ImageEncoder::forward(const Tensor& images) const {
    auto [f8, f16] = backbone(images);
    return neck(f8, f16);
}

}  // namespace bevpred
