#pragma once

#include "bevpred/layers.hpp"

namespace bevpred {

struct ImageEncoderConfig {
    int64_t c1 = 32;   // channels at stride 8
    int64_t c2 = 64;   // channels at stride 16
    int64_t c_f = 32;  // fused output channels (matches the BEV embedding width)
};

// Strided conv backbone producing a two-scale pyramid, plus an upsample+concat
// neck fusing both scales at stride 8.
class ImageEncoder {
public:
    ImageEncoder() = default;
    ImageEncoder(ParamMap& pm, const std::string& name, const ImageEncoderConfig& cfg, Rng& rng);

    // images [B,3,H,W], H and W divisible by 16 -> {feat8 [B,c1,H/8,W/8], feat16 [B,c2,H/16,W/16]}
    std::pair<Tensor, Tensor> backbone(const Tensor& images) const;
    // -> fused [B,c_f,H/8,W/8]
    Tensor neck(const Tensor& feat8, const Tensor& feat16) const;
    Tensor forward(const Tensor& images) const;

    static constexpr int64_t kStride = 8;

private:
    ImageEncoderConfig cfg_;
    ConvBlock s1_, s2_, s3_, s4_;
    ConvBlock n1_, n2_;
};

}  // namespace bevpred
