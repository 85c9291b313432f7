#pragma once

#include <string>

#include "bevpred/tensor.hpp"

namespace bevpred {

// Cross-entropy over the hardest quartile of pixels per frame (top 25% by
// per-pixel loss). mode "confidence" selects the most confident quartile instead.
// logits [T,2,H,W], gt [T,H,W] with values 0/1.
Tensor seg_loss(const Tensor& logits, const Tensor& gt, const std::string& mode = "loss");

// Smooth-L1 (beta=1) on flow, averaged over GT-occupied cells, components and
// frames; exactly zero when the mask is empty. pred/gt [T,2,H,W], mask01 [T,H,W].
Tensor flow_loss(const Tensor& pred, const Tensor& gt, const Tensor& mask01);

// Plain MSE over the dense centerness map. pred/gt [T,1,H,W].
Tensor centerness_loss(const Tensor& pred, const Tensor& gt);

// L1 on the centre offsets, masked like the flow loss. pred/gt [T,2,H,W].
Tensor offset_loss(const Tensor& pred, const Tensor& gt, const Tensor& mask01);

struct LossBreakdown {
    double seg = 0, flow = 0, center = 0, offset = 0;
    double lambda_seg = 1, lambda_flow = 1, lambda_center = 1, lambda_offset = 1;
    double total = 0;
};

// Uncertainty-weighted sum: total = sum_i exp(-s_i) L_i + s_i with learnable
// log-variances s (shape [4], order: seg, flow, center, offset). With all s_i = 0
// this reduces to the plain sum of the four terms.
Tensor total_loss(const Tensor& l_seg, const Tensor& l_flow, const Tensor& l_center,
                  const Tensor& l_offset, const Tensor& log_vars,
                  LossBreakdown* breakdown = nullptr);

}  // namespace bevpred
