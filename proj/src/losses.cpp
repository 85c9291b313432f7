#include "bevpred/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace bevpred {

Tensor seg_loss(const Tensor& logits, const Tensor& gt, const std::string& mode) {
    if (logits.rank() != 4 || logits.dim(1) != 2) throw ShapeError("seg_loss expects [T,2,H,W]");
    const int64_t t = logits.dim(0), h = logits.dim(2), w = logits.dim(3), hw = h * w;
    if (gt.numel() != t * hw) throw ShapeError("seg_loss: gt shape mismatch");
    if (mode != "loss" && mode != "confidence")
        throw ShapeError("seg_loss: unknown selection mode " + mode);

    Tensor ll = log_softmax(permute(logits, {0, 2, 3, 1}));  // [T,H,W,2]

    // one-hot against the log-likelihoods -> per-pixel CE
    Tensor onehot({t, h, w, 2});
    for (int64_t i = 0; i < t * hw; i++) {
        const bool fg = gt.data()[i] > scalar(0.5);
        onehot.data()[2 * i] = fg ? scalar(0) : scalar(1);
        onehot.data()[2 * i + 1] = fg ? scalar(1) : scalar(0);
    }
    Tensor ce = scale(sum_axis(mul(ll, onehot), 3), -1);  // [T,H,W]

    // hardest (or most confident) quartile per frame, selected on forward values
    const int64_t k = std::max<int64_t>(1, static_cast<int64_t>(std::llround(0.25 * hw)));
    Tensor sel({t, h, w});
    std::fill_n(sel.data(), t * hw, scalar(0));
    std::vector<int64_t> order(static_cast<size_t>(hw));
    for (int64_t f = 0; f < t; f++) {
        const scalar* score = ce.data() + f * hw;
        std::vector<scalar> conf;
        if (mode == "confidence") {
            conf.resize(static_cast<size_t>(hw));
            const scalar* lf = ll.data() + f * hw * 2;
            for (int64_t i = 0; i < hw; i++)
                conf[static_cast<size_t>(i)] = std::max(lf[2 * i], lf[2 * i + 1]);
            score = conf.data();
        }
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
            return score[a] > score[b];  // stable: ties keep raster order
        });
        const scalar wgt = static_cast<scalar>(1.0 / (static_cast<double>(k) * t));
        for (int64_t i = 0; i < k; i++) sel.data()[f * hw + order[static_cast<size_t>(i)]] = wgt;
    }
    return sum(mul(ce, sel));
}

namespace {

// constant per-element weights implementing the masked mean:
// weight = mask / (2 * count_t * T) so a single sum yields the loss
Tensor masked_mean_weights(const Tensor& mask01, int64_t channels) {
    const int64_t t = mask01.dim(0), hw = mask01.dim(1) * mask01.dim(2);
    Tensor wgt({t, channels, mask01.dim(1), mask01.dim(2)});
    for (int64_t f = 0; f < t; f++) {
        int64_t count = 0;
        for (int64_t i = 0; i < hw; i++)
            if (mask01.data()[f * hw + i] > scalar(0.5)) count++;
        const scalar v = count == 0 ? scalar(0)
                                    : static_cast<scalar>(1.0 / (static_cast<double>(channels) *
                                                                 count * t));
        for (int64_t c = 0; c < channels; c++)
            for (int64_t i = 0; i < hw; i++)
                wgt.data()[(f * channels + c) * hw + i] =
                    mask01.data()[f * hw + i] > scalar(0.5) ? v : scalar(0);
    }
    return wgt;
}

}  // namespace

Tensor flow_loss(const Tensor& pred, const Tensor& gt, const Tensor& mask01) {
    if (pred.rank() != 4 || pred.dim(1) != 2) throw ShapeError("flow_loss expects [T,2,H,W]");
    if (gt.numel() != pred.numel()) throw ShapeError("flow_loss: gt shape mismatch");
    constexpr double beta = 1.0;
    Tensor d = sub(pred, gt);
    // branch masks fixed from forward values; the two branches agree in value and
    // slope at |d| = beta, so the piecewise gradient is the true gradient
    Tensor quad_mask(d.shape()), lin_mask(d.shape());
    for (int64_t i = 0; i < d.numel(); i++) {
        const bool small = std::abs(static_cast<double>(d.data()[i])) < beta;
        quad_mask.data()[i] = small ? scalar(1) : scalar(0);
        lin_mask.data()[i] = small ? scalar(0) : scalar(1);
    }
    Tensor quad = scale(mul(d, d), static_cast<scalar>(0.5 / beta));
    Tensor lin = add_scalar(abs(d), static_cast<scalar>(-0.5 * beta));
    Tensor sl1 = add(mul(quad, quad_mask), mul(lin, lin_mask));
    return sum(mul(sl1, masked_mean_weights(mask01, 2)));
}

Tensor centerness_loss(const Tensor& pred, const Tensor& gt) {
    if (pred.numel() != gt.numel()) throw ShapeError("centerness_loss: shape mismatch");
    Tensor d = sub(pred, gt);
    return mean(mul(d, d));
}

Tensor offset_loss(const Tensor& pred, const Tensor& gt, const Tensor& mask01) {
    if (pred.rank() != 4 || pred.dim(1) != 2) throw ShapeError("offset_loss expects [T,2,H,W]");
    if (gt.numel() != pred.numel()) throw ShapeError("offset_loss: gt shape mismatch");
    return sum(mul(abs(sub(pred, gt)), masked_mean_weights(mask01, 2)));
}

Tensor total_loss(const Tensor& l_seg, const Tensor& l_flow, const Tensor& l_center,
                  const Tensor& l_offset, const Tensor& log_vars, LossBreakdown* breakdown) {
    if (log_vars.numel() != 4) throw ShapeError("total_loss expects 4 log-variances");
    const Tensor parts[4] = {l_seg, l_flow, l_center, l_offset};
    Tensor total;
    double lambdas[4];
    for (int i = 0; i < 4; i++) {
        Tensor s = slice(log_vars, 0, i, 1);       // [1]
        Tensor term = add(mul(exp(scale(s, -1)), parts[i]), s);
        lambdas[i] = std::exp(-static_cast<double>(log_vars.data()[i]));
        total = i == 0 ? term : add(total, term);
    }
    if (breakdown) {
        breakdown->seg = l_seg.item();
        breakdown->flow = l_flow.item();
        breakdown->center = l_center.item();
        breakdown->offset = l_offset.item();
        breakdown->lambda_seg = lambdas[0];
        breakdown->lambda_flow = lambdas[1];
        breakdown->lambda_center = lambdas[2];
        breakdown->lambda_offset = lambdas[3];
        breakdown->total = total.item();
    }
    return total;
}

}  // namespace bevpred
