#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "bevpred/losses.hpp"
#include "bevpred/metrics.hpp"
#include "bevpred/optim.hpp"
#include "bevpred/postprocess.hpp"
#include "bevpred/scene.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace bevpred;

namespace {

// double-precision cross entropy of a two-way softmax
double ce_ref(double l0, double l1, int fg) {
    double m = std::max(l0, l1);
    double lse = m + std::log(std::exp(l0 - m) + std::exp(l1 - m));
    return lse - (fg ? l1 : l0);
}

Tensor quantized_logits(std::vector<int64_t> shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); i++)
        t.data()[i] = static_cast<scalar>(rng.uniform_int(-8, 8)) / 4.0f;
    return t;
}

}  // namespace

// ---- segmentation loss ----

TEST_CASE("uniform logits cost exactly ln 2 regardless of the selection") {
    Tensor logits = Tensor::zeros({2, 2, 4, 4});
    Tensor gt = Tensor::zeros({2, 4, 4});
    gt.data()[3] = 1;
    gt.data()[17] = 1;
    CHECK(seg_loss(logits, gt).item() == doctest::Approx(std::log(2.0)).epsilon(1e-6));
    CHECK(seg_loss(logits, gt, "confidence").item() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("a 2x2 frame keeps only its single hardest pixel") {
    // quartile of 4 pixels = 1 pixel; make pixel 2 clearly the hardest
    Tensor logits = Tensor::zeros({1, 2, 2, 2});
    Tensor gt = Tensor::zeros({1, 2, 2});
    // pixel 2 is foreground but the logits argue strongly for background
    gt.data()[2] = 1;
    logits.data()[0 * 4 + 2] = 3.0f;   // class-0 logit
    logits.data()[1 * 4 + 2] = -1.0f;  // class-1 logit
    double want = ce_ref(3.0, -1.0, 1);
    CHECK(seg_loss(logits, gt).item() == doctest::Approx(want).epsilon(1e-5));
}

TEST_CASE("hardest-quartile selection matches a double-precision oracle") {
    for (uint64_t seed = 1; seed <= 20; seed++) {
        Rng rng(seed);
        const int64_t t = 3, h = 4, w = 4, hw = h * w;
        Tensor logits = quantized_logits({t, 2, h, w}, rng);
        Tensor gt({t, h, w});
        for (int64_t i = 0; i < gt.numel(); i++)
            gt.data()[i] = static_cast<scalar>(rng.uniform_int(0, 1));

        const int64_t k = std::max<int64_t>(1, std::llround(0.25 * hw));
        double want = 0;
        for (int64_t f = 0; f < t; f++) {
            std::vector<double> ce(static_cast<size_t>(hw));
            for (int64_t i = 0; i < hw; i++) {
                double l0 = logits.data()[(f * 2 + 0) * hw + i];
                double l1 = logits.data()[(f * 2 + 1) * hw + i];
                ce[static_cast<size_t>(i)] = ce_ref(l0, l1, gt.data()[f * hw + i] > 0.5f);
            }
            std::vector<int64_t> order(static_cast<size_t>(hw));
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
                return ce[static_cast<size_t>(a)] > ce[static_cast<size_t>(b)];
            });
            for (int64_t i = 0; i < k; i++)
                want += ce[static_cast<size_t>(order[static_cast<size_t>(i)])] /
                        static_cast<double>(k * t);
        }
        CHECK(std::abs(seg_loss(logits, gt).item() - want) < 1e-4);
    }
}

TEST_CASE("confidence mode selects the most confident quartile instead") {
    for (uint64_t seed = 31; seed <= 45; seed++) {
        Rng rng(seed);
        const int64_t t = 2, h = 4, w = 4, hw = h * w;
        Tensor logits = quantized_logits({t, 2, h, w}, rng);
        Tensor gt({t, h, w});
        for (int64_t i = 0; i < gt.numel(); i++)
            gt.data()[i] = static_cast<scalar>(rng.uniform_int(0, 1));

        const int64_t k = std::max<int64_t>(1, std::llround(0.25 * hw));
        double want = 0;
        for (int64_t f = 0; f < t; f++) {
            std::vector<double> ce(static_cast<size_t>(hw)), conf(static_cast<size_t>(hw));
            for (int64_t i = 0; i < hw; i++) {
                double l0 = logits.data()[(f * 2 + 0) * hw + i];
                double l1 = logits.data()[(f * 2 + 1) * hw + i];
                double m = std::max(l0, l1);
                double lse = m + std::log(std::exp(l0 - m) + std::exp(l1 - m));
                ce[static_cast<size_t>(i)] = lse - (gt.data()[f * hw + i] > 0.5f ? l1 : l0);
                conf[static_cast<size_t>(i)] = m - lse;  // log of the max class probability
            }
            std::vector<int64_t> order(static_cast<size_t>(hw));
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
                return conf[static_cast<size_t>(a)] > conf[static_cast<size_t>(b)];
            });
            for (int64_t i = 0; i < k; i++)
                want += ce[static_cast<size_t>(order[static_cast<size_t>(i)])] /
                        static_cast<double>(k * t);
        }
        CHECK(std::abs(seg_loss(logits, gt, "confidence").item() - want) < 1e-4);
    }
}

TEST_CASE("segmentation loss rejects bad shapes and modes") {
    Tensor ok = Tensor::zeros({1, 2, 4, 4});
    Tensor gt = Tensor::zeros({1, 4, 4});
    CHECK_THROWS_AS(seg_loss(Tensor::zeros({1, 3, 4, 4}), gt), ShapeError);
    CHECK_THROWS_AS(seg_loss(ok, Tensor::zeros({1, 4, 3})), ShapeError);
    CHECK_THROWS_AS(seg_loss(ok, gt, "entropy"), ShapeError);
}

// ---- flow / centerness / offset losses ----

TEST_CASE("flow loss hits the pinned single-cell values") {
    const int64_t h = 4, w = 4;
    Tensor gt = Tensor::zeros({1, 2, h, w});
    Tensor mask = Tensor::zeros({1, h, w});
    mask.data()[5] = 1;  // one occupied cell

    Tensor pred = Tensor::zeros({1, 2, h, w});
    pred.data()[0 * h * w + 5] = 0.5f;  // dx error 0.5
    pred.data()[1 * h * w + 5] = 0.5f;  // dy error 0.5
    CHECK(flow_loss(pred, gt, mask).item() == doctest::Approx(0.125).epsilon(1e-6));

    pred.data()[0 * h * w + 5] = 3.0f;
    pred.data()[1 * h * w + 5] = 3.0f;
    CHECK(flow_loss(pred, gt, mask).item() == doctest::Approx(2.5).epsilon(1e-6));

    // repeating the same frame leaves the per-frame mean unchanged
    Tensor pred2 = concat({pred, pred}, 0);
    Tensor gt2 = concat({gt, gt}, 0);
    Tensor mask2 = concat({mask, mask}, 0);
    CHECK(flow_loss(pred2, gt2, mask2).item() == doctest::Approx(2.5).epsilon(1e-6));
}

TEST_CASE("flow loss averages over occupied cells and ignores the rest") {
    const int64_t h = 4, w = 4;
    Tensor gt = Tensor::zeros({1, 2, h, w});
    Tensor mask = Tensor::zeros({1, h, w});
    mask.data()[1] = 1;
    mask.data()[10] = 1;
    Tensor pred = Tensor::zeros({1, 2, h, w});
    pred.data()[0 * h * w + 1] = 0.5f;  // quadratic branch: 0.125
    pred.data()[0 * h * w + 10] = 3.0f;  // linear branch: 2.5
    pred.data()[1 * h * w + 10] = 1.0f;  // boundary |d| = beta: 0.5 either way
    // unmasked garbage must not contribute
    pred.data()[0 * h * w + 7] = 100.0f;
    // (0.125 + 0 + 2.5 + 0.5) / (2 comps * 2 cells * 1 frame)
    CHECK(flow_loss(pred, gt, mask).item() == doctest::Approx(0.78125).epsilon(1e-6));

    Tensor empty_mask = Tensor::zeros({1, h, w});
    CHECK(flow_loss(pred, gt, empty_mask).item() == 0.0f);
    CHECK_THROWS_AS(flow_loss(Tensor::zeros({1, 3, h, w}), gt, mask), ShapeError);
}

TEST_CASE("centerness is a plain mse and offset a masked l1") {
    Tensor pred = Tensor::full({2, 1, 3, 3}, 0.6f);
    Tensor gt = Tensor::full({2, 1, 3, 3}, 0.5f);
    CHECK(centerness_loss(pred, gt).item() == doctest::Approx(0.01).epsilon(1e-4));

    const int64_t h = 4, w = 4;
    Tensor ogt = Tensor::zeros({1, 2, h, w});
    Tensor mask = Tensor::zeros({1, h, w});
    mask.data()[6] = 1;
    Tensor opred = Tensor::zeros({1, 2, h, w});
    opred.data()[0 * h * w + 6] = 1.0f;
    opred.data()[1 * h * w + 6] = 1.0f;
    CHECK(offset_loss(opred, ogt, mask).item() == doctest::Approx(1.0).epsilon(1e-6));
}

// ---- combined loss ----

TEST_CASE("zero log-variances reduce the total to a plain sum") {
    Tensor ls = Tensor::from({1}, {0.8f});
    Tensor lf = Tensor::from({1}, {0.3f});
    Tensor lc = Tensor::from({1}, {0.05f});
    Tensor lo = Tensor::from({1}, {0.2f});
    Tensor s = Tensor::zeros({4});
    LossBreakdown bd;
    Tensor total = total_loss(ls, lf, lc, lo, s, &bd);
    CHECK(total.item() == doctest::Approx(0.8 + 0.3 + 0.05 + 0.2).epsilon(1e-6));
    CHECK(bd.seg == doctest::Approx(0.8));
    CHECK(bd.flow == doctest::Approx(0.3));
    CHECK(bd.center == doctest::Approx(0.05));
    CHECK(bd.offset == doctest::Approx(0.2));
    CHECK(bd.lambda_seg == doctest::Approx(1.0));
    CHECK(bd.lambda_offset == doctest::Approx(1.0));
    CHECK(bd.total == doctest::Approx(total.item()));
    CHECK_THROWS_AS(total_loss(ls, lf, lc, lo, Tensor::zeros({3})), ShapeError);
}

TEST_CASE("uncertainty weighting follows exp(-s) L + s and its gradient") {
    const double lvals[4] = {0.8, 0.3, 0.05, 0.2};
    Tensor ls = Tensor::from({1}, {0.8f});
    Tensor lf = Tensor::from({1}, {0.3f});
    Tensor lc = Tensor::from({1}, {0.05f});
    Tensor lo = Tensor::from({1}, {0.2f});
    const double svals[4] = {0.3, -0.2, 0.5, 0.0};
    Tensor s = Tensor::from({4}, {0.3f, -0.2f, 0.5f, 0.0f}, /*requires_grad=*/true);

    GradTape tape;
    Tensor total;
    {
        TapeScope scope(tape);
        total = total_loss(ls, lf, lc, lo, s);
        backward(total, tape);
    }
    double want = 0;
    for (int i = 0; i < 4; i++) want += std::exp(-svals[i]) * lvals[i] + svals[i];
    CHECK(total.item() == doctest::Approx(want).epsilon(1e-5));
    REQUIRE(s.has_grad());
    for (int i = 0; i < 4; i++) {
        double g = -std::exp(-svals[i]) * lvals[i] + 1.0;
        CHECK(s.grad()[i] == doctest::Approx(g).epsilon(1e-4));
    }
}

// ---- segmentation iou ----

TEST_CASE("iou handles hand cases, empties and bad input") {
    using Mask = std::vector<uint8_t>;
    Mask a{1, 1, 0, 0}, b{0, 1, 1, 0}, empty{0, 0, 0, 0};
    CHECK(iou_metric({a}, {a}) == doctest::Approx(1.0));
    CHECK(iou_metric({a}, {b}) == doctest::Approx(1.0 / 3.0));
    CHECK(iou_metric({a}, {Mask{0, 0, 1, 1}}) == doctest::Approx(0.0));
    CHECK(iou_metric({empty}, {empty}) == doctest::Approx(1.0));
    CHECK(iou_metric({empty}, {a}) == doctest::Approx(0.0));
    CHECK(iou_metric({a, a}, {a, b}) == doctest::Approx(0.5 * (1.0 + 1.0 / 3.0)));

    CHECK_THROWS_AS(iou_metric({}, {}), std::invalid_argument);
    CHECK_THROWS_AS(iou_metric({a}, {a, b}), std::invalid_argument);
    CHECK_THROWS_AS(iou_metric({a}, {Mask{1, 0}}), std::invalid_argument);
}

TEST_CASE("iou agrees with the reference mask iou on random frames") {
    for (uint64_t seed = 1; seed <= 20; seed++) {
        Rng rng(seed);
        std::vector<std::vector<uint8_t>> pred, gt;
        double want = 0;
        const int frames = 3;
        for (int f = 0; f < frames; f++) {
            std::vector<uint8_t> p(64), g(64);
            for (int i = 0; i < 64; i++) {
                p[static_cast<size_t>(i)] = rng.uniform() < 0.4 ? 1 : 0;
                g[static_cast<size_t>(i)] = rng.uniform() < 0.4 ? 1 : 0;
            }
            want += oracle::mask_iou(p, g) / frames;
            pred.push_back(std::move(p));
            gt.push_back(std::move(g));
        }
        CHECK(iou_metric(pred, gt) == doctest::Approx(want).epsilon(1e-12));
    }
}

// ---- video panoptic quality ----

namespace {

// stamp a filled rectangle of `label` onto a 6x6 label map
void stamp(std::vector<int>& m, int y, int x, int hh, int ww, int label) {
    for (int i = std::max(0, y); i < std::min(6, y + hh); i++)
        for (int j = std::max(0, x); j < std::min(6, x + ww); j++) m[static_cast<size_t>(i) * 6 + j] = label;
}

}  // namespace

TEST_CASE("vpq scores perfect tracks, weak overlaps and id swaps as pinned") {
    std::vector<int> f0(36, 0), f1(36, 0);
    stamp(f0, 0, 0, 2, 2, 1);
    stamp(f0, 3, 3, 2, 2, 2);
    f1 = f0;
    std::vector<std::vector<int>> gt{f0, f1};

    // identical tracks: every frame term is 1
    std::vector<VpqFrame> detail;
    CHECK(vpq_metric(gt, gt, &detail) == doctest::Approx(1.0));
    REQUIRE(detail.size() == 2);
    CHECK(detail[0].tp == 2);
    CHECK(detail[0].term == doctest::Approx(1.0));

    // empty frames on both sides also score 1
    std::vector<int> blank(36, 0);
    CHECK(vpq_metric({blank}, {blank}) == doctest::Approx(1.0));

    // a single pair at IoU 0.6: 3-cell overlap of a 4- and a 4-cell box is below 0.5,
    // so build IoU = 3/5 explicitly: pred 2x2 at (0,0), gt 2x2 at (0,1) -> inter 2, union 6
    // = 1/3 (no match). Instead use 1x3 vs 1x5 overlap: inter 3, union 5.
    std::vector<int> p(36, 0), g(36, 0);
    stamp(p, 0, 0, 1, 3, 1);
    stamp(g, 0, 0, 1, 5, 1);
    CHECK(vpq_metric({p}, {g}) == doctest::Approx(0.6));

    // swapping the two ids after the first frame destroys both tracks there
    std::vector<int> swapped = f1;
    for (int& v : swapped) v = v == 1 ? 2 : (v == 2 ? 1 : 0);
    std::vector<VpqFrame> d2;
    double swapped_score = vpq_metric({f0, swapped}, gt, &d2);
    CHECK(d2[0].term == doctest::Approx(1.0));
    CHECK(d2[1].tp == 0);
    CHECK(d2[1].fp == 2);
    CHECK(d2[1].fn == 2);
    CHECK(d2[1].term == doctest::Approx(0.0));
    CHECK(swapped_score == doctest::Approx(0.5));

    // bijective relabeling of prediction ids never changes the score
    std::vector<std::vector<int>> relabeled = gt;
    for (auto& frame : relabeled)
        for (int& v : frame) v = v == 1 ? 9 : (v == 2 ? 4 : 0);
    CHECK(vpq_metric(relabeled, gt) == doctest::Approx(1.0));
}

TEST_CASE("an instance appearing later is a false positive, not a new track") {
    std::vector<int> f0(36, 0), f1(36, 0);
    stamp(f0, 0, 0, 2, 2, 1);
    f1 = f0;
    stamp(f1, 4, 4, 2, 2, 7);  // spurious prediction in frame 1 only
    std::vector<int> g0(36, 0);
    stamp(g0, 0, 0, 2, 2, 3);
    std::vector<VpqFrame> detail;
    double score = vpq_metric({f0, f1}, {g0, g0}, &detail);
    CHECK(detail[1].tp == 1);
    CHECK(detail[1].fp == 1);
    CHECK(score == doctest::Approx(0.5 * (1.0 + 1.0 / 1.5)));
}

TEST_CASE("greedy first-frame matching equals the exhaustive search") {
    for (uint64_t seed = 1; seed <= 150; seed++) {
        Rng rng(seed * 7919);
        const int frames = 2 + static_cast<int>(rng.uniform_int(0, 2));
        const int n_gt = 1 + static_cast<int>(rng.uniform_int(0, 2));
        std::vector<std::vector<int>> gt(static_cast<size_t>(frames),
                                         std::vector<int>(36, 0)),
            pred(static_cast<size_t>(frames), std::vector<int>(36, 0));
        for (int inst = 1; inst <= n_gt; inst++) {
            int y = static_cast<int>(rng.uniform_int(0, 4));
            int x = static_cast<int>(rng.uniform_int(0, 4));
            int dx = static_cast<int>(rng.uniform_int(-1, 1));
            for (int f = 0; f < frames; f++) {
                stamp(gt[static_cast<size_t>(f)], y, x + dx * f, 2, 3, inst);
                // prediction: usually near the truth, sometimes off or missing
                double r = rng.uniform();
                int py = y + (r < 0.3 ? 1 : 0), px = x + dx * f + (r < 0.15 ? 2 : 0);
                if (r < 0.9)
                    stamp(pred[static_cast<size_t>(f)], py, px, 2, 3, 10 + inst);
            }
        }
        if (rng.uniform() < 0.3)  // spurious prediction
            for (int f = 0; f < frames; f++)
                stamp(pred[static_cast<size_t>(f)], 4, 0, 2, 2, 99);
        double got = vpq_metric(pred, gt);
        double want = oracle::vpq_exhaustive(pred, gt);
        CHECK(std::abs(got - want) <= 1e-9);
    }
}

// ---- schedule / optimizer ----

TEST_CASE("one-cycle endpoints and monotonicity are exact") {
    const double max_lr = 0.4;
    CHECK(one_cycle_lr(0, 100, max_lr) == doctest::Approx(max_lr / 25.0).epsilon(1e-12));
    CHECK(one_cycle_lr(30, 100, max_lr) == doctest::Approx(max_lr).epsilon(1e-12));
    CHECK(one_cycle_lr(99, 100, max_lr) == doctest::Approx(max_lr / 1000.0).epsilon(1e-12));
    for (int64_t s = 1; s <= 30; s++)
        CHECK(one_cycle_lr(s, 100, max_lr) > one_cycle_lr(s - 1, 100, max_lr));
    for (int64_t s = 31; s <= 99; s++)
        CHECK(one_cycle_lr(s, 100, max_lr) < one_cycle_lr(s - 1, 100, max_lr));
    // clamping below and above the schedule
    CHECK(one_cycle_lr(-5, 100, max_lr) == one_cycle_lr(0, 100, max_lr));
    CHECK(one_cycle_lr(200, 100, max_lr) == one_cycle_lr(99, 100, max_lr));
    CHECK(one_cycle_lr(3, 0, max_lr) == max_lr);
}

TEST_CASE("adamw reproduces a double-precision reference update") {
    Tensor p = Tensor::from({2}, {1.0f, -2.0f}, true);
    AdamWConfig cfg;
    AdamW opt({p}, cfg);
    const double lr = 0.1;
    const std::vector<std::vector<double>> grads{{0.5, -1.0}, {-0.25, 0.5}, {2.0, 0.125}};

    double m[2] = {0, 0}, v[2] = {0, 0};
    float ref[2] = {1.0f, -2.0f};
    for (size_t step = 0; step < grads.size(); step++) {
        scalar* g = p.grad();
        g[0] = static_cast<scalar>(grads[step][0]);
        g[1] = static_cast<scalar>(grads[step][1]);
        opt.step(lr);
        p.zero_grad();

        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step + 1));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step + 1));
        for (int j = 0; j < 2; j++) {
            const double gj = static_cast<double>(static_cast<scalar>(grads[step][j]));
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            double wj = static_cast<double>(ref[j]);
            wj -= lr * cfg.weight_decay * wj;
            wj -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg.eps);
            ref[j] = static_cast<float>(wj);
        }
        CHECK(p.data()[0] == doctest::Approx(ref[0]).epsilon(1e-12));
        CHECK(p.data()[1] == doctest::Approx(ref[1]).epsilon(1e-12));
    }
    CHECK(opt.steps_taken() == 3);
}

TEST_CASE("adamw without gradients applies only the decoupled decay") {
    Tensor p = Tensor::from({2}, {4.0f, -8.0f}, true);
    AdamW opt({p});
    opt.step(0.5);
    // w *= (1 - lr * wd); the moment term is 0/(0+eps) = 0
    CHECK(p.data()[0] == doctest::Approx(4.0 * (1.0 - 0.5 * 0.01)).epsilon(1e-6));
    CHECK(p.data()[1] == doctest::Approx(-8.0 * (1.0 - 0.5 * 0.01)).epsilon(1e-6));
}

TEST_CASE("gradient clipping rescales to the target norm and reports the original") {
    Tensor a = Tensor::from({1}, {0.0f}, true);
    Tensor b = Tensor::from({1}, {0.0f}, true);
    a.grad()[0] = 3.0f;
    b.grad()[0] = 4.0f;
    CHECK(clip_grad_norm({a, b}, 1.0) == doctest::Approx(5.0).epsilon(1e-7));
    CHECK(a.grad()[0] == doctest::Approx(0.6f).epsilon(1e-6));
    CHECK(b.grad()[0] == doctest::Approx(0.8f).epsilon(1e-6));

    a.grad()[0] = 3.0f;
    b.grad()[0] = 4.0f;
    CHECK(clip_grad_norm({a, b}, 10.0) == doctest::Approx(5.0).epsilon(1e-7));
    CHECK(a.grad()[0] == 3.0f);  // untouched below the limit
    CHECK(b.grad()[0] == 4.0f);

    Tensor c = Tensor::from({3}, {1.0f, 1.0f, 1.0f}, true);
    CHECK(clip_grad_norm({c}, 1.0) == 0.0);  // no grads allocated anywhere
}

// ---- connected components ----

TEST_CASE("components are 8-connected, size-filtered and raster-labelled") {
    // two cells touching only diagonally form one component
    std::vector<uint8_t> diag(16, 0);
    diag[0] = 1;   // (0,0)
    diag[5] = 1;   // (1,1)
    std::vector<int> lab = connected_components(diag, 4, 4, 2);
    CHECK(lab[0] == 1);
    CHECK(lab[5] == 1);

    // a lone cell dies under min_cells=2 but survives min_cells=1
    std::vector<uint8_t> lone(16, 0);
    lone[15] = 1;
    CHECK(connected_components(lone, 4, 4, 2)[15] == 0);
    CHECK(connected_components(lone, 4, 4, 1)[15] == 1);

    // labels follow the raster order of each component's first cell
    std::vector<uint8_t> two(16, 0);
    two[2] = two[3] = 1;    // first cells at raster 2
    two[8] = two[12] = 1;   // first cell at raster 8
    std::vector<int> lab2 = connected_components(two, 4, 4, 2);
    CHECK(lab2[2] == 1);
    CHECK(lab2[3] == 1);
    CHECK(lab2[8] == 2);
    CHECK(lab2[12] == 2);
}

TEST_CASE("components match the bfs oracle on random masks") {
    for (uint64_t seed = 1; seed <= 30; seed++) {
        Rng rng(seed * 131);
        std::vector<uint8_t> mask(64);
        for (auto& m : mask) m = rng.uniform() < 0.45 ? 1 : 0;
        for (int min_cells : {1, 2, 3}) {
            std::vector<int> got = connected_components(mask, 8, 8, min_cells);
            std::vector<int> want = oracle::components_bfs(mask, 8, 8, min_cells);
            CHECK(got == want);
        }
    }
}

// ---- instance propagation ----

TEST_CASE("labels ride the backward flow into the next frame") {
    const int h = 6, w = 6;
    std::vector<int> prev(36, 0);
    for (int y = 1; y <= 2; y++)
        for (int x = 1; x <= 2; x++) prev[static_cast<size_t>(y) * w + x] = 7;

    // the object moved +2 columns; backward flow points back to the old cells
    std::vector<uint8_t> mask(36, 0);
    std::vector<scalar> flow(72, 0.0f);
    for (int y = 1; y <= 2; y++)
        for (int x = 3; x <= 4; x++) {
            mask[static_cast<size_t>(y) * w + x] = 1;
            flow[static_cast<size_t>(y) * w + x] = -2.0f;  // dx channel
        }
    int next_label = 9;
    std::vector<int> out = propagate_instances(prev, mask, flow.data(), h, w, next_label);
    for (int y = 1; y <= 2; y++)
        for (int x = 3; x <= 4; x++) CHECK(out[static_cast<size_t>(y) * w + x] == 7);
    CHECK(next_label == 9);
    CHECK(std::count(out.begin(), out.end(), 7) == 4);
}

TEST_CASE("failed lookups take the component majority; orphans get fresh labels") {
    const int h = 6, w = 6;
    std::vector<int> prev(36, 0);
    for (int y = 1; y <= 2; y++)
        for (int x = 1; x <= 2; x++) prev[static_cast<size_t>(y) * w + x] = 7;

    std::vector<uint8_t> mask(36, 0);
    std::vector<scalar> flow(72, 0.0f);
    for (int y = 1; y <= 2; y++)
        for (int x = 3; x <= 4; x++) {
            mask[static_cast<size_t>(y) * w + x] = 1;
            flow[static_cast<size_t>(y) * w + x] = -2.0f;
        }
    // cell (1,3) points at background instead; it must inherit by majority vote
    flow[1 * w + 3] = 1.0f;
    // a second box whose flow lands on empty space gets a brand-new label
    for (int y = 4; y <= 5; y++)
        for (int x = 0; x <= 1; x++) mask[static_cast<size_t>(y) * w + x] = 1;

    int next_label = 9;
    std::vector<int> out = propagate_instances(prev, mask, flow.data(), h, w, next_label);
    for (int y = 1; y <= 2; y++)
        for (int x = 3; x <= 4; x++) CHECK(out[static_cast<size_t>(y) * w + x] == 7);
    for (int y = 4; y <= 5; y++)
        for (int x = 0; x <= 1; x++) CHECK(out[static_cast<size_t>(y) * w + x] == 9);
    CHECK(next_label == 10);

    // sub-threshold specks vanish entirely
    std::vector<uint8_t> speck(36, 0);
    speck[0] = 1;
    int nl = 3;
    std::vector<int> gone = propagate_instances(prev, speck, flow.data(), h, w, nl, 2);
    CHECK(std::count(gone.begin(), gone.end(), 0) == 36);
}

TEST_CASE("full instance prediction tracks moving and static objects") {
    const int64_t t = 3, h = 6, w = 6, hw = h * w;
    Tensor logits = Tensor::zeros({t, 2, h, w});
    Tensor flow = Tensor::zeros({t, 2, h, w});
    auto occupy = [&](int64_t f, int64_t y, int64_t x) {
        logits.data()[(f * 2 + 1) * hw + y * w + x] = 4.0f;
        logits.data()[(f * 2 + 0) * hw + y * w + x] = -4.0f;
    };
    for (int64_t f = 0; f < t; f++) {
        for (int64_t y = 0; y <= 1; y++)
            for (int64_t x = 0; x <= 1; x++) {
                occupy(f, y, x + f);  // mover: +1 column per frame
                if (f > 0)
                    flow.data()[(f * 2 + 0) * hw + y * w + (x + f)] = -1.0f;
            }
        for (int64_t y = 4; y <= 5; y++)
            for (int64_t x = 4; x <= 5; x++) occupy(f, y, x);  // static object
    }
    std::vector<std::vector<int>> inst = make_instance_prediction(logits, flow);
    REQUIRE(inst.size() == 3);
    // frame 0 labels in raster order: mover 1, static 2
    CHECK(inst[0][0] == 1);
    CHECK(inst[0][4 * w + 4] == 2);
    for (int64_t f = 1; f < t; f++) {
        for (int64_t y = 0; y <= 1; y++)
            for (int64_t x = 0; x <= 1; x++)
                CHECK(inst[static_cast<size_t>(f)][static_cast<size_t>(y * w + x + f)] == 1);
        for (int64_t y = 4; y <= 5; y++)
            for (int64_t x = 4; x <= 5; x++)
                CHECK(inst[static_cast<size_t>(f)][static_cast<size_t>(y * w + x)] == 2);
    }
    CHECK(vpq_metric(inst, inst) == doctest::Approx(1.0));

    CHECK_THROWS_AS(make_instance_prediction(Tensor::zeros({t, 1, h, w}), flow), ShapeError);
    CHECK_THROWS_AS(make_instance_prediction(logits, Tensor::zeros({t, 2, h, w - 1})),
                    ShapeError);
}

// ---- metrics on generated ground truth ----

TEST_CASE("ground truth scores perfectly against itself") {
    GenConfig gc;
    gc.t_in = 3;
    gc.t_pred = 2;
    gc.min_agents = 1;
    gc.max_agents = 2;
    gc.im_h = 32;
    gc.im_w = 48;
    gc.bev.H = 16;
    gc.bev.W = 16;
    gc.bev.x_range = 8;
    gc.bev.y_range = 8;
    SequenceSample s;
    bool made = false;
    for (uint64_t seed = 1; seed < 64 && !made; seed++) {
        try {
            s = generate_sample(seed, gc);
            made = true;
        } catch (const GenerationError&) {
        }
    }
    REQUIRE(made);

    const int64_t frames = s.gt.seg.dim(0), hw = s.gt.seg.dim(1) * s.gt.seg.dim(2);
    std::vector<std::vector<uint8_t>> masks;
    for (int64_t f = 0; f < frames; f++) {
        std::vector<uint8_t> m(static_cast<size_t>(hw));
        for (int64_t i = 0; i < hw; i++)
            m[static_cast<size_t>(i)] = s.gt.seg.data()[f * hw + i] > 0.5f ? 1 : 0;
        masks.push_back(std::move(m));
    }
    CHECK(iou_metric(masks, masks) == doctest::Approx(1.0));
    CHECK(vpq_metric(s.gt.instances, s.gt.instances) == doctest::Approx(1.0));
}
