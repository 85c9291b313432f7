#include "bevpred/metrics.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <stdexcept>

namespace bevpred {

double iou_metric(const std::vector<std::vector<uint8_t>>& pred,
                  const std::vector<std::vector<uint8_t>>& gt) {
    if (pred.size() != gt.size() || pred.empty())
        throw std::invalid_argument("iou_metric: mismatched or empty frame lists");
    double acc = 0;
    for (size_t f = 0; f < pred.size(); f++) {
        if (pred[f].size() != gt[f].size())
            throw std::invalid_argument("iou_metric: frame size mismatch");
        int64_t inter = 0, uni = 0;
        for (size_t i = 0; i < pred[f].size(); i++) {
            const bool p = pred[f][i] != 0, g = gt[f][i] != 0;
            inter += p && g;
            uni += p || g;
        }
        acc += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    }
    return acc / static_cast<double>(pred.size());
}

namespace {

struct PairHit {
    double iou;
    int gt_id, pred_id;
};

// per-frame overlap bookkeeping between two label maps
void frame_overlaps(const std::vector<int>& pred, const std::vector<int>& gt,
                    std::map<int, int>& pred_count, std::map<int, int>& gt_count,
                    std::map<std::pair<int, int>, int>& inter) {
    pred_count.clear();
    gt_count.clear();
    inter.clear();
    for (size_t i = 0; i < pred.size(); i++) {
        if (pred[i] != 0) pred_count[pred[i]]++;
        if (gt[i] != 0) gt_count[gt[i]]++;
        if (pred[i] != 0 && gt[i] != 0) inter[{pred[i], gt[i]}]++;
    }
}

}  // namespace

double vpq_metric(const std::vector<std::vector<int>>& pred,
                  const std::vector<std::vector<int>>& gt, std::vector<VpqFrame>* detail) {
    if (pred.size() != gt.size() || pred.empty())
        throw std::invalid_argument("vpq_metric: mismatched or empty frame lists");

    std::map<int, int> pred_count, gt_count;
    std::map<std::pair<int, int>, int> inter;

    // correspondence from the first frame
    frame_overlaps(pred[0], gt[0], pred_count, gt_count, inter);
    std::vector<PairHit> hits;
    for (const auto& [pg, cnt] : inter) {
        const double uni = pred_count[pg.first] + gt_count[pg.second] - cnt;
        const double iou = cnt / uni;
        if (iou > 0.5) hits.push_back({iou, pg.second, pg.first});
    }
    std::sort(hits.begin(), hits.end(), [](const PairHit& a, const PairHit& b) {
        if (a.iou != b.iou) return a.iou > b.iou;
        if (a.gt_id != b.gt_id) return a.gt_id < b.gt_id;
        return a.pred_id < b.pred_id;
    });
    std::map<int, int> gt_of_pred;  // accepted correspondence
    std::set<int> used_gt;
    for (const auto& hit : hits) {
        if (gt_of_pred.count(hit.pred_id) || used_gt.count(hit.gt_id)) continue;
        gt_of_pred[hit.pred_id] = hit.gt_id;
        used_gt.insert(hit.gt_id);
    }

    double acc = 0;
    if (detail) detail->assign(pred.size(), VpqFrame{});
    for (size_t f = 0; f < pred.size(); f++) {
        if (pred[f].size() != gt[f].size())
            throw std::invalid_argument("vpq_metric: frame size mismatch");
        frame_overlaps(pred[f], gt[f], pred_count, gt_count, inter);

        VpqFrame vf;
        std::set<int> tp_pred, tp_gt;
        for (const auto& [pid, gid] : gt_of_pred) {
            auto pc = pred_count.find(pid);
            auto gc = gt_count.find(gid);
            if (pc == pred_count.end() || gc == gt_count.end()) continue;
            auto it = inter.find({pid, gid});
            const int ov = it == inter.end() ? 0 : it->second;
            const double iou = ov / static_cast<double>(pc->second + gc->second - ov);
            if (iou > 0.5) {
                vf.tp++;
                vf.iou_sum += iou;
                tp_pred.insert(pid);
                tp_gt.insert(gid);
            }
        }
        for (const auto& [pid, cnt] : pred_count)
            if (!tp_pred.count(pid)) vf.fp++;
        for (const auto& [gid, cnt] : gt_count)
            if (!tp_gt.count(gid)) vf.fn++;
        const double denom = vf.tp + 0.5 * vf.fp + 0.5 * vf.fn;
        vf.term = denom == 0 ? 1.0 : vf.iou_sum / denom;
        acc += vf.term;
        if (detail) (*detail)[f] = vf;
    }
    return acc / static_cast<double>(pred.size());
}

}  // namespace bevpred
