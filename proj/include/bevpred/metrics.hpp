#pragma once

#include <cstdint>
#include <vector>

namespace bevpred {

// Mean intersection-over-union of the foreground across frames. A frame where
// both masks are empty counts as 1.
double iou_metric(const std::vector<std::vector<uint8_t>>& pred,
                  const std::vector<std::vector<uint8_t>>& gt);

struct VpqFrame {
    int tp = 0, fp = 0, fn = 0;
    double iou_sum = 0;  // summed IoU of the TP pairs
    double term = 1;     // iou_sum / (tp + fp/2 + fn/2), 1 when nothing is present
};

// Video panoptic quality over instance label maps (0 = background). Instance
// correspondence is fixed by greedy IoU>0.5 matching on the first frame
// (descending IoU, ties toward the lower GT id); later frames score a matched
// pair as TP only while its per-frame IoU stays above 0.5. The score is the mean
// of the per-frame terms.
double vpq_metric(const std::vector<std::vector<int>>& pred,
                  const std::vector<std::vector<int>>& gt,
                  std::vector<VpqFrame>* detail = nullptr);

}  // namespace bevpred
