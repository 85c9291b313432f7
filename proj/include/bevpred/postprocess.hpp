#pragma once

#include <cstdint>
#include <vector>

#include "bevpred/tensor.hpp"

namespace bevpred {

// 8-connected components of a binary mask. Components smaller than min_cells are
// discarded (set to 0). Surviving components are labelled 1..K in raster order of
// their first cell.
std::vector<int> connected_components(const std::vector<uint8_t>& mask, int h, int w,
                                      int min_cells = 2);

// Carry instance labels from `prev` into the current frame: each occupied cell
// looks up prev at its position displaced by the predicted backward flow
// (rounded). Cells that fail the lookup take the majority inherited label of
// their 8-connected component; components with no inherited label at all get a
// fresh label from `next_label` (which is advanced).
std::vector<int> propagate_instances(const std::vector<int>& prev,
                                     const std::vector<uint8_t>& mask, const scalar* flow_xy,
                                     int h, int w, int& next_label, int min_cells = 2);

// Threshold seg logits (argmax), label the earliest frame by connected
// components, then propagate forward through time using the predicted flow.
// Returns one label map per output frame.
std::vector<std::vector<int>> make_instance_prediction(const Tensor& seg_logits,
                                                       const Tensor& flow, int min_cells = 2);

}  // namespace bevpred
