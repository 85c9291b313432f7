#include "bevpred/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace bevpred {

namespace {

// raw flood fill: component ids 1.. in raster order of first cell, no size filter
std::vector<int> flood_components(const std::vector<uint8_t>& mask, int h, int w) {
    std::vector<int> comp(static_cast<size_t>(h) * w, 0);
    std::vector<int> stack;
    int next = 0;
    for (int start = 0; start < h * w; start++) {
        if (!mask[static_cast<size_t>(start)] || comp[static_cast<size_t>(start)]) continue;
        next++;
        comp[static_cast<size_t>(start)] = next;
        stack.assign(1, start);
        while (!stack.empty()) {
            const int cur = stack.back();
            stack.pop_back();
            const int cy = cur / w, cx = cur % w;
            for (int dy = -1; dy <= 1; dy++) {
                for (int dx = -1; dx <= 1; dx++) {
                    if (dy == 0 && dx == 0) continue;
                    const int ny = cy + dy, nx = cx + dx;
                    if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                    const int ni = ny * w + nx;
                    if (mask[static_cast<size_t>(ni)] && !comp[static_cast<size_t>(ni)]) {
                        comp[static_cast<size_t>(ni)] = next;
                        stack.push_back(ni);
                    }
                }
            }
        }
    }
    return comp;
}

}  // namespace

std::vector<int> connected_components(const std::vector<uint8_t>& mask, int h, int w,
                                      int min_cells) {
    std::vector<int> comp = flood_components(mask, h, w);
    int maxc = 0;
    for (int c : comp) maxc = std::max(maxc, c);
    std::vector<int> count(static_cast<size_t>(maxc) + 1, 0);
    for (int c : comp) count[static_cast<size_t>(c)]++;
    // relabel survivors consecutively; raster order of first cells is preserved
    std::vector<int> remap(static_cast<size_t>(maxc) + 1, 0);
    int next = 0;
    for (size_t i = 0; i < comp.size(); i++) {
        const int c = comp[i];
        if (c == 0) continue;
        if (count[static_cast<size_t>(c)] < min_cells) continue;
        if (remap[static_cast<size_t>(c)] == 0) remap[static_cast<size_t>(c)] = ++next;
    }
    for (int& c : comp) c = remap[static_cast<size_t>(c)];
    return comp;
}

std::vector<int> propagate_instances(const std::vector<int>& prev,
                                     const std::vector<uint8_t>& mask, const scalar* flow_xy,
                                     int h, int w, int& next_label, int min_cells) {
    const size_t n = static_cast<size_t>(h) * w;
    // size-filtered components of the current mask
    std::vector<int> comp = connected_components(mask, h, w, min_cells);
    std::vector<int> out(n, 0);

    int ncomp = 0;
    for (int c : comp) ncomp = std::max(ncomp, c);
    // per component: histogram of inherited labels
    std::vector<std::map<int, int>> votes(static_cast<size_t>(ncomp) + 1);

    for (int y = 0; y < h; y++) {
        for (int x = 0; x < w; x++) {
            const size_t i = static_cast<size_t>(y) * w + x;
            if (!comp[i]) continue;
            const double sx = x + static_cast<double>(flow_xy[i]);          // flow dx channel
            const double sy = y + static_cast<double>(flow_xy[n + i]);      // flow dy channel
            const long lx = std::lround(sx), ly = std::lround(sy);
            if (lx >= 0 && lx < w && ly >= 0 && ly < h) {
                const int lbl = prev[static_cast<size_t>(ly) * w + lx];
                if (lbl != 0) {
                    out[i] = lbl;
                    votes[static_cast<size_t>(comp[i])][lbl]++;
                }
            }
        }
    }

    // resolve the leftovers: majority label of the cell's component (ties -> smaller
    // label), else one fresh label for the whole component
    std::vector<int> fallback(static_cast<size_t>(ncomp) + 1, 0);
    for (int c = 1; c <= ncomp; c++) {
        int best = 0, best_votes = 0;
        for (const auto& [lbl, cnt] : votes[static_cast<size_t>(c)]) {
            if (cnt > best_votes) {
                best = lbl;
                best_votes = cnt;
            }
        }
        fallback[static_cast<size_t>(c)] = best;  // 0 when the component inherited nothing
    }
    for (size_t i = 0; i < n; i++) {
        if (!comp[i] || out[i]) continue;
        int lbl = fallback[static_cast<size_t>(comp[i])];
        if (lbl == 0) {
            lbl = next_label++;
            fallback[static_cast<size_t>(comp[i])] = lbl;
        }
        out[i] = lbl;
    }
    return out;
}

std::vector<std::vector<int>> make_instance_prediction(const Tensor& seg_logits,
                                                       const Tensor& flow, int min_cells) {
    if (seg_logits.rank() != 4 || seg_logits.dim(1) != 2)
        throw ShapeError("instance prediction expects seg logits [T,2,H,W]");
    if (flow.rank() != 4 || flow.dim(1) != 2 || flow.dim(0) != seg_logits.dim(0))
        throw ShapeError("instance prediction expects flow [T,2,H,W]");
    const int t = static_cast<int>(seg_logits.dim(0));
    const int h = static_cast<int>(seg_logits.dim(2)), w = static_cast<int>(seg_logits.dim(3));
    const size_t plane = static_cast<size_t>(h) * w;

    std::vector<std::vector<int>> result(static_cast<size_t>(t));
    int next_label = 1;
    for (int f = 0; f < t; f++) {
        const scalar* l0 = seg_logits.data() + (static_cast<size_t>(f) * 2) * plane;
        const scalar* l1 = l0 + plane;
        std::vector<uint8_t> mask(plane);
        for (size_t i = 0; i < plane; i++) mask[i] = l1[i] > l0[i] ? 1 : 0;
        if (f == 0) {
            result[0] = connected_components(mask, h, w, min_cells);
            for (int c : result[0]) next_label = std::max(next_label, c + 1);
        } else {
            const scalar* fxy = flow.data() + (static_cast<size_t>(f) * 2) * plane;
            result[static_cast<size_t>(f)] = propagate_instances(
                result[static_cast<size_t>(f - 1)], mask, fxy, h, w, next_label, min_cells);
        }
    }
    return result;
}

}  // namespace bevpred
