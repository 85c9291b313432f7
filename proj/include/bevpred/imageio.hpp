#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bevpred/tensor.hpp"

namespace bevpred {

// 16-bit binary PGM (P5, big-endian samples).
void write_pgm16(const std::string& path, const std::vector<uint16_t>& pix, int w, int h);

// 8-bit RGB PNG. The IDAT stream uses stored (uncompressed) deflate blocks, so
// the writer has no external dependencies.
void write_png_rgb(const std::string& path, const std::vector<uint8_t>& rgb, int w, int h);

// [H,W] map scaled from [lo,hi] onto the full 16-bit range.
void write_heatmap_pgm(const std::string& path, const Tensor& map, double lo = 0, double hi = 1);

// instance label map -> deterministic per-label colors, 0 = black background
void write_label_png(const std::string& path, const std::vector<int>& labels, int h, int w);

}  // namespace bevpred
