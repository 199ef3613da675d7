#pragma once

#include "vqtok/datakit.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace vqtok {

struct PngImage {
  int w = 0;
  int h = 0;
  std::vector<uint8_t> rgb;  // h*w*3
};

/// Fixed compression settings so identical pixels produce identical bytes.
void write_png_rgb8(const std::string& path, int w, int h, const uint8_t* rgb);
PngImage read_png_rgb8(const std::string& path);

/// Two-row mosaic, originals on top and reconstructions below, with a 2px
/// gutter. Both batches must share dimensions.
void write_comparison_png(const std::string& path, const ImageBatch& top,
                          const ImageBatch& bottom);

/// Single-row-major grid of images, `cols` wide.
void write_grid_png(const std::string& path, const ImageBatch& images, int cols);

}  // namespace vqtok
