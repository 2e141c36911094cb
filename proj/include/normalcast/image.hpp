#pragma once

#include <string>
#include <vector>

#include "normalcast/tensor.hpp"

namespace ncast {

// Bilinear resize of an [H,W,C] image.
Tensor resize_bilinear(const Tensor& img, int out_h, int out_w);
// Nearest-neighbor resize; used for normal maps and masks where
// interpolation would break the unit constraint.
Tensor resize_nearest(const Tensor& img, int out_h, int out_w);
Mask resize_mask_nearest(const Mask& m, int out_h, int out_w);

// 8-bit RGB PNG.
void write_png_rgb8(const std::string& path, int h, int w, const std::vector<uint8_t>& rgb);

// Maps a normal map frame [H,W,3] in [-1,1] to round((n+1)/2*255) bytes.
std::vector<uint8_t> normal_frame_to_rgb8(const Tensor& frame);
// Maps an RGB frame [H,W,3] in [0,1] to bytes.
std::vector<uint8_t> rgb_frame_to_rgb8(const Tensor& frame);

}  // namespace ncast
