#pragma once

#include <string>

#include "pmdg/tensor.hpp"

namespace pmdg {

// Decodes a PNG or JPEG file into an RGB image tensor [3,h,w] with values in
// [0,1]. Grayscale and alpha inputs are expanded/composited to RGB. Throws
// std::runtime_error with the path on undecodable files.
Tensor read_image(const std::string& path);

// Writes an RGB image tensor [3,h,w] (values clamped to [0,1]) as 8-bit PNG.
void write_png(const std::string& path, const Tensor& image);

// Bilinear resize of an RGB tensor [3,h,w].
Tensor resize_bilinear(const Tensor& image, int out_h, int out_w);

}  // namespace pmdg
