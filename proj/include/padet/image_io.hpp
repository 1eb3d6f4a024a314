#pragma once

#include <array>
#include <string>

#include "padet/box.hpp"
#include "padet/tensor.hpp"

namespace padet {

// 24-bit uncompressed BMP. Values are clamped from [0,1] to bytes on write
// and mapped back on read.
void write_bmp(const std::string& path, const Tensor& image, int n = 0);
TensorRef read_bmp(const std::string& path);

// Draws a 1px rectangle outline (clipped to the image) in the given color.
void draw_box_outline(Tensor& image, int n, const Box& box,
                      const std::array<double, 3>& color);

}  // namespace padet
