#pragma once

#include <string>
#include <vector>

#include "lshr/tensor.hpp"

namespace lshr {

// Loads a PNG, PGM/PPM or BMP file as a grayscale [1,1,H,W] tensor in
// [0,1]. Color sources are converted with BT.601 luminance weights.
template <typename T>
Tensor<T> load_grayscale(const std::string& path);

// Writes a [1,1,H,W] tensor as an 8-bit grayscale image; values are
// clamped to [0,1] and scaled to 0..255.
template <typename T>
void save_png(const Tensor<T>& image, const std::string& path);
template <typename T>
void save_pgm(const Tensor<T>& image, const std::string& path);

// Lists image files (png/pgm/ppm/bmp) in a directory, sorted by name.
std::vector<std::string> list_image_files(const std::string& dir);

}  // namespace lshr
