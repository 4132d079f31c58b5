#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lshr/tensor.hpp"

namespace lshr {

// A single grayscale patch, values in [0,1], layout [1,1,H,W].
template <typename T>
struct ImagePatch {
  Tensor<T> pixels;
  std::string source_id;
  std::size_t crop_y = 0;
  std::size_t crop_x = 0;
};

template <typename T>
void clamp01(Tensor<T>& t);

// Separable Catmull-Rom bicubic (a = -0.5) with edge clamping and
// pixel-center alignment. Does not clamp intensities; callers that feed
// the sensing path clamp to [0,1] afterwards.
template <typename T>
Tensor<T> bicubic_resize(const Tensor<T>& image, std::size_t out_h, std::size_t out_w);

// `count` random crops of `size` x `size`, each independently flipped
// horizontally with probability 1/2 and rotated by a random multiple of
// 90 degrees. Returns an empty list when the image is smaller than the
// crop (callers count the skip).
template <typename T>
std::vector<ImagePatch<T>> crop_and_augment(const Tensor<T>& image, std::size_t count,
                                            std::size_t size, std::uint64_t seed,
                                            const std::string& source_id = "");

// Orthonormal 2-D DCT-II and its inverse.
template <typename T>
Tensor<T> dct2(const Tensor<T>& image);
template <typename T>
Tensor<T> idct2(const Tensor<T>& coeffs);

// Keeps the ceil(keep_fraction * N) largest-magnitude DCT coefficients
// (ties broken by flat index order), zeroes the rest, inverse-transforms
// and clamps to [0,1].
template <typename T>
Tensor<T> sparsify_dct(const Tensor<T>& image, double keep_fraction);

// Procedural stroke glyphs: white curves on black, digit-like structure.
// Deterministic in the seed; used for desk-scale corpora.
template <typename T>
std::vector<Tensor<T>> synth_glyphs(std::size_t count, std::size_t size, std::uint64_t seed);

// Versioned binary archive of prepared patches; round-trips bit-exactly.
template <typename T>
void save_patch_archive(const std::vector<Tensor<T>>& patches, const std::string& path);
template <typename T>
std::vector<Tensor<T>> load_patch_archive(const std::string& path);

}  // namespace lshr
