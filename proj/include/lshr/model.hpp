#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lshr/patterns.hpp"
#include "lshr/tensor.hpp"

namespace lshr {

// Architecture hyperparameters. K is the sensing pattern side, R the
// measurement ratio against the sensing-resolution pixel count, s the
// super-resolution factor.
struct NetworkConfig {
  std::size_t K = 16;
  double R = 0.25;
  std::size_t s = 2;
  std::size_t channels = 64;
  std::size_t blocks = 6;
  double leaky_p = 0.2;
  PatternMode pattern_mode = PatternMode::Learned;
  bool block_bias = false;

  void validate() const;
};

// Number of sensing patterns for measurement ratio R over an n-pixel
// sensing image: round(R*n) half away from zero, at least 1.
std::size_t kernel_count(double R, std::size_t n);

// All trainable tensors. The two residual-block convolutions exist once
// and are applied at every block (recursive weight sharing); the sensing
// bank is the only binarized weight set, everything else stays
// real-valued.
template <typename T>
struct ModelParams {
  PatternBank<T> bank;
  Tensor<T> recon_kernels;  // [m,1,K,K]
  Tensor<T> recon_bias;     // [1]
  Tensor<T> feat_kernels;   // [C,1,3,3]
  Tensor<T> feat_bias;      // [C]
  Tensor<T> block_w1;       // [C,C,3,3] shared across blocks
  Tensor<T> block_w2;       // [C,C,3,3] shared across blocks
  Tensor<T> block_b1;       // [C], only when block_bias
  Tensor<T> block_b2;       // [C], only when block_bias
  Tensor<T> res_out_kernels;  // [s^2,C,3,3]
  Tensor<T> res_out_bias;     // [s^2]
  Tensor<T> up_kernels;       // [s^2,1,3,3]
  Tensor<T> up_bias;          // [s^2]

  // Every trainable, with stable names (used by the optimizer, the
  // checkpoint container and reports). The static-mode bank shadow is
  // excluded: it is frozen.
  std::vector<std::pair<std::string, Tensor<T>>> trainables() const;

  // Names of the image-reconstruction sub-net group (bank shadow,
  // transposed-conv kernels, bias); everything else belongs to the
  // residual-correction group.
  static const std::vector<std::string>& recon_group();
};

// Builds parameters for high-resolution training images of size
// image_h x image_w (the sensing resolution is image/s). Initialization:
// bank per its mode, conv kernels He-style normal, biases zero.
template <typename T>
ModelParams<T> make_params(const NetworkConfig& config, std::size_t image_h,
                           std::size_t image_w, std::uint64_t seed);

template <typename T>
struct ForwardResult {
  Tensor<T> preliminary;  // [B,1,H/s,W/s]
  Tensor<T> final;        // [B,1,H,W]
};

// Transposed convolution of the measurements back to the preliminary
// low-resolution image: [B,m,h,w] -> [B,1,h*K,w*K].
template <typename T>
Tensor<T> reconstruct_preliminary(const Tensor<T>& measurements, const ModelParams<T>& params,
                                  std::type_identity_t<Tape<T>*> tape = nullptr);

// One recursive residual block: activation, conv W1, activation, conv W2,
// plus the long-term skip from the initial features a0.
template <typename T>
Tensor<T> residual_block(const Tensor<T>& a_prev, const Tensor<T>& a0,
                         const ModelParams<T>& params, const NetworkConfig& config,
                         std::type_identity_t<Tape<T>*> tape = nullptr);

// Full training-time pipeline: bicubic downscale, sense, reconstruct,
// residual correction, dual-branch sub-pixel upscale.
template <typename T>
ForwardResult<T> forward(const Tensor<T>& image_highres, const ModelParams<T>& params,
                         const NetworkConfig& config, std::type_identity_t<Tape<T>*> tape = nullptr);

// Inference from externally acquired measurements (the hardware path):
// everything after the sensing convolution.
template <typename T>
ForwardResult<T> reconstruct_from_measurements(const Tensor<T>& measurements,
                                               const ModelParams<T>& params,
                                               const NetworkConfig& config,
                                               std::type_identity_t<Tape<T>*> tape = nullptr);

}  // namespace lshr
