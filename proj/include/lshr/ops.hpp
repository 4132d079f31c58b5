#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lshr/tensor.hpp"

namespace lshr {

// Differentiable forward operations. Every op optionally records itself
// on a tape; recording happens only when a tape is given and at least one
// input requires a gradient. Convolutions are unpadded (valid) unless a
// positive pad is passed.

// input [B,Cin,H,W], kernels [Cout,Cin,K,K], optional bias [Cout]
// -> [B,Cout,(H+2p-K)/stride+1,(W+2p-K)/stride+1]
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, std::size_t stride,
                 const Tensor<T>& bias = {}, std::type_identity_t<Tape<T>*> tape = nullptr, std::size_t pad = 0);

// Adjoint of conv2d for matching stride and pad = 0. The same kernel
// buffer serves both directions: a conv kernel [Cout,Cin,K,K] is read
// here as [Cin',Cout',K,K] with Cin' = Cout.
// input [B,Cin,h,w], kernels [Cin,Cout,K,K] -> [B,Cout,(h-1)*stride+K,(w-1)*stride+K]
template <typename T>
Tensor<T> transposed_conv2d(const Tensor<T>& input, const Tensor<T>& kernels,
                            std::size_t stride, const Tensor<T>& bias = {},
                            std::type_identity_t<Tape<T>*> tape = nullptr);

// max(x, p*x); the backward slope at exactly 0 is p.
template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& input, std::type_identity_t<T> p, std::type_identity_t<Tape<T>*> tape = nullptr);

// [B,C*s^2,h,w] -> [B,C,h*s,w*s]; out[b,c,y*s+i,x*s+j] = in[b,c*s^2+i*s+j,y,x].
template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& input, std::size_t s, std::type_identity_t<Tape<T>*> tape = nullptr);

// Exact inverse of pixel_shuffle (pure index permutation).
template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& input, std::size_t s, std::type_identity_t<Tape<T>*> tape = nullptr);

// Elementwise ops. add/subtract accept equal shapes, or a rank-1 [C]
// second operand broadcast over batch and spatial axes of [B,C,H,W];
// that is the only broadcast the network needs.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, std::type_identity_t<Tape<T>*> tape = nullptr);
template <typename T>
Tensor<T> subtract(const Tensor<T>& a, const Tensor<T>& b, std::type_identity_t<Tape<T>*> tape = nullptr);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b, std::type_identity_t<Tape<T>*> tape = nullptr);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, std::type_identity_t<T> factor, std::type_identity_t<Tape<T>*> tape = nullptr);

// Reductions to a scalar tensor of shape [1].
template <typename T>
Tensor<T> sum(const Tensor<T>& a, std::type_identity_t<Tape<T>*> tape = nullptr);
template <typename T>
Tensor<T> mean(const Tensor<T>& a, std::type_identity_t<Tape<T>*> tape = nullptr);

// Elementwise sqrt(x^2 + eps); smooth everywhere, gradient x/sqrt(x^2+eps).
template <typename T>
Tensor<T> charbonnier(const Tensor<T>& input, std::type_identity_t<T> eps, std::type_identity_t<Tape<T>*> tape = nullptr);

// --- gradient verification ---

struct GradCheckEntry {
  std::uint64_t tensor_id = 0;
  std::size_t index = 0;       // position in the inputs vector
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  bool outputs_finite = true;
  std::string diagnostic;

  bool ok(double tolerance) const { return outputs_finite && max_rel_err < tolerance; }
};

// Compares analytic gradients of a scalar-valued function against central
// finite differences, coordinate by coordinate, for every tensor in
// `inputs` that requires a gradient. `f` is evaluated with a tape for the
// analytic pass and without one for the difference quotients. Inputs are
// perturbed in place and restored.
template <typename T>
GradCheckReport grad_check(const std::function<Tensor<T>(Tape<T>*)>& f,
                           const std::vector<Tensor<T>>& inputs, T epsilon,
                           double tolerance);

}  // namespace lshr
