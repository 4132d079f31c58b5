#pragma once

#include <cstdint>
#include <vector>

#include "lshr/ops.hpp"
#include "lshr/tensor.hpp"

namespace lshr {

enum class PatternMode { Static, Learned };

// The sensing pattern bank. Shadow weights live in [-1,1]; the sensing
// convolution only ever sees their binarized {0,1} view. In static mode
// the view is frozen at initialization; in learned mode the shadow is a
// trainable leaf and gradients reach it through the straight-through
// estimator.
template <typename T>
struct PatternBank {
  Tensor<T> shadow;  // [m,1,K,K]
  PatternMode mode = PatternMode::Static;
  std::uint64_t seed = 0;
  std::size_t m = 0;
  std::size_t K = 0;

  // {0,1} view used by the forward pass. Learned mode records the
  // straight-through op on the tape; static mode returns the frozen bits.
  Tensor<T> binary_view(Tape<T>* tape = nullptr) const;

  // Raw bits of the current binary view, row-major within each pattern,
  // patterns concatenated.
  std::vector<std::uint8_t> bits() const;
};

struct SparsityStats {
  long step = 0;
  double fraction_ones = 0.0;
  std::vector<double> per_pattern_fraction;
};

// Eq-style binarization: 1 if w > 0, else 0 (zero maps to 0).
template <typename T>
inline T binarize(T w) {
  return w > T(0) ? T(1) : T(0);
}

// Forward {0,1} view of a shadow tensor with the identity
// straight-through backward: the gradient on the binary weights passes
// through to the shadow unchanged.
template <typename T>
Tensor<T> binarize_ste(const Tensor<T>& shadow, std::type_identity_t<Tape<T>*> tape = nullptr);

// Static bank: bits ~ Bernoulli(prob_one) i.i.d., shadow fixed at +1/-1.
template <typename T>
PatternBank<T> init_bernoulli(std::size_t m, std::size_t K, double prob_one,
                              std::uint64_t seed);

// Learned bank: shadow ~ Uniform(-1,1) i.i.d. (open interval), so the
// initial binary view is balanced in expectation.
template <typename T>
PatternBank<T> init_uniform(std::size_t m, std::size_t K, std::uint64_t seed);

// Clamps every shadow value into [-1,1]; idempotent. Called after each
// optimizer step in learned mode.
template <typename T>
void clip_shadow(PatternBank<T>& bank);

// Non-overlapping block sensing: conv2d with stride K over the binarized
// view, no bias. image [B,1,H',W'] with H',W' multiples of K
// -> measurements [B,m,H'/K,W'/K].
template <typename T>
Tensor<T> sense(const Tensor<T>& image_lowres, const PatternBank<T>& bank,
                std::type_identity_t<Tape<T>*> tape = nullptr);

// Identity pass-through of the binary-weight gradient onto the shadow.
// Only meaningful in learned mode.
template <typename T>
Tensor<T> straight_through_grad(const Tensor<T>& upstream_grad_on_binary,
                                const PatternBank<T>& bank);

// Fraction of ones over all m*K^2 binary weights, plus per-pattern
// fractions.
template <typename T>
SparsityStats sparsity(const PatternBank<T>& bank, long step);

}  // namespace lshr
