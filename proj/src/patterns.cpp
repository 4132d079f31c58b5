#include "lshr/patterns.hpp"

#include <algorithm>
#include <random>

namespace lshr {

template <typename T>
Tensor<T> binarize_ste(const Tensor<T>& shadow, std::type_identity_t<Tape<T>*> tape) {
  if (!shadow.defined()) throw ShapeError("binarize_ste: undefined shadow");
  Tensor<T> out(shadow.shape());
  const std::size_t n = shadow.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = binarize(shadow[i]);

  auto in_impl = shadow.impl();
  auto out_impl = out.impl();
  if (tape && shadow.requires_grad()) {
    out.set_requires_grad(true);
    tape->record({in_impl}, out_impl, [=]() {
      const T* g = out_impl->grad.data();
      T* gi = in_impl->grad.data();
      for (std::size_t i = 0; i < n; ++i) gi[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> PatternBank<T>::binary_view(Tape<T>* tape) const {
  if (mode == PatternMode::Learned) return binarize_ste(shadow, tape);
  Tensor<T> out(shadow.shape());
  for (std::size_t i = 0; i < shadow.size(); ++i) out[i] = binarize(shadow[i]);
  return out;
}

template <typename T>
std::vector<std::uint8_t> PatternBank<T>::bits() const {
  std::vector<std::uint8_t> b(shadow.size());
  for (std::size_t i = 0; i < shadow.size(); ++i)
    b[i] = shadow[i] > T(0) ? 1 : 0;
  return b;
}

template <typename T>
PatternBank<T> init_bernoulli(std::size_t m, std::size_t K, double prob_one,
                              std::uint64_t seed) {
  if (m < 1 || K < 1) throw ConfigError("init_bernoulli: m and K must be >= 1");
  if (prob_one < 0.0 || prob_one > 1.0)
    throw ConfigError("init_bernoulli: prob_one must lie in [0,1]");
  PatternBank<T> bank;
  bank.mode = PatternMode::Static;
  bank.seed = seed;
  bank.m = m;
  bank.K = K;
  bank.shadow = Tensor<T>(Shape{m, 1, K, K});
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < bank.shadow.size(); ++i)
    bank.shadow[i] = u(rng) < prob_one ? T(1) : T(-1);
  return bank;
}

template <typename T>
PatternBank<T> init_uniform(std::size_t m, std::size_t K, std::uint64_t seed) {
  if (m < 1 || K < 1) throw ConfigError("init_uniform: m and K must be >= 1");
  PatternBank<T> bank;
  bank.mode = PatternMode::Learned;
  bank.seed = seed;
  bank.m = m;
  bank.K = K;
  bank.shadow = Tensor<T>(Shape{m, 1, K, K});
  bank.shadow.set_requires_grad(true);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<T> u(T(-1), T(1));
  for (std::size_t i = 0; i < bank.shadow.size(); ++i) {
    T v = u(rng);
    while (v <= T(-1)) v = u(rng);  // keep the interval open at -1
    bank.shadow[i] = v;
  }
  return bank;
}

template <typename T>
void clip_shadow(PatternBank<T>& bank) {
  for (std::size_t i = 0; i < bank.shadow.size(); ++i)
    bank.shadow[i] = std::min(T(1), std::max(T(-1), bank.shadow[i]));
}

template <typename T>
Tensor<T> sense(const Tensor<T>& image_lowres, const PatternBank<T>& bank, std::type_identity_t<Tape<T>*> tape) {
  if (!image_lowres.defined() || image_lowres.rank() != 4 || image_lowres.dim(1) != 1)
    throw ShapeError("sense: image must be [B,1,H,W], got " +
                     (image_lowres.defined() ? shape_str(image_lowres.shape())
                                             : std::string("undefined")));
  const std::size_t H = image_lowres.dim(2), W = image_lowres.dim(3);
  if (H % bank.K != 0 || W % bank.K != 0)
    throw ShapeError("sense: image axes 2,3 (" + std::to_string(H) + "x" + std::to_string(W) +
                     ") must be multiples of the pattern side K=" + std::to_string(bank.K) +
                     "; crop or pad upstream");
  return conv2d(image_lowres, bank.binary_view(tape), bank.K, Tensor<T>(), tape, 0);
}

template <typename T>
Tensor<T> straight_through_grad(const Tensor<T>& upstream_grad_on_binary,
                                const PatternBank<T>& bank) {
  if (bank.mode != PatternMode::Learned)
    throw UsageError("straight_through_grad: bank is in static mode");
  if (upstream_grad_on_binary.shape() != bank.shadow.shape())
    throw ShapeError("straight_through_grad: gradient shape " +
                     shape_str(upstream_grad_on_binary.shape()) + " does not match shadow " +
                     shape_str(bank.shadow.shape()));
  return upstream_grad_on_binary.clone();
}

template <typename T>
SparsityStats sparsity(const PatternBank<T>& bank, long step) {
  SparsityStats stats;
  stats.step = step;
  stats.per_pattern_fraction.resize(bank.m, 0.0);
  const std::size_t per = bank.K * bank.K;
  std::size_t ones_total = 0;
  for (std::size_t p = 0; p < bank.m; ++p) {
    std::size_t ones = 0;
    for (std::size_t i = 0; i < per; ++i)
      if (bank.shadow[p * per + i] > T(0)) ++ones;
    stats.per_pattern_fraction[p] = static_cast<double>(ones) / static_cast<double>(per);
    ones_total += ones;
  }
  stats.fraction_ones = static_cast<double>(ones_total) / static_cast<double>(bank.m * per);
  return stats;
}

#define LSHR_INSTANTIATE_PATTERNS(T)                                                   \
  template struct PatternBank<T>;                                                      \
  template Tensor<T> binarize_ste<T>(const Tensor<T>&, Tape<T>*);                      \
  template PatternBank<T> init_bernoulli<T>(std::size_t, std::size_t, double,          \
                                            std::uint64_t);                            \
  template PatternBank<T> init_uniform<T>(std::size_t, std::size_t, std::uint64_t);    \
  template void clip_shadow<T>(PatternBank<T>&);                                       \
  template Tensor<T> sense<T>(const Tensor<T>&, const PatternBank<T>&, Tape<T>*);      \
  template Tensor<T> straight_through_grad<T>(const Tensor<T>&, const PatternBank<T>&);\
  template SparsityStats sparsity<T>(const PatternBank<T>&, long);

LSHR_INSTANTIATE_PATTERNS(float)
LSHR_INSTANTIATE_PATTERNS(double)

}  // namespace lshr
