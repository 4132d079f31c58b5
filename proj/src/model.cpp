#include "lshr/model.hpp"

#include <cmath>
#include <random>

#include "lshr/data.hpp"
#include "lshr/ops.hpp"

namespace lshr {

void NetworkConfig::validate() const {
  if (!(R > 0.0 && R <= 1.0)) throw ConfigError("NetworkConfig: R must lie in (0,1]");
  if (K < 1) throw ConfigError("NetworkConfig: K must be >= 1");
  if (s < 1) throw ConfigError("NetworkConfig: s must be >= 1");
  if (blocks < 1) throw ConfigError("NetworkConfig: blocks must be >= 1");
  if (channels < 1) throw ConfigError("NetworkConfig: channels must be >= 1");
  if (!(leaky_p >= 0.0 && leaky_p < 1.0))
    throw ConfigError("NetworkConfig: leaky_p must lie in [0,1)");
}

std::size_t kernel_count(double R, std::size_t n) {
  if (!(R > 0.0 && R <= 1.0)) throw ConfigError("kernel_count: R must lie in (0,1]");
  if (n < 1) throw ConfigError("kernel_count: n must be >= 1");
  const long long m = std::llround(R * static_cast<double>(n));
  return static_cast<std::size_t>(std::max(1LL, m));
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> ModelParams<T>::trainables() const {
  std::vector<std::pair<std::string, Tensor<T>>> list;
  if (bank.mode == PatternMode::Learned) list.emplace_back("bank.shadow", bank.shadow);
  list.emplace_back("recon.kernels", recon_kernels);
  list.emplace_back("recon.bias", recon_bias);
  list.emplace_back("feat.kernels", feat_kernels);
  list.emplace_back("feat.bias", feat_bias);
  list.emplace_back("block.w1", block_w1);
  list.emplace_back("block.w2", block_w2);
  if (block_b1.defined()) list.emplace_back("block.b1", block_b1);
  if (block_b2.defined()) list.emplace_back("block.b2", block_b2);
  list.emplace_back("res_out.kernels", res_out_kernels);
  list.emplace_back("res_out.bias", res_out_bias);
  list.emplace_back("up.kernels", up_kernels);
  list.emplace_back("up.bias", up_bias);
  return list;
}

template <typename T>
const std::vector<std::string>& ModelParams<T>::recon_group() {
  static const std::vector<std::string> names = {"bank.shadow", "recon.kernels", "recon.bias"};
  return names;
}

namespace {

// Cholesky solve of A X = B for SPD A (dim x dim), B (dim x cols),
// both row-major; B is overwritten with the solution.
void spd_solve(std::vector<double>& A, std::vector<double>& B, std::size_t dim,
               std::size_t cols) {
  for (std::size_t j = 0; j < dim; ++j) {
    double d = A[j * dim + j];
    for (std::size_t k = 0; k < j; ++k) d -= A[j * dim + k] * A[j * dim + k];
    d = std::sqrt(std::max(d, 1e-12));
    A[j * dim + j] = d;
    for (std::size_t i = j + 1; i < dim; ++i) {
      double v = A[i * dim + j];
      for (std::size_t k = 0; k < j; ++k) v -= A[i * dim + k] * A[j * dim + k];
      A[i * dim + j] = v / d;
    }
  }
  for (std::size_t c = 0; c < cols; ++c) {
    for (std::size_t i = 0; i < dim; ++i) {
      double v = B[i * cols + c];
      for (std::size_t k = 0; k < i; ++k) v -= A[i * dim + k] * B[k * cols + c];
      B[i * cols + c] = v / A[i * dim + i];
    }
    for (std::size_t i = dim; i-- > 0;) {
      double v = B[i * cols + c];
      for (std::size_t k = i + 1; k < dim; ++k) v -= A[k * dim + i] * B[k * cols + c];
      B[i * cols + c] = v / A[i * dim + i];
    }
  }
}

// Ridge-regularized min-norm decoder of one K x K block from its m bit
// measurements: W = Phi^T (Phi Phi^T + eps I)^-1, or the normal-equation
// form when m exceeds K^2. Row p of the result is the reconstruction
// kernel paired with pattern p.
std::vector<double> pinv_decoder(const std::vector<std::uint8_t>& bits, std::size_t m,
                                 std::size_t n) {
  std::vector<double> phi(bits.begin(), bits.end());  // m x n
  const double eps = 1e-3;
  std::vector<double> w(m * n);
  if (m <= n) {
    std::vector<double> gram(m * m, 0.0);
    for (std::size_t p = 0; p < m; ++p)
      for (std::size_t q = p; q < m; ++q) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += phi[p * n + j] * phi[q * n + j];
        gram[p * m + q] = gram[q * m + p] = s;
      }
    for (std::size_t p = 0; p < m; ++p) gram[p * m + p] += eps;
    std::vector<double> rhs = phi;  // m x n
    spd_solve(gram, rhs, m, n);     // rhs := (Phi Phi^T + eps)^-1 Phi
    w = std::move(rhs);
  } else {
    std::vector<double> gram(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i; j < n; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < m; ++p) s += phi[p * n + i] * phi[p * n + j];
        gram[i * n + j] = gram[j * n + i] = s;
      }
    for (std::size_t i = 0; i < n; ++i) gram[i * n + i] += eps;
    std::vector<double> rhs(n * m);  // Phi^T, n x m
    for (std::size_t p = 0; p < m; ++p)
      for (std::size_t j = 0; j < n; ++j) rhs[j * m + p] = phi[p * n + j];
    spd_solve(gram, rhs, n, m);  // rhs := (Phi^T Phi + eps)^-1 Phi^T
    for (std::size_t p = 0; p < m; ++p)
      for (std::size_t j = 0; j < n; ++j) w[p * n + j] = rhs[j * m + p];
  }
  return w;
}

template <typename T>
Tensor<T> he_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(dist(rng));
  t.set_requires_grad(true);
  return t;
}

template <typename T>
Tensor<T> zero_param(Shape shape) {
  Tensor<T> t(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

}  // namespace

template <typename T>
ModelParams<T> make_params(const NetworkConfig& config, std::size_t image_h,
                           std::size_t image_w, std::uint64_t seed) {
  config.validate();
  if (image_h % (config.s * config.K) != 0 || image_w % (config.s * config.K) != 0)
    throw ConfigError("make_params: image " + std::to_string(image_h) + "x" +
                      std::to_string(image_w) + " must be a multiple of s*K = " +
                      std::to_string(config.s * config.K));
  const std::size_t sh = image_h / config.s, sw = image_w / config.s;
  const std::size_t m = kernel_count(config.R, sh * sw);
  const std::size_t C = config.channels, K = config.K, s2 = config.s * config.s;

  ModelParams<T> params;
  if (config.pattern_mode == PatternMode::Learned)
    params.bank = init_uniform<T>(m, K, seed);
  else
    params.bank = init_bernoulli<T>(m, K, 0.5, seed);

  std::mt19937_64 rng(seed + 0x9e3779b97f4a7c15ULL);

  // The reconstruction kernels start as the ridge min-norm decoder of
  // the initial bit patterns, so the preliminary image is already a
  // least-squares reconstruction at step 0.
  params.recon_kernels = Tensor<T>(Shape{m, 1, K, K});
  {
    const auto w = pinv_decoder(params.bank.bits(), m, K * K);
    for (std::size_t i = 0; i < params.recon_kernels.size(); ++i)
      params.recon_kernels[i] = static_cast<T>(w[i]);
    params.recon_kernels.set_requires_grad(true);
  }
  params.recon_bias = zero_param<T>(Shape{1});
  params.feat_kernels = he_normal<T>(Shape{C, 1, 3, 3}, 9, rng);
  params.feat_bias = zero_param<T>(Shape{C});
  params.block_w1 = he_normal<T>(Shape{C, C, 3, 3}, 9 * C, rng);
  params.block_w2 = he_normal<T>(Shape{C, C, 3, 3}, 9 * C, rng);
  if (config.block_bias) {
    params.block_b1 = zero_param<T>(Shape{C});
    params.block_b2 = zero_param<T>(Shape{C});
  }
  // Zero-initialized residual output: the network starts as exactly the
  // upscale branch and learns corrections on top of it.
  params.res_out_kernels = zero_param<T>(Shape{s2, C, 3, 3});
  params.res_out_bias = zero_param<T>(Shape{s2});
  // Upscale branch starts as nearest-neighbour replication of the
  // preliminary image (center tap of each sub-pixel kernel).
  params.up_kernels = zero_param<T>(Shape{s2, 1, 3, 3});
  for (std::size_t c = 0; c < s2; ++c) params.up_kernels[c * 9 + 4] = T(1);
  params.up_bias = zero_param<T>(Shape{s2});
  return params;
}

template <typename T>
Tensor<T> reconstruct_preliminary(const Tensor<T>& measurements, const ModelParams<T>& params,
                                  std::type_identity_t<Tape<T>*> tape) {
  if (!measurements.defined() || measurements.rank() != 4)
    throw ShapeError("reconstruct_preliminary: measurements must be [B,m,h,w]");
  if (measurements.dim(1) != params.bank.m)
    throw ShapeError("reconstruct_preliminary: measurement channel axis 1 (" +
                     std::to_string(measurements.dim(1)) + ") does not match pattern count m=" +
                     std::to_string(params.bank.m));
  return transposed_conv2d(measurements, params.recon_kernels, params.bank.K,
                           params.recon_bias, tape);
}

template <typename T>
Tensor<T> residual_block(const Tensor<T>& a_prev, const Tensor<T>& a0,
                         const ModelParams<T>& params, const NetworkConfig& config,
                         std::type_identity_t<Tape<T>*> tape) {
  if (!a_prev.defined() || !a0.defined() || a_prev.shape() != a0.shape())
    throw ShapeError("residual_block: a_prev and a0 must share shape");
  const T p = static_cast<T>(config.leaky_p);
  Tensor<T> t = leaky_relu(a_prev, p, tape);
  t = conv2d(t, params.block_w1, 1, params.block_b1, tape, 1);
  t = leaky_relu(t, p, tape);
  t = conv2d(t, params.block_w2, 1, params.block_b2, tape, 1);
  return add(t, a0, tape);
}

namespace {

// Shared tail: everything between the measurements and the two outputs.
template <typename T>
ForwardResult<T> decode(const Tensor<T>& measurements, const ModelParams<T>& params,
                        const NetworkConfig& config, Tape<T>* tape) {
  ForwardResult<T> result;
  result.preliminary = reconstruct_preliminary(measurements, params, tape);

  Tensor<T> a0 = conv2d(result.preliminary, params.feat_kernels, 1, params.feat_bias, tape, 1);
  Tensor<T> a = a0;
  for (std::size_t j = 0; j < config.blocks; ++j)
    a = residual_block(a, a0, params, config, tape);

  Tensor<T> residual = conv2d(a, params.res_out_kernels, 1, params.res_out_bias, tape, 1);
  residual = pixel_shuffle(residual, config.s, tape);

  Tensor<T> upscaled = conv2d(result.preliminary, params.up_kernels, 1, params.up_bias, tape, 1);
  upscaled = pixel_shuffle(upscaled, config.s, tape);

  result.final = add(residual, upscaled, tape);
  return result;
}

}  // namespace

template <typename T>
ForwardResult<T> forward(const Tensor<T>& image_highres, const ModelParams<T>& params,
                         const NetworkConfig& config, std::type_identity_t<Tape<T>*> tape) {
  if (!image_highres.defined() || image_highres.rank() != 4 || image_highres.dim(1) != 1)
    throw ShapeError("forward: image must be [B,1,H,W]");
  const std::size_t H = image_highres.dim(2), W = image_highres.dim(3);
  const std::size_t sk = config.s * config.K;
  if (H % sk != 0 || W % sk != 0)
    throw ShapeError("forward: image axes 2,3 (" + std::to_string(H) + "x" +
                     std::to_string(W) + ") must be multiples of s*K = " + std::to_string(sk));

  Tensor<T> lowres = bicubic_resize(image_highres, H / config.s, W / config.s);
  clamp01(lowres);
  Tensor<T> measurements = sense(lowres, params.bank, tape);
  return decode(measurements, params, config, tape);
}

template <typename T>
ForwardResult<T> reconstruct_from_measurements(const Tensor<T>& measurements,
                                               const ModelParams<T>& params,
                                               const NetworkConfig& config, std::type_identity_t<Tape<T>*> tape) {
  if (!measurements.defined() || measurements.rank() != 4)
    throw ShapeError("reconstruct_from_measurements: measurements must be [B,m,h,w]");
  if (measurements.dim(1) != params.bank.m)
    throw ConfigError("reconstruct_from_measurements: got " +
                      std::to_string(measurements.dim(1)) + " measurement channels, model has m=" +
                      std::to_string(params.bank.m));
  return decode(measurements, params, config, tape);
}

#define LSHR_INSTANTIATE_MODEL(T)                                                            \
  template struct ModelParams<T>;                                                            \
  template struct ForwardResult<T>;                                                          \
  template ModelParams<T> make_params<T>(const NetworkConfig&, std::size_t, std::size_t,     \
                                         std::uint64_t);                                     \
  template Tensor<T> reconstruct_preliminary<T>(const Tensor<T>&, const ModelParams<T>&,     \
                                                Tape<T>*);                                   \
  template Tensor<T> residual_block<T>(const Tensor<T>&, const Tensor<T>&,                   \
                                       const ModelParams<T>&, const NetworkConfig&, Tape<T>*); \
  template ForwardResult<T> forward<T>(const Tensor<T>&, const ModelParams<T>&,              \
                                       const NetworkConfig&, Tape<T>*);                      \
  template ForwardResult<T> reconstruct_from_measurements<T>(                                \
      const Tensor<T>&, const ModelParams<T>&, const NetworkConfig&, Tape<T>*);

LSHR_INSTANTIATE_MODEL(float)
LSHR_INSTANTIATE_MODEL(double)

}  // namespace lshr
