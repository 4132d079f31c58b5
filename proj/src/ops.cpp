#include "lshr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

namespace lshr {

namespace {

using std::int64_t;

template <typename T>
void check_finite(const char* op, const Tensor<T>& t) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(static_cast<double>(t[i])))
      throw Error(std::string(op) + ": non-finite value at flat index " + std::to_string(i));
  }
}

// Marks the output, runs the finite check if enabled, and records the op
// when a tape is present and some input carries gradient.
template <typename T>
void finalize(const char* op, Tape<T>* tape, std::vector<Tensor<T>> inputs, Tensor<T>& out,
              std::function<void()> backward) {
  if (verify_finite_enabled()) check_finite(op, out);
  bool needs_grad = false;
  for (const Tensor<T>& in : inputs)
    if (in.defined() && in.requires_grad()) needs_grad = true;
  if (!tape || !needs_grad) return;
  out.set_requires_grad(true);
  std::vector<typename Tape<T>::ImplPtr> impls;
  for (const Tensor<T>& in : inputs)
    if (in.defined()) impls.push_back(in.impl());
  tape->record(std::move(impls), out.impl(), std::move(backward));
}

template <typename T>
void expect_rank(const char* op, const Tensor<T>& t, std::size_t rank, const char* what) {
  if (!t.defined() || t.rank() != rank)
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                     ", got " + (t.defined() ? shape_str(t.shape()) : std::string("undefined")));
}

template <typename T>
void expect_bias(const char* op, const Tensor<T>& bias, std::size_t cout) {
  if (!bias.defined()) return;
  if (bias.rank() != 1 || bias.dim(0) != cout)
    throw ShapeError(std::string(op) + ": bias must be [" + std::to_string(cout) + "], got " +
                     shape_str(bias.shape()));
}

// Valid output range of one kernel tap: positions where pos*S - P + kk
// lands inside [0, n).
inline void tap_range(int64_t kk, int64_t n, int64_t out_n, int64_t S, int64_t P, int64_t& lo,
                      int64_t& hi) {
  lo = std::max<int64_t>(0, (P - kk + S - 1) / S);
  hi = std::min(out_n, (n - 1 + P - kk) / S + 1);
}

// Lowered column buffer for one image: col[(ci*K+ky)*K+kx][oy*OW+ox] =
// in[ci, oy*S-P+ky, ox*S-P+kx], zero outside. Turns the convolution and
// both of its gradients into long contiguous row operations.
template <typename T>
void im2col_image(const T* in_image, int64_t Ci, int64_t H, int64_t W, int64_t K, int64_t S,
                  int64_t P, int64_t OH, int64_t OW, T* col) {
  std::fill(col, col + Ci * K * K * OH * OW, T(0));
  for (int64_t ci = 0; ci < Ci; ++ci) {
    const T* in_plane = in_image + ci * H * W;
    for (int64_t ky = 0; ky < K; ++ky) {
      int64_t oy_lo, oy_hi;
      tap_range(ky, H, OH, S, P, oy_lo, oy_hi);
      for (int64_t kx = 0; kx < K; ++kx) {
        int64_t ox_lo, ox_hi;
        tap_range(kx, W, OW, S, P, ox_lo, ox_hi);
        T* row = col + ((ci * K + ky) * K + kx) * OH * OW;
        for (int64_t oy = oy_lo; oy < oy_hi; ++oy) {
          const T* src = in_plane + (oy * S - P + ky) * W - P + kx;
          T* dst = row + oy * OW;
          if (S == 1) {
            for (int64_t ox = ox_lo; ox < ox_hi; ++ox) dst[ox] = src[ox];
          } else {
            for (int64_t ox = ox_lo; ox < ox_hi; ++ox) dst[ox] = src[ox * S];
          }
        }
      }
    }
  }
}

// Lowered path pays off once the output plane is long enough to
// amortize the copies.
inline bool use_lowered(int64_t OH, int64_t OW) { return OH * OW >= 64; }

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, std::size_t stride,
                 const Tensor<T>& bias, std::type_identity_t<Tape<T>*> tape, std::size_t pad) {
  expect_rank("conv2d", input, 4, "input");
  expect_rank("conv2d", kernels, 4, "kernels");
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  const int64_t B = input.dim(0), Ci = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int64_t Co = kernels.dim(0), K = kernels.dim(2);
  if (static_cast<int64_t>(kernels.dim(1)) != Ci)
    throw ShapeError("conv2d: kernel axis 1 (" + std::to_string(kernels.dim(1)) +
                     ") must match input channel axis 1 (" + std::to_string(Ci) + ")");
  if (static_cast<int64_t>(kernels.dim(3)) != K)
    throw ShapeError("conv2d: kernels must be square, got " + shape_str(kernels.shape()));
  const int64_t P = static_cast<int64_t>(pad), S = static_cast<int64_t>(stride);
  if (H + 2 * P < K || W + 2 * P < K)
    throw ShapeError("conv2d: spatial axes 2,3 of " + shape_str(input.shape()) +
                     " are smaller than the kernel side " + std::to_string(K));
  expect_bias("conv2d", bias, Co);
  const int64_t OH = (H + 2 * P - K) / S + 1;
  const int64_t OW = (W + 2 * P - K) / S + 1;

  Tensor<T> out(Shape{(std::size_t)B, (std::size_t)Co, (std::size_t)OH, (std::size_t)OW});
  const T* in = input.data();
  const T* k = kernels.data();
  const T* bi = bias.defined() ? bias.data() : nullptr;
  T* o = out.data();
  const int64_t npix = OH * OW;
  const int64_t ntap = Ci * K * K;

  // Each thread owns whole (b,co) output planes; contributions per
  // element accumulate in a fixed ci,ky,kx order, so results are
  // bit-identical for any thread count.
  if (use_lowered(OH, OW)) {
    std::vector<T> col(static_cast<std::size_t>(B) * ntap * npix);
#pragma omp parallel for schedule(static)
    for (int64_t b = 0; b < B; ++b)
      im2col_image(in + b * Ci * H * W, Ci, H, W, K, S, P, OH, OW, col.data() + b * ntap * npix);
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t b = 0; b < B; ++b) {
      for (int64_t co = 0; co < Co; ++co) {
        T* out_plane = o + ((b * Co + co) * OH) * OW;
        const T fill = bi ? bi[co] : T(0);
        for (int64_t i = 0; i < npix; ++i) out_plane[i] = fill;
        const T* colb = col.data() + b * ntap * npix;
        const T* k_row = k + co * ntap;
        for (int64_t t = 0; t < ntap; ++t) {
          const T w = k_row[t];
          if (w == T(0)) continue;
          const T* row = colb + t * npix;
          for (int64_t i = 0; i < npix; ++i) out_plane[i] += w * row[i];
        }
      }
    }
  } else {
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t b = 0; b < B; ++b) {
      for (int64_t co = 0; co < Co; ++co) {
        T* out_plane = o + ((b * Co + co) * OH) * OW;
        const T fill = bi ? bi[co] : T(0);
        for (int64_t i = 0; i < npix; ++i) out_plane[i] = fill;
        for (int64_t ci = 0; ci < Ci; ++ci) {
          const T* in_plane = in + ((b * Ci + ci) * H) * W;
          const T* k_plane = k + ((co * Ci + ci) * K) * K;
          for (int64_t ky = 0; ky < K; ++ky) {
            int64_t oy_lo, oy_hi;
            tap_range(ky, H, OH, S, P, oy_lo, oy_hi);
            for (int64_t kx = 0; kx < K; ++kx) {
              const T w = k_plane[ky * K + kx];
              int64_t ox_lo, ox_hi;
              tap_range(kx, W, OW, S, P, ox_lo, ox_hi);
              for (int64_t oy = oy_lo; oy < oy_hi; ++oy) {
                const T* in_row = in_plane + (oy * S - P + ky) * W - P + kx;
                T* out_row = out_plane + oy * OW;
                if (S == 1) {
                  for (int64_t ox = ox_lo; ox < ox_hi; ++ox)
                    out_row[ox] += w * in_row[ox];
                } else {
                  for (int64_t ox = ox_lo; ox < ox_hi; ++ox)
                    out_row[ox] += w * in_row[ox * S];
                }
              }
            }
          }
        }
      }
    }
  }

  auto in_impl = input.impl();
  auto k_impl = kernels.impl();
  auto b_impl = bias.defined() ? bias.impl() : nullptr;
  auto out_impl = out.impl();
  finalize("conv2d", tape, {input, kernels, bias}, out, [=]() {
    const T* g = out_impl->grad.data();
    if (use_lowered(OH, OW)) {
      const int64_t npix2 = OH * OW;
      const int64_t ntap2 = Ci * K * K;
      if (k_impl->requires_grad) {
        // one lowering pass shared by the kernel gradient
        std::vector<T> col(static_cast<std::size_t>(B) * ntap2 * npix2);
        const T* xx = in_impl->data.data();
#pragma omp parallel for schedule(static)
        for (int64_t b = 0; b < B; ++b)
          im2col_image(xx + b * Ci * H * W, Ci, H, W, K, S, P, OH, OW,
                       col.data() + b * ntap2 * npix2);
        T* gk = k_impl->grad.data();
        // batch kept outermost so one image's columns stay cached; each
        // thread owns whole gk rows and adds the per-image dot in a
        // fixed b order
        for (int64_t b = 0; b < B; ++b) {
          const T* colb = col.data() + b * ntap2 * npix2;
#pragma omp parallel for schedule(static)
          for (int64_t co = 0; co < Co; ++co) {
            const T* g_plane = g + ((b * Co + co) * OH) * OW;
            for (int64_t t = 0; t < ntap2; ++t) {
              const T* row = colb + t * npix2;
              constexpr int64_t L = 8;
              T lanes[L] = {};
              T tail_acc = T(0);
              int64_t i = 0;
              for (; i + L <= npix2; i += L)
                for (int64_t j = 0; j < L; ++j) lanes[j] += g_plane[i + j] * row[i + j];
              for (; i < npix2; ++i) tail_acc += g_plane[i] * row[i];
              T acc = tail_acc;
              for (int64_t j = 0; j < L; ++j) acc += lanes[j];
              gk[co * ntap2 + t] += acc;
            }
          }
        }
      }
      if (in_impl->requires_grad) {
        // gcol[b,t,:] = sum_co k[co,t] * gout[b,co,:], then fold the
        // columns back onto the input grid
        std::vector<T> gcol(static_cast<std::size_t>(B) * ntap2 * npix2);
        const T* kk = k_impl->data.data();
#pragma omp parallel for collapse(2) schedule(static)
        for (int64_t b = 0; b < B; ++b) {
          for (int64_t t = 0; t < ntap2; ++t) {
            T* row = gcol.data() + (b * ntap2 + t) * npix2;
            std::fill(row, row + npix2, T(0));
            for (int64_t co = 0; co < Co; ++co) {
              const T w = kk[co * ntap2 + t];
              if (w == T(0)) continue;
              const T* g_plane = g + ((b * Co + co) * OH) * OW;
              for (int64_t i = 0; i < npix2; ++i) row[i] += w * g_plane[i];
            }
          }
        }
        T* gi = in_impl->grad.data();
#pragma omp parallel for collapse(2) schedule(static)
        for (int64_t b = 0; b < B; ++b) {
          for (int64_t ci = 0; ci < Ci; ++ci) {
            T* gi_plane = gi + ((b * Ci + ci) * H) * W;
            for (int64_t ky = 0; ky < K; ++ky) {
              int64_t oy_lo, oy_hi;
              tap_range(ky, H, OH, S, P, oy_lo, oy_hi);
              for (int64_t kx = 0; kx < K; ++kx) {
                int64_t ox_lo, ox_hi;
                tap_range(kx, W, OW, S, P, ox_lo, ox_hi);
                const T* row = gcol.data() + (b * ntap2 + (ci * K + ky) * K + kx) * npix2;
                for (int64_t oy = oy_lo; oy < oy_hi; ++oy) {
                  T* gi_row = gi_plane + (oy * S - P + ky) * W - P + kx;
                  const T* src = row + oy * OW;
                  if (S == 1) {
                    for (int64_t ox = ox_lo; ox < ox_hi; ++ox) gi_row[ox] += src[ox];
                  } else {
                    for (int64_t ox = ox_lo; ox < ox_hi; ++ox) gi_row[ox * S] += src[ox];
                  }
                }
              }
            }
          }
        }
      }
      if (b_impl && b_impl->requires_grad) {
        T* gb = b_impl->grad.data();
        for (int64_t co = 0; co < Co; ++co) {
          T acc = T(0);
          for (int64_t b = 0; b < B; ++b)
            for (int64_t i = 0; i < OH * OW; ++i) acc += g[((b * Co + co) * OH) * OW + i];
          gb[co] += acc;
        }
      }
      return;
    }
    if (in_impl->requires_grad) {
      T* gi = in_impl->grad.data();
      const T* kk = k_impl->data.data();
#pragma omp parallel for collapse(2) schedule(static)
      for (int64_t b = 0; b < B; ++b) {
        for (int64_t ci = 0; ci < Ci; ++ci) {
          T* gi_plane = gi + ((b * Ci + ci) * H) * W;
          for (int64_t co = 0; co < Co; ++co) {
            const T* g_plane = g + ((b * Co + co) * OH) * OW;
            const T* k_plane = kk + ((co * Ci + ci) * K) * K;
            for (int64_t ky = 0; ky < K; ++ky) {
              int64_t oy_lo, oy_hi;
              tap_range(ky, H, OH, S, P, oy_lo, oy_hi);
              for (int64_t kx = 0; kx < K; ++kx) {
                const T w = k_plane[ky * K + kx];
                int64_t ox_lo, ox_hi;
                tap_range(kx, W, OW, S, P, ox_lo, ox_hi);
                for (int64_t oy = oy_lo; oy < oy_hi; ++oy) {
                  T* gi_row = gi_plane + (oy * S - P + ky) * W - P + kx;
                  const T* g_row = g_plane + oy * OW;
                  if (S == 1) {
                    for (int64_t ox = ox_lo; ox < ox_hi; ++ox)
                      gi_row[ox] += w * g_row[ox];
                  } else {
                    for (int64_t ox = ox_lo; ox < ox_hi; ++ox)
                      gi_row[ox * S] += w * g_row[ox];
                  }
                }
              }
            }
          }
        }
      }
    }
    if (k_impl->requires_grad) {
      T* gk = k_impl->grad.data();
      const T* xx = in_impl->data.data();
#pragma omp parallel for collapse(2) schedule(static)
      for (int64_t co = 0; co < Co; ++co) {
        for (int64_t ci = 0; ci < Ci; ++ci) {
          for (int64_t ky = 0; ky < K; ++ky) {
            int64_t oy_lo, oy_hi;
            tap_range(ky, H, OH, S, P, oy_lo, oy_hi);
            for (int64_t kx = 0; kx < K; ++kx) {
              int64_t ox_lo, ox_hi;
              tap_range(kx, W, OW, S, P, ox_lo, ox_hi);
              // fixed-width lane accumulators: the summation pattern
              // depends only on the loop structure, never on threads
              constexpr int64_t L = 8;
              T lanes[L] = {};
              T tail = T(0);
              for (int64_t b = 0; b < B; ++b) {
                const T* g_plane = g + ((b * Co + co) * OH) * OW;
                const T* in_plane = xx + ((b * Ci + ci) * H) * W;
                for (int64_t oy = oy_lo; oy < oy_hi; ++oy) {
                  const T* g_row = g_plane + oy * OW;
                  const T* in_row = in_plane + (oy * S - P + ky) * W - P + kx;
                  if (S == 1) {
                    int64_t ox = ox_lo;
                    for (; ox + L <= ox_hi; ox += L)
                      for (int64_t j = 0; j < L; ++j)
                        lanes[j] += g_row[ox + j] * in_row[ox + j];
                    for (; ox < ox_hi; ++ox) tail += g_row[ox] * in_row[ox];
                  } else {
                    for (int64_t ox = ox_lo; ox < ox_hi; ++ox)
                      tail += g_row[ox] * in_row[ox * S];
                  }
                }
              }
              T acc = tail;
              for (int64_t j = 0; j < L; ++j) acc += lanes[j];
              gk[((co * Ci + ci) * K + ky) * K + kx] += acc;
            }
          }
        }
      }
    }
    if (b_impl && b_impl->requires_grad) {
      T* gb = b_impl->grad.data();
      for (int64_t co = 0; co < Co; ++co) {
        T acc = T(0);
        for (int64_t b = 0; b < B; ++b)
          for (int64_t oy = 0; oy < OH; ++oy)
            for (int64_t ox = 0; ox < OW; ++ox) acc += g[((b * Co + co) * OH + oy) * OW + ox];
        gb[co] += acc;
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> transposed_conv2d(const Tensor<T>& input, const Tensor<T>& kernels,
                            std::size_t stride, const Tensor<T>& bias, std::type_identity_t<Tape<T>*> tape) {
  expect_rank("transposed_conv2d", input, 4, "input");
  expect_rank("transposed_conv2d", kernels, 4, "kernels");
  if (stride < 1) throw ShapeError("transposed_conv2d: stride must be >= 1");
  const int64_t B = input.dim(0), Ci = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int64_t Co = kernels.dim(1), K = kernels.dim(2);
  if (static_cast<int64_t>(kernels.dim(0)) != Ci)
    throw ShapeError("transposed_conv2d: kernel axis 0 (" + std::to_string(kernels.dim(0)) +
                     ") must match input channel axis 1 (" + std::to_string(Ci) + ")");
  if (static_cast<int64_t>(kernels.dim(3)) != K)
    throw ShapeError("transposed_conv2d: kernels must be square, got " +
                     shape_str(kernels.shape()));
  expect_bias("transposed_conv2d", bias, Co);
  const int64_t S = static_cast<int64_t>(stride);
  const int64_t OH = (h - 1) * S + K, OW = (w - 1) * S + K;

  Tensor<T> out(Shape{(std::size_t)B, (std::size_t)Co, (std::size_t)OH, (std::size_t)OW});
  const T* in = input.data();
  const T* k = kernels.data();
  const T* bi = bias.defined() ? bias.data() : nullptr;
  T* o = out.data();

#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t co = 0; co < Co; ++co) {
      for (int64_t y = 0; y < OH; ++y) {
        for (int64_t x = 0; x < OW; ++x) {
          T acc = bi ? bi[co] : T(0);
          for (int64_t ky = 0; ky < K; ++ky) {
            const int64_t ty = y - ky;
            if (ty < 0 || ty % S != 0) continue;
            const int64_t iy = ty / S;
            if (iy >= h) continue;
            for (int64_t kx = 0; kx < K; ++kx) {
              const int64_t tx = x - kx;
              if (tx < 0 || tx % S != 0) continue;
              const int64_t ix = tx / S;
              if (ix >= w) continue;
              for (int64_t ci = 0; ci < Ci; ++ci)
                acc += in[((b * Ci + ci) * h + iy) * w + ix] *
                       k[((ci * Co + co) * K + ky) * K + kx];
            }
          }
          o[((b * Co + co) * OH + y) * OW + x] = acc;
        }
      }
    }
  }

  auto in_impl = input.impl();
  auto k_impl = kernels.impl();
  auto b_impl = bias.defined() ? bias.impl() : nullptr;
  auto out_impl = out.impl();
  finalize("transposed_conv2d", tape, {input, kernels, bias}, out, [=]() {
    const T* g = out_impl->grad.data();
    if (in_impl->requires_grad) {
      T* gi = in_impl->grad.data();
      const T* kk = k_impl->data.data();
#pragma omp parallel for collapse(2) schedule(static)
      for (int64_t b = 0; b < B; ++b) {
        for (int64_t ci = 0; ci < Ci; ++ci) {
          for (int64_t iy = 0; iy < h; ++iy) {
            for (int64_t ix = 0; ix < w; ++ix) {
              T acc = T(0);
              for (int64_t co = 0; co < Co; ++co)
                for (int64_t ky = 0; ky < K; ++ky)
                  for (int64_t kx = 0; kx < K; ++kx)
                    acc += g[((b * Co + co) * OH + iy * S + ky) * OW + ix * S + kx] *
                           kk[((ci * Co + co) * K + ky) * K + kx];
              gi[((b * Ci + ci) * h + iy) * w + ix] += acc;
            }
          }
        }
      }
    }
    if (k_impl->requires_grad) {
      T* gk = k_impl->grad.data();
      const T* xx = in_impl->data.data();
#pragma omp parallel for collapse(2) schedule(static)
      for (int64_t ci = 0; ci < Ci; ++ci) {
        for (int64_t co = 0; co < Co; ++co) {
          for (int64_t ky = 0; ky < K; ++ky) {
            for (int64_t kx = 0; kx < K; ++kx) {
              T acc = T(0);
              for (int64_t b = 0; b < B; ++b)
                for (int64_t iy = 0; iy < h; ++iy)
                  for (int64_t ix = 0; ix < w; ++ix)
                    acc += xx[((b * Ci + ci) * h + iy) * w + ix] *
                           g[((b * Co + co) * OH + iy * S + ky) * OW + ix * S + kx];
              gk[((ci * Co + co) * K + ky) * K + kx] += acc;
            }
          }
        }
      }
    }
    if (b_impl && b_impl->requires_grad) {
      T* gb = b_impl->grad.data();
      for (int64_t co = 0; co < Co; ++co) {
        T acc = T(0);
        for (int64_t b = 0; b < B; ++b)
          for (int64_t y = 0; y < OH; ++y)
            for (int64_t x = 0; x < OW; ++x) acc += g[((b * Co + co) * OH + y) * OW + x];
        gb[co] += acc;
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& input, std::type_identity_t<T> p, std::type_identity_t<Tape<T>*> tape) {
  if (!input.defined()) throw ShapeError("leaky_relu: undefined input");
  if (!(p >= T(0) && p < T(1))) throw UsageError("leaky_relu: slope must satisfy 0 <= p < 1");
  Tensor<T> out(input.shape());
  const std::size_t n = input.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = input[i] > T(0) ? input[i] : p * input[i];

  auto in_impl = input.impl();
  auto out_impl = out.impl();
  finalize("leaky_relu", tape, {input}, out, [=]() {
    const T* g = out_impl->grad.data();
    const T* x = in_impl->data.data();
    T* gi = in_impl->grad.data();
    for (std::size_t i = 0; i < n; ++i) gi[i] += x[i] > T(0) ? g[i] : p * g[i];
  });
  return out;
}

namespace {

// shuffle=true maps [B,C*s^2,h,w] -> [B,C,h*s,w*s]; false is the inverse.
template <typename T>
void move_subpixels(const T* src, T* dst, int64_t B, int64_t C, int64_t s, int64_t h, int64_t w,
                    bool shuffle, bool accumulate) {
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t i = 0; i < s; ++i)
        for (int64_t j = 0; j < s; ++j)
          for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
              const int64_t packed = ((b * C * s * s + c * s * s + i * s + j) * h + y) * w + x;
              const int64_t wide = ((b * C + c) * (h * s) + y * s + i) * (w * s) + x * s + j;
              const int64_t from = shuffle ? packed : wide;
              const int64_t to = shuffle ? wide : packed;
              if (accumulate)
                dst[to] += src[from];
              else
                dst[to] = src[from];
            }
}

}  // namespace

template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& input, std::size_t s, std::type_identity_t<Tape<T>*> tape) {
  expect_rank("pixel_shuffle", input, 4, "input");
  if (s < 1) throw UsageError("pixel_shuffle: factor must be >= 1");
  const int64_t B = input.dim(0), Cs = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int64_t s2 = static_cast<int64_t>(s) * static_cast<int64_t>(s);
  if (Cs % s2 != 0)
    throw ShapeError("pixel_shuffle: channel axis 1 (" + std::to_string(Cs) +
                     ") not divisible by s^2 = " + std::to_string(s2));
  const int64_t C = Cs / s2, S = static_cast<int64_t>(s);
  Tensor<T> out(Shape{(std::size_t)B, (std::size_t)C, (std::size_t)(h * S), (std::size_t)(w * S)});
  move_subpixels(input.data(), out.data(), B, C, S, h, w, true, false);

  auto in_impl = input.impl();
  auto out_impl = out.impl();
  finalize("pixel_shuffle", tape, {input}, out, [=]() {
    move_subpixels(out_impl->grad.data(), in_impl->grad.data(), B, C, S, h, w, false, true);
  });
  return out;
}

template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& input, std::size_t s, std::type_identity_t<Tape<T>*> tape) {
  expect_rank("pixel_unshuffle", input, 4, "input");
  if (s < 1) throw UsageError("pixel_unshuffle: factor must be >= 1");
  const int64_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int64_t S = static_cast<int64_t>(s);
  if (H % S != 0 || W % S != 0)
    throw ShapeError("pixel_unshuffle: spatial axes 2,3 of " + shape_str(input.shape()) +
                     " not divisible by s = " + std::to_string(s));
  const int64_t h = H / S, w = W / S;
  Tensor<T> out(
      Shape{(std::size_t)B, (std::size_t)(C * S * S), (std::size_t)h, (std::size_t)w});
  move_subpixels(input.data(), out.data(), B, C, S, h, w, false, false);

  auto in_impl = input.impl();
  auto out_impl = out.impl();
  finalize("pixel_unshuffle", tape, {input}, out, [=]() {
    move_subpixels(out_impl->grad.data(), in_impl->grad.data(), B, C, S, h, w, true, true);
  });
  return out;
}

namespace {

enum class Elementwise { Add, Sub, Mul };

// Second operand may be rank-1 [C] against a rank-4 [B,C,H,W] first
// operand (per-channel broadcast); anything else must match exactly.
template <typename T>
Tensor<T> binary_op(const char* op, Elementwise kind, const Tensor<T>& a, const Tensor<T>& b,
                    Tape<T>* tape) {
  if (!a.defined() || !b.defined()) throw ShapeError(std::string(op) + ": undefined operand");
  const bool same = a.shape() == b.shape();
  const bool channel_bcast = !same && kind != Elementwise::Mul && a.rank() == 4 &&
                             b.rank() == 1 && b.dim(0) == a.dim(1);
  if (!same && !channel_bcast)
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " do not match (axis 1 channel broadcast is the "
                     "only supported broadcast)");

  Tensor<T> out(a.shape());
  const std::size_t n = a.size();
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  const T sign = kind == Elementwise::Sub ? T(-1) : T(1);

  std::size_t C = 1, HW = 1;
  if (channel_bcast) {
    C = a.dim(1);
    HW = a.dim(2) * a.dim(3);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const T bv = channel_bcast ? pb[(i / HW) % C] : pb[i];
    po[i] = kind == Elementwise::Mul ? pa[i] * bv : pa[i] + sign * bv;
  }

  auto a_impl = a.impl();
  auto b_impl = b.impl();
  auto out_impl = out.impl();
  finalize(op, tape, {a, b}, out, [=]() {
    const T* g = out_impl->grad.data();
    if (a_impl->requires_grad) {
      T* ga = a_impl->grad.data();
      const T* bb = b_impl->data.data();
      for (std::size_t i = 0; i < n; ++i)
        ga[i] += kind == Elementwise::Mul ? g[i] * (channel_bcast ? bb[(i / HW) % C] : bb[i])
                                          : g[i];
    }
    if (b_impl->requires_grad) {
      T* gb = b_impl->grad.data();
      const T* aa = a_impl->data.data();
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = channel_bcast ? (i / HW) % C : i;
        gb[j] += kind == Elementwise::Mul ? g[i] * aa[i] : sign * g[i];
      }
    }
  });
  return out;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, std::type_identity_t<Tape<T>*> tape) {
  return binary_op("add", Elementwise::Add, a, b, tape);
}

template <typename T>
Tensor<T> subtract(const Tensor<T>& a, const Tensor<T>& b, std::type_identity_t<Tape<T>*> tape) {
  return binary_op("subtract", Elementwise::Sub, a, b, tape);
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b, std::type_identity_t<Tape<T>*> tape) {
  return binary_op("mul", Elementwise::Mul, a, b, tape);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, std::type_identity_t<T> factor, std::type_identity_t<Tape<T>*> tape) {
  if (!a.defined()) throw ShapeError("scale: undefined operand");
  Tensor<T> out(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * factor;

  auto a_impl = a.impl();
  auto out_impl = out.impl();
  finalize("scale", tape, {a}, out, [=]() {
    const T* g = out_impl->grad.data();
    T* ga = a_impl->grad.data();
    for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * factor;
  });
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a, std::type_identity_t<Tape<T>*> tape) {
  if (!a.defined()) throw ShapeError("sum: undefined operand");
  T acc = T(0);
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) acc += a[i];
  Tensor<T> out = Tensor<T>::from_vector(Shape{1}, {acc});

  auto a_impl = a.impl();
  auto out_impl = out.impl();
  finalize("sum", tape, {a}, out, [=]() {
    const T g = out_impl->grad[0];
    T* ga = a_impl->grad.data();
    for (std::size_t i = 0; i < n; ++i) ga[i] += g;
  });
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a, std::type_identity_t<Tape<T>*> tape) {
  if (!a.defined()) throw ShapeError("mean: undefined operand");
  const std::size_t n = a.size();
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) acc += a[i];
  const T inv = T(1) / static_cast<T>(n);
  Tensor<T> out = Tensor<T>::from_vector(Shape{1}, {acc * inv});

  auto a_impl = a.impl();
  auto out_impl = out.impl();
  finalize("mean", tape, {a}, out, [=]() {
    const T g = out_impl->grad[0] * inv;
    T* ga = a_impl->grad.data();
    for (std::size_t i = 0; i < n; ++i) ga[i] += g;
  });
  return out;
}

template <typename T>
Tensor<T> charbonnier(const Tensor<T>& input, std::type_identity_t<T> eps, std::type_identity_t<Tape<T>*> tape) {
  if (!input.defined()) throw ShapeError("charbonnier: undefined input");
  if (!(eps > T(0))) throw UsageError("charbonnier: eps must be > 0");
  Tensor<T> out(input.shape());
  const std::size_t n = input.size();
  for (std::size_t i = 0; i < n; ++i)
    out[i] = std::sqrt(input[i] * input[i] + eps);

  auto in_impl = input.impl();
  auto out_impl = out.impl();
  finalize("charbonnier", tape, {input}, out, [=]() {
    const T* g = out_impl->grad.data();
    const T* x = in_impl->data.data();
    const T* y = out_impl->data.data();
    T* gi = in_impl->grad.data();
    for (std::size_t i = 0; i < n; ++i) gi[i] += g[i] * x[i] / y[i];
  });
  return out;
}

template <typename T>
GradCheckReport grad_check(const std::function<Tensor<T>(Tape<T>*)>& f,
                           const std::vector<Tensor<T>>& inputs, T epsilon, double tolerance) {
  GradCheckReport report;

  Tape<T> tape;
  Tensor<T> out = f(&tape);
  if (!out.defined() || out.size() != 1)
    throw UsageError("grad_check: function must return a scalar tensor");
  if (!std::isfinite(static_cast<double>(out[0]))) {
    report.outputs_finite = false;
    report.diagnostic = "non-finite output at unperturbed inputs";
    report.max_rel_err = std::numeric_limits<double>::infinity();
    return report;
  }
  GradientMap<T> grads = tape.backward(out);

  auto eval = [&](double& value) -> bool {
    Tensor<T> y = f(nullptr);
    value = static_cast<double>(y[0]);
    return std::isfinite(value);
  };

  for (std::size_t idx = 0; idx < inputs.size(); ++idx) {
    Tensor<T> in = inputs[idx];
    if (!in.defined() || !in.requires_grad()) continue;

    std::vector<T> analytic(in.size(), T(0));
    auto it = grads.find(in.id());
    if (it != grads.end()) analytic = it->second.vec();

    GradCheckEntry entry;
    entry.tensor_id = in.id();
    entry.index = idx;

    std::vector<double> fd(in.size());
    double peak = 1.0;
    for (std::size_t i = 0; i < in.size(); ++i) {
      const T x0 = in[i];
      const T h = epsilon * (T(1) + std::abs(x0));
      double fp = 0, fm = 0;
      in[i] = x0 + h;
      bool okp = eval(fp);
      in[i] = x0 - h;
      bool okm = eval(fm);
      in[i] = x0;
      if (!okp || !okm) {
        report.outputs_finite = false;
        report.diagnostic = "non-finite output while perturbing input " + std::to_string(idx) +
                            " at flat index " + std::to_string(i);
        report.max_rel_err = std::numeric_limits<double>::infinity();
        report.entries.push_back(entry);
        return report;
      }
      fd[i] = (fp - fm) / (2.0 * static_cast<double>(h));
      peak = std::max({peak, std::abs(fd[i]), std::abs(static_cast<double>(analytic[i]))});
    }

    // Coordinates with gradients far below the tensor's own gradient
    // scale are compared absolutely, so difference-quotient noise does
    // not register as relative error.
    const double floor = 1e-3 * peak;
    for (std::size_t i = 0; i < in.size(); ++i) {
      const double a = static_cast<double>(analytic[i]);
      const double d = fd[i];
      const double abs_err = std::abs(a - d);
      const double rel = abs_err / std::max({std::abs(a), std::abs(d), floor});
      entry.max_abs_err = std::max(entry.max_abs_err, abs_err);
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.entries.push_back(entry);
  }

  if (!report.ok(tolerance) && report.diagnostic.empty())
    report.diagnostic = "max relative error " + std::to_string(report.max_rel_err) +
                        " exceeds tolerance " + std::to_string(tolerance);
  return report;
}

// clang-format off
#define LSHR_INSTANTIATE_OPS(T) \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, std::size_t, const Tensor<T>&, Tape<T>*, std::size_t); \
  template Tensor<T> transposed_conv2d<T>(const Tensor<T>&, const Tensor<T>&, std::size_t, const Tensor<T>&, Tape<T>*); \
  template Tensor<T> leaky_relu<T>(const Tensor<T>&, T, Tape<T>*); \
  template Tensor<T> pixel_shuffle<T>(const Tensor<T>&, std::size_t, Tape<T>*); \
  template Tensor<T> pixel_unshuffle<T>(const Tensor<T>&, std::size_t, Tape<T>*); \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&, Tape<T>*); \
  template Tensor<T> subtract<T>(const Tensor<T>&, const Tensor<T>&, Tape<T>*); \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&, Tape<T>*); \
  template Tensor<T> scale<T>(const Tensor<T>&, T, Tape<T>*); \
  template Tensor<T> sum<T>(const Tensor<T>&, Tape<T>*); \
  template Tensor<T> mean<T>(const Tensor<T>&, Tape<T>*); \
  template Tensor<T> charbonnier<T>(const Tensor<T>&, T, Tape<T>*); \
  template GradCheckReport grad_check<T>(const std::function<Tensor<T>(Tape<T>*)>&, const std::vector<Tensor<T>>&, T, double);
// clang-format on

LSHR_INSTANTIATE_OPS(float)
LSHR_INSTANTIATE_OPS(double)

}  // namespace lshr
