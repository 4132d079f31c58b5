#include "lshr/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "binio.hpp"

namespace lshr {

template <typename T>
void clamp01(Tensor<T>& t) {
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = std::min(T(1), std::max(T(0), t[i]));
}

namespace {

// Catmull-Rom kernel (a = -0.5).
inline double cubic_weight(double x) {
  x = std::fabs(x);
  if (x <= 1.0) return 1.5 * x * x * x - 2.5 * x * x + 1.0;
  if (x < 2.0) return -0.5 * x * x * x + 2.5 * x * x - 4.0 * x + 2.0;
  return 0.0;
}

inline long clamp_index(long i, long n) { return std::min(n - 1L, std::max(0L, i)); }

struct CubicTaps {
  long idx[4];
  double w[4];
};

// Pixel-center alignment: src = (dst + 0.5) * in/out - 0.5.
std::vector<CubicTaps> make_taps(std::size_t in_n, std::size_t out_n) {
  std::vector<CubicTaps> taps(out_n);
  const double ratio = static_cast<double>(in_n) / static_cast<double>(out_n);
  for (std::size_t o = 0; o < out_n; ++o) {
    const double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    const long i0 = static_cast<long>(std::floor(src));
    const double t = src - static_cast<double>(i0);
    for (int k = 0; k < 4; ++k) {
      taps[o].idx[k] = clamp_index(i0 - 1 + k, static_cast<long>(in_n));
      taps[o].w[k] = cubic_weight(t + 1.0 - k);
    }
  }
  return taps;
}

}  // namespace

template <typename T>
Tensor<T> bicubic_resize(const Tensor<T>& image, std::size_t out_h, std::size_t out_w) {
  if (!image.defined() || image.rank() != 4)
    throw ShapeError("bicubic_resize: image must be rank 4");
  if (out_h < 1 || out_w < 1) throw UsageError("bicubic_resize: output dims must be >= 1");
  const std::size_t B = image.dim(0), C = image.dim(1), H = image.dim(2), W = image.dim(3);
  const auto taps_x = make_taps(W, out_w);
  const auto taps_y = make_taps(H, out_h);

  Tensor<T> out(Shape{B, C, out_h, out_w});
  std::vector<double> row(out_w);
  std::vector<double> mid(H * out_w);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const T* src = image.data() + ((b * C + c) * H) * W;
      // horizontal pass
      for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < out_w; ++x) {
          const CubicTaps& tp = taps_x[x];
          double acc = 0.0;
          for (int k = 0; k < 4; ++k)
            acc += tp.w[k] * static_cast<double>(src[y * W + tp.idx[k]]);
          mid[y * out_w + x] = acc;
        }
      }
      // vertical pass
      T* dst = out.data() + ((b * C + c) * out_h) * out_w;
      for (std::size_t y = 0; y < out_h; ++y) {
        const CubicTaps& tp = taps_y[y];
        for (std::size_t x = 0; x < out_w; ++x) {
          double acc = 0.0;
          for (int k = 0; k < 4; ++k) acc += tp.w[k] * mid[tp.idx[k] * out_w + x];
          dst[y * out_w + x] = static_cast<T>(acc);
        }
      }
    }
  }
  return out;
}

namespace {

// k quarter-turns clockwise, optionally after a horizontal flip.
template <typename T>
Tensor<T> orient_patch(const Tensor<T>& p, bool flip, int quarter_turns) {
  const std::size_t S = p.dim(2);
  Tensor<T> out(p.shape());
  for (std::size_t y = 0; y < S; ++y) {
    for (std::size_t x = 0; x < S; ++x) {
      std::size_t sy = y, sx = flip ? S - 1 - x : x;
      for (int k = 0; k < quarter_turns; ++k) {
        const std::size_t ty = S - 1 - sx, tx = sy;
        sy = ty;
        sx = tx;
      }
      out.at(0, 0, y, x) = p.at(0, 0, sy, sx);
    }
  }
  return out;
}

}  // namespace

template <typename T>
std::vector<ImagePatch<T>> crop_and_augment(const Tensor<T>& image, std::size_t count,
                                            std::size_t size, std::uint64_t seed,
                                            const std::string& source_id) {
  if (!image.defined() || image.rank() != 4 || image.dim(0) != 1 || image.dim(1) != 1)
    throw ShapeError("crop_and_augment: image must be [1,1,H,W]");
  const std::size_t H = image.dim(2), W = image.dim(3);
  std::vector<ImagePatch<T>> patches;
  if (H < size || W < size) return patches;  // caller counts the skip

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> dy(0, H - size), dx(0, W - size);
  std::uniform_int_distribution<int> dflip(0, 1), drot(0, 3);
  patches.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t y0 = dy(rng), x0 = dx(rng);
    const bool flip = dflip(rng) == 1;
    const int rot = drot(rng);
    Tensor<T> crop(Shape{1, 1, size, size});
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x)
        crop.at(0, 0, y, x) = image.at(0, 0, y0 + y, x0 + x);
    ImagePatch<T> patch;
    patch.pixels = orient_patch(crop, flip, rot);
    patch.source_id = source_id;
    patch.crop_y = y0;
    patch.crop_x = x0;
    patches.push_back(std::move(patch));
  }
  return patches;
}

namespace {

// Orthonormal DCT-II basis: basis[k*n + i] = a(k) cos(pi (2i+1) k / 2n).
std::vector<double> dct_basis(std::size_t n) {
  std::vector<double> basis(n * n);
  const double pi = std::acos(-1.0);
  for (std::size_t k = 0; k < n; ++k) {
    const double a = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    for (std::size_t i = 0; i < n; ++i)
      basis[k * n + i] = a * std::cos(pi * (2.0 * i + 1.0) * k / (2.0 * n));
  }
  return basis;
}

template <typename T>
Tensor<T> dct2_apply(const Tensor<T>& x, bool inverse) {
  if (!x.defined() || x.rank() != 4) throw ShapeError("dct2: input must be rank 4");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto bh = dct_basis(H);
  const auto bw = dct_basis(W);
  Tensor<T> out(x.shape());
  std::vector<double> mid(H * W);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const T* src = x.data() + ((b * C + c) * H) * W;
      // rows: along width
      for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t k = 0; k < W; ++k) {
          double acc = 0.0;
          for (std::size_t i = 0; i < W; ++i) {
            const double base = inverse ? bw[i * W + k] : bw[k * W + i];
            acc += base * static_cast<double>(src[y * W + i]);
          }
          mid[y * W + k] = acc;
        }
      }
      // columns: along height
      T* dst = out.data() + ((b * C + c) * H) * W;
      for (std::size_t k = 0; k < H; ++k) {
        for (std::size_t xcol = 0; xcol < W; ++xcol) {
          double acc = 0.0;
          for (std::size_t i = 0; i < H; ++i) {
            const double base = inverse ? bh[i * H + k] : bh[k * H + i];
            acc += base * mid[i * W + xcol];
          }
          dst[k * W + xcol] = static_cast<T>(acc);
        }
      }
    }
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> dct2(const Tensor<T>& image) {
  return dct2_apply(image, false);
}

template <typename T>
Tensor<T> idct2(const Tensor<T>& coeffs) {
  return dct2_apply(coeffs, true);
}

template <typename T>
Tensor<T> sparsify_dct(const Tensor<T>& image, double keep_fraction) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0))
    throw UsageError("sparsify_dct: keep_fraction must lie in (0,1]");
  Tensor<T> coeffs = dct2(image);
  const std::size_t n = coeffs.size();
  const auto keep = static_cast<std::size_t>(std::ceil(keep_fraction * static_cast<double>(n)));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // stable sort keeps flat-index order among equal magnitudes
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::fabs(static_cast<double>(coeffs[a])) >
           std::fabs(static_cast<double>(coeffs[b]));
  });
  std::vector<bool> keep_mask(n, false);
  for (std::size_t i = 0; i < keep && i < n; ++i) keep_mask[order[i]] = true;
  for (std::size_t i = 0; i < n; ++i)
    if (!keep_mask[i]) coeffs[i] = T(0);

  Tensor<T> out = idct2(coeffs);
  clamp01(out);
  return out;
}

namespace {

struct PointF {
  double y, x;
};

inline double segment_distance(double py, double px, PointF a, PointF b) {
  const double vy = b.y - a.y, vx = b.x - a.x;
  const double len2 = vy * vy + vx * vx;
  double t = len2 > 0 ? ((py - a.y) * vy + (px - a.x) * vx) / len2 : 0.0;
  t = std::min(1.0, std::max(0.0, t));
  const double dy = py - (a.y + t * vy), dx = px - (a.x + t * vx);
  return std::sqrt(dy * dy + dx * dx);
}

}  // namespace

template <typename T>
std::vector<Tensor<T>> synth_glyphs(std::size_t count, std::size_t size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uu(0.0, 1.0);
  std::vector<Tensor<T>> out;
  out.reserve(count);

  // Pen-stroke statistics in the spirit of 32x32 handwritten digits:
  // one or two connected polyline strokes, 3-5 px wide, lightly
  // anti-aliased edges.
  const double margin = std::max(3.0, size * 0.12);
  for (std::size_t n = 0; n < count; ++n) {
    Tensor<T> img(Shape{1, 1, size, size});
    const int strokes = 1 + static_cast<int>(uu(rng) * 2.0);  // 1..2
    for (int s = 0; s < strokes; ++s) {
      const int pts = 3 + static_cast<int>(uu(rng) * 3.0);  // 3..5
      std::vector<PointF> poly(pts);
      poly[0].y = margin + uu(rng) * (size - 2 * margin);
      poly[0].x = margin + uu(rng) * (size - 2 * margin);
      for (int i = 1; i < pts; ++i) {
        // wander from the previous point so the stroke stays connected
        const double step = size * (0.18 + 0.3 * uu(rng));
        const double angle = uu(rng) * 6.283185307179586;
        auto clampf = [&](double v) {
          return std::min(static_cast<double>(size) - margin, std::max(margin, v));
        };
        poly[i].y = clampf(poly[i - 1].y + step * std::sin(angle));
        poly[i].x = clampf(poly[i - 1].x + step * std::cos(angle));
      }
      const double radius = size * (0.04 + 0.035 * uu(rng));
      const double intensity = 0.85 + uu(rng) * 0.15;
      for (int e = 0; e + 1 < pts; ++e) {
        const PointF a = poly[e], b = poly[e + 1];
        const long y_lo = clamp_index(static_cast<long>(std::floor(std::min(a.y, b.y) - radius - 1)),
                                      static_cast<long>(size));
        const long y_hi = clamp_index(static_cast<long>(std::ceil(std::max(a.y, b.y) + radius + 1)),
                                      static_cast<long>(size));
        const long x_lo = clamp_index(static_cast<long>(std::floor(std::min(a.x, b.x) - radius - 1)),
                                      static_cast<long>(size));
        const long x_hi = clamp_index(static_cast<long>(std::ceil(std::max(a.x, b.x) + radius + 1)),
                                      static_cast<long>(size));
        for (long y = y_lo; y <= y_hi; ++y) {
          for (long x = x_lo; x <= x_hi; ++x) {
            const double d = segment_distance(y + 0.0, x + 0.0, a, b);
            const double v = intensity * std::min(1.0, std::max(0.0, (radius - d) / 0.35 + 0.5));
            auto& px = img.at(0, 0, y, x);
            px = std::max(px, static_cast<T>(v));
          }
        }
      }
    }
    clamp01(img);
    out.push_back(std::move(img));
  }
  return out;
}

namespace {
constexpr char kPatchMagic[8] = {'L', 'S', 'H', 'R', 'P', 'T', 'C', '1'};
}

template <typename T>
void save_patch_archive(const std::vector<Tensor<T>>& patches, const std::string& path) {
  std::vector<std::uint8_t> buf;
  binio::put_bytes(buf, kPatchMagic, 8);
  binio::put<std::uint32_t>(buf, 1);  // version
  binio::put<std::uint8_t>(buf, sizeof(T));
  binio::put<std::uint32_t>(buf, static_cast<std::uint32_t>(patches.size()));
  for (const Tensor<T>& p : patches) {
    if (!p.defined() || p.rank() != 4)
      throw UsageError("save_patch_archive: patches must be rank-4 tensors");
    binio::put<std::uint32_t>(buf, static_cast<std::uint32_t>(p.dim(2)));
    binio::put<std::uint32_t>(buf, static_cast<std::uint32_t>(p.dim(3)));
    binio::put_bytes(buf, p.data(), p.size() * sizeof(T));
  }
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, buf.data() + 8, static_cast<uInt>(buf.size() - 8)));
  binio::put<std::uint32_t>(buf, crc);
  binio::write_file(path, buf);
}

template <typename T>
std::vector<Tensor<T>> load_patch_archive(const std::string& path) {
  const auto buf = binio::read_file(path);
  if (buf.size() < 8 + 4 + 1 + 4 + 4 || std::memcmp(buf.data(), kPatchMagic, 8) != 0)
    throw IoError(path + ": not a patch archive");
  const auto stored_crc = [&] {
    std::uint32_t c;
    std::memcpy(&c, buf.data() + buf.size() - 4, 4);
    return c;
  }();
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, buf.data() + 8, static_cast<uInt>(buf.size() - 12)));
  if (crc != stored_crc) throw IoError(path + ": checksum mismatch, archive is corrupt");

  binio::Reader r(buf.data(), buf.size() - 4, path);
  r.skip(8);
  const auto version = r.get<std::uint32_t>();
  if (version != 1) throw IoError(path + ": unsupported archive version");
  const auto tsize = r.get<std::uint8_t>();
  if (tsize != sizeof(T))
    throw IoError(path + ": archive precision (" + std::to_string(tsize * 8) +
                  "-bit) does not match requested precision");
  const auto count = r.get<std::uint32_t>();
  std::vector<Tensor<T>> patches;
  patches.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto h = r.get<std::uint32_t>();
    const auto w = r.get<std::uint32_t>();
    Tensor<T> p(Shape{1, 1, h, w});
    r.bytes(p.data(), p.size() * sizeof(T));
    patches.push_back(std::move(p));
  }
  return patches;
}

#define LSHR_INSTANTIATE_DATA(T)                                                          \
  template struct ImagePatch<T>;                                                          \
  template void clamp01<T>(Tensor<T>&);                                                   \
  template Tensor<T> bicubic_resize<T>(const Tensor<T>&, std::size_t, std::size_t);      \
  template std::vector<ImagePatch<T>> crop_and_augment<T>(                                \
      const Tensor<T>&, std::size_t, std::size_t, std::uint64_t, const std::string&);    \
  template Tensor<T> dct2<T>(const Tensor<T>&);                                           \
  template Tensor<T> idct2<T>(const Tensor<T>&);                                          \
  template Tensor<T> sparsify_dct<T>(const Tensor<T>&, double);                           \
  template std::vector<Tensor<T>> synth_glyphs<T>(std::size_t, std::size_t, std::uint64_t); \
  template void save_patch_archive<T>(const std::vector<Tensor<T>>&, const std::string&); \
  template std::vector<Tensor<T>> load_patch_archive<T>(const std::string&);

LSHR_INSTANTIATE_DATA(float)
LSHR_INSTANTIATE_DATA(double)

}  // namespace lshr
