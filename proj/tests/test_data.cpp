#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "lshr/data.hpp"
#include "lshr/image.hpp"
#include "reference.hpp"

using namespace lshr;

namespace {

// independent inverse DCT oracle (orthonormal => transpose of ref::dct2)
Tensor<double> ref_idct2(const Tensor<double>& c) {
  const std::size_t H = c.dim(2), W = c.dim(3);
  const double pi = std::acos(-1.0);
  Tensor<double> out(c.shape());
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      double acc = 0.0;
      for (std::size_t ky = 0; ky < H; ++ky)
        for (std::size_t kx = 0; kx < W; ++kx) {
          const double ay = ky == 0 ? std::sqrt(1.0 / H) : std::sqrt(2.0 / H);
          const double ax = kx == 0 ? std::sqrt(1.0 / W) : std::sqrt(2.0 / W);
          acc += ay * ax * c.at(0, 0, ky, kx) *
                 std::cos(pi * (2.0 * y + 1.0) * ky / (2.0 * H)) *
                 std::cos(pi * (2.0 * x + 1.0) * kx / (2.0 * W));
        }
      out.at(0, 0, y, x) = acc;
    }
  return out;
}

}  // namespace

TEST_CASE("grayscale loading scales 8-bit values to [0,1]") {
  Tensor<double> img(Shape{1, 1, 2, 3});
  img[0] = 1.0;
  img[1] = 0.0;
  img[2] = 0.5;
  img[3] = 0.25;
  img[4] = 0.75;
  img[5] = 1.0;
  save_png(img, "io_test.png");
  auto loaded = load_grayscale<double>("io_test.png");
  REQUIRE(loaded.shape() == img.shape());
  CHECK(loaded[0] == 1.0);
  CHECK(loaded[1] == 0.0);
  for (std::size_t i = 0; i < img.size(); ++i)
    CHECK(std::abs(loaded[i] - img[i]) < 1.0 / 255.0);

  save_pgm(img, "io_test.pgm");
  auto pgm = load_grayscale<double>("io_test.pgm");
  CHECK(ref::max_abs_diff(pgm, loaded) < 1e-12);

  CHECK_THROWS_AS(load_grayscale<double>("does_not_exist.png"), IoError);
}

TEST_CASE("pure-gray color pixels map to v/255") {
  // P6 PPM with r = g = b
  std::vector<std::uint8_t> ppm = {'P', '6', '\n', '2', ' ', '1', '\n', '2', '5', '5', '\n',
                                   200, 200, 200, 40,  40,  40};
  {
    std::ofstream f("gray.ppm", std::ios::binary);
    f.write(reinterpret_cast<const char*>(ppm.data()), static_cast<std::streamsize>(ppm.size()));
  }
  auto img = load_grayscale<double>("gray.ppm");
  CHECK(img[0] == doctest::Approx(200.0 / 255.0).epsilon(1e-12));
  CHECK(img[1] == doctest::Approx(40.0 / 255.0).epsilon(1e-12));
}

TEST_CASE("crop_and_augment yields the requested patch set") {
  std::mt19937 rng(1);
  auto image = ref::random_tensor<double>({1, 1, 300, 280}, rng, 0.0, 1.0);
  auto patches = crop_and_augment(image, 50, 256, 7, "img0");
  REQUIRE(patches.size() == 50);
  for (const auto& p : patches) {
    CHECK(p.pixels.shape() == Shape{1, 1, 256, 256});
    CHECK(p.source_id == "img0");
    CHECK(p.crop_y <= 300 - 256);
    CHECK(p.crop_x <= 280 - 256);
  }

  auto again = crop_and_augment(image, 50, 256, 7, "img0");
  for (std::size_t i = 0; i < patches.size(); ++i)
    CHECK(patches[i].pixels.vec() == again[i].pixels.vec());

  auto small = Tensor<double>::zeros({1, 1, 100, 100});
  CHECK(crop_and_augment(small, 5, 256, 7).empty());
}

TEST_CASE("crop of the full image keeps exactly its pixels") {
  std::mt19937 rng(2);
  auto image = ref::random_tensor<double>({1, 1, 8, 8}, rng);
  auto patches = crop_and_augment(image, 4, 8, 9);
  for (const auto& p : patches) {
    CHECK(p.crop_y == 0);
    CHECK(p.crop_x == 0);
    auto a = p.pixels.vec();
    auto b = image.vec();
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);  // flip/rotation permutes, never resamples
  }
}

TEST_CASE("bicubic preserves constants and the identity resize") {
  auto flat = Tensor<double>::full({1, 1, 12, 17}, 0.42);
  auto small = bicubic_resize(flat, 5, 7);
  for (std::size_t i = 0; i < small.size(); ++i)
    CHECK(small[i] == doctest::Approx(0.42).epsilon(1e-9));
  auto big = bicubic_resize(flat, 31, 40);
  for (std::size_t i = 0; i < big.size(); ++i)
    CHECK(big[i] == doctest::Approx(0.42).epsilon(1e-9));

  std::mt19937 rng(3);
  auto img = ref::random_tensor<double>({1, 1, 9, 11}, rng);
  auto same = bicubic_resize(img, 9, 11);
  CHECK(ref::max_abs_diff(same, img) < 1e-6);
}

TEST_CASE("bicubic downscale matches the direct kernel-sum oracle") {
  Tensor<double> ramp(Shape{1, 1, 16, 16});
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x)
      ramp.at(0, 0, y, x) = (static_cast<double>(x) + 2.0 * static_cast<double>(y)) / 48.0;
  auto down = bicubic_resize(ramp, 8, 8);
  auto expect = ref::bicubic(ramp, 8, 8);
  CHECK(ref::max_abs_diff(down, expect) < 1e-5);

  std::mt19937 rng(4);
  auto img = ref::random_tensor<double>({1, 1, 20, 14}, rng, 0.0, 1.0);
  CHECK(ref::max_abs_diff(bicubic_resize(img, 7, 5), ref::bicubic(img, 7, 5)) < 1e-5);
  CHECK(ref::max_abs_diff(bicubic_resize(img, 40, 28), ref::bicubic(img, 40, 28)) < 1e-5);
}

TEST_CASE("dct2 of a constant image is DC-only with value c*N") {
  const double c = 0.3;
  auto img = Tensor<double>::full({1, 1, 8, 8}, c);
  auto coeffs = dct2(img);
  CHECK(coeffs[0] == doctest::Approx(c * 8.0).epsilon(1e-12));
  for (std::size_t i = 1; i < coeffs.size(); ++i) CHECK(std::abs(coeffs[i]) < 1e-12);
}

TEST_CASE("dct2 round trip and brute-force oracle") {
  std::mt19937 rng(5);
  auto img = ref::random_tensor<double>({1, 1, 12, 10}, rng, 0.0, 1.0);
  auto round = idct2(dct2(img));
  CHECK(ref::max_abs_diff(round, img) < 1e-6);

  // 4x4 impulse against the O(N^4) summation oracle
  auto impulse = Tensor<double>::zeros({1, 1, 4, 4});
  impulse.at(0, 0, 1, 2) = 1.0;
  CHECK(ref::max_abs_diff(dct2(impulse), ref::dct2(impulse)) < 1e-8);

  auto rnd = ref::random_tensor<double>({1, 1, 6, 6}, rng);
  CHECK(ref::max_abs_diff(dct2(rnd), ref::dct2(rnd)) < 1e-8);
}

TEST_CASE("sparsify_dct at keep=1 is the identity") {
  std::mt19937 rng(6);
  auto img = ref::random_tensor<double>({1, 1, 16, 16}, rng, 0.0, 1.0);
  auto out = sparsify_dct(img, 1.0);
  CHECK(ref::max_abs_diff(out, img) < 1e-6);

  auto flat = Tensor<double>::full({1, 1, 8, 8}, 0.7);
  auto dc_only = sparsify_dct(flat, 1.0 / 64.0);
  CHECK(ref::max_abs_diff(dc_only, flat) < 1e-9);

  CHECK_THROWS_AS(sparsify_dct(img, 0.0), UsageError);
}

TEST_CASE("sparsify_dct matches the sort-and-zero oracle") {
  std::mt19937 rng(7);
  auto img = ref::random_tensor<double>({1, 1, 8, 8}, rng, 0.0, 1.0);
  const double keep = 0.05;
  auto out = sparsify_dct(img, keep);

  auto coeffs = ref::dct2(img);
  const std::size_t n = coeffs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::fabs(coeffs[a]) > std::fabs(coeffs[b]);
  });
  const auto k = static_cast<std::size_t>(std::ceil(keep * static_cast<double>(n)));
  std::vector<bool> keep_mask(n, false);
  for (std::size_t i = 0; i < k; ++i) keep_mask[order[i]] = true;
  for (std::size_t i = 0; i < n; ++i)
    if (!keep_mask[i]) coeffs[i] = 0.0;
  auto expect = ref_idct2(coeffs);
  clamp01(expect);
  CHECK(ref::max_abs_diff(out, expect) < 1e-6);
}

TEST_CASE("sparsify_dct error is non-increasing in the kept fraction") {
  std::mt19937 rng(8);
  auto img = ref::random_tensor<double>({1, 1, 16, 16}, rng, 0.0, 1.0);
  double prev = std::numeric_limits<double>::max();
  for (double f : {0.02, 0.05, 0.1, 0.2, 0.5, 1.0}) {
    auto out = sparsify_dct(img, f);
    double dist = 0.0;
    for (std::size_t i = 0; i < img.size(); ++i) {
      const double d = out[i] - img[i];
      dist += d * d;
    }
    CHECK(dist <= prev + 1e-9);
    prev = dist;
  }
}

TEST_CASE("pipeline outputs stay inside [0,1]") {
  std::mt19937 rng(9);
  auto img = ref::random_tensor<double>({1, 1, 16, 16}, rng, 0.0, 1.0);
  auto out = sparsify_dct(img, 0.03);
  for (std::size_t i = 0; i < out.size(); ++i) {
    CHECK(out[i] >= 0.0);
    CHECK(out[i] <= 1.0);
  }
}

TEST_CASE("synthetic glyph corpus is deterministic and in range") {
  auto a = synth_glyphs<double>(5, 32, 13);
  auto b = synth_glyphs<double>(5, 32, 13);
  REQUIRE(a.size() == 5);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].vec() == b[i].vec());
    double mass = 0.0;
    for (std::size_t j = 0; j < a[i].size(); ++j) {
      CHECK(a[i][j] >= 0.0);
      CHECK(a[i][j] <= 1.0);
      mass += a[i][j];
    }
    CHECK(mass > 0.0);  // strokes actually drawn
  }
}

TEST_CASE("patch archive round trip is bit-exact") {
  auto patches = synth_glyphs<float>(7, 16, 21);
  save_patch_archive(patches, "patches_test.lpa");
  auto loaded = load_patch_archive<float>("patches_test.lpa");
  REQUIRE(loaded.size() == patches.size());
  for (std::size_t i = 0; i < patches.size(); ++i)
    CHECK(loaded[i].vec() == patches[i].vec());

  CHECK_THROWS_AS(load_patch_archive<double>("patches_test.lpa"), IoError);

  auto bytes = [&] {
    std::ifstream f("patches_test.lpa", std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  }();
  bytes[bytes.size() / 2] ^= 0x10;
  {
    std::ofstream f("patches_corrupt.lpa", std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS_AS(load_patch_archive<float>("patches_corrupt.lpa"), IoError);
}
