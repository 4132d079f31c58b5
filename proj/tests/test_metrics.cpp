#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "lshr/data.hpp"
#include "lshr/image.hpp"
#include "lshr/metrics.hpp"
#include "reference.hpp"

using namespace lshr;

TEST_CASE("psnr formula values") {
  auto x = Tensor<double>::full({1, 1, 4, 4}, 100.0);
  auto y = Tensor<double>::full({1, 1, 4, 4}, 101.0);  // MSE = 1
  CHECK(psnr(x, y, 255.0) == doctest::Approx(48.13080361).epsilon(1e-8));

  auto zero = Tensor<double>::zeros({1, 1, 4, 4});
  auto one = Tensor<double>::full({1, 1, 4, 4}, 1.0);
  CHECK(psnr(zero, one, 1.0) == doctest::Approx(0.0).epsilon(1e-12));

  CHECK(std::isinf(psnr(x, x, 255.0)));
  CHECK_THROWS_AS(psnr(x, Tensor<double>::zeros({1, 1, 2, 2}), 1.0), ShapeError);
  CHECK_THROWS_AS(psnr(x, y, 0.0), UsageError);
}

TEST_CASE("psnr is symmetric and permutation invariant") {
  std::mt19937 rng(1);
  auto x = ref::random_tensor<double>({1, 1, 6, 6}, rng, 0.0, 1.0);
  auto y = ref::random_tensor<double>({1, 1, 6, 6}, rng, 0.0, 1.0);
  CHECK(psnr(x, y, 1.0) == doctest::Approx(psnr(y, x, 1.0)).epsilon(1e-12));

  std::vector<std::size_t> perm(x.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Tensor<double> xp(x.shape()), yp(y.shape());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    xp[i] = x[perm[i]];
    yp[i] = y[perm[i]];
  }
  CHECK(psnr(xp, yp, 1.0) == doctest::Approx(psnr(x, y, 1.0)).epsilon(1e-12));
}

TEST_CASE("complexity reproduces the published reconstruction-layer figures") {
  NetworkConfig cfg;
  cfg.K = 16;
  cfg.R = 0.01;
  cfg.s = 2;
  auto report = complexity(cfg, 32, 32);
  CHECK(report.m == 10);
  CHECK(report.space == 2560);
  CHECK(report.time_macs == 6.5536e5);
  CHECK(report.weights_per_kernel == 256);
  CHECK(report.weights_total == 2560);
  CHECK(report.pattern_storage_bits == 2560);
  CHECK(report.pattern_format_bits == 1);
}

TEST_CASE("complexity matches a hand-expanded count on a second configuration") {
  NetworkConfig cfg;
  cfg.K = 16;
  cfg.R = 0.10;
  cfg.s = 2;
  auto report = complexity(cfg, 64, 64);
  // m = round(0.10 * 4096) = 410; space = 256*410; time = 32^2*256*410
  CHECK(report.m == 410);
  CHECK(report.space == 256 * 410);
  CHECK(report.time_macs == 1024.0 * 256.0 * 410.0);
}

TEST_CASE("per-kernel time is quadratic in the feature-map side") {
  NetworkConfig cfg;
  cfg.K = 16;
  cfg.R = 0.01;
  cfg.s = 2;
  auto small = complexity(cfg, 32, 32);
  auto big = complexity(cfg, 64, 64);
  const double per_kernel_small = small.time_macs / static_cast<double>(small.m);
  const double per_kernel_big = big.time_macs / static_cast<double>(big.m);
  CHECK(per_kernel_big == doctest::Approx(4.0 * per_kernel_small).epsilon(1e-12));
}

TEST_CASE("evaluating a model against its own outputs yields the inf sentinel") {
  NetworkConfig cfg;
  cfg.K = 4;
  cfg.R = 0.25;
  cfg.s = 2;
  cfg.channels = 4;
  cfg.blocks = 1;
  cfg.pattern_mode = PatternMode::Static;
  auto params = make_params<double>(cfg, 8, 8, 1);
  for (auto& [name, w] : params.trainables()) {
    Tensor<double> t = w;
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.0;
  }
  // all-zero model reproduces all-zero images exactly
  std::vector<Tensor<double>> dataset(3, Tensor<double>::zeros({1, 1, 8, 8}));
  auto report = evaluate(params, cfg, dataset);
  CHECK(report.inf_count == 3);
  CHECK(std::isinf(report.mean_psnr));
  CHECK_THROWS_AS(evaluate(params, cfg, {}), UsageError);
}

TEST_CASE("bicubic baseline provides a finite comparison floor") {
  auto images = synth_glyphs<double>(6, 32, 11);
  auto report = bicubic_baseline(images, 2);
  CHECK(report.per_image_psnr.size() == images.size());
  CHECK(std::isfinite(report.mean_psnr));
  CHECK(report.mean_psnr > 5.0);
}

TEST_CASE("csv round trip is exact") {
  std::vector<std::string> header = {"a", "b", "c"};
  std::vector<std::vector<double>> rows = {
      {1.0 / 3.0, -2.718281828459045e-5, 4503599627370497.0},
      {1e-300, 0.1 + 0.2, -0.0},
  };
  write_csv("csv_test.csv", header, rows);
  auto [h2, r2] = read_csv("csv_test.csv");
  CHECK(h2 == header);
  REQUIRE(r2.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      CHECK(r2[i][j] == rows[i][j]);
}

TEST_CASE("plot rendering writes a readable PNG") {
  std::vector<std::pair<std::string, std::vector<double>>> series = {
      {"loss", {1.0, 0.8, 0.5, 0.4, 0.35}},
      {"val", {1.1, 0.9, 0.7, 0.6, 0.55}},
  };
  plot_curves_png("curves_test.png", series, 320, 200);
  auto img = load_grayscale<double>("curves_test.png");
  CHECK(img.dim(2) == 200);
  CHECK(img.dim(3) == 320);
  double dark = 0;
  for (std::size_t i = 0; i < img.size(); ++i)
    if (img[i] < 0.5) ++dark;
  CHECK(dark > 100);  // axes and curves actually drawn
}

TEST_CASE("reconstruction time grows with the block count") {
  NetworkConfig cfg;
  cfg.K = 16;
  cfg.R = 0.01;
  cfg.s = 2;
  cfg.channels = 48;
  cfg.blocks = 1;
  cfg.pattern_mode = PatternMode::Static;
  auto params = make_params<float>(cfg, 128, 128, 3);
  std::mt19937 rng(3);
  std::vector<Tensor<float>> images = {ref::random_tensor<float>({1, 1, 128, 128}, rng, 0.f, 1.f)};

  auto points = sweep_blocks(params, cfg, images, {1, 4, 8}, 5);
  REQUIRE(points.size() == 3);
  CHECK(points[0].median_seconds > 0.0);
  CHECK(points[1].median_seconds > points[0].median_seconds);
  CHECK(points[2].median_seconds > points[1].median_seconds);
}
