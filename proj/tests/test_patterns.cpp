#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "lshr/ops.hpp"
#include "lshr/patterns.hpp"
#include "reference.hpp"

using namespace lshr;

TEST_CASE("binarize maps the sign convention") {
  CHECK(binarize(0.3) == 1.0);
  CHECK(binarize(-0.2) == 0.0);
  CHECK(binarize(0.0) == 0.0);
}

TEST_CASE("binarize is monotone non-decreasing") {
  std::mt19937 rng(1);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int i = 0; i < 1000; ++i) {
    double a = u(rng), b = u(rng);
    if (a > b) std::swap(a, b);
    CHECK(binarize(a) <= binarize(b));
  }
}

TEST_CASE("clip_shadow clamps and is idempotent") {
  PatternBank<double> bank;
  bank.m = 1;
  bank.K = 2;
  bank.shadow = Tensor<double>::from_vector({1, 1, 2, 2}, {1.7, -3.0, 0.4, -1.0});
  clip_shadow(bank);
  CHECK(bank.shadow[0] == 1.0);
  CHECK(bank.shadow[1] == -1.0);
  CHECK(bank.shadow[2] == 0.4);
  CHECK(bank.shadow[3] == -1.0);
  auto once = bank.shadow.vec();
  clip_shadow(bank);
  CHECK(bank.shadow.vec() == once);
}

TEST_CASE("init_bernoulli extremes and concentration") {
  auto ones = init_bernoulli<double>(4, 8, 1.0, 7);
  for (std::size_t i = 0; i < ones.shadow.size(); ++i) CHECK(ones.shadow[i] == 1.0);
  CHECK(sparsity(ones, 0).fraction_ones == 1.0);

  auto zeros = init_bernoulli<double>(4, 8, 0.0, 7);
  CHECK(sparsity(zeros, 0).fraction_ones == 0.0);

  // m*K^2 = 2560 samples at p = 0.5
  auto bank = init_bernoulli<double>(10, 16, 0.5, 1234);
  const double f = sparsity(bank, 0).fraction_ones;
  CHECK(f >= 0.45);
  CHECK(f <= 0.55);
}

TEST_CASE("init_bernoulli is deterministic in the seed") {
  auto a = init_bernoulli<float>(6, 16, 0.5, 99);
  auto b = init_bernoulli<float>(6, 16, 0.5, 99);
  CHECK(a.bits() == b.bits());
  CHECK(a.shadow.vec() == b.shadow.vec());
}

TEST_CASE("init_uniform: open interval, balance, determinism") {
  auto bank = init_uniform<double>(10, 16, 42);
  CHECK(bank.mode == PatternMode::Learned);
  CHECK(bank.shadow.requires_grad());
  for (std::size_t i = 0; i < bank.shadow.size(); ++i) {
    CHECK(bank.shadow[i] > -1.0);
    CHECK(bank.shadow[i] < 1.0);
  }
  const double f = sparsity(bank, 0).fraction_ones;
  CHECK(f >= 0.45);
  CHECK(f <= 0.55);

  auto again = init_uniform<double>(10, 16, 42);
  CHECK(again.shadow.vec() == bank.shadow.vec());
}

TEST_CASE("sense block sums") {
  auto image = Tensor<double>::full({1, 1, 16, 16}, 1.0);
  auto bank = init_bernoulli<double>(1, 16, 1.0, 0);
  auto y = sense(image, bank);
  REQUIRE(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y[0] == 256.0);

  auto dark = init_bernoulli<double>(1, 16, 0.0, 0);
  std::mt19937 rng(3);
  auto noise_img = ref::random_tensor<double>({1, 1, 16, 16}, rng, 0.0, 1.0);
  CHECK(sense(noise_img, dark)[0] == 0.0);
}

TEST_CASE("sense matches the per-block inner-product oracle") {
  std::mt19937 rng(5);
  auto image = ref::random_tensor<double>({1, 1, 32, 32}, rng, 0.0, 1.0);
  auto bank = init_bernoulli<double>(8, 16, 0.5, 11);
  auto y = sense(image, bank);
  REQUIRE(y.shape() == Shape{1, 8, 2, 2});
  const auto bits = bank.bits();
  for (std::size_t p = 0; p < 8; ++p)
    for (std::size_t by = 0; by < 2; ++by)
      for (std::size_t bx = 0; bx < 2; ++bx) {
        double acc = 0.0;
        for (std::size_t i = 0; i < 16; ++i)
          for (std::size_t j = 0; j < 16; ++j)
            if (bits[p * 256 + i * 16 + j])
              acc += image.at(0, 0, by * 16 + i, bx * 16 + j);
        CHECK(std::abs(y.at(0, p, by, bx) - acc) < 1e-6);
      }
}

TEST_CASE("sense measurements ignore pixels whose pattern bit is 0") {
  std::mt19937 rng(6);
  auto image = ref::random_tensor<double>({1, 1, 8, 8}, rng, 0.0, 1.0);
  auto bank = init_bernoulli<double>(3, 8, 0.5, 17);
  auto y0 = sense(image, bank);

  // zeroing pixels masked by every pattern must not change anything;
  // perturbing them must not either
  const auto bits = bank.bits();
  auto masked = image.clone();
  for (std::size_t i = 0; i < 64; ++i) {
    bool used = false;
    for (std::size_t p = 0; p < 3; ++p) used = used || bits[p * 64 + i];
    if (!used) masked[i] = 123.0;
  }
  auto y1 = sense(masked, bank);
  CHECK(ref::max_abs_diff(y0, y1) == 0.0);
}

TEST_CASE("sense rejects non-divisible image sizes") {
  auto bank = init_bernoulli<double>(2, 16, 0.5, 0);
  auto image = Tensor<double>::zeros({1, 1, 24, 32});
  CHECK_THROWS_AS(sense(image, bank), ShapeError);
}

TEST_CASE("straight-through gradient passes through unchanged") {
  auto bank = init_uniform<double>(2, 4, 3);
  std::mt19937 rng(7);
  auto weights = ref::random_tensor<double>({2, 1, 4, 4}, rng);

  Tape<double> tape;
  auto binary = bank.binary_view(&tape);
  auto lossv = sum(mul(binary, weights, &tape), &tape);
  auto grads = tape.backward(lossv);
  REQUIRE(grads.count(bank.shadow.id()));
  auto g = grads.at(bank.shadow.id());
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == weights[i]);

  // explicit pass-through helper
  auto passed = straight_through_grad(weights, bank);
  for (std::size_t i = 0; i < passed.size(); ++i) CHECK(passed[i] == weights[i]);

  auto fixed = init_bernoulli<double>(2, 4, 0.5, 3);
  CHECK_THROWS_AS(straight_through_grad(weights, fixed), UsageError);
}

TEST_CASE("static banks receive no gradient") {
  auto bank = init_bernoulli<double>(2, 4, 0.5, 3);
  auto image = Tensor<double>::full({1, 1, 4, 4}, 0.5);
  Tape<double> tape;
  auto y = sense(image, bank, &tape);
  CHECK_FALSE(y.requires_grad());
  CHECK(tape.size() == 0);
}

TEST_CASE("one STE step moves the shadow like the unquantized linear model") {
  // one pattern, one pixel: y = b(w) * x, loss = (y - t)^2 with x=1, t=0.
  // The unquantized model y = w*x has gradient 2(wx-t)x; both gradients
  // are positive for w in (0,1], so a descent step lowers w either way.
  const double x = 1.0, target = 0.0;
  PatternBank<double> bank;
  bank.mode = PatternMode::Learned;
  bank.m = 1;
  bank.K = 1;
  bank.shadow = Tensor<double>::from_vector({1, 1, 1, 1}, {0.7});
  bank.shadow.set_requires_grad(true);

  Tape<double> tape;
  auto image = Tensor<double>::from_vector({1, 1, 1, 1}, {x});
  auto y = sense(image, bank, &tape);
  auto err = subtract(y, Tensor<double>::from_vector({1, 1, 1, 1}, {target}), &tape);
  auto lossv = sum(mul(err, err, &tape), &tape);
  auto g = tape.backward(lossv).at(bank.shadow.id());

  const double w = 0.7;
  const double ste_grad = g[0];
  const double linear_grad = 2.0 * (w * x - target) * x;
  CHECK(ste_grad > 0.0);
  CHECK(linear_grad > 0.0);
  CHECK(std::signbit(ste_grad) == std::signbit(linear_grad));
}

TEST_CASE("sparsity statistics") {
  auto ones = init_bernoulli<double>(3, 4, 1.0, 0);
  auto stats = sparsity(ones, 5);
  CHECK(stats.step == 5);
  CHECK(stats.fraction_ones == 1.0);

  // checkerboard: exactly half the bits set
  PatternBank<double> cb;
  cb.m = 1;
  cb.K = 4;
  std::vector<double> vals(16);
  for (std::size_t i = 0; i < 16; ++i) vals[i] = ((i / 4 + i % 4) % 2 == 0) ? 0.8 : -0.8;
  cb.shadow = Tensor<double>::from_vector({1, 1, 4, 4}, vals);
  CHECK(sparsity(cb, 0).fraction_ones == 0.5);

  auto bank = init_bernoulli<double>(10, 16, 0.5, 2);
  auto st = sparsity(bank, 0);
  double mean_pp = 0.0;
  for (double f : st.per_pattern_fraction) mean_pp += f;
  mean_pp /= static_cast<double>(st.per_pattern_fraction.size());
  CHECK(st.fraction_ones == doctest::Approx(mean_pp).epsilon(1e-12));
  CHECK(st.fraction_ones >= 0.45);
  CHECK(st.fraction_ones <= 0.55);
}
