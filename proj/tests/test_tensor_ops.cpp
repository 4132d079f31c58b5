#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "lshr/ops.hpp"
#include "reference.hpp"

using namespace lshr;

TEST_CASE("conv2d windowed sum") {
  auto in = Tensor<double>::from_vector({1, 1, 2, 2}, {1, 2, 3, 4});
  auto k = Tensor<double>::full({1, 1, 2, 2}, 1.0);
  auto out = conv2d(in, k, 2);
  REQUIRE(out.shape() == Shape{1, 1, 1, 1});
  CHECK(out[0] == doctest::Approx(10.0));
}

TEST_CASE("conv2d 1x1 identity kernel") {
  std::mt19937 rng(7);
  auto in = ref::random_tensor<double>({2, 1, 5, 4}, rng);
  auto k = Tensor<double>::full({1, 1, 1, 1}, 1.0);
  auto out = conv2d(in, k, 1);
  CHECK(ref::max_abs_diff(out, in) == 0.0);
}

TEST_CASE("conv2d matches the loop reference") {
  std::mt19937 rng(11);
  auto in = ref::random_tensor<double>({1, 1, 6, 6}, rng);
  auto k = ref::random_tensor<double>({2, 1, 3, 3}, rng);
  auto out = conv2d(in, k, 3);
  auto expect = ref::conv2d(in, k, 3);
  REQUIRE(out.shape() == expect.shape());
  CHECK(ref::max_abs_diff(out, expect) < 1e-6);
}

TEST_CASE("conv2d random shapes with stride, pad and bias match the loop reference") {
  std::mt19937 rng(13);
  std::uniform_int_distribution<std::size_t> d_small(1, 3), d_size(3, 9), d_stride(1, 2);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t B = d_small(rng), Ci = d_small(rng), Co = d_small(rng);
    const std::size_t K = d_small(rng);
    const std::size_t H = std::max(K, d_size(rng)), W = std::max(K, d_size(rng));
    const std::size_t stride = d_stride(rng), pad = trial % 2;
    auto in = ref::random_tensor<double>({B, Ci, H, W}, rng);
    auto k = ref::random_tensor<double>({Co, Ci, K, K}, rng);
    auto bias = ref::random_tensor<double>({Co}, rng);
    auto out = conv2d(in, k, stride, bias, nullptr, pad);
    auto expect = ref::conv2d(in, k, stride, bias, pad);
    REQUIRE(out.shape() == expect.shape());
    CHECK(ref::max_abs_diff(out, expect) < 1e-6);
  }
}

TEST_CASE("conv2d shape errors name the axes") {
  auto in = Tensor<double>::zeros({1, 2, 4, 4});
  auto k = Tensor<double>::zeros({1, 3, 2, 2});
  CHECK_THROWS_AS(conv2d(in, k, 1), ShapeError);
  auto k_big = Tensor<double>::zeros({1, 2, 5, 5});
  CHECK_THROWS_AS(conv2d(in, k_big, 1), ShapeError);
  auto bad_bias = Tensor<double>::zeros({2});
  auto k_ok = Tensor<double>::zeros({1, 2, 2, 2});
  CHECK_THROWS_AS(conv2d(in, k_ok, 1, bad_bias), ShapeError);
}

TEST_CASE("transposed_conv2d stamps a single site") {
  auto in = Tensor<double>::from_vector({1, 1, 1, 1}, {1.0});
  auto k = Tensor<double>::from_vector({1, 1, 2, 2}, {3.0, -1.0, 2.0, 0.5});
  auto out = transposed_conv2d(in, k, 2);
  REQUIRE(out.shape() == Shape{1, 1, 2, 2});
  CHECK(out[0] == 3.0);
  CHECK(out[1] == -1.0);
  CHECK(out[2] == 2.0);
  CHECK(out[3] == 0.5);
}

TEST_CASE("transposed_conv2d of zero input is the broadcast bias") {
  auto in = Tensor<double>::zeros({2, 3, 2, 2});
  std::mt19937 rng(3);
  auto k = ref::random_tensor<double>({3, 2, 3, 3}, rng);
  auto bias = Tensor<double>::from_vector({2}, {0.25, -1.5});
  auto out = transposed_conv2d(in, k, 2, bias);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t y = 0; y < out.dim(2); ++y)
        for (std::size_t x = 0; x < out.dim(3); ++x)
          CHECK(out.at(b, c, y, x) == bias[c]);
}

TEST_CASE("transposed_conv2d matches the scatter reference") {
  std::mt19937 rng(17);
  std::uniform_int_distribution<std::size_t> d_small(1, 3), d_size(1, 5), d_stride(1, 3);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t B = d_small(rng), Ci = d_small(rng), Co = d_small(rng);
    const std::size_t K = 1 + d_small(rng);
    const std::size_t h = d_size(rng), w = d_size(rng), stride = d_stride(rng);
    auto in = ref::random_tensor<double>({B, Ci, h, w}, rng);
    auto k = ref::random_tensor<double>({Ci, Co, K, K}, rng);
    auto out = transposed_conv2d(in, k, stride);
    auto expect = ref::transposed_conv2d(in, k, stride);
    REQUIRE(out.shape() == expect.shape());
    CHECK(ref::max_abs_diff(out, expect) < 1e-6);
  }
}

TEST_CASE("conv2d and transposed_conv2d are adjoint") {
  std::mt19937 rng(23);
  std::uniform_int_distribution<std::size_t> d_small(1, 3), d_stride(1, 2);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t B = d_small(rng), Ci = d_small(rng), Co = d_small(rng);
    const std::size_t K = d_small(rng), stride = d_stride(rng);
    const std::size_t oh = d_small(rng), ow = d_small(rng);
    const std::size_t H = (oh - 1) * stride + K, W = (ow - 1) * stride + K;
    auto x = ref::random_tensor<double>({B, Ci, H, W}, rng);
    auto k = ref::random_tensor<double>({Co, Ci, K, K}, rng);
    auto y = ref::random_tensor<double>({B, Co, oh, ow}, rng);
    // the same buffer serves both directions: [Co,Ci,K,K] read as
    // [Ci'=Co,Co'=Ci,K,K]
    auto kt = Tensor<double>::from_vector({Co, Ci, K, K}, k.vec());
    const double lhs = ref::inner(conv2d(x, k, stride), y);
    const double rhs = ref::inner(x, transposed_conv2d(y, kt, stride));
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-5));
  }
}

TEST_CASE("leaky_relu values") {
  auto in = Tensor<double>::from_vector({1, 1, 1, 3}, {3.0, -1.0, 0.0});
  auto out = leaky_relu(in, 0.2);
  CHECK(out[0] == 3.0);
  CHECK(out[1] == doctest::Approx(-0.2));
  CHECK(out[2] == 0.0);
  CHECK_THROWS_AS(leaky_relu(in, 1.0), UsageError);
}

TEST_CASE("pixel_shuffle definition instance and identity") {
  auto in = Tensor<double>::from_vector({1, 4, 1, 1}, {1, 2, 3, 4});
  auto out = pixel_shuffle(in, 2);
  REQUIRE(out.shape() == Shape{1, 1, 2, 2});
  CHECK(out[0] == 1);
  CHECK(out[1] == 2);
  CHECK(out[2] == 3);
  CHECK(out[3] == 4);

  std::mt19937 rng(5);
  auto t = ref::random_tensor<double>({2, 3, 4, 5}, rng);
  auto same = pixel_shuffle(t, 1);
  CHECK(ref::max_abs_diff(same, t) == 0.0);
}

TEST_CASE("pixel_shuffle round trips exactly") {
  std::mt19937 rng(29);
  for (int trial = 0; trial < 10; ++trial) {
    auto t = ref::random_tensor<double>({2, 8, 3, 4}, rng);
    auto round = pixel_unshuffle(pixel_shuffle(t, 2), 2);
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(round[i] == t[i]);
  }
  auto bad = Tensor<double>::zeros({1, 3, 2, 2});
  CHECK_THROWS_AS(pixel_shuffle(bad, 2), ShapeError);
}

TEST_CASE("elementwise add, subtract, scale") {
  std::mt19937 rng(31);
  auto t = ref::random_tensor<double>({2, 3, 4, 4}, rng);
  auto zeros = Tensor<double>::zeros(t.shape());
  CHECK(ref::max_abs_diff(add(t, zeros), t) == 0.0);
  CHECK(ref::max_abs_diff(subtract(t, t), zeros) == 0.0);

  auto a = ref::random_tensor<double>({2, 3, 4, 4}, rng);
  auto b = ref::random_tensor<double>({2, 3, 4, 4}, rng);
  auto s = add(a, b);
  auto d = subtract(a, b);
  auto m = mul(a, b);
  auto c = scale(a, 2.5);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(std::abs(s[i] - (a[i] + b[i])) < 1e-7);
    CHECK(std::abs(d[i] - (a[i] - b[i])) < 1e-7);
    CHECK(std::abs(m[i] - a[i] * b[i]) < 1e-7);
    CHECK(std::abs(c[i] - 2.5 * a[i]) < 1e-7);
  }

  auto bias = Tensor<double>::from_vector({3}, {1.0, -2.0, 0.5});
  auto biased = add(a, bias);
  for (std::size_t bidx = 0; bidx < 2; ++bidx)
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x)
          CHECK(biased.at(bidx, ch, y, x) == a.at(bidx, ch, y, x) + bias[ch]);

  auto wrong = Tensor<double>::zeros({2, 3, 4, 5});
  CHECK_THROWS_AS(add(a, wrong), ShapeError);
}

TEST_CASE("sum and mean reduce to scalars") {
  auto t = Tensor<double>::from_vector({1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(sum(t)[0] == 10.0);
  CHECK(mean(t)[0] == 2.5);
}

TEST_CASE("charbonnier values") {
  auto zero = Tensor<double>::from_vector({1}, {0.0});
  CHECK(charbonnier(zero, 1e-6)[0] == doctest::Approx(1e-3).epsilon(1e-12));
  auto three = Tensor<double>::from_vector({1}, {3.0});
  CHECK(charbonnier(three, 1e-6)[0] == doctest::Approx(3.000000166666662).epsilon(1e-12));
  CHECK_THROWS_AS(charbonnier(zero, 0.0), UsageError);
}

TEST_CASE("forward outputs are bit-identical across repeated runs") {
  std::mt19937 rng(41);
  auto in = ref::random_tensor<float>({2, 3, 12, 12}, rng);
  auto k = ref::random_tensor<float>({4, 3, 3, 3}, rng);
  auto a = conv2d(in, k, 1, Tensor<float>(), nullptr, 1);
  auto b = conv2d(in, k, 1, Tensor<float>(), nullptr, 1);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("verification mode rejects non-finite outputs") {
  set_verify_finite(true);
  auto in = Tensor<double>::from_vector({1, 1, 1, 1}, {1e308});
  CHECK_THROWS_AS(scale(in, 1e308), Error);
  set_verify_finite(false);
}
