#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>

#include "lshr/data.hpp"
#include "lshr/ops.hpp"
#include "lshr/train.hpp"
#include "reference.hpp"

using namespace lshr;

namespace {

NetworkConfig tiny_network(PatternMode mode = PatternMode::Learned) {
  NetworkConfig cfg;
  cfg.K = 4;
  cfg.R = 0.25;
  cfg.s = 2;
  cfg.channels = 6;
  cfg.blocks = 2;
  cfg.pattern_mode = mode;
  return cfg;
}

TrainConfig tiny_train(std::size_t epochs) {
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.epochs = epochs;
  cfg.lr_recon_init = 2e-3;
  cfg.lr_residual_init = 5e-4;
  cfg.seed = 21;
  return cfg;
}

}  // namespace

TEST_CASE("loss of a perfect reconstruction is the Charbonnier floor") {
  auto ncfg = tiny_network();
  auto params = make_params<double>(ncfg, 16, 16, 1);
  TrainConfig tcfg;
  tcfg.lambda = 0.0;
  tcfg.epsilon = 1e-6;

  std::mt19937 rng(2);
  auto gt_high = ref::random_tensor<double>({3, 1, 16, 16}, rng, 0.0, 1.0);
  auto gt_low = ref::random_tensor<double>({3, 1, 8, 8}, rng, 0.0, 1.0);
  auto L = loss(gt_low, gt_high, gt_low, gt_high, params, tcfg);
  CHECK(L[0] == doctest::Approx(6.0 * std::sqrt(1e-6)).epsilon(1e-9));
}

TEST_CASE("loss with zero residuals equals the regularizer exactly") {
  auto ncfg = tiny_network();
  auto params = make_params<double>(ncfg, 16, 16, 3);
  TrainConfig tcfg;
  tcfg.lambda = 0.01;
  tcfg.epsilon = 1e-6;

  auto gt_high = Tensor<double>::full({2, 1, 16, 16}, 0.5);
  auto gt_low = Tensor<double>::full({2, 1, 8, 8}, 0.5);
  auto L = loss(gt_low, gt_high, gt_low, gt_high, params, tcfg);

  double reg = 0.0;
  for (const auto& [name, w] : params.trainables())
    for (std::size_t i = 0; i < w.size(); ++i) reg += w[i] * w[i];
  const double expect = 6.0 * std::sqrt(1e-6) + 0.01 / (2.0 * 2.0) * reg;
  CHECK(L[0] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("loss matches an independent scalar-loop evaluation") {
  auto ncfg = tiny_network();
  auto params = make_params<double>(ncfg, 16, 16, 4);
  TrainConfig tcfg;
  tcfg.lambda = 3e-3;
  tcfg.epsilon = 1e-4;

  std::mt19937 rng(5);
  auto prelim = ref::random_tensor<double>({2, 1, 8, 8}, rng);
  auto final_out = ref::random_tensor<double>({2, 1, 16, 16}, rng);
  auto gt_low = ref::random_tensor<double>({2, 1, 8, 8}, rng);
  auto gt_high = ref::random_tensor<double>({2, 1, 16, 16}, rng);

  auto L = loss(prelim, final_out, gt_low, gt_high, params, tcfg);

  double low_term = 0.0, high_term = 0.0;
  for (std::size_t i = 0; i < gt_low.size(); ++i) {
    const double r = gt_low[i] - prelim[i];
    low_term += std::sqrt(r * r + tcfg.epsilon);
  }
  low_term /= static_cast<double>(gt_low.size());
  for (std::size_t i = 0; i < gt_high.size(); ++i) {
    const double r = gt_high[i] - final_out[i];
    high_term += std::sqrt(r * r + tcfg.epsilon);
  }
  high_term /= static_cast<double>(gt_high.size());
  double reg = 0.0;
  for (const auto& [name, w] : params.trainables())
    for (std::size_t i = 0; i < w.size(); ++i) reg += w[i] * w[i];
  const double expect = 2.0 * low_term + 4.0 * high_term + tcfg.lambda / (2.0 * 2.0) * reg;
  CHECK(L[0] == doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("loss lower bound holds with equality only at zero residual") {
  auto ncfg = tiny_network();
  auto params = make_params<double>(ncfg, 16, 16, 6);
  TrainConfig tcfg;
  tcfg.lambda = 0.0;
  tcfg.epsilon = 1e-6;
  std::mt19937 rng(6);
  auto prelim = ref::random_tensor<double>({1, 1, 8, 8}, rng);
  auto final_out = ref::random_tensor<double>({1, 1, 16, 16}, rng);
  auto gt_low = ref::random_tensor<double>({1, 1, 8, 8}, rng);
  auto gt_high = ref::random_tensor<double>({1, 1, 16, 16}, rng);
  auto L = loss(prelim, final_out, gt_low, gt_high, params, tcfg);
  CHECK(L[0] > 6.0 * std::sqrt(1e-6));
}

TEST_CASE("staircase learning-rate schedule") {
  CHECK(lr_at(0, 1e-4, 0.25, 200000) == doctest::Approx(1e-4).epsilon(1e-15));
  CHECK(lr_at(199999, 1e-4, 0.25, 200000) == doctest::Approx(1e-4).epsilon(1e-15));
  CHECK(lr_at(200000, 1e-4, 0.25, 200000) == doctest::Approx(2.5e-5).epsilon(1e-15));
  CHECK(lr_at(400000, 1e-4, 0.25, 200000) == doctest::Approx(6.25e-6).epsilon(1e-15));
  CHECK(lr_at(123456, 7.0, 1.0, 1000) == doctest::Approx(7.0).epsilon(1e-15));
}

TEST_CASE("learning-rate partition covers every trainable exactly once") {
  auto ncfg = tiny_network();
  auto params = make_params<double>(ncfg, 16, 16, 7);
  TrainConfig tcfg;
  const auto lr_map = learning_rates(params, tcfg, 0);
  const auto trainables = params.trainables();
  CHECK(lr_map.size() == trainables.size());
  for (const auto& [name, w] : trainables) {
    REQUIRE(lr_map.count(name));
    const bool recon = name == "bank.shadow" || name == "recon.kernels" || name == "recon.bias";
    CHECK(lr_map.at(name) == (recon ? tcfg.lr_recon_init : tcfg.lr_residual_init));
  }
}

TEST_CASE("adam: zero gradients leave fresh parameters unchanged") {
  auto ncfg = tiny_network();
  auto params = make_params<double>(ncfg, 16, 16, 8);
  GradientMap<double> grads;
  for (const auto& [name, w] : params.trainables())
    grads.emplace(w.id(), Tensor<double>::zeros(w.shape()));
  AdamState<double> state;
  auto before = params.block_w1.vec();
  adam_step(params, grads, state, learning_rates(params, TrainConfig{}, 0));
  CHECK(params.block_w1.vec() == before);
  CHECK(state.step == 1);
}

TEST_CASE("adam: first step moves by about -lr * sign(g)") {
  auto ncfg = tiny_network();
  auto params = make_params<double>(ncfg, 16, 16, 9);
  GradientMap<double> grads;
  for (const auto& [name, w] : params.trainables()) {
    Tensor<double> g(w.shape(), 0.0);
    if (name == "recon.bias") g[0] = 0.37;  // constant gradient on a scalar
    grads.emplace(w.id(), g);
  }
  const double before = params.recon_bias[0];
  AdamState<double> state;
  TrainConfig tcfg;
  adam_step(params, grads, state, learning_rates(params, tcfg, 0));
  const double moved = params.recon_bias[0] - before;
  CHECK(moved == doctest::Approx(-tcfg.lr_recon_init).epsilon(1e-6));
}

TEST_CASE("adam clips the shadow back into [-1,1]") {
  auto ncfg = tiny_network();
  auto params = make_params<double>(ncfg, 16, 16, 10);
  // a large negative gradient pushes the shadow up; clipping must cap at 1
  GradientMap<double> grads;
  for (const auto& [name, w] : params.trainables()) {
    Tensor<double> g(w.shape(), 0.0);
    if (name == "bank.shadow")
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = -100.0;
    grads.emplace(w.id(), g);
  }
  AdamState<double> state;
  TrainConfig tcfg;
  tcfg.lr_recon_init = 5.0;  // force an update beyond the clip range
  adam_step(params, grads, state, learning_rates(params, tcfg, 0));
  for (std::size_t i = 0; i < params.bank.shadow.size(); ++i) {
    CHECK(params.bank.shadow[i] <= 1.0);
    CHECK(params.bank.shadow[i] >= -1.0);
  }
  CHECK(params.bank.shadow[0] == 1.0);
}

TEST_CASE("adam rejects a missing gradient") {
  auto ncfg = tiny_network();
  auto params = make_params<double>(ncfg, 16, 16, 11);
  GradientMap<double> grads;  // empty
  AdamState<double> state;
  CHECK_THROWS_AS(adam_step(params, grads, state, learning_rates(params, TrainConfig{}, 0)),
                  ConfigError);
}

TEST_CASE("static-mode training never touches the bank") {
  auto ncfg = tiny_network(PatternMode::Static);
  auto tcfg = tiny_train(2);
  auto images = synth_glyphs<double>(24, 16, 33);
  std::vector<Tensor<double>> val(images.begin() + 20, images.end());
  images.resize(20);

  auto params_before = make_params<double>(ncfg, 16, 16, tcfg.seed);
  const auto bits_before = params_before.bank.bits();

  auto result = train(images, val, tcfg, ncfg);
  CHECK(result.params.bank.bits() == bits_before);
  CHECK(result.params.bank.shadow.vec() == params_before.bank.shadow.vec());
  CHECK(result.sparsity_history.empty());
}

TEST_CASE("learned-mode smoke training lowers the validation loss") {
  auto ncfg = tiny_network(PatternMode::Learned);
  auto tcfg = tiny_train(6);
  auto images = synth_glyphs<double>(70, 16, 44);
  std::vector<Tensor<double>> val(images.begin() + 60, images.end());
  images.resize(60);

  auto result = train(images, val, tcfg, ncfg);
  REQUIRE(result.val_history.size() == 6);
  CHECK(result.val_history.back().val_loss < result.val_history.front().val_loss);
  CHECK(result.history.size() == static_cast<std::size_t>(result.steps));
  CHECK(result.sparsity_history.size() == result.history.size());

  // shadow stays in range after every step (spot-check the final state)
  for (std::size_t i = 0; i < result.params.bank.shadow.size(); ++i) {
    CHECK(result.params.bank.shadow[i] >= -1.0);
    CHECK(result.params.bank.shadow[i] <= 1.0);
  }
}

TEST_CASE("training is deterministic given the seed") {
  auto ncfg = tiny_network(PatternMode::Learned);
  auto tcfg = tiny_train(2);
  auto images = synth_glyphs<double>(30, 16, 55);
  std::vector<Tensor<double>> val(images.begin() + 24, images.end());
  images.resize(24);

  auto a = train(images, val, tcfg, ncfg);
  auto b = train(images, val, tcfg, ncfg);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].loss == b.history[i].loss);
    CHECK(a.history[i].fraction_ones == b.history[i].fraction_ones);
  }
  CHECK(a.params.block_w1.vec() == b.params.block_w1.vec());
  CHECK(a.params.bank.shadow.vec() == b.params.bank.shadow.vec());
}

TEST_CASE("non-finite data aborts with a training error") {
  auto ncfg = tiny_network();
  auto tcfg = tiny_train(1);
  auto images = synth_glyphs<double>(8, 16, 66);
  images[3][7] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(train(images, {}, tcfg, ncfg), TrainingError);
}

TEST_CASE("history CSV round-trips the exact decimal values") {
  std::vector<HistoryRow> rows;
  HistoryRow r;
  r.step = 3;
  r.loss = 1.0 / 3.0;
  r.val_loss = 2.7182818284590452;
  r.lr_recon = 1e-4;
  r.lr_residual = 1e-5;
  r.fraction_ones = 0.4999999999999999;
  rows.push_back(r);
  write_history_csv(rows, "history_test.csv");

  std::ifstream f("history_test.csv");
  std::string header, line;
  std::getline(f, header);
  CHECK(header == "step,loss,val_loss,lr_recon,lr_residual,fraction_ones");
  std::getline(f, line);
  double loss, val, lr1, lr2, frac;
  long step;
  REQUIRE(std::sscanf(line.c_str(), "%ld,%lf,%lf,%lf,%lf,%lf", &step, &loss, &val, &lr1, &lr2,
                      &frac) == 6);
  CHECK(step == 3);
  CHECK(loss == r.loss);
  CHECK(val == r.val_loss);
  CHECK(lr1 == r.lr_recon);
  CHECK(lr2 == r.lr_residual);
  CHECK(frac == r.fraction_ones);
}
