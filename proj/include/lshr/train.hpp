#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "lshr/model.hpp"
#include "lshr/tensor.hpp"

namespace lshr {

enum class Precision { Single, Double };

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t epochs = 300;
  double lr_recon_init = 1e-4;
  double decay_recon = 0.25;
  double lr_residual_init = 1e-5;
  double decay_residual = 0.75;
  long decay_step = 200000;
  double lambda = 1e-4;   // l2 regularization weight
  double epsilon = 1e-6;  // Charbonnier epsilon
  bool l2_include_shadow = true;
  bool pixel_sum_loss = false;  // per-image sum over pixels instead of mean
  std::uint64_t seed = 0;
  Precision precision = Precision::Single;

  void validate() const;
};

// Per-parameter first/second moments, keyed by tensor id.
template <typename T>
struct AdamState {
  struct Moments {
    std::vector<T> m, v;
  };
  std::unordered_map<std::uint64_t, Moments> moments;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Multi-scale Charbonnier loss: omega_s = 2^s with s=1 for the
// low-resolution output and s=2 for the high-resolution output, plus
// lambda/(2N) * sum w^2 over the real-valued trainables.
template <typename T>
Tensor<T> loss(const Tensor<T>& prelim, const Tensor<T>& final_out, const Tensor<T>& gt_low,
               const Tensor<T>& gt_high, const ModelParams<T>& params,
               const TrainConfig& config, std::type_identity_t<Tape<T>*> tape = nullptr);

// Staircase schedule: init * decay^floor(step / decay_step).
double lr_at(long step, double init, double decay, long decay_step);

// The two-group learning-rate assignment for the current step: the
// image-reconstruction group runs at the recon schedule, everything else
// at the residual schedule.
template <typename T>
std::unordered_map<std::string, double> learning_rates(const ModelParams<T>& params,
                                                       const TrainConfig& config, long step);

// One bias-corrected Adam update over all trainables, followed by shadow
// clipping in learned mode. Throws when a trainable is missing a gradient
// or a learning rate.
template <typename T>
void adam_step(ModelParams<T>& params, const GradientMap<T>& grads, AdamState<T>& state,
               const std::unordered_map<std::string, double>& lr_map);

struct HistoryRow {
  long step = 0;
  double loss = 0.0;
  double val_loss = 0.0;  // latest epoch validation data-term (nan before first)
  double lr_recon = 0.0;
  double lr_residual = 0.0;
  double fraction_ones = 0.0;
};

struct ValRow {
  long epoch = 0;
  long step = 0;
  double val_loss = 0.0;  // Eq-style weighted Charbonnier data term
  double val_mse = 0.0;   // plain high-resolution reconstruction error
  double val_psnr = 0.0;
};

template <typename T>
struct TrainResult {
  ModelParams<T> params;
  std::vector<HistoryRow> history;
  std::vector<ValRow> val_history;
  std::vector<SparsityStats> sparsity_history;
  long steps = 0;
};

// End-to-end joint training of both sub-nets. All images must share one
// size divisible by s*K. Deterministic given the seed. The optional
// callback fires after each epoch (checkpointing lives in the caller).
template <typename T>
TrainResult<T> train(
    const std::vector<Tensor<T>>& train_images, const std::vector<Tensor<T>>& val_images,
    const TrainConfig& config, const NetworkConfig& network_config,
    const std::function<void(long epoch, const TrainResult<T>&)>& on_epoch = nullptr);

// History CSV emitters; columns documented in the README. Numbers are
// printed with %.17g so files re-parse to the exact values.
void write_history_csv(const std::vector<HistoryRow>& rows, const std::string& path);
void write_val_csv(const std::vector<ValRow>& rows, const std::string& path);
void write_sparsity_csv(const std::vector<SparsityStats>& rows, const std::string& path);

}  // namespace lshr
