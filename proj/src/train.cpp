#include "lshr/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "binio.hpp"
#include "lshr/data.hpp"
#include "lshr/metrics.hpp"
#include "lshr/ops.hpp"

namespace lshr {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
  if (!(lr_recon_init > 0.0 && lr_residual_init > 0.0))
    throw ConfigError("TrainConfig: learning rates must be > 0");
  if (!(decay_recon > 0.0 && decay_recon <= 1.0) ||
      !(decay_residual > 0.0 && decay_residual <= 1.0))
    throw ConfigError("TrainConfig: decay rates must lie in (0,1]");
  if (decay_step < 1) throw ConfigError("TrainConfig: decay_step must be >= 1");
  if (!(epsilon > 0.0)) throw ConfigError("TrainConfig: epsilon must be > 0");
  if (lambda < 0.0) throw ConfigError("TrainConfig: lambda must be >= 0");
}

template <typename T>
Tensor<T> loss(const Tensor<T>& prelim, const Tensor<T>& final_out, const Tensor<T>& gt_low,
               const Tensor<T>& gt_high, const ModelParams<T>& params,
               const TrainConfig& config, std::type_identity_t<Tape<T>*> tape) {
  if (!prelim.defined() || prelim.shape() != gt_low.shape())
    throw ShapeError("loss: preliminary/gt_low shape mismatch");
  if (!final_out.defined() || final_out.shape() != gt_high.shape())
    throw ShapeError("loss: final/gt_high shape mismatch");
  const T eps = static_cast<T>(config.epsilon);
  const T batch = static_cast<T>(gt_high.dim(0));

  auto scale_term = [&](const Tensor<T>& gt, const Tensor<T>& out, T omega) {
    Tensor<T> c = charbonnier(subtract(gt, out, tape), eps, tape);
    if (config.pixel_sum_loss) {
      // per-image sum over pixels, averaged over the batch
      return scale(sum(c, tape), omega / batch, tape);
    }
    return scale(mean(c, tape), omega, tape);
  };

  // omega = 2^s: the low-resolution output is scale s=1, the final
  // high-resolution output s=2.
  Tensor<T> total = add(scale_term(gt_low, prelim, T(2)), scale_term(gt_high, final_out, T(4)),
                        tape);

  if (config.lambda > 0.0) {
    Tensor<T> reg;
    for (const auto& [name, w] : params.trainables()) {
      if (!config.l2_include_shadow && name == "bank.shadow") continue;
      Tensor<T> sq = sum(mul(w, w, tape), tape);
      reg = reg.defined() ? add(reg, sq, tape) : sq;
    }
    if (reg.defined())
      total = add(total, scale(reg, static_cast<T>(config.lambda) / (T(2) * batch), tape), tape);
  }
  return total;
}

double lr_at(long step, double init, double decay, long decay_step) {
  if (step < 0) throw UsageError("lr_at: step must be >= 0");
  return init * std::pow(decay, static_cast<double>(step / decay_step));
}

template <typename T>
std::unordered_map<std::string, double> learning_rates(const ModelParams<T>& params,
                                                       const TrainConfig& config, long step) {
  const double lr_recon = lr_at(step, config.lr_recon_init, config.decay_recon,
                                config.decay_step);
  const double lr_res = lr_at(step, config.lr_residual_init, config.decay_residual,
                              config.decay_step);
  const auto& recon = ModelParams<T>::recon_group();
  std::unordered_map<std::string, double> lr_map;
  for (const auto& [name, w] : params.trainables()) {
    const bool is_recon = std::find(recon.begin(), recon.end(), name) != recon.end();
    lr_map[name] = is_recon ? lr_recon : lr_res;
  }
  return lr_map;
}

template <typename T>
void adam_step(ModelParams<T>& params, const GradientMap<T>& grads, AdamState<T>& state,
               const std::unordered_map<std::string, double>& lr_map) {
  state.step += 1;
  const double b1 = state.beta1, b2 = state.beta2;
  const double corr1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double corr2 = 1.0 - std::pow(b2, static_cast<double>(state.step));

  for (auto& [name, w] : params.trainables()) {
    auto git = grads.find(w.id());
    if (git == grads.end())
      throw ConfigError("adam_step: missing gradient for trainable '" + name + "'");
    auto lit = lr_map.find(name);
    if (lit == lr_map.end())
      throw ConfigError("adam_step: no learning rate assigned to '" + name + "'");
    const double lr = lit->second;
    const Tensor<T>& g = git->second;
    if (g.size() != w.size())
      throw ShapeError("adam_step: gradient size mismatch for '" + name + "'");

    auto& mo = state.moments[w.id()];
    if (mo.m.empty()) {
      mo.m.assign(w.size(), T(0));
      mo.v.assign(w.size(), T(0));
    }
    Tensor<T> wt = w;
    for (std::size_t i = 0; i < wt.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = b1 * static_cast<double>(mo.m[i]) + (1.0 - b1) * gi;
      const double vi = b2 * static_cast<double>(mo.v[i]) + (1.0 - b2) * gi * gi;
      mo.m[i] = static_cast<T>(mi);
      mo.v[i] = static_cast<T>(vi);
      const double update = lr * (mi / corr1) / (std::sqrt(vi / corr2) + state.eps);
      wt[i] = static_cast<T>(static_cast<double>(wt[i]) - update);
    }
  }
  if (params.bank.mode == PatternMode::Learned) clip_shadow(params.bank);
}

namespace {

template <typename T>
Tensor<T> stack_batch(const std::vector<Tensor<T>>& images, const std::vector<std::size_t>& idx,
                      std::size_t lo, std::size_t hi) {
  const std::size_t H = images[idx[lo]].dim(2), W = images[idx[lo]].dim(3);
  Tensor<T> batch(Shape{hi - lo, 1, H, W});
  for (std::size_t i = lo; i < hi; ++i) {
    const Tensor<T>& img = images[idx[i]];
    std::copy(img.data(), img.data() + img.size(), batch.data() + (i - lo) * H * W);
  }
  return batch;
}

template <typename T>
void check_dataset(const std::vector<Tensor<T>>& images, const NetworkConfig& cfg,
                   const char* what) {
  if (images.empty()) throw UsageError(std::string(what) + " dataset is empty");
  const std::size_t H = images.front().dim(2), W = images.front().dim(3);
  const std::size_t sk = cfg.s * cfg.K;
  if (H % sk != 0 || W % sk != 0)
    throw ConfigError(std::string(what) + " images " + std::to_string(H) + "x" +
                      std::to_string(W) + " are not multiples of s*K = " + std::to_string(sk));
  for (const Tensor<T>& img : images) {
    if (img.rank() != 4 || img.dim(0) != 1 || img.dim(1) != 1 || img.dim(2) != H ||
        img.dim(3) != W)
      throw ShapeError(std::string(what) + " dataset must contain uniform [1,1,H,W] images");
  }
}

struct ValMetrics {
  double data_term = 0.0;
  double mse = 0.0;
  double psnr_mean = 0.0;
};

template <typename T>
ValMetrics validate_epoch(const std::vector<Tensor<T>>& val_images,
                          const ModelParams<T>& params, const NetworkConfig& ncfg,
                          const TrainConfig& tcfg) {
  ValMetrics vm;
  double psnr_sum = 0.0;
  std::size_t psnr_n = 0;
  const std::size_t H = val_images.front().dim(2), W = val_images.front().dim(3);
  std::vector<std::size_t> idx(val_images.size());
  std::iota(idx.begin(), idx.end(), 0);

  double charb_sum = 0.0, mse_sum = 0.0;
  for (std::size_t lo = 0; lo < val_images.size(); lo += tcfg.batch_size) {
    const std::size_t hi = std::min(val_images.size(), lo + tcfg.batch_size);
    Tensor<T> batch = stack_batch(val_images, idx, lo, hi);
    Tensor<T> gt_low = bicubic_resize(batch, H / ncfg.s, W / ncfg.s);
    clamp01(gt_low);
    ForwardResult<T> fr = forward(batch, params, ncfg);

    const std::size_t n_low = gt_low.size(), n_high = batch.size();
    double c = 0.0;
    for (std::size_t i = 0; i < n_low; ++i) {
      const double r = static_cast<double>(gt_low[i]) - static_cast<double>(fr.preliminary[i]);
      c += 2.0 * std::sqrt(r * r + tcfg.epsilon) / static_cast<double>(n_low);
    }
    for (std::size_t i = 0; i < n_high; ++i) {
      const double r = static_cast<double>(batch[i]) - static_cast<double>(fr.final[i]);
      c += 4.0 * std::sqrt(r * r + tcfg.epsilon) / static_cast<double>(n_high);
      mse_sum += r * r * (hi - lo) / static_cast<double>(n_high);
    }
    charb_sum += c * static_cast<double>(hi - lo);

    for (std::size_t b = 0; b < hi - lo; ++b) {
      Tensor<T> rec(Shape{1, 1, H, W});
      std::copy(fr.final.data() + b * H * W, fr.final.data() + (b + 1) * H * W, rec.data());
      const double p = psnr(rec, val_images[idx[lo + b]], 1.0);
      if (std::isfinite(p)) {
        psnr_sum += p;
        ++psnr_n;
      }
    }
  }
  const double n = static_cast<double>(val_images.size());
  vm.data_term = charb_sum / n;
  vm.mse = mse_sum / n;
  vm.psnr_mean = psnr_n ? psnr_sum / static_cast<double>(psnr_n)
                        : std::numeric_limits<double>::infinity();
  return vm;
}

}  // namespace

template <typename T>
TrainResult<T> train(const std::vector<Tensor<T>>& train_images,
                     const std::vector<Tensor<T>>& val_images, const TrainConfig& config,
                     const NetworkConfig& network_config,
                     const std::function<void(long, const TrainResult<T>&)>& on_epoch) {
  config.validate();
  network_config.validate();
  check_dataset(train_images, network_config, "training");
  if (!val_images.empty()) check_dataset(val_images, network_config, "validation");

  const std::size_t H = train_images.front().dim(2), W = train_images.front().dim(3);

  TrainResult<T> result;
  result.params = make_params<T>(network_config, H, W, config.seed);

  // Every trainable must fall under exactly one of the two schedules.
  {
    const auto lr_map = learning_rates(result.params, config, 0);
    for (const auto& [name, w] : result.params.trainables())
      if (!lr_map.count(name))
        throw ConfigError("train: trainable '" + name + "' has no learning-rate assignment");
  }

  AdamState<T> adam;
  std::mt19937_64 shuffle_rng(config.seed ^ 0xD1F1E5ULL);
  std::vector<std::size_t> order(train_images.size());
  std::iota(order.begin(), order.end(), 0);

  long step = 0;
  double last_val = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t lo = 0; lo < train_images.size(); lo += config.batch_size) {
      const std::size_t hi = std::min(train_images.size(), lo + config.batch_size);
      Tensor<T> batch = stack_batch(train_images, order, lo, hi);
      Tensor<T> gt_low = bicubic_resize(batch, H / network_config.s, W / network_config.s);
      clamp01(gt_low);

      Tape<T> tape;
      ForwardResult<T> fr = forward(batch, result.params, network_config, &tape);
      Tensor<T> L = loss(fr.preliminary, fr.final, gt_low, batch, result.params, config, &tape);
      const double loss_value = static_cast<double>(L[0]);
      if (!std::isfinite(loss_value))
        throw TrainingError("train: non-finite loss at step " + std::to_string(step));

      GradientMap<T> grads = tape.backward(L);
      const auto lr_map = learning_rates(result.params, config, step);
      adam_step(result.params, grads, adam, lr_map);

      for (const auto& [name, w] : result.params.trainables())
        for (std::size_t i = 0; i < w.size(); ++i)
          if (!std::isfinite(static_cast<double>(w[i])))
            throw TrainingError("train: non-finite parameter '" + name + "' after step " +
                                std::to_string(step));

      const SparsityStats sp = sparsity(result.params.bank, step);
      if (result.params.bank.mode == PatternMode::Learned)
        result.sparsity_history.push_back(sp);

      HistoryRow row;
      row.step = step;
      row.loss = loss_value;
      row.val_loss = last_val;
      row.lr_recon = lr_map.at("recon.kernels");
      row.lr_residual = lr_map.at("res_out.kernels");
      row.fraction_ones = sp.fraction_ones;
      result.history.push_back(row);
      ++step;
    }

    if (!val_images.empty()) {
      const ValMetrics vm = validate_epoch(val_images, result.params, network_config, config);
      last_val = vm.data_term;
      ValRow vr;
      vr.epoch = static_cast<long>(epoch);
      vr.step = step;
      vr.val_loss = vm.data_term;
      vr.val_mse = vm.mse;
      vr.val_psnr = vm.psnr_mean;
      result.val_history.push_back(vr);
    }
    if (on_epoch) on_epoch(static_cast<long>(epoch), result);
  }
  result.steps = step;
  return result;
}

namespace {

std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_history_csv(const std::vector<HistoryRow>& rows, const std::string& path) {
  std::ostringstream os;
  os << "step,loss,val_loss,lr_recon,lr_residual,fraction_ones\n";
  for (const HistoryRow& r : rows)
    os << r.step << ',' << fmt_g17(r.loss) << ',' << fmt_g17(r.val_loss) << ','
       << fmt_g17(r.lr_recon) << ',' << fmt_g17(r.lr_residual) << ','
       << fmt_g17(r.fraction_ones) << '\n';
  binio::write_text_file(path, os.str());
}

void write_val_csv(const std::vector<ValRow>& rows, const std::string& path) {
  std::ostringstream os;
  os << "epoch,step,val_loss,val_mse,val_psnr\n";
  for (const ValRow& r : rows)
    os << r.epoch << ',' << r.step << ',' << fmt_g17(r.val_loss) << ',' << fmt_g17(r.val_mse)
       << ',' << fmt_g17(r.val_psnr) << '\n';
  binio::write_text_file(path, os.str());
}

void write_sparsity_csv(const std::vector<SparsityStats>& rows, const std::string& path) {
  std::ostringstream os;
  os << "step,fraction_ones\n";
  for (const SparsityStats& r : rows)
    os << r.step << ',' << fmt_g17(r.fraction_ones) << '\n';
  binio::write_text_file(path, os.str());
}

#define LSHR_INSTANTIATE_TRAIN(T)                                                           \
  template struct AdamState<T>;                                                             \
  template struct TrainResult<T>;                                                           \
  template Tensor<T> loss<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,          \
                             const Tensor<T>&, const ModelParams<T>&, const TrainConfig&,   \
                             Tape<T>*);                                                     \
  template std::unordered_map<std::string, double> learning_rates<T>(                       \
      const ModelParams<T>&, const TrainConfig&, long);                                     \
  template void adam_step<T>(ModelParams<T>&, const GradientMap<T>&, AdamState<T>&,         \
                             const std::unordered_map<std::string, double>&);               \
  template TrainResult<T> train<T>(const std::vector<Tensor<T>>&,                           \
                                   const std::vector<Tensor<T>>&, const TrainConfig&,       \
                                   const NetworkConfig&,                                    \
                                   const std::function<void(long, const TrainResult<T>&)>&);

LSHR_INSTANTIATE_TRAIN(float)
LSHR_INSTANTIATE_TRAIN(double)

}  // namespace lshr
