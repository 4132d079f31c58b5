// Batch front end: dataset preparation, training, evaluation, pattern
// export, single-pixel-camera simulation and measurement-driven
// reconstruction. Every command resolves one RunConfig (file + flag
// overrides), archives it into the run directory and writes its outputs
// there.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "lshr/checkpoint.hpp"
#include "lshr/data.hpp"
#include "lshr/image.hpp"
#include "lshr/metrics.hpp"
#include "lshr/model.hpp"
#include "lshr/spc.hpp"
#include "lshr/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct DataConfig {
  std::string input_dir;
  std::string patch_archive;
  std::size_t patch_count = 50;
  std::size_t patch_size = 256;
  std::size_t synth_count = 0;  // when set, use the procedural corpus
  std::size_t synth_size = 32;
};

struct RunConfig {
  lshr::NetworkConfig network;
  lshr::TrainConfig train;
  DataConfig data;
  std::string output_dir = "run";
  bool deterministic = false;
  double val_fraction = 0.1;
  std::size_t checkpoint_every = 0;  // epochs; 0 = final only
};

[[noreturn]] void config_fail(const std::vector<std::string>& problems) {
  std::string msg = "config validation failed:";
  for (const auto& p : problems) msg += "\n  - " + p;
  throw lshr::ConfigError(msg);
}

void check_keys(const json& obj, const std::string& where,
                const std::vector<std::string>& allowed, std::vector<std::string>& problems) {
  for (const auto& [key, value] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      problems.push_back("unknown key '" + where + key + "'");
  }
}

lshr::PatternMode parse_mode(const std::string& mode) {
  if (mode == "static") return lshr::PatternMode::Static;
  if (mode == "learned") return lshr::PatternMode::Learned;
  throw lshr::ConfigError("pattern mode must be 'static' or 'learned', got '" + mode + "'");
}

lshr::Precision parse_precision(const std::string& p) {
  if (p == "single") return lshr::Precision::Single;
  if (p == "double") return lshr::Precision::Double;
  throw lshr::ConfigError("precision must be 'single' or 'double', got '" + p + "'");
}

RunConfig load_run_config(const std::string& path) {
  RunConfig cfg;
  if (path.empty()) return cfg;
  std::ifstream f(path);
  if (!f) throw lshr::IoError("cannot open config file " + path);
  json j = json::parse(f, nullptr, true, true);  // allow comments

  std::vector<std::string> problems;
  check_keys(j, "", {"network", "train", "data", "output_dir", "deterministic", "val_fraction",
                     "checkpoint_every"},
             problems);
  if (j.contains("network")) {
    const auto& n = j["network"];
    check_keys(n, "network.",
               {"K", "R", "s", "channels", "blocks", "leaky_p", "pattern_mode", "block_bias"},
               problems);
    if (n.contains("K")) cfg.network.K = n["K"].get<std::size_t>();
    if (n.contains("R")) cfg.network.R = n["R"].get<double>();
    if (n.contains("s")) cfg.network.s = n["s"].get<std::size_t>();
    if (n.contains("channels")) cfg.network.channels = n["channels"].get<std::size_t>();
    if (n.contains("blocks")) cfg.network.blocks = n["blocks"].get<std::size_t>();
    if (n.contains("leaky_p")) cfg.network.leaky_p = n["leaky_p"].get<double>();
    if (n.contains("pattern_mode"))
      cfg.network.pattern_mode = parse_mode(n["pattern_mode"].get<std::string>());
    if (n.contains("block_bias")) cfg.network.block_bias = n["block_bias"].get<bool>();
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    check_keys(t, "train.",
               {"batch_size", "epochs", "lr_recon_init", "decay_recon", "lr_residual_init",
                "decay_residual", "decay_step", "lambda", "epsilon", "l2_include_shadow",
                "pixel_sum_loss", "seed", "precision"},
               problems);
    if (t.contains("batch_size")) cfg.train.batch_size = t["batch_size"].get<std::size_t>();
    if (t.contains("epochs")) cfg.train.epochs = t["epochs"].get<std::size_t>();
    if (t.contains("lr_recon_init")) cfg.train.lr_recon_init = t["lr_recon_init"].get<double>();
    if (t.contains("decay_recon")) cfg.train.decay_recon = t["decay_recon"].get<double>();
    if (t.contains("lr_residual_init"))
      cfg.train.lr_residual_init = t["lr_residual_init"].get<double>();
    if (t.contains("decay_residual"))
      cfg.train.decay_residual = t["decay_residual"].get<double>();
    if (t.contains("decay_step")) cfg.train.decay_step = t["decay_step"].get<long>();
    if (t.contains("lambda")) cfg.train.lambda = t["lambda"].get<double>();
    if (t.contains("epsilon")) cfg.train.epsilon = t["epsilon"].get<double>();
    if (t.contains("l2_include_shadow"))
      cfg.train.l2_include_shadow = t["l2_include_shadow"].get<bool>();
    if (t.contains("pixel_sum_loss")) cfg.train.pixel_sum_loss = t["pixel_sum_loss"].get<bool>();
    if (t.contains("seed")) cfg.train.seed = t["seed"].get<std::uint64_t>();
    if (t.contains("precision"))
      cfg.train.precision = parse_precision(t["precision"].get<std::string>());
  }
  if (j.contains("data")) {
    const auto& d = j["data"];
    check_keys(d, "data.",
               {"input_dir", "patch_archive", "patch_count", "patch_size", "synth_count",
                "synth_size"},
               problems);
    if (d.contains("input_dir")) cfg.data.input_dir = d["input_dir"].get<std::string>();
    if (d.contains("patch_archive"))
      cfg.data.patch_archive = d["patch_archive"].get<std::string>();
    if (d.contains("patch_count")) cfg.data.patch_count = d["patch_count"].get<std::size_t>();
    if (d.contains("patch_size")) cfg.data.patch_size = d["patch_size"].get<std::size_t>();
    if (d.contains("synth_count")) cfg.data.synth_count = d["synth_count"].get<std::size_t>();
    if (d.contains("synth_size")) cfg.data.synth_size = d["synth_size"].get<std::size_t>();
  }
  if (j.contains("output_dir")) cfg.output_dir = j["output_dir"].get<std::string>();
  if (j.contains("deterministic")) cfg.deterministic = j["deterministic"].get<bool>();
  if (j.contains("val_fraction")) cfg.val_fraction = j["val_fraction"].get<double>();
  if (j.contains("checkpoint_every"))
    cfg.checkpoint_every = j["checkpoint_every"].get<std::size_t>();

  if (!problems.empty()) config_fail(problems);
  return cfg;
}

json to_json(const RunConfig& cfg) {
  json j;
  j["network"] = {
      {"K", cfg.network.K},
      {"R", cfg.network.R},
      {"s", cfg.network.s},
      {"channels", cfg.network.channels},
      {"blocks", cfg.network.blocks},
      {"leaky_p", cfg.network.leaky_p},
      {"pattern_mode", cfg.network.pattern_mode == lshr::PatternMode::Learned ? "learned"
                                                                              : "static"},
      {"block_bias", cfg.network.block_bias},
  };
  j["train"] = {
      {"batch_size", cfg.train.batch_size},
      {"epochs", cfg.train.epochs},
      {"lr_recon_init", cfg.train.lr_recon_init},
      {"decay_recon", cfg.train.decay_recon},
      {"lr_residual_init", cfg.train.lr_residual_init},
      {"decay_residual", cfg.train.decay_residual},
      {"decay_step", cfg.train.decay_step},
      {"lambda", cfg.train.lambda},
      {"epsilon", cfg.train.epsilon},
      {"l2_include_shadow", cfg.train.l2_include_shadow},
      {"pixel_sum_loss", cfg.train.pixel_sum_loss},
      {"seed", cfg.train.seed},
      {"precision", cfg.train.precision == lshr::Precision::Double ? "double" : "single"},
  };
  j["data"] = {
      {"input_dir", cfg.data.input_dir},
      {"patch_archive", cfg.data.patch_archive},
      {"patch_count", cfg.data.patch_count},
      {"patch_size", cfg.data.patch_size},
      {"synth_count", cfg.data.synth_count},
      {"synth_size", cfg.data.synth_size},
  };
  j["output_dir"] = cfg.output_dir;
  j["deterministic"] = cfg.deterministic;
  j["val_fraction"] = cfg.val_fraction;
  j["checkpoint_every"] = cfg.checkpoint_every;
  return j;
}

void archive_config(const RunConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  const std::string text = to_json(cfg).dump(2) + "\n";
  const std::string path = (fs::path(cfg.output_dir) / "config.json").string();
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::trunc);
    f << text;
  }
  fs::rename(tmp, path);
}

std::string out_path(const RunConfig& cfg, const std::string& name) {
  return (fs::path(cfg.output_dir) / name).string();
}

// Crops every image to the largest multiple of s*K it contains.
template <typename T>
std::vector<lshr::Tensor<T>> load_dataset(const RunConfig& cfg) {
  using lshr::Tensor;
  std::vector<Tensor<T>> images;
  if (cfg.data.synth_count > 0) {
    images = lshr::synth_glyphs<T>(cfg.data.synth_count, cfg.data.synth_size,
                                   cfg.train.seed + 1);
  } else if (!cfg.data.patch_archive.empty()) {
    images = lshr::load_patch_archive<T>(cfg.data.patch_archive);
  } else if (!cfg.data.input_dir.empty()) {
    for (const auto& file : lshr::list_image_files(cfg.data.input_dir))
      images.push_back(lshr::load_grayscale<T>(file));
  } else {
    throw lshr::ConfigError(
        "no dataset: set data.input_dir, data.patch_archive or data.synth_count");
  }

  const std::size_t unit = cfg.network.s * cfg.network.K;
  std::vector<Tensor<T>> cropped;
  std::size_t skipped = 0;
  for (auto& img : images) {
    const std::size_t H = (img.dim(2) / unit) * unit;
    const std::size_t W = (img.dim(3) / unit) * unit;
    if (H == 0 || W == 0) {
      ++skipped;
      continue;
    }
    if (H == img.dim(2) && W == img.dim(3)) {
      cropped.push_back(std::move(img));
      continue;
    }
    Tensor<T> c(lshr::Shape{1, 1, H, W});
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) c.at(0, 0, y, x) = img.at(0, 0, y, x);
    cropped.push_back(std::move(c));
  }
  if (skipped)
    std::fprintf(stderr, "warning: skipped %zu images smaller than s*K = %zu\n", skipped, unit);
  if (cropped.empty()) throw lshr::UsageError("dataset is empty after size filtering");
  return cropped;
}

template <typename T>
void split_train_val(std::vector<lshr::Tensor<T>>& images, double val_fraction,
                     std::vector<lshr::Tensor<T>>& val) {
  const auto n_val = static_cast<std::size_t>(val_fraction * static_cast<double>(images.size()));
  if (n_val == 0 || n_val >= images.size()) return;
  val.assign(images.end() - static_cast<long>(n_val), images.end());
  images.resize(images.size() - n_val);
}

// --- commands ---

template <typename T>
int cmd_prepare_data(const RunConfig& cfg) {
  archive_config(cfg);
  std::vector<lshr::Tensor<T>> patches;
  std::size_t skipped = 0;
  if (cfg.data.synth_count > 0) {
    patches = lshr::synth_glyphs<T>(cfg.data.synth_count, cfg.data.synth_size,
                                    cfg.train.seed + 1);
  } else {
    if (cfg.data.input_dir.empty())
      throw lshr::ConfigError("prepare-data: set data.input_dir or data.synth_count");
    const auto files = lshr::list_image_files(cfg.data.input_dir);
    std::uint64_t patch_seed = cfg.train.seed;
    for (const auto& file : files) {
      auto img = lshr::load_grayscale<T>(file);
      auto crops = lshr::crop_and_augment(img, cfg.data.patch_count, cfg.data.patch_size,
                                          patch_seed++, fs::path(file).filename().string());
      if (crops.empty()) {
        ++skipped;
        continue;
      }
      for (auto& c : crops) {
        lshr::clamp01(c.pixels);
        patches.push_back(std::move(c.pixels));
      }
    }
  }
  if (skipped) std::fprintf(stderr, "warning: %zu source images were too small\n", skipped);
  const std::string path = out_path(cfg, "patches.lpa");
  lshr::save_patch_archive(patches, path);
  std::printf("wrote %zu patches to %s\n", patches.size(), path.c_str());
  return 0;
}

template <typename T>
int cmd_train(const RunConfig& cfg) {
  archive_config(cfg);
  auto images = load_dataset<T>(cfg);
  std::vector<lshr::Tensor<T>> val;
  split_train_val(images, cfg.val_fraction, val);
  std::printf("training on %zu images, validating on %zu\n", images.size(), val.size());

  const std::size_t H = images.front().dim(2), W = images.front().dim(3);
  lshr::TrainResult<T> result = lshr::train<T>(
      images, val, cfg.train, cfg.network,
      [&](long epoch, const lshr::TrainResult<T>& r) {
        if (!r.val_history.empty()) {
          const auto& v = r.val_history.back();
          std::printf("epoch %ld  step %ld  loss %.6f  val %.6f  psnr %.2f\n", epoch, v.step,
                      r.history.back().loss, v.val_loss, v.val_psnr);
        }
        if (cfg.checkpoint_every && (epoch + 1) % static_cast<long>(cfg.checkpoint_every) == 0) {
          lshr::Checkpoint<T> ck{cfg.network, r.params, r.history.empty() ? 0 : r.history.back().step + 1,
                                 cfg.train.seed, H, W};
          lshr::save_checkpoint(ck, out_path(cfg, "checkpoint_epoch" + std::to_string(epoch) +
                                                      ".lshr"));
        }
      });

  lshr::Checkpoint<T> ck{cfg.network, result.params, result.steps, cfg.train.seed, H, W};
  lshr::save_checkpoint(ck, out_path(cfg, "checkpoint.lshr"));
  lshr::write_history_csv(result.history, out_path(cfg, "history.csv"));
  lshr::write_val_csv(result.val_history, out_path(cfg, "val.csv"));
  if (!result.sparsity_history.empty())
    lshr::write_sparsity_csv(result.sparsity_history, out_path(cfg, "sparsity.csv"));

  std::vector<double> losses;
  for (const auto& row : result.history) losses.push_back(row.loss);
  if (losses.size() >= 2)
    lshr::plot_curves_png(out_path(cfg, "loss_curve.png"), {{"loss", losses}});
  std::printf("trained %ld steps, checkpoint at %s\n", result.steps,
              out_path(cfg, "checkpoint.lshr").c_str());
  return 0;
}

template <typename T>
lshr::Checkpoint<T> load_ckpt(const std::string& path) {
  if (path.empty()) throw lshr::ConfigError("this command needs --checkpoint");
  return lshr::load_checkpoint<T>(path);
}

template <typename T>
int cmd_evaluate(const RunConfig& cfg, const std::string& ckpt_path) {
  archive_config(cfg);
  auto ckpt = load_ckpt<T>(ckpt_path);
  RunConfig data_cfg = cfg;
  data_cfg.network = ckpt.config;
  auto images = load_dataset<T>(data_cfg);

  const std::size_t reps = cfg.deterministic ? 0 : 5;
  auto report = lshr::evaluate(ckpt.params, ckpt.config, images, reps);
  auto base = lshr::bicubic_baseline(images, ckpt.config.s);

  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < report.per_image_psnr.size(); ++i)
    rows.push_back({static_cast<double>(i), report.per_image_psnr[i], base.per_image_psnr[i]});
  lshr::write_csv(out_path(cfg, "evaluate.csv"), {"image", "psnr_db", "bicubic_psnr_db"}, rows);
  lshr::write_csv(out_path(cfg, "evaluate_summary.csv"),
                  {"mean_psnr_db", "bicubic_mean_psnr_db", "inf_count", "seconds_per_image"},
                  {{report.mean_psnr, base.mean_psnr, static_cast<double>(report.inf_count),
                    report.seconds_per_image}});
  if (report.inf_count)
    std::fprintf(stderr, "warning: %zu identical pairs excluded from the mean\n",
                 report.inf_count);
  std::printf("mean PSNR %.3f dB (bicubic floor %.3f dB) over %zu images\n", report.mean_psnr,
              base.mean_psnr, images.size());
  return 0;
}

template <typename T>
int cmd_sparsify_eval(const RunConfig& cfg, const std::string& ckpt_path) {
  archive_config(cfg);
  auto ckpt = load_ckpt<T>(ckpt_path);
  RunConfig data_cfg = cfg;
  data_cfg.network = ckpt.config;
  auto images = load_dataset<T>(data_cfg);

  std::vector<std::vector<double>> rows;
  for (double keep : {1.0, 0.2, 0.1, 0.05, 0.01}) {
    std::vector<lshr::Tensor<T>> sparse;
    sparse.reserve(images.size());
    for (const auto& img : images) sparse.push_back(lshr::sparsify_dct(img, keep));
    auto report = lshr::evaluate(ckpt.params, ckpt.config, sparse);
    rows.push_back({keep, report.mean_psnr});
    std::printf("keep %.2f -> mean PSNR %.3f dB\n", keep, report.mean_psnr);
  }
  lshr::write_csv(out_path(cfg, "sparsify_eval.csv"), {"keep_fraction", "mean_psnr_db"}, rows);
  return 0;
}

template <typename T>
int cmd_export_patterns(const RunConfig& cfg, const std::string& ckpt_path) {
  archive_config(cfg);
  auto ckpt = load_ckpt<T>(ckpt_path);
  const std::string path = out_path(cfg, "patterns.lshrpat");
  lshr::export_patterns(ckpt.params.bank, path);
  std::printf("wrote %zu %zux%zu patterns to %s\n", ckpt.params.bank.m, ckpt.params.bank.K,
              ckpt.params.bank.K, path.c_str());
  return 0;
}

template <typename T>
int cmd_simulate(const RunConfig& cfg, const std::string& ckpt_path, const std::string& image_path,
                 std::optional<double> snr_db, unsigned adc_bits, double full_scale) {
  archive_config(cfg);
  auto ckpt = load_ckpt<T>(ckpt_path);
  auto image = lshr::load_grayscale<T>(image_path);

  // the DMD sees the sensing-resolution scene
  const std::size_t sh = ckpt.train_h / ckpt.config.s, sw = ckpt.train_w / ckpt.config.s;
  if (image.dim(2) != sh || image.dim(3) != sw) {
    image = lshr::bicubic_resize(image, sh, sw);
    lshr::clamp01(image);
  }

  if (full_scale <= 0.0) {
    // headroom above the brightest possible reading
    full_scale = static_cast<double>(ckpt.config.K * ckpt.config.K) * 1.05;
  }
  lshr::SimulationStats stats;
  auto records = lshr::simulate_spc(image, ckpt.params.bank, snr_db, adc_bits, full_scale,
                                    cfg.train.seed, &stats);
  lshr::MeasurementMeta meta;
  meta.m = ckpt.params.bank.m;
  meta.K = ckpt.params.bank.K;
  meta.grid_h = sh / ckpt.config.K;
  meta.grid_w = sw / ckpt.config.K;
  meta.adc_bits = adc_bits;
  meta.full_scale = full_scale;
  const std::string path = out_path(cfg, "measurements.csv");
  lshr::write_measurements(records, meta, path);
  std::printf("wrote %zu records to %s (frame SNR %.2f dB, %zu saturated)\n", records.size(),
              path.c_str(), stats.snr_db, stats.saturated);
  return 0;
}

template <typename T>
int cmd_reconstruct(const RunConfig& cfg, const std::string& ckpt_path,
                    const std::string& measurements_path, const std::string& reference_path) {
  archive_config(cfg);
  auto ckpt = load_ckpt<T>(ckpt_path);
  lshr::MeasurementMeta meta;
  auto measurements = lshr::import_measurements<T>(measurements_path, &meta);
  if (meta.m != ckpt.params.bank.m)
    throw lshr::ConfigError("measurement file has m=" + std::to_string(meta.m) +
                            " but the checkpoint expects m=" +
                            std::to_string(ckpt.params.bank.m));
  auto out = lshr::reconstruct_from_measurements(measurements, ckpt.params, ckpt.config);
  const std::string png = out_path(cfg, "reconstruction.png");
  lshr::Tensor<T> image = out.final;
  lshr::clamp01(image);
  lshr::save_png(image, png);

  std::vector<std::vector<double>> rows;
  if (!reference_path.empty()) {
    auto reference = lshr::load_grayscale<T>(reference_path);
    const double p = lshr::psnr(out.final, reference, 1.0);
    rows.push_back({p});
    std::printf("PSNR vs reference: %.3f dB\n", p);
    lshr::write_csv(out_path(cfg, "reconstruct_report.csv"), {"psnr_db"}, rows);
  }
  std::printf("wrote %s\n", png.c_str());
  return 0;
}

int cmd_complexity(const RunConfig& cfg, std::size_t image_h, std::size_t image_w) {
  archive_config(cfg);
  auto report = lshr::complexity(cfg.network, image_h, image_w);
  json j = {
      {"m", report.m},
      {"K", report.K},
      {"feature_map_side", report.feature_map_side},
      {"space", report.space},
      {"time_macs", report.time_macs},
      {"weights_per_kernel", report.weights_per_kernel},
      {"weights_total", report.weights_total},
      {"pattern_storage_bits", report.pattern_storage_bits},
      {"pattern_format_bits", report.pattern_format_bits},
      {"recon_format_bits", report.recon_format_bits},
  };
  const std::string path = out_path(cfg, "complexity.json");
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp);
    f << j.dump(2) << "\n";
  }
  fs::rename(tmp, path);
  std::printf("%s\n", j.dump(2).c_str());
  return 0;
}

template <typename T>
int cmd_sweep_blocks(const RunConfig& cfg, const std::string& ckpt_path,
                     const std::string& blocks_arg) {
  archive_config(cfg);
  auto ckpt = load_ckpt<T>(ckpt_path);
  RunConfig data_cfg = cfg;
  data_cfg.network = ckpt.config;
  auto images = load_dataset<T>(data_cfg);

  std::vector<std::size_t> counts;
  {
    std::istringstream is(blocks_arg);
    std::string tok;
    while (std::getline(is, tok, ',')) counts.push_back(std::stoul(tok));
  }
  if (counts.empty()) counts = {1, 2, 3, 4, 5, 6, 7, 8};

  auto points = lshr::sweep_blocks(ckpt.params, ckpt.config, images, counts,
                                   cfg.deterministic ? 0 : 5);
  std::vector<std::vector<double>> rows;
  std::vector<double> psnrs, times;
  for (const auto& p : points) {
    rows.push_back({static_cast<double>(p.blocks), p.mean_psnr, p.median_seconds});
    psnrs.push_back(p.mean_psnr);
    times.push_back(p.median_seconds);
    std::printf("blocks %zu  mean PSNR %.3f dB  median %.4f s/image\n", p.blocks, p.mean_psnr,
                p.median_seconds);
  }
  lshr::write_csv(out_path(cfg, "sweep_blocks.csv"),
                  {"blocks", "mean_psnr_db", "median_seconds"}, rows);
  if (points.size() >= 2)
    lshr::plot_curves_png(out_path(cfg, "sweep_blocks.png"), {{"psnr", psnrs}, {"time", times}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LSHR compressive imaging toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<double> ratio;
  std::optional<std::string> mode;
  std::optional<std::size_t> blocks;
  std::optional<std::string> precision;
  bool deterministic = false;
  std::string output_dir;

  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--seed", seed, "override train.seed");
  app.add_option("--ratio", ratio, "override network.R (e.g. 0.01, 0.1, 0.25)");
  app.add_option("--mode", mode, "override network.pattern_mode (static|learned)");
  app.add_option("--blocks", blocks, "override network.blocks");
  app.add_option("--precision", precision, "override train.precision (single|double)");
  app.add_flag("--deterministic", deterministic,
               "disable wall-clock fields so outputs are byte-reproducible");
  app.add_option("--out", output_dir, "override output_dir");

  auto* prepare = app.add_subcommand("prepare-data", "crop and augment a training corpus");
  auto* train = app.add_subcommand("train", "train the network end to end");
  auto* evaluate = app.add_subcommand("evaluate", "PSNR report for a trained checkpoint");
  auto* sparsify = app.add_subcommand("sparsify-eval", "evaluate on DCT-sparsified inputs");
  auto* exportp = app.add_subcommand("export-patterns", "write the DMD pattern file");
  auto* simulate = app.add_subcommand("simulate", "single-pixel-camera measurement simulation");
  auto* reconstruct =
      app.add_subcommand("reconstruct", "reconstruct an image from a measurement file");
  auto* complexity = app.add_subcommand("complexity", "reconstruction-layer operation counts");
  auto* sweep = app.add_subcommand("sweep-blocks", "PSNR/time as a function of block count");
  for (auto* cmd : {prepare, train, evaluate, sparsify, exportp, simulate, reconstruct,
                    complexity, sweep})
    cmd->fallthrough();

  std::string ckpt_path, image_path, measurements_path, reference_path, blocks_list;
  std::optional<double> snr_db;
  unsigned adc_bits = 10;
  double full_scale = 0.0;
  std::size_t cx_h = 32, cx_w = 32;

  for (auto* cmd : {evaluate, sparsify, exportp, simulate, reconstruct, sweep})
    cmd->add_option("--checkpoint", ckpt_path, "trained model checkpoint");
  simulate->add_option("--image", image_path, "scene image file")->required();
  simulate->add_option("--snr-db", snr_db, "per-frame measurement SNR (omit for noiseless)");
  simulate->add_option("--adc-bits", adc_bits, "ADC resolution (default 10)");
  simulate->add_option("--full-scale", full_scale, "ADC full scale (0 = auto)");
  reconstruct->add_option("--measurements", measurements_path, "measurement CSV")->required();
  reconstruct->add_option("--reference", reference_path, "ground-truth image for PSNR");
  complexity->add_option("--image-height", cx_h, "restored image height");
  complexity->add_option("--image-width", cx_w, "restored image width");
  sweep->add_option("--blocks-list", blocks_list, "comma-separated block counts");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = load_run_config(config_path);
    if (seed) cfg.train.seed = *seed;
    if (ratio) cfg.network.R = *ratio;
    if (mode) cfg.network.pattern_mode = parse_mode(*mode);
    if (blocks) cfg.network.blocks = *blocks;
    if (precision) cfg.train.precision = parse_precision(*precision);
    if (deterministic) cfg.deterministic = true;
    if (!output_dir.empty()) cfg.output_dir = output_dir;
    cfg.network.validate();
    cfg.train.validate();

    const bool dbl = cfg.train.precision == lshr::Precision::Double;
    auto dispatch = [&](auto&& fn32, auto&& fn64) { return dbl ? fn64() : fn32(); };

    if (*prepare)
      return dispatch([&] { return cmd_prepare_data<float>(cfg); },
                      [&] { return cmd_prepare_data<double>(cfg); });
    if (*train)
      return dispatch([&] { return cmd_train<float>(cfg); },
                      [&] { return cmd_train<double>(cfg); });
    if (*evaluate)
      return dispatch([&] { return cmd_evaluate<float>(cfg, ckpt_path); },
                      [&] { return cmd_evaluate<double>(cfg, ckpt_path); });
    if (*sparsify)
      return dispatch([&] { return cmd_sparsify_eval<float>(cfg, ckpt_path); },
                      [&] { return cmd_sparsify_eval<double>(cfg, ckpt_path); });
    if (*exportp)
      return dispatch([&] { return cmd_export_patterns<float>(cfg, ckpt_path); },
                      [&] { return cmd_export_patterns<double>(cfg, ckpt_path); });
    if (*simulate)
      return dispatch(
          [&] { return cmd_simulate<float>(cfg, ckpt_path, image_path, snr_db, adc_bits,
                                           full_scale); },
          [&] { return cmd_simulate<double>(cfg, ckpt_path, image_path, snr_db, adc_bits,
                                            full_scale); });
    if (*reconstruct)
      return dispatch(
          [&] { return cmd_reconstruct<float>(cfg, ckpt_path, measurements_path,
                                              reference_path); },
          [&] { return cmd_reconstruct<double>(cfg, ckpt_path, measurements_path,
                                               reference_path); });
    if (*complexity) return cmd_complexity(cfg, cx_h, cx_w);
    if (*sweep)
      return dispatch([&] { return cmd_sweep_blocks<float>(cfg, ckpt_path, blocks_list); },
                      [&] { return cmd_sweep_blocks<double>(cfg, ckpt_path, blocks_list); });
    return 1;
  } catch (const lshr::ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return 2;
  } catch (const lshr::IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return 3;
  } catch (const lshr::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "unexpected error: %s\n", e.what());
    return 5;
  }
}
