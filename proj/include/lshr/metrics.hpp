#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lshr/model.hpp"
#include "lshr/tensor.hpp"

namespace lshr {

// 10*log10(max_val^2 / MSE); identical images return +inf.
template <typename T>
double psnr(const Tensor<T>& x, const Tensor<T>& y, double max_val);

struct EvalReport {
  std::vector<double> per_image_psnr;
  double mean_psnr = 0.0;  // arithmetic mean over finite entries
  std::size_t inf_count = 0;  // identical pairs excluded from the mean
  double measurement_ratio = 0.0;
  double keep_fraction = 1.0;
  double seconds_per_image = 0.0;  // median over repetitions, 0 when timing is off
};

// Reconstruction-path PSNR of the model over a set of ground-truth
// images (forward at the configured ratio). Timing is the median of
// `timing_reps` forward passes per image; 0 repetitions disables timing,
// keeping reports byte-stable.
template <typename T>
EvalReport evaluate(const ModelParams<T>& params, const NetworkConfig& config,
                    const std::vector<Tensor<T>>& images, std::size_t timing_reps = 0);

// Comparison floor: bicubic downscale by 1/s then bicubic upscale.
template <typename T>
EvalReport bicubic_baseline(const std::vector<Tensor<T>>& images, std::size_t s);

// Operation counts of the reconstruction (transposed-convolution) layer.
// The pattern count follows the measurement-ratio definition against the
// reconstructed pixel count; the feature-map side is the sensing
// resolution. #Weights is reported both per kernel and in total because
// published figures quote the per-kernel number.
struct ComplexityReport {
  std::size_t m = 0;
  std::size_t K = 0;
  std::size_t feature_map_side = 0;      // output side of the reconstruction layer
  std::size_t space = 0;                 // K^2 * C_in * C_out
  double time_macs = 0.0;                // M^2 * K^2 * C_in * C_out
  std::size_t weights_per_kernel = 0;    // K^2
  std::size_t weights_total = 0;         // m * K^2
  std::size_t pattern_storage_bits = 0;  // bank at 1 bit per weight
  int pattern_format_bits = 1;
  int recon_format_bits = 32;
};

ComplexityReport complexity(const NetworkConfig& config, std::size_t image_h,
                            std::size_t image_w);

struct BlocksPoint {
  std::size_t blocks = 0;
  double mean_psnr = 0.0;
  double median_seconds = 0.0;
};

// Re-times and re-scores the same shared-weight parameters at different
// block counts.
template <typename T>
std::vector<BlocksPoint> sweep_blocks(const ModelParams<T>& params,
                                      const NetworkConfig& config,
                                      const std::vector<Tensor<T>>& images,
                                      const std::vector<std::size_t>& block_counts,
                                      std::size_t timing_reps = 5);

// CSV with %.17g values: files re-parse to the exact numbers written.
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);
std::pair<std::vector<std::string>, std::vector<std::vector<double>>> read_csv(
    const std::string& path);

// Minimal line plot of one or more named series, written as a PNG.
void plot_curves_png(const std::string& path,
                     const std::vector<std::pair<std::string, std::vector<double>>>& series,
                     std::size_t width = 640, std::size_t height = 400);

}  // namespace lshr
