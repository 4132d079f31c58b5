#include "lshr/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "binio.hpp"
#include "lshr/data.hpp"
#include "lshr/image.hpp"

namespace lshr {

template <typename T>
double psnr(const Tensor<T>& x, const Tensor<T>& y, double max_val) {
  if (!x.defined() || !y.defined() || x.shape() != y.shape())
    throw ShapeError("psnr: images must share shape, got " +
                     (x.defined() ? shape_str(x.shape()) : std::string("undefined")) + " vs " +
                     (y.defined() ? shape_str(y.shape()) : std::string("undefined")));
  if (!(max_val > 0.0)) throw UsageError("psnr: max_val must be > 0");
  double mse = 0.0;
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
    mse += d * d;
  }
  mse /= static_cast<double>(n);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(max_val * max_val / mse);
}

namespace {

void finish_report(EvalReport& report) {
  double sum = 0.0;
  std::size_t n = 0;
  for (double p : report.per_image_psnr) {
    if (std::isfinite(p)) {
      sum += p;
      ++n;
    } else {
      ++report.inf_count;
    }
  }
  report.mean_psnr = n ? sum / static_cast<double>(n)
                       : std::numeric_limits<double>::infinity();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

template <typename T>
EvalReport evaluate(const ModelParams<T>& params, const NetworkConfig& config,
                    const std::vector<Tensor<T>>& images, std::size_t timing_reps) {
  if (images.empty()) throw UsageError("evaluate: empty dataset");
  EvalReport report;
  report.measurement_ratio = config.R;

  std::vector<double> times;
  for (const Tensor<T>& img : images) {
    ForwardResult<T> fr = forward(img, params, config);
    report.per_image_psnr.push_back(psnr(fr.final, img, 1.0));
    for (std::size_t r = 0; r < timing_reps; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      (void)forward(img, params, config);
      const auto t1 = std::chrono::steady_clock::now();
      times.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
  }
  if (!times.empty()) report.seconds_per_image = median(std::move(times));
  finish_report(report);
  return report;
}

template <typename T>
EvalReport bicubic_baseline(const std::vector<Tensor<T>>& images, std::size_t s) {
  if (images.empty()) throw UsageError("bicubic_baseline: empty dataset");
  EvalReport report;
  for (const Tensor<T>& img : images) {
    const std::size_t H = img.dim(2), W = img.dim(3);
    Tensor<T> low = bicubic_resize(img, H / s, W / s);
    clamp01(low);
    Tensor<T> up = bicubic_resize(low, H, W);
    clamp01(up);
    report.per_image_psnr.push_back(psnr(up, img, 1.0));
  }
  finish_report(report);
  return report;
}

ComplexityReport complexity(const NetworkConfig& config, std::size_t image_h,
                            std::size_t image_w) {
  config.validate();
  if (image_h < 1 || image_w < 1) throw ConfigError("complexity: image dims must be >= 1");
  ComplexityReport report;
  report.K = config.K;
  report.m = kernel_count(config.R, image_h * image_w);
  report.feature_map_side = image_h / config.s;
  const std::size_t k2 = config.K * config.K;
  const std::size_t cout = 1;
  report.space = k2 * report.m * cout;
  report.time_macs = static_cast<double>(report.feature_map_side) *
                     static_cast<double>(image_w / config.s) * static_cast<double>(k2) *
                     static_cast<double>(report.m) * static_cast<double>(cout);
  report.weights_per_kernel = k2;
  report.weights_total = report.m * k2;
  report.pattern_storage_bits = report.m * k2;
  return report;
}

template <typename T>
std::vector<BlocksPoint> sweep_blocks(const ModelParams<T>& params,
                                      const NetworkConfig& config,
                                      const std::vector<Tensor<T>>& images,
                                      const std::vector<std::size_t>& block_counts,
                                      std::size_t timing_reps) {
  std::vector<BlocksPoint> points;
  for (std::size_t blocks : block_counts) {
    NetworkConfig cfg = config;
    cfg.blocks = blocks;
    EvalReport report = evaluate(params, cfg, images, std::max<std::size_t>(timing_reps, 5));
    BlocksPoint p;
    p.blocks = blocks;
    p.mean_psnr = report.mean_psnr;
    p.median_seconds = report.seconds_per_image;
    points.push_back(p);
  }
  return points;
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
  std::ostringstream os;
  for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
  os << '\n';
  char buf[40];
  for (const auto& row : rows) {
    if (row.size() != header.size())
      throw UsageError("write_csv: row width does not match header");
    for (std::size_t i = 0; i < row.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", row[i]);
      os << (i ? "," : "") << buf;
    }
    os << '\n';
  }
  binio::write_text_file(path, os.str());
}

std::pair<std::vector<std::string>, std::vector<std::vector<double>>> read_csv(
    const std::string& path) {
  const auto buf = binio::read_file(path);
  std::istringstream is(std::string(buf.begin(), buf.end()));
  std::string line;
  if (!std::getline(is, line)) throw IoError(path + ": empty CSV");
  std::vector<std::string> header;
  {
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) header.push_back(cell);
  }
  std::vector<std::vector<double>> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ls, cell, ',')) row.push_back(std::strtod(cell.c_str(), nullptr));
    if (row.size() != header.size())
      throw IoError(path + ": ragged CSV row '" + line + "'");
    rows.push_back(std::move(row));
  }
  return {header, rows};
}

void plot_curves_png(const std::string& path,
                     const std::vector<std::pair<std::string, std::vector<double>>>& series,
                     std::size_t width, std::size_t height) {
  if (series.empty()) throw UsageError("plot_curves_png: no series");
  Tensor<float> canvas(Shape{1, 1, height, width}, 1.0f);

  double lo = std::numeric_limits<double>::max(), hi = std::numeric_limits<double>::lowest();
  std::size_t n_max = 0;
  for (const auto& [name, values] : series) {
    n_max = std::max(n_max, values.size());
    for (double v : values) {
      if (!std::isfinite(v)) continue;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (n_max < 2 || lo > hi) throw UsageError("plot_curves_png: series too short or non-finite");
  if (hi == lo) hi = lo + 1.0;

  const std::size_t margin = 24;
  const double px = static_cast<double>(width - 2 * margin);
  const double py = static_cast<double>(height - 2 * margin);
  auto to_x = [&](std::size_t i, std::size_t n) {
    return margin + px * (n > 1 ? static_cast<double>(i) / (n - 1) : 0.0);
  };
  auto to_y = [&](double v) { return height - margin - py * (v - lo) / (hi - lo); };

  auto put = [&](long x, long y, float shade) {
    if (x >= 0 && y >= 0 && x < static_cast<long>(width) && y < static_cast<long>(height))
      canvas.at(0, 0, y, x) = shade;
  };
  auto line = [&](double x0, double y0, double x1, double y1, float shade) {
    const double steps = std::max(std::fabs(x1 - x0), std::fabs(y1 - y0)) + 1.0;
    for (double t = 0.0; t <= steps; t += 1.0) {
      const double u = t / steps;
      put(std::lround(x0 + u * (x1 - x0)), std::lround(y0 + u * (y1 - y0)), shade);
    }
  };

  // axes
  line(margin, margin, margin, height - margin, 0.0f);
  line(margin, height - margin, width - margin, height - margin, 0.0f);

  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& values = series[s].second;
    const float shade = 0.15f + 0.5f * static_cast<float>(s) / static_cast<float>(series.size());
    for (std::size_t i = 0; i + 1 < values.size(); ++i) {
      if (!std::isfinite(values[i]) || !std::isfinite(values[i + 1])) continue;
      line(to_x(i, values.size()), to_y(values[i]), to_x(i + 1, values.size()),
           to_y(values[i + 1]), shade);
    }
  }
  save_png(canvas, path);
}

#define LSHR_INSTANTIATE_METRICS(T)                                                      \
  template double psnr<T>(const Tensor<T>&, const Tensor<T>&, double);                   \
  template EvalReport evaluate<T>(const ModelParams<T>&, const NetworkConfig&,           \
                                  const std::vector<Tensor<T>>&, std::size_t);           \
  template EvalReport bicubic_baseline<T>(const std::vector<Tensor<T>>&, std::size_t);   \
  template std::vector<BlocksPoint> sweep_blocks<T>(                                     \
      const ModelParams<T>&, const NetworkConfig&, const std::vector<Tensor<T>>&,        \
      const std::vector<std::size_t>&, std::size_t);

LSHR_INSTANTIATE_METRICS(float)
LSHR_INSTANTIATE_METRICS(double)

}  // namespace lshr
