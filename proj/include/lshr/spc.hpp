#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lshr/patterns.hpp"
#include "lshr/tensor.hpp"

namespace lshr {

// --- DMD pattern container ---
//
// Binary layout (little-endian):
//   bytes 0..7   magic "LSHRPAT1"
//   u32          version (1)
//   u32          m  (pattern count)
//   u32          K  (pattern side)
//   payload      per pattern ceil(K*K/8) bytes, row-major bits, LSB first
//   u32          CRC32 of the payload

// Writes the binarized view of a bank; the round trip is bit-exact.
template <typename T>
void export_patterns(const PatternBank<T>& bank, const std::string& path);

struct PatternSet {
  std::size_t m = 0;
  std::size_t K = 0;
  std::vector<std::uint8_t> bits;  // m*K*K entries of {0,1}
};

PatternSet import_patterns(const std::string& path);

// pack/unpack of the raw bit payload (exposed for tests and tooling)
std::vector<std::uint8_t> pack_pattern_bits(const std::vector<std::uint8_t>& bits,
                                            std::size_t m, std::size_t K);
std::vector<std::uint8_t> unpack_pattern_bits(const std::vector<std::uint8_t>& payload,
                                              std::size_t m, std::size_t K);

// --- photodiode / ADC measurements ---

struct MeasurementRecord {
  std::uint32_t pattern_index = 0;
  std::uint32_t block_row = 0;
  std::uint32_t block_col = 0;
  std::uint32_t adc_count = 0;
};

struct Calibration {
  double gain = 1.0;
  double offset = 0.0;
};

struct MeasurementMeta {
  std::uint32_t version = 1;
  std::size_t m = 0;
  std::size_t K = 0;
  std::size_t grid_h = 0;  // blocks per column
  std::size_t grid_w = 0;  // blocks per row
  unsigned adc_bits = 10;
  double full_scale = 0.0;
  Calibration calibration;
};

struct SimulationStats {
  std::size_t saturated = 0;  // counts clamped at full scale
  double snr_db = 0.0;        // realized SNR of this frame (inf when noiseless)
};

// Simulates one single-pixel-camera frame: ideal block measurements from
// the binarized bank, optional additive Gaussian noise scaled to the
// requested per-frame SNR, then a mid-rise ADC with clamping at
// [0, full_scale]. Deterministic in the seed.
template <typename T>
std::vector<MeasurementRecord> simulate_spc(const Tensor<T>& image, const PatternBank<T>& bank,
                                            std::optional<double> snr_db, unsigned adc_bits,
                                            double full_scale, std::uint64_t seed,
                                            SimulationStats* stats = nullptr);

// Mid-rise dequantization: (count + 0.5) * full_scale / 2^bits.
double dequantize(std::uint32_t count, unsigned adc_bits, double full_scale);

// Dequantizes and applies the affine calibration, arranging records into
// the [1,m,grid_h,grid_w] tensor the reconstruction path expects.
// Validates completeness (every pattern x block exactly once) and ADC
// range.
template <typename T>
Tensor<T> records_to_tensor(const std::vector<MeasurementRecord>& records,
                            const MeasurementMeta& meta);

// CSV (pattern_index,block_row,block_col,adc_count) plus a JSON sidecar
// holding the meta fields. The sidecar path is csv_path + ".json".
void write_measurements(const std::vector<MeasurementRecord>& records,
                        const MeasurementMeta& meta, const std::string& csv_path);
std::pair<std::vector<MeasurementRecord>, MeasurementMeta> read_measurements(
    const std::string& csv_path);

template <typename T>
Tensor<T> import_measurements(const std::string& csv_path, MeasurementMeta* meta_out = nullptr);

// Affine calibration from two reference frames: the all-mirrors-off mean
// reading and the all-mirrors-on mean reading with its known ideal value.
Calibration estimate_calibration(double dark_mean, double bright_mean, double bright_expected);

}  // namespace lshr
