#include "lshr/spc.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "binio.hpp"

namespace lshr {

namespace {
constexpr char kPatternMagic[8] = {'L', 'S', 'H', 'R', 'P', 'A', 'T', '1'};
}

std::vector<std::uint8_t> pack_pattern_bits(const std::vector<std::uint8_t>& bits,
                                            std::size_t m, std::size_t K) {
  const std::size_t per_pattern = K * K;
  if (bits.size() != m * per_pattern)
    throw UsageError("pack_pattern_bits: expected " + std::to_string(m * per_pattern) +
                     " bits, got " + std::to_string(bits.size()));
  const std::size_t bytes_per_pattern = (per_pattern + 7) / 8;
  std::vector<std::uint8_t> payload(m * bytes_per_pattern, 0);
  for (std::size_t p = 0; p < m; ++p) {
    for (std::size_t i = 0; i < per_pattern; ++i) {
      if (bits[p * per_pattern + i])
        payload[p * bytes_per_pattern + i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    }
  }
  return payload;
}

std::vector<std::uint8_t> unpack_pattern_bits(const std::vector<std::uint8_t>& payload,
                                              std::size_t m, std::size_t K) {
  const std::size_t per_pattern = K * K;
  const std::size_t bytes_per_pattern = (per_pattern + 7) / 8;
  if (payload.size() != m * bytes_per_pattern)
    throw IoError("unpack_pattern_bits: payload size mismatch");
  std::vector<std::uint8_t> bits(m * per_pattern, 0);
  for (std::size_t p = 0; p < m; ++p)
    for (std::size_t i = 0; i < per_pattern; ++i)
      bits[p * per_pattern + i] =
          (payload[p * bytes_per_pattern + i / 8] >> (i % 8)) & 1u;
  return bits;
}

template <typename T>
void export_patterns(const PatternBank<T>& bank, const std::string& path) {
  const auto payload = pack_pattern_bits(bank.bits(), bank.m, bank.K);
  std::vector<std::uint8_t> buf;
  binio::put_bytes(buf, kPatternMagic, 8);
  binio::put<std::uint32_t>(buf, 1);
  binio::put<std::uint32_t>(buf, static_cast<std::uint32_t>(bank.m));
  binio::put<std::uint32_t>(buf, static_cast<std::uint32_t>(bank.K));
  binio::put_bytes(buf, payload.data(), payload.size());
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, payload.data(), static_cast<uInt>(payload.size())));
  binio::put<std::uint32_t>(buf, crc);
  binio::write_file(path, buf);
}

PatternSet import_patterns(const std::string& path) {
  const auto buf = binio::read_file(path);
  if (buf.size() < 8 + 12 + 4 || std::memcmp(buf.data(), kPatternMagic, 8) != 0)
    throw IoError(path + ": not a pattern file");
  binio::Reader r(buf.data(), buf.size(), path);
  r.skip(8);
  const auto version = r.get<std::uint32_t>();
  if (version != 1) throw IoError(path + ": unsupported pattern file version");
  PatternSet set;
  set.m = r.get<std::uint32_t>();
  set.K = r.get<std::uint32_t>();
  const std::size_t bytes_per_pattern = (set.K * set.K + 7) / 8;
  const std::size_t payload_size = set.m * bytes_per_pattern;
  if (r.remaining() != payload_size + 4) throw IoError(path + ": pattern payload size mismatch");
  std::vector<std::uint8_t> payload(payload_size);
  r.bytes(payload.data(), payload_size);
  const auto stored = r.get<std::uint32_t>();
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, payload.data(), static_cast<uInt>(payload.size())));
  if (stored != crc) throw IoError(path + ": checksum mismatch, pattern file is corrupt");
  set.bits = unpack_pattern_bits(payload, set.m, set.K);
  return set;
}

double dequantize(std::uint32_t count, unsigned adc_bits, double full_scale) {
  const double lsb = full_scale / static_cast<double>(1u << adc_bits);
  return (static_cast<double>(count) + 0.5) * lsb;
}

template <typename T>
std::vector<MeasurementRecord> simulate_spc(const Tensor<T>& image, const PatternBank<T>& bank,
                                            std::optional<double> snr_db, unsigned adc_bits,
                                            double full_scale, std::uint64_t seed,
                                            SimulationStats* stats) {
  if (!(full_scale > 0.0)) throw UsageError("simulate_spc: full_scale must be > 0");
  if (adc_bits < 1 || adc_bits > 16) throw UsageError("simulate_spc: adc_bits must be 1..16");
  Tensor<T> ideal = sense(image, bank);  // [1,m,h,w]
  const std::size_t m = ideal.dim(1), h = ideal.dim(2), w = ideal.dim(3);

  // Noise power chosen so the whole frame's signal-to-noise ratio matches
  // the request.
  std::vector<double> noise(ideal.size(), 0.0);
  if (snr_db) {
    double signal_power = 0.0;
    for (std::size_t i = 0; i < ideal.size(); ++i) {
      const double v = static_cast<double>(ideal[i]);
      signal_power += v * v;
    }
    signal_power /= static_cast<double>(ideal.size());
    const double sigma = std::sqrt(signal_power / std::pow(10.0, *snr_db / 10.0));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, sigma);
    for (double& nz : noise) nz = gauss(rng);
  }

  const double lsb = full_scale / static_cast<double>(1u << adc_bits);
  const std::uint32_t max_count = (1u << adc_bits) - 1;
  std::vector<MeasurementRecord> records;
  records.reserve(ideal.size());
  SimulationStats local;
  double noise_power = 0.0, signal_power = 0.0;
  for (std::size_t p = 0; p < m; ++p) {
    for (std::size_t by = 0; by < h; ++by) {
      for (std::size_t bx = 0; bx < w; ++bx) {
        const std::size_t i = (p * h + by) * w + bx;
        const double v_ideal = static_cast<double>(ideal[i]);
        const double v = v_ideal + noise[i];
        signal_power += v_ideal * v_ideal;
        noise_power += noise[i] * noise[i];
        long count = static_cast<long>(std::floor(v / lsb));
        if (count < 0) count = 0;
        if (count > static_cast<long>(max_count)) {
          count = max_count;
          ++local.saturated;
        }
        MeasurementRecord rec;
        rec.pattern_index = static_cast<std::uint32_t>(p);
        rec.block_row = static_cast<std::uint32_t>(by);
        rec.block_col = static_cast<std::uint32_t>(bx);
        rec.adc_count = static_cast<std::uint32_t>(count);
        records.push_back(rec);
      }
    }
  }
  local.snr_db = noise_power > 0.0 ? 10.0 * std::log10(signal_power / noise_power)
                                   : std::numeric_limits<double>::infinity();
  if (stats) *stats = local;
  return records;
}

template <typename T>
Tensor<T> records_to_tensor(const std::vector<MeasurementRecord>& records,
                            const MeasurementMeta& meta) {
  if (meta.m < 1 || meta.grid_h < 1 || meta.grid_w < 1)
    throw ConfigError("records_to_tensor: meta grid is empty");
  const std::uint32_t max_count = (1u << meta.adc_bits) - 1;
  Tensor<T> out(Shape{1, meta.m, meta.grid_h, meta.grid_w});
  std::vector<bool> seen(meta.m * meta.grid_h * meta.grid_w, false);
  for (const MeasurementRecord& rec : records) {
    if (rec.pattern_index >= meta.m || rec.block_row >= meta.grid_h ||
        rec.block_col >= meta.grid_w)
      throw IoError("measurement record (" + std::to_string(rec.pattern_index) + "," +
                    std::to_string(rec.block_row) + "," + std::to_string(rec.block_col) +
                    ") lies outside the " + std::to_string(meta.m) + "x" +
                    std::to_string(meta.grid_h) + "x" + std::to_string(meta.grid_w) + " grid");
    if (rec.adc_count > max_count)
      throw IoError("adc_count " + std::to_string(rec.adc_count) + " exceeds the " +
                    std::to_string(meta.adc_bits) + "-bit range");
    const std::size_t i =
        (rec.pattern_index * meta.grid_h + rec.block_row) * meta.grid_w + rec.block_col;
    if (seen[i])
      throw IoError("duplicate measurement record for (pattern " +
                    std::to_string(rec.pattern_index) + ", block " +
                    std::to_string(rec.block_row) + "," + std::to_string(rec.block_col) + ")");
    seen[i] = true;
    const double v = meta.calibration.gain * dequantize(rec.adc_count, meta.adc_bits,
                                                        meta.full_scale) +
                     meta.calibration.offset;
    out[i] = static_cast<T>(v);
  }
  std::vector<std::string> gaps;
  for (std::size_t i = 0; i < seen.size() && gaps.size() < 8; ++i) {
    if (!seen[i]) {
      const std::size_t p = i / (meta.grid_h * meta.grid_w);
      const std::size_t rem = i % (meta.grid_h * meta.grid_w);
      gaps.push_back("(" + std::to_string(p) + "," + std::to_string(rem / meta.grid_w) + "," +
                     std::to_string(rem % meta.grid_w) + ")");
    }
  }
  if (!gaps.empty()) {
    std::string list;
    for (const auto& g : gaps) list += (list.empty() ? "" : " ") + g;
    throw IoError("incomplete frame: missing (pattern,row,col) entries " + list +
                  (gaps.size() == 8 ? " ..." : ""));
  }
  return out;
}

void write_measurements(const std::vector<MeasurementRecord>& records,
                        const MeasurementMeta& meta, const std::string& csv_path) {
  std::ostringstream os;
  os << "pattern_index,block_row,block_col,adc_count\n";
  for (const MeasurementRecord& r : records)
    os << r.pattern_index << ',' << r.block_row << ',' << r.block_col << ',' << r.adc_count
       << '\n';
  binio::write_text_file(csv_path, os.str());

  nlohmann::json j;
  j["version"] = meta.version;
  j["m"] = meta.m;
  j["K"] = meta.K;
  j["grid_h"] = meta.grid_h;
  j["grid_w"] = meta.grid_w;
  j["adc_bits"] = meta.adc_bits;
  j["full_scale"] = meta.full_scale;
  j["gain"] = meta.calibration.gain;
  j["offset"] = meta.calibration.offset;
  binio::write_text_file(csv_path + ".json", j.dump(2) + "\n");
}

std::pair<std::vector<MeasurementRecord>, MeasurementMeta> read_measurements(
    const std::string& csv_path) {
  const auto side = binio::read_file(csv_path + ".json");
  nlohmann::json j = nlohmann::json::parse(std::string(side.begin(), side.end()));
  MeasurementMeta meta;
  meta.version = j.at("version").get<std::uint32_t>();
  if (meta.version != 1) throw IoError(csv_path + ": unsupported measurement format version");
  meta.m = j.at("m").get<std::size_t>();
  meta.K = j.at("K").get<std::size_t>();
  meta.grid_h = j.at("grid_h").get<std::size_t>();
  meta.grid_w = j.at("grid_w").get<std::size_t>();
  meta.adc_bits = j.at("adc_bits").get<unsigned>();
  meta.full_scale = j.at("full_scale").get<double>();
  meta.calibration.gain = j.at("gain").get<double>();
  meta.calibration.offset = j.at("offset").get<double>();

  const auto buf = binio::read_file(csv_path);
  std::istringstream is(std::string(buf.begin(), buf.end()));
  std::string line;
  if (!std::getline(is, line) || line != "pattern_index,block_row,block_col,adc_count")
    throw IoError(csv_path + ": missing or unexpected CSV header");
  std::vector<MeasurementRecord> records;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    MeasurementRecord rec;
    unsigned long a, b, c, d;
    if (std::sscanf(line.c_str(), "%lu,%lu,%lu,%lu", &a, &b, &c, &d) != 4)
      throw IoError(csv_path + ": malformed CSV row '" + line + "'");
    rec.pattern_index = static_cast<std::uint32_t>(a);
    rec.block_row = static_cast<std::uint32_t>(b);
    rec.block_col = static_cast<std::uint32_t>(c);
    rec.adc_count = static_cast<std::uint32_t>(d);
    records.push_back(rec);
  }
  return {std::move(records), meta};
}

template <typename T>
Tensor<T> import_measurements(const std::string& csv_path, MeasurementMeta* meta_out) {
  auto [records, meta] = read_measurements(csv_path);
  if (meta_out) *meta_out = meta;
  return records_to_tensor<T>(records, meta);
}

Calibration estimate_calibration(double dark_mean, double bright_mean, double bright_expected) {
  if (bright_mean <= dark_mean)
    throw UsageError("estimate_calibration: bright reading must exceed dark reading");
  Calibration cal;
  cal.gain = bright_expected / (bright_mean - dark_mean);
  cal.offset = -cal.gain * dark_mean;
  return cal;
}

#define LSHR_INSTANTIATE_SPC(T)                                                              \
  template void export_patterns<T>(const PatternBank<T>&, const std::string&);              \
  template std::vector<MeasurementRecord> simulate_spc<T>(                                   \
      const Tensor<T>&, const PatternBank<T>&, std::optional<double>, unsigned, double,     \
      std::uint64_t, SimulationStats*);                                                     \
  template Tensor<T> records_to_tensor<T>(const std::vector<MeasurementRecord>&,            \
                                          const MeasurementMeta&);                          \
  template Tensor<T> import_measurements<T>(const std::string&, MeasurementMeta*);

LSHR_INSTANTIATE_SPC(float)
LSHR_INSTANTIATE_SPC(double)

}  // namespace lshr
