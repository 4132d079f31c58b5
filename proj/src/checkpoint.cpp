#include "lshr/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <map>

#include "binio.hpp"

namespace lshr {

namespace {

constexpr char kCkptMagic[8] = {'L', 'S', 'H', 'R', 'C', 'K', 'P', '1'};

template <typename T>
void put_tensor(std::vector<std::uint8_t>& buf, const std::string& name, const Tensor<T>& t) {
  binio::put<std::uint16_t>(buf, static_cast<std::uint16_t>(name.size()));
  binio::put_bytes(buf, name.data(), name.size());
  binio::put<std::uint8_t>(buf, static_cast<std::uint8_t>(t.rank()));
  for (std::size_t i = 0; i < t.rank(); ++i)
    binio::put<std::uint64_t>(buf, static_cast<std::uint64_t>(t.dim(i)));
  binio::put_bytes(buf, t.data(), t.size() * sizeof(T));
}

template <typename T>
std::pair<std::string, Tensor<T>> get_tensor(binio::Reader& r) {
  const auto name_len = r.get<std::uint16_t>();
  std::string name(name_len, '\0');
  r.bytes(name.data(), name_len);
  const auto rank = r.get<std::uint8_t>();
  Shape shape(rank);
  for (std::size_t i = 0; i < rank; ++i)
    shape[i] = static_cast<std::size_t>(r.get<std::uint64_t>());
  Tensor<T> t(shape);
  r.bytes(t.data(), t.size() * sizeof(T));
  return {std::move(name), std::move(t)};
}

}  // namespace

template <typename T>
void save_checkpoint(const Checkpoint<T>& ckpt, const std::string& path) {
  std::vector<std::uint8_t> buf;
  binio::put_bytes(buf, kCkptMagic, 8);
  binio::put<std::uint32_t>(buf, 1);  // version
  binio::put<std::uint8_t>(buf, static_cast<std::uint8_t>(sizeof(T)));
  binio::put<std::uint8_t>(buf,
                           ckpt.config.pattern_mode == PatternMode::Learned ? 1 : 0);
  binio::put<std::uint8_t>(buf, ckpt.config.block_bias ? 1 : 0);
  binio::put<std::uint32_t>(buf, static_cast<std::uint32_t>(ckpt.config.K));
  binio::put<double>(buf, ckpt.config.R);
  binio::put<std::uint32_t>(buf, static_cast<std::uint32_t>(ckpt.config.s));
  binio::put<std::uint32_t>(buf, static_cast<std::uint32_t>(ckpt.config.channels));
  binio::put<std::uint32_t>(buf, static_cast<std::uint32_t>(ckpt.config.blocks));
  binio::put<double>(buf, ckpt.config.leaky_p);
  binio::put<std::uint32_t>(buf, static_cast<std::uint32_t>(ckpt.params.bank.m));
  binio::put<std::int64_t>(buf, static_cast<std::int64_t>(ckpt.step));
  binio::put<std::uint64_t>(buf, ckpt.seed);
  binio::put<std::uint64_t>(buf, static_cast<std::uint64_t>(ckpt.train_h));
  binio::put<std::uint64_t>(buf, static_cast<std::uint64_t>(ckpt.train_w));

  std::vector<std::pair<std::string, Tensor<T>>> tensors;
  tensors.emplace_back("bank.shadow", ckpt.params.bank.shadow);
  tensors.emplace_back("recon.kernels", ckpt.params.recon_kernels);
  tensors.emplace_back("recon.bias", ckpt.params.recon_bias);
  tensors.emplace_back("feat.kernels", ckpt.params.feat_kernels);
  tensors.emplace_back("feat.bias", ckpt.params.feat_bias);
  tensors.emplace_back("block.w1", ckpt.params.block_w1);
  tensors.emplace_back("block.w2", ckpt.params.block_w2);
  if (ckpt.params.block_b1.defined()) tensors.emplace_back("block.b1", ckpt.params.block_b1);
  if (ckpt.params.block_b2.defined()) tensors.emplace_back("block.b2", ckpt.params.block_b2);
  tensors.emplace_back("res_out.kernels", ckpt.params.res_out_kernels);
  tensors.emplace_back("res_out.bias", ckpt.params.res_out_bias);
  tensors.emplace_back("up.kernels", ckpt.params.up_kernels);
  tensors.emplace_back("up.bias", ckpt.params.up_bias);

  binio::put<std::uint32_t>(buf, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) put_tensor(buf, name, t);

  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, buf.data() + 8, static_cast<uInt>(buf.size() - 8)));
  binio::put<std::uint32_t>(buf, crc);
  binio::write_file(path, buf);
}

Precision checkpoint_precision(const std::string& path) {
  const auto buf = binio::read_file(path);
  if (buf.size() < 13 || std::memcmp(buf.data(), kCkptMagic, 8) != 0)
    throw IoError(path + ": not a checkpoint file");
  return buf[12] == 8 ? Precision::Double : Precision::Single;
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  const auto buf = binio::read_file(path);
  if (buf.size() < 8 + 4 + 1 + 4 || std::memcmp(buf.data(), kCkptMagic, 8) != 0)
    throw IoError(path + ": not a checkpoint file");
  const auto stored_crc = [&] {
    std::uint32_t c;
    std::memcpy(&c, buf.data() + buf.size() - 4, 4);
    return c;
  }();
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, buf.data() + 8, static_cast<uInt>(buf.size() - 12)));
  if (crc != stored_crc) throw IoError(path + ": checksum mismatch, checkpoint is corrupt");

  binio::Reader r(buf.data(), buf.size() - 4, path);
  r.skip(8);
  const auto version = r.get<std::uint32_t>();
  if (version != 1) throw IoError(path + ": unsupported checkpoint version");
  const auto tsize = r.get<std::uint8_t>();
  if (tsize != sizeof(T))
    throw IoError(path + ": checkpoint precision (" + std::to_string(tsize * 8) +
                  "-bit) does not match the requested precision (" +
                  std::to_string(sizeof(T) * 8) + "-bit)");

  Checkpoint<T> ckpt;
  ckpt.config.pattern_mode =
      r.get<std::uint8_t>() ? PatternMode::Learned : PatternMode::Static;
  ckpt.config.block_bias = r.get<std::uint8_t>() != 0;
  ckpt.config.K = r.get<std::uint32_t>();
  ckpt.config.R = r.get<double>();
  ckpt.config.s = r.get<std::uint32_t>();
  ckpt.config.channels = r.get<std::uint32_t>();
  ckpt.config.blocks = r.get<std::uint32_t>();
  ckpt.config.leaky_p = r.get<double>();
  const auto m = r.get<std::uint32_t>();
  ckpt.step = static_cast<long>(r.get<std::int64_t>());
  ckpt.seed = r.get<std::uint64_t>();
  ckpt.train_h = static_cast<std::size_t>(r.get<std::uint64_t>());
  ckpt.train_w = static_cast<std::size_t>(r.get<std::uint64_t>());

  const auto count = r.get<std::uint32_t>();
  std::map<std::string, Tensor<T>> tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [name, t] = get_tensor<T>(r);
    tensors.emplace(std::move(name), std::move(t));
  }
  auto take = [&](const char* name, bool required = true) -> Tensor<T> {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
      if (required) throw IoError(path + ": checkpoint is missing tensor '" + name + "'");
      return Tensor<T>();
    }
    return it->second;
  };

  ckpt.params.bank.mode = ckpt.config.pattern_mode;
  ckpt.params.bank.m = m;
  ckpt.params.bank.K = ckpt.config.K;
  ckpt.params.bank.seed = ckpt.seed;
  ckpt.params.bank.shadow = take("bank.shadow");
  if (ckpt.config.pattern_mode == PatternMode::Learned)
    ckpt.params.bank.shadow.set_requires_grad(true);
  ckpt.params.recon_kernels = take("recon.kernels").set_requires_grad(true);
  ckpt.params.recon_bias = take("recon.bias").set_requires_grad(true);
  ckpt.params.feat_kernels = take("feat.kernels").set_requires_grad(true);
  ckpt.params.feat_bias = take("feat.bias").set_requires_grad(true);
  ckpt.params.block_w1 = take("block.w1").set_requires_grad(true);
  ckpt.params.block_w2 = take("block.w2").set_requires_grad(true);
  if (ckpt.config.block_bias) {
    ckpt.params.block_b1 = take("block.b1").set_requires_grad(true);
    ckpt.params.block_b2 = take("block.b2").set_requires_grad(true);
  }
  ckpt.params.res_out_kernels = take("res_out.kernels").set_requires_grad(true);
  ckpt.params.res_out_bias = take("res_out.bias").set_requires_grad(true);
  ckpt.params.up_kernels = take("up.kernels").set_requires_grad(true);
  ckpt.params.up_bias = take("up.bias").set_requires_grad(true);
  return ckpt;
}

template struct Checkpoint<float>;
template struct Checkpoint<double>;
template void save_checkpoint<float>(const Checkpoint<float>&, const std::string&);
template void save_checkpoint<double>(const Checkpoint<double>&, const std::string&);
template Checkpoint<float> load_checkpoint<float>(const std::string&);
template Checkpoint<double> load_checkpoint<double>(const std::string&);

}  // namespace lshr
