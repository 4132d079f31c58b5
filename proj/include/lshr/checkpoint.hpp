#pragma once

#include <cstdint>
#include <string>

#include "lshr/model.hpp"
#include "lshr/train.hpp"

namespace lshr {

// Versioned binary model container: network config, every parameter
// tensor (including the bank shadow and its mode) and the training step
// counter. Little-endian, CRC-protected; save/load round-trips
// bit-exactly within one precision.
template <typename T>
struct Checkpoint {
  NetworkConfig config;
  ModelParams<T> params;
  long step = 0;
  std::uint64_t seed = 0;
  std::size_t train_h = 0;  // high-resolution training image size
  std::size_t train_w = 0;
};

template <typename T>
void save_checkpoint(const Checkpoint<T>& ckpt, const std::string& path);

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path);

// Precision tag stored in a checkpoint file without loading the tensors.
Precision checkpoint_precision(const std::string& path);

}  // namespace lshr
