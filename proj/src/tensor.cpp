#include "lshr/tensor.hpp"

namespace lshr {

namespace detail {

std::uint64_t next_tensor_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace detail

namespace {
std::atomic<bool> g_verify_finite{false};
}

void set_verify_finite(bool on) { g_verify_finite.store(on, std::memory_order_relaxed); }
bool verify_finite_enabled() { return g_verify_finite.load(std::memory_order_relaxed); }

}  // namespace lshr
