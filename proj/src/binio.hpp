#pragma once

// Little-endian binary file helpers shared by the container formats.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "lshr/errors.hpp"

namespace lshr::binio {

inline void put_bytes(std::vector<std::uint8_t>& out, const void* p, std::size_t n) {
  const auto* b = static_cast<const std::uint8_t*>(p);
  out.insert(out.end(), b, b + n);
}

template <typename U>
void put(std::vector<std::uint8_t>& out, U v) {
  static_assert(std::is_trivially_copyable_v<U>);
  put_bytes(out, &v, sizeof(U));
}

class Reader {
 public:
  Reader(const std::uint8_t* p, std::size_t n, std::string what)
      : p_(p), n_(n), what_(std::move(what)) {}

  template <typename U>
  U get() {
    static_assert(std::is_trivially_copyable_v<U>);
    U v;
    bytes(&v, sizeof(U));
    return v;
  }

  void bytes(void* dst, std::size_t n) {
    if (off_ + n > n_) throw IoError(what_ + ": truncated file");
    std::memcpy(dst, p_ + off_, n);
    off_ += n;
  }

  void skip(std::size_t n) {
    if (off_ + n > n_) throw IoError(what_ + ": truncated file");
    off_ += n;
  }

  std::size_t offset() const { return off_; }
  std::size_t remaining() const { return n_ - off_; }
  const std::uint8_t* cursor() const { return p_ + off_; }

 private:
  const std::uint8_t* p_;
  std::size_t n_;
  std::size_t off_ = 0;
  std::string what_;
};

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  f.seekg(0, std::ios::end);
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(f.tellg()));
  f.seekg(0);
  f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!f) throw IoError("cannot read " + path);
  return buf;
}

// Atomic write: temp file in the same directory, then rename.
inline void write_file(const std::string& path, const void* data, std::size_t n) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + tmp + " for writing");
    f.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!f) throw IoError("cannot write " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw IoError("cannot rename " + tmp + " to " + path);
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& buf) {
  write_file(path, buf.data(), buf.size());
}

inline void write_text_file(const std::string& path, const std::string& text) {
  write_file(path, text.data(), text.size());
}

}  // namespace lshr::binio
