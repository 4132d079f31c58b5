#include "lshr/image.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>

#include "binio.hpp"

namespace lshr {

namespace {

constexpr double kLumaR = 0.299, kLumaG = 0.587, kLumaB = 0.114;  // BT.601

struct GrayImage {
  std::size_t h = 0, w = 0;
  std::vector<double> pix;  // [0,1]
};

// --- PNG ---

struct PngReadCtx {
  const std::uint8_t* data;
  std::size_t size;
  std::size_t off;
};

void png_mem_read(png_structp png, png_bytep out, png_size_t n) {
  auto* ctx = static_cast<PngReadCtx*>(png_get_io_ptr(png));
  if (ctx->off + n > ctx->size) png_error(png, "unexpected end of PNG stream");
  std::memcpy(out, ctx->data + ctx->off, n);
  ctx->off += n;
}

GrayImage load_png(const std::string& path, const std::vector<std::uint8_t>& buf) {
  if (buf.size() < 8 || png_sig_cmp(buf.data(), 0, 8))
    throw IoError(path + ": bad PNG signature");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(path + ": libpng init failed");
  }
  std::vector<std::uint8_t> raw;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(path + ": PNG decode failed");
  }
  PngReadCtx ctx{buf.data(), buf.size(), 0};
  png_set_read_fn(png, &ctx, png_mem_read);
  png_read_info(png, info);

  // Normalize every variant to 8-bit RGB.
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  const std::size_t w = png_get_image_width(png, info);
  const std::size_t h = png_get_image_height(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  raw.resize(h * stride);
  rows.resize(h);
  for (std::size_t y = 0; y < h; ++y) rows[y] = raw.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  GrayImage img;
  img.h = h;
  img.w = w;
  img.pix.resize(h * w);
  for (std::size_t y = 0; y < h; ++y) {
    const std::uint8_t* row = raw.data() + y * stride;
    for (std::size_t x = 0; x < w; ++x) {
      const double r = row[3 * x], g = row[3 * x + 1], b = row[3 * x + 2];
      img.pix[y * w + x] = (kLumaR * r + kLumaG * g + kLumaB * b) / 255.0;
    }
  }
  return img;
}

// --- PGM / PPM (P2, P5, P6) ---

struct PnmParser {
  const std::uint8_t* p;
  std::size_t n;
  std::size_t off = 2;  // past the magic
  const std::string& path;

  int next_int() {
    // skip whitespace and '#' comments
    while (off < n) {
      if (std::isspace(p[off])) {
        ++off;
      } else if (p[off] == '#') {
        while (off < n && p[off] != '\n') ++off;
      } else {
        break;
      }
    }
    if (off >= n || !std::isdigit(p[off])) throw IoError(path + ": malformed PNM header");
    long v = 0;
    while (off < n && std::isdigit(p[off])) v = v * 10 + (p[off++] - '0');
    return static_cast<int>(v);
  }
};

GrayImage load_pnm(const std::string& path, const std::vector<std::uint8_t>& buf) {
  if (buf.size() < 2) throw IoError(path + ": truncated PNM");
  const char kind = static_cast<char>(buf[1]);
  PnmParser ps{buf.data(), buf.size(), 2, path};
  const std::size_t w = ps.next_int();
  const std::size_t h = ps.next_int();
  const int maxval = ps.next_int();
  if (maxval <= 0 || maxval > 255) throw IoError(path + ": unsupported PNM maxval");

  GrayImage img;
  img.h = h;
  img.w = w;
  img.pix.resize(h * w);
  if (kind == '2') {  // ASCII gray
    for (std::size_t i = 0; i < h * w; ++i)
      img.pix[i] = static_cast<double>(ps.next_int()) / maxval;
  } else {
    ++ps.off;  // single whitespace after maxval
    const std::size_t channels = kind == '6' ? 3 : 1;
    if (ps.off + h * w * channels > buf.size()) throw IoError(path + ": truncated PNM payload");
    const std::uint8_t* data = buf.data() + ps.off;
    for (std::size_t i = 0; i < h * w; ++i) {
      if (channels == 1) {
        img.pix[i] = static_cast<double>(data[i]) / maxval;
      } else {
        const double r = data[3 * i], g = data[3 * i + 1], b = data[3 * i + 2];
        img.pix[i] = (kLumaR * r + kLumaG * g + kLumaB * b) / maxval;
      }
    }
  }
  return img;
}

// --- BMP (uncompressed 8-bit palette or 24-bit) ---

GrayImage load_bmp(const std::string& path, const std::vector<std::uint8_t>& buf) {
  binio::Reader r(buf.data(), buf.size(), path);
  r.skip(2);
  r.skip(8);
  const auto data_off = r.get<std::uint32_t>();
  const auto hdr_size = r.get<std::uint32_t>();
  if (hdr_size < 40) throw IoError(path + ": unsupported BMP header");
  const auto w = r.get<std::int32_t>();
  const auto h_signed = r.get<std::int32_t>();
  r.skip(2);
  const auto bpp = r.get<std::uint16_t>();
  const auto compression = r.get<std::uint32_t>();
  if (compression != 0) throw IoError(path + ": compressed BMP not supported");
  if (bpp != 8 && bpp != 24) throw IoError(path + ": only 8/24-bit BMP supported");
  if (w <= 0 || h_signed == 0) throw IoError(path + ": bad BMP dimensions");

  const bool bottom_up = h_signed > 0;
  const std::size_t h = static_cast<std::size_t>(bottom_up ? h_signed : -h_signed);
  const std::size_t width = static_cast<std::size_t>(w);

  std::vector<std::array<double, 3>> palette;
  if (bpp == 8) {
    r.skip(4 + 4 + 4 + 4 + 4);  // rest of BITMAPINFOHEADER
    auto colors = r.get<std::uint32_t>();
    r.skip(4);
    if (colors == 0) colors = 256;
    palette.resize(colors);
    for (auto& entry : palette) {
      const double b = r.get<std::uint8_t>(), g = r.get<std::uint8_t>(),
                   rr = r.get<std::uint8_t>();
      r.skip(1);
      entry = {rr, g, b};
    }
  }

  const std::size_t bytes_pp = bpp / 8;
  const std::size_t row_stride = ((width * bytes_pp + 3) / 4) * 4;
  if (data_off + row_stride * h > buf.size()) throw IoError(path + ": truncated BMP payload");

  GrayImage img;
  img.h = h;
  img.w = width;
  img.pix.resize(h * width);
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t src_y = bottom_up ? h - 1 - y : y;
    const std::uint8_t* row = buf.data() + data_off + src_y * row_stride;
    for (std::size_t x = 0; x < width; ++x) {
      double rr, g, b;
      if (bpp == 24) {
        b = row[3 * x];
        g = row[3 * x + 1];
        rr = row[3 * x + 2];
      } else {
        const auto idx = row[x];
        if (idx >= palette.size()) throw IoError(path + ": BMP palette index out of range");
        rr = palette[idx][0];
        g = palette[idx][1];
        b = palette[idx][2];
      }
      img.pix[y * width + x] = (kLumaR * rr + kLumaG * g + kLumaB * b) / 255.0;
    }
  }
  return img;
}

GrayImage load_any(const std::string& path) {
  const auto buf = binio::read_file(path);
  if (buf.size() >= 8 && !png_sig_cmp(buf.data(), 0, 8)) return load_png(path, buf);
  if (buf.size() >= 2 && buf[0] == 'P' && (buf[1] == '2' || buf[1] == '5' || buf[1] == '6'))
    return load_pnm(path, buf);
  if (buf.size() >= 2 && buf[0] == 'B' && buf[1] == 'M') return load_bmp(path, buf);
  throw IoError(path + ": unsupported image format (expect PNG, PGM/PPM or BMP)");
}

template <typename T>
std::vector<std::uint8_t> to_bytes(const Tensor<T>& image) {
  if (!image.defined() || image.rank() != 4 || image.dim(0) != 1 || image.dim(1) != 1)
    throw ShapeError("image writer expects a [1,1,H,W] tensor");
  std::vector<std::uint8_t> bytes(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double v = std::min(1.0, std::max(0.0, static_cast<double>(image[i])));
    bytes[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return bytes;
}

void png_mem_write(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + n);
}

void png_mem_flush(png_structp) {}

}  // namespace

template <typename T>
Tensor<T> load_grayscale(const std::string& path) {
  const GrayImage img = load_any(path);
  Tensor<T> t(Shape{1, 1, img.h, img.w});
  for (std::size_t i = 0; i < img.pix.size(); ++i) t[i] = static_cast<T>(img.pix[i]);
  return t;
}

template <typename T>
void save_png(const Tensor<T>& image, const std::string& path) {
  const auto bytes = to_bytes(image);
  const std::size_t h = image.dim(2), w = image.dim(3);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError(path + ": libpng init failed");
  }
  std::vector<std::uint8_t> out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError(path + ": PNG encode failed");
  }
  png_set_write_fn(png, &out, png_mem_write, png_mem_flush);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(h);
  for (std::size_t y = 0; y < h; ++y)
    rows[y] = const_cast<std::uint8_t*>(bytes.data()) + y * w;
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);

  binio::write_file(path, out);
}

template <typename T>
void save_pgm(const Tensor<T>& image, const std::string& path) {
  const auto bytes = to_bytes(image);
  std::string header = "P5\n" + std::to_string(image.dim(3)) + " " +
                       std::to_string(image.dim(2)) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), bytes.begin(), bytes.end());
  binio::write_file(path, out);
}

std::vector<std::string> list_image_files(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError(dir + ": not a directory");
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png" || ext == ".pgm" || ext == ".ppm" || ext == ".bmp")
      files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  return files;
}

#define LSHR_INSTANTIATE_IMAGE(T)                                \
  template Tensor<T> load_grayscale<T>(const std::string&);     \
  template void save_png<T>(const Tensor<T>&, const std::string&); \
  template void save_pgm<T>(const Tensor<T>&, const std::string&);

LSHR_INSTANTIATE_IMAGE(float)
LSHR_INSTANTIATE_IMAGE(double)

}  // namespace lshr
