#include "aesth/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace aesth {

std::string hash_hex(std::uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = digits[h & 0xf];
    h >>= 4;
  }
  return s;
}

namespace {

std::vector<unsigned char> quantize(const Image& img) {
  const int h = img.height(), w = img.width();
  std::vector<unsigned char> bytes(static_cast<std::size_t>(h) * w * 3);
  std::size_t k = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        float v = img.ch[c](y, x);
        v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
        bytes[k++] = static_cast<unsigned char>(std::lround(v * 255.f));
      }
  return bytes;
}

Image from_bytes(const std::vector<unsigned char>& bytes, int h, int w) {
  Image img(h, w);
  std::size_t k = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.ch[c](y, x) = bytes[k++] / 255.f;
  return img;
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

std::uint64_t pixel_hash(const Image& img) {
  const auto bytes = quantize(img);
  std::uint64_t h = fnv1a(bytes.data(), bytes.size());
  const std::uint32_t dims[2] = {static_cast<std::uint32_t>(img.height()),
                                 static_cast<std::uint32_t>(img.width())};
  return fnv1a(dims, sizeof(dims), h);
}

Image load_png(const std::filesystem::path& file) {
  FilePtr fp(std::fopen(file.string().c_str(), "rb"));
  if (!fp) throw std::runtime_error("cannot open PNG file: " + file.string());

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  std::vector<png_bytep> rows;
  std::vector<unsigned char> data;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("failed to decode PNG: " + file.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  int bit_depth = png_get_bit_depth(png, info);
  int color_type = png_get_color_type(png, info);

  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  data.resize(static_cast<std::size_t>(w) * h * 3);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y)
    rows[y] = data.data() + static_cast<std::size_t>(y) * w * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return from_bytes(data, static_cast<int>(h), static_cast<int>(w));
}

void save_png(const std::filesystem::path& file, const Image& img) {
  if (img.empty()) throw std::invalid_argument("cannot save empty image");
  FilePtr fp(std::fopen(file.string().c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot write PNG file: " + file.string());

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("failed to encode PNG: " + file.string());
  }
  png_init_io(png, fp.get());
  const int h = img.height(), w = img.width();
  png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  auto bytes = quantize(img);
  for (int y = 0; y < h; ++y)
    png_write_row(png, bytes.data() + static_cast<std::size_t>(y) * w * 3);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image load_ppm(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open PPM file: " + file.string());
  std::string magic;
  in >> magic;
  if (magic != "P6") throw std::runtime_error("not a binary PPM: " + file.string());
  auto next_token = [&in]() {
    std::string tok;
    while (in >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      return tok;
    }
    throw std::runtime_error("truncated PPM header");
  };
  const int w = std::stoi(next_token());
  const int h = std::stoi(next_token());
  const int maxval = std::stoi(next_token());
  if (maxval != 255) throw std::runtime_error("unsupported PPM maxval");
  in.get();  // single whitespace after header
  std::vector<unsigned char> data(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!in) throw std::runtime_error("truncated PPM data: " + file.string());
  return from_bytes(data, h, w);
}

void save_ppm(const std::filesystem::path& file, const Image& img) {
  if (img.empty()) throw std::invalid_argument("cannot save empty image");
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write PPM file: " + file.string());
  out << "P6\n" << img.width() << " " << img.height() << "\n255\n";
  auto bytes = quantize(img);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

Image load_image(const std::filesystem::path& file) {
  const auto ext = file.extension().string();
  if (ext == ".png") return load_png(file);
  if (ext == ".ppm") return load_ppm(file);
  throw std::runtime_error("unsupported image extension: " + file.string());
}

void save_image(const std::filesystem::path& file, const Image& img) {
  const auto ext = file.extension().string();
  if (ext == ".png") return save_png(file, img);
  if (ext == ".ppm") return save_ppm(file, img);
  throw std::runtime_error("unsupported image extension: " + file.string());
}

Image crop(const Image& img, const Rect& r) {
  if (r.x < 0 || r.y < 0 || r.w <= 0 || r.h <= 0 || r.x + r.w > img.width() ||
      r.y + r.h > img.height())
    throw std::invalid_argument("crop rectangle out of bounds");
  Image out(r.h, r.w);
  for (int c = 0; c < 3; ++c) out.ch[c] = img.ch[c].block(r.y, r.x, r.h, r.w);
  return out;
}

Image resize_bilinear(const Image& img, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("bad resize target");
  const int h = img.height(), w = img.width();
  Image out(out_h, out_w);
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::min(std::max(fy, 0.0), static_cast<double>(h - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::min(std::max(fx, 0.0), static_cast<double>(w - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double v00 = img.ch[c](y0, x0), v01 = img.ch[c](y0, x1);
        const double v10 = img.ch[c](y1, x0), v11 = img.ch[c](y1, x1);
        out.ch[c](y, x) = static_cast<float>((1 - wy) * ((1 - wx) * v00 + wx * v01) +
                                             wy * ((1 - wx) * v10 + wx * v11));
      }
    }
  }
  return out;
}

ArrXXd to_gray(const Image& img) {
  return 0.299 * img.ch[0].cast<double>() + 0.587 * img.ch[1].cast<double>() +
         0.114 * img.ch[2].cast<double>();
}

namespace {

inline double srgb_to_linear(double v) {
  return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}

inline double lab_f(double t) {
  constexpr double d = 6.0 / 29.0;
  return t > d * d * d ? std::cbrt(t) : t / (3 * d * d) + 4.0 / 29.0;
}

}  // namespace

void rgb_to_lab(float r, float g, float b, double& L, double& a, double& bb) {
  const double rl = srgb_to_linear(r), gl = srgb_to_linear(g), bl = srgb_to_linear(b);
  // sRGB D65
  const double X = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl;
  const double Y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl;
  const double Z = 0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl;
  const double fx = lab_f(X / 0.95047), fy = lab_f(Y), fz = lab_f(Z / 1.08883);
  L = 116.0 * fy - 16.0;
  a = 500.0 * (fx - fy);
  bb = 200.0 * (fy - fz);
}

std::array<ArrXXd, 3> to_lab(const Image& img) {
  const int h = img.height(), w = img.width();
  std::array<ArrXXd, 3> lab{ArrXXd(h, w), ArrXXd(h, w), ArrXXd(h, w)};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double L, a, b;
      rgb_to_lab(img.ch[0](y, x), img.ch[1](y, x), img.ch[2](y, x), L, a, b);
      lab[0](y, x) = L;
      lab[1](y, x) = a;
      lab[2](y, x) = b;
    }
  return lab;
}

void hsv_to_rgb(double h, double s, double v, float& r, float& g, float& b) {
  h = h - std::floor(h);
  const double hh = h * 6.0;
  const int i = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  double rr = 0, gg = 0, bb = 0;
  switch (i) {
    case 0: rr = v; gg = t; bb = p; break;
    case 1: rr = q; gg = v; bb = p; break;
    case 2: rr = p; gg = v; bb = t; break;
    case 3: rr = p; gg = q; bb = v; break;
    case 4: rr = t; gg = p; bb = v; break;
    default: rr = v; gg = p; bb = q; break;
  }
  r = static_cast<float>(rr);
  g = static_cast<float>(gg);
  b = static_cast<float>(bb);
}

}  // namespace aesth
