#pragma once

#include "aesth/types.hpp"

#include <array>
#include <filesystem>

namespace aesth {

// Planar RGB image, values in [0,1]. Channel arrays are H x W (row = y).
struct Image {
  std::array<ArrXXf, 3> ch;

  Image() = default;
  Image(int height, int width, float fill = 0.f) {
    for (auto& c : ch) c = ArrXXf::Constant(height, width, fill);
  }

  int height() const { return static_cast<int>(ch[0].rows()); }
  int width() const { return static_cast<int>(ch[0].cols()); }
  bool empty() const { return ch[0].size() == 0; }

  float& at(int c, int y, int x) { return ch[c](y, x); }
  float at(int c, int y, int x) const { return ch[c](y, x); }
};

// 8-bit I/O. Format picked by extension (.png, .ppm).
Image load_image(const std::filesystem::path& file);
void save_image(const std::filesystem::path& file, const Image& img);

Image load_png(const std::filesystem::path& file);
void save_png(const std::filesystem::path& file, const Image& img);
Image load_ppm(const std::filesystem::path& file);
void save_ppm(const std::filesystem::path& file, const Image& img);

// Hash of the image quantized to 8 bits, row-major interleaved RGB.
std::uint64_t pixel_hash(const Image& img);

Image crop(const Image& img, const Rect& r);
Image resize_bilinear(const Image& img, int out_h, int out_w);

// Luma in [0,1], used as the gradient channel for HOG.
ArrXXd to_gray(const Image& img);

// CIE Lab (D65), L in [0,100], a/b roughly [-110,110].
std::array<ArrXXd, 3> to_lab(const Image& img);

void rgb_to_lab(float r, float g, float b, double& L, double& a, double& bb);
// h in [0,1), s,v in [0,1].
void hsv_to_rgb(double h, double s, double v, float& r, float& g, float& b);

}  // namespace aesth
