#pragma once

// RGB images in memory and the color-space conversions used by the
// descriptors. All converted channels are scaled to [0, 1].

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "reid/datamodel.hpp"
#include "reid/errors.hpp"

namespace reid {

using Color = std::array<double, 3>;

enum class ColorSpace { RGB, HSV, LAB, NormalizedRGB, L1L2L3 };

struct Image {
  static constexpr int kWidth = 48;
  static constexpr int kHeight = 128;

  int width = 0;
  int height = 0;
  std::vector<Color> pixels;  // row-major RGB, each channel in [0, 255]

  Image() = default;
  Image(int w, int h, Color fill = {0, 0, 0})
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

  Color& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  const Color& at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

inline Image image_from_pnm(const PnmImage& pnm) {
  Image img(pnm.width, pnm.height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    for (int c = 0; c < 3; ++c) {
      const int src = pnm.channels == 3 ? c : 0;
      img.pixels[i][c] = pnm.data[i * pnm.channels + src];
    }
  }
  return img;
}

inline PnmImage image_to_pnm(const Image& img) {
  PnmImage pnm;
  pnm.width = img.width;
  pnm.height = img.height;
  pnm.channels = 3;
  pnm.data.reserve(img.pixels.size() * 3);
  for (const auto& p : img.pixels)
    for (double v : p) pnm.data.push_back(static_cast<unsigned char>(std::clamp(std::lround(v), 0L, 255L)));
  return pnm;
}

inline Image resize_nearest(const Image& src, int w, int h) {
  if (src.width == w && src.height == h) return src;
  Image out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.at(x, y) = src.at(x * src.width / w, y * src.height / h);
  return out;
}

inline Image load_image(const std::string& path) {
  return resize_nearest(image_from_pnm(load_pnm(path)), Image::kWidth, Image::kHeight);
}

namespace detail {

inline Color rgb_to_hsv(const Color& rgb) {
  const double r = rgb[0] / 255.0, g = rgb[1] / 255.0, b = rgb[2] / 255.0;
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double delta = mx - mn;
  double h = 0.0;
  if (delta > 0.0) {
    if (mx == r) {
      h = std::fmod((g - b) / delta, 6.0);
    } else if (mx == g) {
      h = (b - r) / delta + 2.0;
    } else {
      h = (r - g) / delta + 4.0;
    }
    h /= 6.0;
    if (h < 0.0) h += 1.0;
  }
  const double s = mx > 0.0 ? delta / mx : 0.0;
  return {h, s, mx};
}

inline double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

inline double lab_f(double t) {
  constexpr double eps = 216.0 / 24389.0, kappa = 24389.0 / 27.0;
  return t > eps ? std::cbrt(t) : (kappa * t + 16.0) / 116.0;
}

// CIE L*a*b* under D65, rescaled: L/100, (a+128)/255, (b+128)/255.
inline Color rgb_to_lab(const Color& rgb) {
  const double r = srgb_to_linear(rgb[0] / 255.0), g = srgb_to_linear(rgb[1] / 255.0),
               b = srgb_to_linear(rgb[2] / 255.0);
  const double x = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / 0.95047;
  const double y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
  const double z = (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / 1.08883;
  const double fx = lab_f(x), fy = lab_f(y), fz = lab_f(z);
  const double L = 116.0 * fy - 16.0, A = 500.0 * (fx - fy), B = 200.0 * (fy - fz);
  return {std::clamp(L / 100.0, 0.0, 1.0), std::clamp((A + 128.0) / 255.0, 0.0, 1.0),
          std::clamp((B + 128.0) / 255.0, 0.0, 1.0)};
}

inline Color rgb_to_normalized(const Color& rgb) {
  const double s = rgb[0] + rgb[1] + rgb[2];
  if (s <= 0.0) return {1.0 / 3, 1.0 / 3, 1.0 / 3};
  return {rgb[0] / s, rgb[1] / s, rgb[2] / s};
}

inline Color rgb_to_l1l2l3(const Color& rgb) {
  const double rg = (rgb[0] - rgb[1]) * (rgb[0] - rgb[1]);
  const double rb = (rgb[0] - rgb[2]) * (rgb[0] - rgb[2]);
  const double gb = (rgb[1] - rgb[2]) * (rgb[1] - rgb[2]);
  const double s = rg + rb + gb;
  if (s <= 0.0) return {1.0 / 3, 1.0 / 3, 1.0 / 3};
  return {rg / s, rb / s, gb / s};
}

}  // namespace detail

// Converts one RGB pixel (channels in [0, 255]) to the target space in [0, 1].
inline Color convert_color(const Color& rgb, ColorSpace space) {
  switch (space) {
    case ColorSpace::RGB:
      return {rgb[0] / 255.0, rgb[1] / 255.0, rgb[2] / 255.0};
    case ColorSpace::HSV:
      return detail::rgb_to_hsv(rgb);
    case ColorSpace::LAB:
      return detail::rgb_to_lab(rgb);
    case ColorSpace::NormalizedRGB:
      return detail::rgb_to_normalized(rgb);
    case ColorSpace::L1L2L3:
      return detail::rgb_to_l1l2l3(rgb);
  }
  return rgb;
}

inline double luminance(const Color& rgb) { return 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]; }

}  // namespace reid
