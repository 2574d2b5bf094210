#pragma once

// Hand-crafted visual cues C1..C6: patch-level color histograms (joint and
// per-channel), HOG and SILTP texture codes, salient color names, and their
// assembly into per-stripe (local) and whole-image (global) descriptors.
// PCA reduction of the assembled descriptors lives here too.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "reid/datamodel.hpp"
#include "reid/errors.hpp"
#include "reid/image.hpp"
#include "reid/log.hpp"

namespace reid {

// ---- visual cue identifiers ------------------------------------------------

enum class Cue { C1 = 0, C2, C3, C4, C5, C6, C7, C8 };

inline constexpr int kCueCount = 8;

inline std::string cue_name(Cue c) { return "C" + std::to_string(static_cast<int>(c) + 1); }

inline Cue parse_cue(std::string_view s) {
  if (s.size() == 2 && (s[0] == 'C' || s[0] == 'c') && s[1] >= '1' && s[1] <= '8') {
    return static_cast<Cue>(s[1] - '1');
  }
  throw ConfigError("unknown visual cue '" + std::string(s) + "'");
}

// Cues computed from pixels; C7 and C8 are ingested from FEAT files.
inline bool is_handcrafted(Cue c) { return static_cast<int>(c) < 6; }

// ---- patch grid -------------------------------------------------------------

struct Rect {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  bool operator==(const Rect&) const = default;
};

struct PatchGrid {
  int image_w = 0;
  int image_h = 0;
  int patch_w = 0;
  int patch_h = 0;
  int stride_x = 0;
  int stride_y = 0;
  int columns = 0;
  int rows = 0;
  std::vector<Rect> rects;  // left-to-right, top-to-bottom
};

namespace detail {

inline std::vector<int> patch_offsets(int extent, int patch, int stride) {
  std::vector<int> out;
  for (int p = 0; p + patch <= extent; p += stride) out.push_back(p);
  if (out.back() + patch < extent) out.push_back(extent - patch);
  return out;
}

}  // namespace detail

inline PatchGrid patch_grid(int image_w, int image_h, int patch_w, int patch_h, int stride_x, int stride_y) {
  if (stride_x <= 0 || stride_y <= 0) throw ConfigError("patch strides must be positive");
  if (patch_w <= 0 || patch_h <= 0) throw ConfigError("patch size must be positive");
  if (patch_w > image_w || patch_h > image_h) throw ConfigError("patch larger than image");
  PatchGrid g{image_w, image_h, patch_w, patch_h, stride_x, stride_y, 0, 0, {}};
  const auto xs = detail::patch_offsets(image_w, patch_w, stride_x);
  const auto ys = detail::patch_offsets(image_h, patch_h, stride_y);
  g.columns = static_cast<int>(xs.size());
  g.rows = static_cast<int>(ys.size());
  for (int y : ys)
    for (int x : xs) g.rects.push_back({x, y, patch_w, patch_h});
  return g;
}

// ---- color histograms --------------------------------------------------------

namespace detail {

inline int bin_of(double v, int bins) {
  return std::clamp(static_cast<int>(std::floor(v * bins)), 0, bins - 1);
}

inline double weight_at(std::span<const double> weights, std::size_t i) {
  return weights.empty() ? 1.0 : weights[i];
}

}  // namespace detail

// 3-D joint histogram over pixels already converted to a [0,1] color space.
// Bin mass is the sum of pixel weights (1 per pixel when no weights given).
inline Eigen::VectorXd joint_color_histogram(std::span<const Color> pixels, std::span<const double> weights = {},
                                             int bins_per_axis = 8) {
  Eigen::VectorXd h = Eigen::VectorXd::Zero(bins_per_axis * bins_per_axis * bins_per_axis);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const auto& p = pixels[i];
    const int idx = (detail::bin_of(p[0], bins_per_axis) * bins_per_axis + detail::bin_of(p[1], bins_per_axis)) *
                        bins_per_axis +
                    detail::bin_of(p[2], bins_per_axis);
    h[idx] += detail::weight_at(weights, i);
  }
  return h;
}

// Three concatenated per-channel histograms.
inline Eigen::VectorXd channel_histogram(std::span<const Color> pixels, std::span<const double> weights = {},
                                         int bins_per_channel = 16) {
  Eigen::VectorXd h = Eigen::VectorXd::Zero(3 * bins_per_channel);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const double w = detail::weight_at(weights, i);
    for (int c = 0; c < 3; ++c) h[c * bins_per_channel + detail::bin_of(pixels[i][c], bins_per_channel)] += w;
  }
  return h;
}

// ---- texture ------------------------------------------------------------------

struct GrayPatch {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  GrayPatch() = default;
  GrayPatch(int w, int h, double fill = 0.0) : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {}

  double& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  double clamped(int x, int y) const { return at(std::clamp(x, 0, width - 1), std::clamp(y, 0, height - 1)); }
};

// Unsigned-orientation histogram of gradient magnitudes over [0, pi), hard
// binning, central differences with replicated borders, no block norm.
inline Eigen::VectorXd hog_descriptor(const GrayPatch& patch, int bins = 9) {
  Eigen::VectorXd h = Eigen::VectorXd::Zero(bins);
  const double bin_width = std::numbers::pi / bins;
  for (int y = 0; y < patch.height; ++y) {
    for (int x = 0; x < patch.width; ++x) {
      const double gx = patch.clamped(x + 1, y) - patch.clamped(x - 1, y);
      const double gy = patch.clamped(x, y + 1) - patch.clamped(x, y - 1);
      const double mag = std::hypot(gx, gy);
      if (mag == 0.0) continue;
      double angle = std::atan2(gy, gx);
      if (angle < 0.0) angle += std::numbers::pi;
      if (angle >= std::numbers::pi) angle -= std::numbers::pi;
      h[std::min(static_cast<int>(angle / bin_width), bins - 1)] += mag;
    }
  }
  return h;
}

// Scale-invariant local ternary pattern histogram. Each interior pixel gets a
// base-3 code: digit 1 when a neighbor exceeds (1+tau)*center, 2 when it falls
// below (1-tau)*center, 0 otherwise. Neighbors: 4 (E, S, W, N) or 8.
inline Eigen::VectorXd siltp_descriptor(const GrayPatch& patch, double tau = 0.3, int radius = 1, int neighbors = 4) {
  if (neighbors != 4 && neighbors != 8) throw ConfigError("SILTP supports 4 or 8 neighbors");
  static constexpr std::array<std::array<int, 2>, 8> kOffsets{
      {{1, 0}, {0, 1}, {-1, 0}, {0, -1}, {1, 1}, {-1, 1}, {-1, -1}, {1, -1}}};
  int bins = 1;
  for (int k = 0; k < neighbors; ++k) bins *= 3;
  Eigen::VectorXd h = Eigen::VectorXd::Zero(bins);
  for (int y = radius; y < patch.height - radius; ++y) {
    for (int x = radius; x < patch.width - radius; ++x) {
      const double c = patch.at(x, y);
      const double hi = (1.0 + tau) * c, lo = (1.0 - tau) * c;
      int code = 0, place = 1;
      for (int k = 0; k < neighbors; ++k) {
        const double n = patch.at(x + kOffsets[k][0] * radius, y + kOffsets[k][1] * radius);
        if (n > hi) {
          code += place;
        } else if (n < lo) {
          code += 2 * place;
        }
        place *= 3;
      }
      h[code] += 1.0;
    }
  }
  return h;
}

// ---- salient color names --------------------------------------------------------

struct ColorNamePalette {
  std::vector<Color> names;  // RGB in [0, 255]
  int nearest = 3;           // soft assignment spreads over this many names
  double bandwidth = 0.125;  // Gaussian kernel sigma in [0,1]-scaled color units

  // 16 names at the cell centers of a 2x2x4 partition of the RGB cube; sigma is
  // half the minimum inter-name distance.
  static ColorNamePalette uniform16() {
    ColorNamePalette p;
    for (int r = 0; r < 2; ++r)
      for (int g = 0; g < 2; ++g)
        for (int b = 0; b < 4; ++b) p.names.push_back({(r + 0.5) * 127.5, (g + 0.5) * 127.5, (b + 0.5) * 63.75});
    p.bandwidth = 0.5 * p.min_distance();
    return p;
  }

  double min_distance() const {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < names.size(); ++i)
      for (std::size_t j = i + 1; j < names.size(); ++j) {
        double d2 = 0.0;
        for (int c = 0; c < 3; ++c) d2 += std::pow((names[i][c] - names[j][c]) / 255.0, 2);
        best = std::min(best, std::sqrt(d2));
      }
    return best;
  }

  void validate() const {
    if (names.size() < 2) throw ConfigError("color-name palette needs at least 2 names");
    if (!(min_distance() > 0.0)) throw ConfigError("color-name palette has duplicate names");
    if (!(bandwidth > 0.0)) throw ConfigError("color-name kernel bandwidth must be positive");
    if (nearest < 1) throw ConfigError("color-name assignment needs at least 1 nearest name");
  }
};

// Per-pixel soft assignment to the nearest palette names, computed in the given
// color space (palette converted to that space). Returns the weighted
// distribution over names; its sum equals the total pixel weight.
inline Eigen::VectorXd color_name_distribution(std::span<const Color> rgb_pixels, std::span<const double> weights,
                                               const ColorNamePalette& palette, ColorSpace space) {
  const auto n_names = palette.names.size();
  std::vector<Color> names;
  names.reserve(n_names);
  for (const auto& c : palette.names) names.push_back(convert_color(c, space));
  const auto k = std::min<std::size_t>(static_cast<std::size_t>(palette.nearest), n_names);
  const double inv_s2 = 1.0 / (palette.bandwidth * palette.bandwidth);

  Eigen::VectorXd dist = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_names));
  std::vector<std::pair<double, std::size_t>> d2(n_names);
  std::vector<double> kv(k);
  for (std::size_t i = 0; i < rgb_pixels.size(); ++i) {
    const double w = detail::weight_at(weights, i);
    if (w == 0.0) continue;
    const Color p = convert_color(rgb_pixels[i], space);
    for (std::size_t j = 0; j < n_names; ++j) {
      double s = 0.0;
      for (int c = 0; c < 3; ++c) s += (p[c] - names[j][c]) * (p[c] - names[j][c]);
      d2[j] = {s, j};
    }
    std::partial_sort(d2.begin(), d2.begin() + static_cast<std::ptrdiff_t>(k), d2.end());
    // Kernel values relative to the nearest name so the normalizer never underflows.
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) total += (kv[j] = std::exp(-(d2[j].first - d2[0].first) * inv_s2));
    for (std::size_t j = 0; j < k; ++j) dist[static_cast<Eigen::Index>(d2[j].second)] += w * kv[j] / total;
  }
  return dist;
}

inline constexpr std::array<ColorSpace, 4> kScncdSpaces{ColorSpace::RGB, ColorSpace::NormalizedRGB,
                                                        ColorSpace::L1L2L3, ColorSpace::HSV};

// SCNCD fused with 32-bin channel histograms, one L1-normalized block per
// color space in kScncdSpaces order.
inline Eigen::VectorXd scncd_descriptor(std::span<const Color> rgb_pixels, std::span<const double> weights,
                                        const ColorNamePalette& palette, int hist_bins = 32) {
  const auto names = static_cast<Eigen::Index>(palette.names.size());
  const Eigen::Index block = names + 3 * hist_bins;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(block * static_cast<Eigen::Index>(kScncdSpaces.size()));
  std::vector<Color> converted(rgb_pixels.size());
  for (std::size_t s = 0; s < kScncdSpaces.size(); ++s) {
    auto seg = out.segment(static_cast<Eigen::Index>(s) * block, block);
    seg.head(names) = color_name_distribution(rgb_pixels, weights, palette, kScncdSpaces[s]);
    for (std::size_t i = 0; i < rgb_pixels.size(); ++i) converted[i] = convert_color(rgb_pixels[i], kScncdSpaces[s]);
    seg.tail(3 * hist_bins) = channel_histogram(converted, weights, hist_bins);
    const double l1 = seg.sum();
    if (l1 > 0.0) seg /= l1;
  }
  return out;
}

// ---- cue assembly --------------------------------------------------------------

inline void l2_normalize(Eigen::Ref<Eigen::VectorXd> v) {
  const double n = v.norm();
  if (n > 0.0) v /= n;
}

struct FeatureConfig {
  int stripes = 4;
  int patch_w = 8;
  int patch_h = 16;
  int stride_x = 4;
  int stride_y = 8;
  int joint_bins = 8;
  int channel_bins = 16;
  int hog_bins = 9;
  double siltp_tau = 0.3;
  int siltp_radius = 1;
  int siltp_neighbors = 4;
  int scncd_hist_bins = 32;
  // Blend weight of the whole-image histogram into the foreground-weighted one.
  double background_blend = 0.0;
  ColorNamePalette palette = ColorNamePalette::uniform16();
};

struct CueDescriptor {
  Cue cue = Cue::C1;
  std::vector<Eigen::VectorXd> local;  // one per stripe
  Eigen::VectorXd global;
  bool normalized = false;
};

namespace detail {

enum class ColorBlock { HsvJoint, HsvChannel, LabJoint, LabChannel, Scncd };
enum class TextureBlock { Hog, Siltp };

inline std::pair<ColorBlock, TextureBlock> cue_layout(Cue cue) {
  switch (cue) {
    case Cue::C1:
      return {ColorBlock::HsvJoint, TextureBlock::Hog};
    case Cue::C2:
      return {ColorBlock::HsvChannel, TextureBlock::Siltp};
    case Cue::C3:
      return {ColorBlock::LabJoint, TextureBlock::Siltp};
    case Cue::C4:
      return {ColorBlock::LabChannel, TextureBlock::Hog};
    case Cue::C5:
      return {ColorBlock::Scncd, TextureBlock::Hog};
    case Cue::C6:
      return {ColorBlock::Scncd, TextureBlock::Siltp};
    default:
      throw ConfigError(cue_name(cue) + " is ingested from files, not extracted from pixels");
  }
}

inline Eigen::VectorXd concat(const std::vector<Eigen::VectorXd>& parts) {
  Eigen::Index n = 0;
  for (const auto& p : parts) n += p.size();
  Eigen::VectorXd out(n);
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.segment(off, p.size()) = p;
    off += p.size();
  }
  return out;
}

inline Eigen::VectorXd join_blocks(Eigen::VectorXd color, Eigen::VectorXd texture) {
  l2_normalize(color);
  l2_normalize(texture);
  Eigen::VectorXd out(color.size() + texture.size());
  out << color, texture;
  return out;
}

// Pixel data of one image prepared once for every cue.
class PreparedImage {
 public:
  PreparedImage(const Image& img, const ForegroundMask* mask, const FeatureConfig& cfg)
      : img_(img), cfg_(cfg), grid_(patch_grid(img.width, img.height, cfg.patch_w, cfg.patch_h, cfg.stride_x,
                                               cfg.stride_y)) {
    if (img.width != Image::kWidth || img.height != Image::kHeight) {
      throw ConfigError("images must be resized to 48x128 before extraction");
    }
    if (cfg.stripes < 1 || img.height % cfg.stripes != 0) throw ConfigError("stripe count must divide image height");
    if (mask && (mask->width != img.width || mask->height != img.height)) {
      throw ConfigError("mask dimensions do not match the image");
    }
    const auto n = img.pixels.size();
    weights_.assign(n, 1.0);
    if (mask) {
      for (std::size_t i = 0; i < n; ++i) {
        weights_[i] = (1.0 - cfg.background_blend) * mask->weights[i] + cfg.background_blend;
      }
    }
    hsv_.resize(n);
    lab_.resize(n);
    gray_ = GrayPatch(img.width, img.height);
    for (std::size_t i = 0; i < n; ++i) {
      hsv_[i] = convert_color(img.pixels[i], ColorSpace::HSV);
      lab_[i] = convert_color(img.pixels[i], ColorSpace::LAB);
      gray_.values[i] = luminance(img.pixels[i]);
    }
  }

  const PatchGrid& grid() const { return grid_; }

  int stripe_height() const { return img_.height / cfg_.stripes; }

  // Patches lying entirely inside stripe r.
  std::vector<std::size_t> stripe_patches(int r) const {
    const int top = r * stripe_height(), bottom = top + stripe_height();
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < grid_.rects.size(); ++i) {
      if (grid_.rects[i].y >= top && grid_.rects[i].y + grid_.rects[i].h <= bottom) out.push_back(i);
    }
    return out;
  }

  Eigen::VectorXd patch_color(ColorBlock block, const Rect& r) const {
    const auto& src = (block == ColorBlock::HsvJoint || block == ColorBlock::HsvChannel) ? hsv_ : lab_;
    std::vector<Color> px;
    std::vector<double> w;
    gather(r, src, px, w);
    if (block == ColorBlock::HsvJoint || block == ColorBlock::LabJoint) {
      return joint_color_histogram(px, w, cfg_.joint_bins);
    }
    return channel_histogram(px, w, cfg_.channel_bins);
  }

  Eigen::VectorXd patch_texture(TextureBlock block, const Rect& r) const {
    GrayPatch p(r.w, r.h);
    for (int y = 0; y < r.h; ++y)
      for (int x = 0; x < r.w; ++x) p.at(x, y) = gray_.at(r.x + x, r.y + y);
    if (block == TextureBlock::Hog) return hog_descriptor(p, cfg_.hog_bins);
    return siltp_descriptor(p, cfg_.siltp_tau, cfg_.siltp_radius, cfg_.siltp_neighbors);
  }

  Eigen::VectorXd region_scncd(int top, int height) const {
    std::vector<Color> px;
    std::vector<double> w;
    gather({0, top, img_.width, height}, img_.pixels, px, w);
    return scncd_descriptor(px, w, cfg_.palette, cfg_.scncd_hist_bins);
  }

 private:
  void gather(const Rect& r, const std::vector<Color>& src, std::vector<Color>& px, std::vector<double>& w) const {
    px.clear();
    w.clear();
    for (int y = r.y; y < r.y + r.h; ++y) {
      for (int x = r.x; x < r.x + r.w; ++x) {
        const auto i = static_cast<std::size_t>(y) * img_.width + x;
        px.push_back(src[i]);
        w.push_back(weights_[i]);
      }
    }
  }

  const Image& img_;
  const FeatureConfig& cfg_;
  PatchGrid grid_;
  std::vector<double> weights_;
  std::vector<Color> hsv_, lab_;
  GrayPatch gray_;
};

inline CueDescriptor assemble(const PreparedImage& prep, Cue cue, const FeatureConfig& cfg) {
  const auto [color_block, texture_block] = cue_layout(cue);
  const auto& rects = prep.grid().rects;
  std::vector<Eigen::VectorXd> colors, textures;
  for (const auto& r : rects) {
    if (color_block != ColorBlock::Scncd) colors.push_back(prep.patch_color(color_block, r));
    textures.push_back(prep.patch_texture(texture_block, r));
  }

  auto pick = [](const std::vector<Eigen::VectorXd>& all, const std::vector<std::size_t>& idx) {
    std::vector<Eigen::VectorXd> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(all[i]);
    return concat(out);
  };

  CueDescriptor d;
  d.cue = cue;
  d.normalized = true;
  const int stripe_h = prep.stripe_height();
  for (int r = 0; r < cfg.stripes; ++r) {
    const auto idx = prep.stripe_patches(r);
    Eigen::VectorXd color;
    if (color_block == ColorBlock::Scncd) {
      // Sub-stripes of stripe r, top to bottom.
      std::vector<Eigen::VectorXd> parts;
      const int sub_h = stripe_h / cfg.stripes;
      for (int s = 0; s < cfg.stripes; ++s) parts.push_back(prep.region_scncd(r * stripe_h + s * sub_h, sub_h));
      color = concat(parts);
    } else {
      color = pick(colors, idx);
    }
    d.local.push_back(join_blocks(std::move(color), pick(textures, idx)));
  }

  Eigen::VectorXd global_color;
  if (color_block == ColorBlock::Scncd) {
    std::vector<Eigen::VectorXd> parts;
    for (int r = 0; r < cfg.stripes; ++r) parts.push_back(prep.region_scncd(r * stripe_h, stripe_h));
    global_color = concat(parts);
  } else {
    global_color = concat(colors);
  }
  d.global = join_blocks(std::move(global_color), concat(textures));
  return d;
}

}  // namespace detail

// Extract one hand-crafted cue from a 48x128 image. `mask` may be null.
inline CueDescriptor assemble_cue(const Image& image, Cue cue, const ForegroundMask* mask = nullptr,
                                  const FeatureConfig& cfg = {}) {
  detail::cue_layout(cue);
  const detail::PreparedImage prep(image, mask, cfg);
  return detail::assemble(prep, cue, cfg);
}

// All six hand-crafted cues, sharing the per-image preprocessing.
inline std::vector<CueDescriptor> assemble_all_cues(const Image& image, const ForegroundMask* mask = nullptr,
                                                    const FeatureConfig& cfg = {}) {
  const detail::PreparedImage prep(image, mask, cfg);
  std::vector<CueDescriptor> out;
  for (int c = 0; c < 6; ++c) out.push_back(detail::assemble(prep, static_cast<Cue>(c), cfg));
  return out;
}

// ---- PCA ---------------------------------------------------------------------

struct PcaModel {
  Eigen::VectorXd mean;
  Eigen::MatrixXd basis;      // d_in x d_out, orthonormal columns
  Eigen::VectorXd variances;  // per component, sample variance (n-1 normalization)

  Eigen::Index d_in() const { return basis.rows(); }
  Eigen::Index d_out() const { return basis.cols(); }
};

namespace detail {

inline void fix_sign(Eigen::Ref<Eigen::VectorXd> v) {
  Eigen::Index arg = 0;
  v.cwiseAbs().maxCoeff(&arg);
  if (v[arg] < 0.0) v = -v;
}

// Extend `basis` columns [filled, cols) to an orthonormal set using unit vectors.
inline void complete_basis(Eigen::MatrixXd& basis, Eigen::Index filled) {
  Eigen::Index unit = 0;
  for (Eigen::Index k = filled; k < basis.cols(); ++k) {
    while (true) {
      Eigen::VectorXd v = Eigen::VectorXd::Unit(basis.rows(), unit++);
      for (int pass = 0; pass < 2; ++pass) v -= basis.leftCols(k) * (basis.leftCols(k).transpose() * v);
      if (v.norm() > 1e-6) {
        basis.col(k) = v.normalized();
        break;
      }
    }
  }
}

}  // namespace detail

// Top principal directions of mean-centered rows, no whitening.
inline PcaModel fit_pca(const Eigen::MatrixXd& data, Eigen::Index d_out = 120) {
  const Eigen::Index n = data.rows(), p = data.cols();
  if (n < 1 || p < 1) throw DataError("PCA needs a nonempty training matrix");
  if (d_out < 1) throw ConfigError("PCA output dimension must be positive");
  if (n < d_out) {
    log_warning("PCA: " + std::to_string(n) + " training rows < d=" + std::to_string(d_out) + ", reducing d");
    d_out = n;
  }
  d_out = std::min(d_out, p);

  PcaModel m;
  m.mean = data.colwise().mean().transpose();
  const Eigen::MatrixXd centered = data.rowwise() - m.mean.transpose();
  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;

  Eigen::VectorXd eigvals;
  Eigen::MatrixXd directions;
  if (n <= p) {
    // Gram trick: eigenvectors of X X^T map to principal directions via X^T u / sqrt(lambda).
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(centered * centered.transpose());
    eigvals = es.eigenvalues().reverse();
    const Eigen::MatrixXd u = es.eigenvectors().rowwise().reverse();
    directions = centered.transpose() * u;
  } else {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(centered.transpose() * centered);
    eigvals = es.eigenvalues().reverse();
    directions = es.eigenvectors().rowwise().reverse();
  }

  const double scale = std::max(eigvals.size() > 0 ? eigvals[0] : 0.0, 0.0);
  const double tol = std::max(scale, 1.0) * 1e-12 * static_cast<double>(std::max(n, p));
  m.basis = Eigen::MatrixXd::Zero(p, d_out);
  m.variances = Eigen::VectorXd::Zero(d_out);
  Eigen::Index filled = 0;
  for (; filled < d_out && filled < eigvals.size() && eigvals[filled] > tol; ++filled) {
    Eigen::VectorXd v = directions.col(filled);
    v.normalize();
    detail::fix_sign(v);
    m.basis.col(filled) = v;
    m.variances[filled] = eigvals[filled] / denom;
  }
  detail::complete_basis(m.basis, filled);
  return m;
}

inline PcaModel fit_pca(const FeatureMatrix& training, Eigen::Index d_out = 120) {
  return fit_pca(training.as_double(), d_out);
}

// Project onto the basis; optionally re-normalize to unit L2.
inline Eigen::VectorXd apply_pca(const PcaModel& model, const Eigen::VectorXd& v, bool renormalize = true) {
  if (v.size() != model.d_in()) throw DimError("PCA input dimension mismatch");
  Eigen::VectorXd out = model.basis.transpose() * (v - model.mean);
  if (renormalize) l2_normalize(out);
  return out;
}

// Row-wise apply_pca over a data matrix.
inline Eigen::MatrixXd apply_pca_rows(const PcaModel& model, const Eigen::MatrixXd& rows, bool renormalize = true) {
  if (rows.cols() != model.d_in()) throw DimError("PCA input dimension mismatch");
  Eigen::MatrixXd out = (rows.rowwise() - model.mean.transpose()) * model.basis;
  if (renormalize) {
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      const double n = out.row(i).norm();
      if (n > 0.0) out.row(i) /= n;
    }
  }
  return out;
}

// PCAM file: "PCAM", u32 version, u32 d_in, u32 d_out, then f32 mean (d_in),
// basis column-major (d_in x d_out), variances (d_out). Little-endian.
inline void write_pca(std::ostream& out, const PcaModel& m) {
  out.write("PCAM", 4);
  detail::put_u32(out, 1);
  detail::put_u32(out, static_cast<std::uint32_t>(m.d_in()));
  detail::put_u32(out, static_cast<std::uint32_t>(m.d_out()));
  for (Eigen::Index i = 0; i < m.mean.size(); ++i) detail::put_f32(out, static_cast<float>(m.mean[i]));
  for (Eigen::Index j = 0; j < m.basis.cols(); ++j)
    for (Eigen::Index i = 0; i < m.basis.rows(); ++i) detail::put_f32(out, static_cast<float>(m.basis(i, j)));
  for (Eigen::Index i = 0; i < m.variances.size(); ++i) detail::put_f32(out, static_cast<float>(m.variances[i]));
}

inline PcaModel read_pca(std::istream& in, const std::string& name = {}) {
  char magic[4] = {};
  std::uint32_t version = 0, d_in = 0, d_out = 0;
  if (!in.read(magic, 4) || std::string_view(magic, 4) != "PCAM") throw FormatError(name + ": not a PCAM file");
  if (!detail::get_u32(in, version) || version != 1) throw FormatError(name + ": unsupported PCAM version");
  if (!detail::get_u32(in, d_in) || !detail::get_u32(in, d_out)) throw FormatError(name + ": truncated header");
  if (d_in == 0 || d_out == 0 || d_out > d_in) throw FormatError(name + ": bad PCAM dimensions");
  PcaModel m;
  m.mean.resize(d_in);
  m.basis.resize(d_in, d_out);
  m.variances.resize(d_out);
  float f = 0.0f;
  auto next = [&]() {
    if (!detail::get_f32(in, f)) throw FormatError(name + ": truncated PCAM payload");
    if (!std::isfinite(f)) throw DataError(name + ": non-finite PCAM value");
    return static_cast<double>(f);
  };
  for (Eigen::Index i = 0; i < m.mean.size(); ++i) m.mean[i] = next();
  for (Eigen::Index j = 0; j < m.basis.cols(); ++j)
    for (Eigen::Index i = 0; i < m.basis.rows(); ++i) m.basis(i, j) = next();
  for (Eigen::Index i = 0; i < m.variances.size(); ++i) m.variances[i] = next();
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(name + ": trailing bytes");
  return m;
}

inline void save_pca(const std::string& path, const PcaModel& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  write_pca(out, m);
}

inline PcaModel load_pca(const std::string& path) {
  auto in = detail::open_binary(path);
  return read_pca(in, path);
}

}  // namespace reid
