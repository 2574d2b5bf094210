#pragma once

// On-disk formats and dataset structures: FEAT descriptor matrices, the
// identities CSV, PGM foreground masks, and identity-disjoint splits.

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>

#include "reid/errors.hpp"
#include "reid/random.hpp"

namespace reid {

enum class Camera { A, B };

struct ImageRecord {
  std::string image_id;
  int person_id = 0;
  Camera camera = Camera::A;
  std::optional<std::string> source_path;
};

using FloatMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct FeatureMatrix {
  FloatMatrix values;
  std::string descriptor_name;

  std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(values.cols()); }
  Eigen::MatrixXd as_double() const { return values.cast<double>(); }
};

struct ForegroundMask {
  static constexpr int kWidth = 48;
  static constexpr int kHeight = 128;

  int width = kWidth;
  int height = kHeight;
  std::vector<double> weights;  // row-major, each in [0, 1]

  double at(int x, int y) const { return weights[static_cast<std::size_t>(y) * width + x]; }
  double mean() const {
    if (weights.empty()) return 0.0;
    double s = 0.0;
    for (double w : weights) s += w;
    return s / static_cast<double>(weights.size());
  }
};

// One probe (camera A) and one gallery (camera B) image per identity, as
// indices into the record list the split was built from.
struct ViewPair {
  std::size_t probe = 0;
  std::size_t gallery = 0;

  bool operator==(const ViewPair&) const = default;
};

struct Split {
  std::vector<int> train_ids;
  std::vector<int> test_ids;
  std::uint64_t seed = 0;
  std::map<int, ViewPair> views;

  bool operator==(const Split&) const = default;
};

namespace detail {

inline constexpr std::array<char, 4> kFeatMagic{'F', 'E', 'A', 'T'};
inline constexpr std::uint32_t kFeatVersion = 1;

inline void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                              static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  out.write(b.data(), 4);
}

inline void put_i32(std::ostream& out, std::int32_t v) { put_u32(out, static_cast<std::uint32_t>(v)); }

inline void put_f32(std::ostream& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

inline bool get_u32(std::istream& in, std::uint32_t& v) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) return false;
  v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
      (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  return true;
}

inline bool get_i32(std::istream& in, std::int32_t& v) {
  std::uint32_t u = 0;
  if (!get_u32(in, u)) return false;
  v = static_cast<std::int32_t>(u);
  return true;
}

inline bool get_f32(std::istream& in, float& v) {
  std::uint32_t u = 0;
  if (!get_u32(in, u)) return false;
  v = std::bit_cast<float>(u);
  return true;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename T>
T parse_number(std::string_view s, std::string_view what) {
  T v{};
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, v);
  if (res.ec != std::errc{} || res.ptr != end) {
    throw FormatError("cannot parse " + std::string(what) + " from '" + std::string(s) + "'");
  }
  return v;
}

inline std::ifstream open_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return in;
}

}  // namespace detail

// ---- FEAT ----------------------------------------------------------------

inline void write_feature_matrix(std::ostream& out, const FeatureMatrix& m) {
  out.write(detail::kFeatMagic.data(), 4);
  detail::put_u32(out, detail::kFeatVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(m.rows()));
  detail::put_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.values.rows(); ++i)
    for (Eigen::Index j = 0; j < m.values.cols(); ++j) detail::put_f32(out, m.values(i, j));
  if (!out) throw DataError("write failed for feature matrix " + m.descriptor_name);
}

inline FeatureMatrix read_feature_matrix(std::istream& in, std::string name = {}) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), 4) || magic != detail::kFeatMagic) throw FormatError("bad FEAT magic in " + name);
  std::uint32_t version = 0, rows = 0, cols = 0;
  if (!detail::get_u32(in, version) || !detail::get_u32(in, rows) || !detail::get_u32(in, cols)) {
    throw FormatError("truncated FEAT header in " + name);
  }
  if (version != detail::kFeatVersion) throw FormatError("unsupported FEAT version " + std::to_string(version));

  const std::uint64_t count = static_cast<std::uint64_t>(rows) * cols;
  std::vector<char> payload(count * 4);
  if (count > 0 && !in.read(payload.data(), static_cast<std::streamsize>(payload.size()))) {
    throw FormatError("truncated FEAT payload in " + name);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after FEAT payload in " + name);

  FeatureMatrix m;
  m.descriptor_name = std::move(name);
  m.values.resize(rows, cols);
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto* b = reinterpret_cast<const unsigned char*>(payload.data() + 4 * k);
    const std::uint32_t u = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                            (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    const float v = std::bit_cast<float>(u);
    if (!std::isfinite(v)) throw DataError("non-finite value in FEAT payload of " + m.descriptor_name);
    m.values(static_cast<Eigen::Index>(k / cols), static_cast<Eigen::Index>(k % cols)) = v;
  }
  return m;
}

inline FeatureMatrix load_feature_matrix(const std::string& path) {
  auto in = detail::open_binary(path);
  return read_feature_matrix(in, path);
}

inline void save_feature_matrix(const std::string& path, const FeatureMatrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot create " + path);
  write_feature_matrix(out, m);
}

// ---- identities CSV -------------------------------------------------------

inline Camera parse_camera(std::string_view token) {
  if (token == "A") return Camera::A;
  if (token == "B") return Camera::B;
  throw FormatError("unknown camera '" + std::string(token) + "' (expected A or B)");
}

inline char camera_char(Camera c) { return c == Camera::A ? 'A' : 'B'; }

inline std::vector<ImageRecord> read_identities(std::istream& in) {
  std::vector<ImageRecord> records;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = detail::trim(line);
    if (body.empty()) continue;
    const auto fields = detail::split_csv_line(body);
    if (line_no == 1 && fields[0] == "image_id") continue;
    if (fields.size() < 3 || fields.size() > 4) {
      throw FormatError("identities line " + std::to_string(line_no) + ": expected image_id,person_id,camera");
    }
    ImageRecord r;
    r.image_id = std::string(fields[0]);
    if (r.image_id.empty()) throw FormatError("identities line " + std::to_string(line_no) + ": empty image_id");
    r.person_id = detail::parse_number<int>(fields[1], "person_id");
    r.camera = parse_camera(fields[2]);
    if (fields.size() == 4 && !fields[3].empty()) r.source_path = std::string(fields[3]);
    if (!seen.insert(r.image_id).second) throw DataError("duplicate image_id '" + r.image_id + "'");
    records.push_back(std::move(r));
  }
  return records;
}

inline std::vector<ImageRecord> load_identities(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  return read_identities(in);
}

inline void write_identities(std::ostream& out, const std::vector<ImageRecord>& records) {
  out << "image_id,person_id,camera\n";
  for (const auto& r : records) out << r.image_id << ',' << r.person_id << ',' << camera_char(r.camera) << '\n';
}

// ---- splits ---------------------------------------------------------------

inline std::vector<int> distinct_identities(const std::vector<ImageRecord>& records) {
  std::set<int> ids;
  for (const auto& r : records) ids.insert(r.person_id);
  return {ids.begin(), ids.end()};
}

// Identity-disjoint 50/50 partition (train gets floor(N/2)), plus one random
// camera-A probe and camera-B gallery image per identity.
inline Split make_split(const std::vector<ImageRecord>& records, std::uint64_t seed) {
  auto ids = distinct_identities(records);
  if (ids.size() < 2) throw DataError("make_split needs at least 2 identities, got " + std::to_string(ids.size()));

  std::map<int, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> by_id;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& slot = by_id[records[i].person_id];
    (records[i].camera == Camera::A ? slot.first : slot.second).push_back(i);
  }

  Rng rng(seed);
  shuffle(ids, rng);
  Split split;
  split.seed = seed;
  const auto n_train = ids.size() / 2;
  split.train_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.test_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  std::sort(split.train_ids.begin(), split.train_ids.end());
  std::sort(split.test_ids.begin(), split.test_ids.end());

  for (const auto& [pid, views] : by_id) {
    if (views.first.empty() || views.second.empty()) {
      throw DataError("identity " + std::to_string(pid) + " lacks an image from both cameras");
    }
    ViewPair vp;
    vp.probe = views.first[uniform_index(rng, views.first.size())];
    vp.gallery = views.second[uniform_index(rng, views.second.size())];
    split.views.emplace(pid, vp);
  }
  return split;
}

// Re-split a set of identities 50/50 (first half keeps floor(N/2)).
inline std::pair<std::vector<int>, std::vector<int>> halve_identities(std::vector<int> ids, std::uint64_t seed) {
  if (ids.size() < 2) throw DataError("cannot halve fewer than 2 identities");
  Rng rng(seed);
  shuffle(ids, rng);
  const auto half = static_cast<std::ptrdiff_t>(ids.size() / 2);
  std::vector<int> a(ids.begin(), ids.begin() + half), b(ids.begin() + half, ids.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return {std::move(a), std::move(b)};
}

// ---- PNM (masks and images) ----------------------------------------------

struct PnmImage {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<unsigned char> data;  // row-major, interleaved
};

namespace detail {

inline std::string pnm_token(std::istream& in) {
  std::string tok;
  int c = 0;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

}  // namespace detail

inline PnmImage read_pnm(std::istream& in, const std::string& name = {}) {
  const auto magic = detail::pnm_token(in);
  PnmImage img;
  if (magic == "P5") {
    img.channels = 1;
  } else if (magic == "P6") {
    img.channels = 3;
  } else {
    throw FormatError(name + ": not a binary PGM/PPM file");
  }
  const auto w = detail::pnm_token(in), h = detail::pnm_token(in), maxval = detail::pnm_token(in);
  if (w.empty() || h.empty() || maxval.empty()) throw FormatError(name + ": truncated PNM header");
  img.width = detail::parse_number<int>(w, "PNM width");
  img.height = detail::parse_number<int>(h, "PNM height");
  if (img.width <= 0 || img.height <= 0) throw FormatError(name + ": empty PNM image");
  if (detail::parse_number<int>(maxval, "PNM maxval") != 255) throw FormatError(name + ": only maxval 255 supported");
  img.data.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
  if (!in.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()))) {
    throw FormatError(name + ": truncated PNM payload");
  }
  return img;
}

inline PnmImage load_pnm(const std::string& path) {
  auto in = detail::open_binary(path);
  return read_pnm(in, path);
}

inline void write_pnm(std::ostream& out, const PnmImage& img) {
  out << (img.channels == 1 ? "P5" : "P6") << '\n' << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
}

inline void save_pnm(const std::string& path, const PnmImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot create " + path);
  write_pnm(out, img);
}

inline ForegroundMask mask_from_pgm(const PnmImage& pgm) {
  if (pgm.channels != 1) throw FormatError("mask must be a grayscale PGM");
  ForegroundMask m;
  m.weights.resize(static_cast<std::size_t>(m.width) * m.height);
  for (int y = 0; y < m.height; ++y) {
    const int sy = y * pgm.height / m.height;
    for (int x = 0; x < m.width; ++x) {
      const int sx = x * pgm.width / m.width;
      m.weights[static_cast<std::size_t>(y) * m.width + x] =
          pgm.data[static_cast<std::size_t>(sy) * pgm.width + sx] / 255.0;
    }
  }
  return m;
}

inline ForegroundMask read_mask(std::istream& in, const std::string& name = {}) {
  return mask_from_pgm(read_pnm(in, name));
}

inline ForegroundMask load_mask(const std::string& path) {
  auto in = detail::open_binary(path);
  return read_mask(in, path);
}

}  // namespace reid
