#pragma once

// Polynomial-feature-map similarity: per-block Mahalanobis + bilinear terms,
// summed over stripes (local) and whole-image descriptors (global, weighted
// by gamma). Includes the feature-representation table, a gradient-descent
// trainer on a pairwise logistic loss, gallery ranking and model files.

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "reid/datamodel.hpp"
#include "reid/errors.hpp"
#include "reid/features.hpp"
#include "reid/random.hpp"

namespace reid {

// ---- representations -----------------------------------------------------------

enum class Scope { None, Global, Local, Both };

inline bool has_global(Scope s) { return s == Scope::Global || s == Scope::Both; }
inline bool has_local(Scope s) { return s == Scope::Local || s == Scope::Both; }

inline Scope parse_scope(std::string_view s) {
  if (s == "-" || s.empty()) return Scope::None;
  if (s == "G") return Scope::Global;
  if (s == "L") return Scope::Local;
  if (s == "GL" || s == "LG") return Scope::Both;
  throw ConfigError("unknown cue scope '" + std::string(s) + "' (expected G, L, GL or -)");
}

inline std::string scope_name(Scope s) {
  switch (s) {
    case Scope::Global:
      return "G";
    case Scope::Local:
      return "L";
    case Scope::Both:
      return "GL";
    default:
      return "-";
  }
}

// Region index kGlobalRegion marks a whole-image descriptor.
inline constexpr int kGlobalRegion = -1;

struct BlockKey {
  Cue cue = Cue::C1;
  int region = kGlobalRegion;

  bool is_global() const { return region == kGlobalRegion; }
  auto operator<=>(const BlockKey&) const = default;
};

// FEAT file stem for a block: <cue>_global or <cue>_local_r<k>.
inline std::string block_file_stem(const BlockKey& k) {
  return cue_name(k.cue) + (k.is_global() ? "_global" : "_local_r" + std::to_string(k.region));
}

struct Representation {
  std::string name;
  std::array<Scope, kCueCount> scopes{};

  Scope scope(Cue c) const { return scopes[static_cast<std::size_t>(c)]; }

  // Descriptor blocks the similarity needs: locals for every region, then globals.
  std::vector<BlockKey> blocks(int regions) const {
    std::vector<BlockKey> out;
    for (int c = 0; c < kCueCount; ++c) {
      if (has_local(scopes[c])) {
        for (int r = 0; r < regions; ++r) out.push_back({static_cast<Cue>(c), r});
      }
    }
    for (int c = 0; c < kCueCount; ++c) {
      if (has_global(scopes[c])) out.push_back({static_cast<Cue>(c), kGlobalRegion});
    }
    return out;
  }

  bool operator==(const Representation&) const = default;
};

// Rows F0..F12 over cues C1..C8.
inline Representation table1_representation(int index) {
  static constexpr std::array<std::array<std::string_view, kCueCount>, 13> kTable{{
      {"GL", "GL", "GL", "GL", "-", "-", "-", "-"},
      {"GL", "GL", "GL", "GL", "-", "-", "G", "-"},
      {"GL", "GL", "GL", "GL", "-", "-", "-", "G"},
      {"GL", "GL", "GL", "GL", "-", "-", "G", "G"},
      {"-", "-", "-", "-", "GL", "GL", "G", "-"},
      {"-", "-", "-", "-", "GL", "GL", "-", "G"},
      {"-", "-", "-", "-", "GL", "GL", "G", "G"},
      {"L", "L", "L", "L", "-", "-", "G", "-"},
      {"L", "L", "L", "L", "-", "-", "-", "G"},
      {"L", "L", "L", "L", "-", "-", "G", "G"},
      {"-", "-", "-", "-", "L", "L", "G", "-"},
      {"-", "-", "-", "-", "L", "L", "-", "G"},
      {"-", "-", "-", "-", "L", "L", "G", "G"},
  }};
  if (index < 0 || index > 12) throw ConfigError("representation index must be in 0..12");
  Representation rep;
  rep.name = "F" + std::to_string(index);
  for (int c = 0; c < kCueCount; ++c) rep.scopes[c] = parse_scope(kTable[index][c]);
  return rep;
}

// "F0".."F12", or a custom "name=C1:GL,C7:G" definition.
inline Representation parse_representation(std::string_view text) {
  const auto eq = text.find('=');
  if (eq == std::string_view::npos) {
    if (text.size() >= 2 && (text[0] == 'F' || text[0] == 'f')) {
      int idx = -1;
      const auto res = std::from_chars(text.data() + 1, text.data() + text.size(), idx);
      if (res.ec == std::errc{} && res.ptr == text.data() + text.size()) return table1_representation(idx);
    }
    throw ConfigError("unknown representation '" + std::string(text) + "'");
  }
  Representation rep;
  rep.name = std::string(detail::trim(text.substr(0, eq)));
  if (rep.name.empty()) throw ConfigError("custom representation needs a name");
  std::string_view rest = text.substr(eq + 1);
  for (auto item : detail::split_csv_line(rest)) {
    const auto colon = item.find(':');
    if (colon == std::string_view::npos) throw ConfigError("expected cue:scope in '" + std::string(item) + "'");
    rep.scopes[static_cast<std::size_t>(parse_cue(detail::trim(item.substr(0, colon))))] =
        parse_scope(detail::trim(item.substr(colon + 1)));
  }
  if (rep.blocks(1).empty()) throw ConfigError("representation '" + rep.name + "' uses no cue");
  return rep;
}

// Inverse of the custom form of parse_representation.
inline std::string representation_spec(const Representation& rep) {
  std::string out = rep.name + "=";
  bool first = true;
  for (int c = 0; c < kCueCount; ++c) {
    if (rep.scopes[c] == Scope::None) continue;
    if (!first) out += ',';
    out += cue_name(static_cast<Cue>(c)) + ":" + scope_name(rep.scopes[c]);
    first = false;
  }
  return out;
}

// ---- descriptors ---------------------------------------------------------------

using ImageDescriptors = std::map<BlockKey, Eigen::VectorXd>;

// Per-block descriptor matrices, one row per image, all blocks over the same images.
struct DescriptorBank {
  std::map<BlockKey, Eigen::MatrixXd> blocks;

  Eigen::Index images() const { return blocks.empty() ? 0 : blocks.begin()->second.rows(); }

  const Eigen::MatrixXd& block(const BlockKey& k) const {
    const auto it = blocks.find(k);
    if (it == blocks.end()) throw ConfigError("missing descriptor block " + block_file_stem(k));
    return it->second;
  }

  ImageDescriptors image(Eigen::Index i) const {
    ImageDescriptors out;
    for (const auto& [k, m] : blocks) out.emplace(k, m.row(i).transpose());
    return out;
  }

  // Rows in `rows` order, every block.
  DescriptorBank select(std::span<const Eigen::Index> rows) const {
    DescriptorBank out;
    for (const auto& [k, m] : blocks) {
      Eigen::MatrixXd sub(static_cast<Eigen::Index>(rows.size()), m.cols());
      for (std::size_t i = 0; i < rows.size(); ++i) sub.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
      out.blocks.emplace(k, std::move(sub));
    }
    return out;
  }

  static DescriptorBank from_images(std::span<const ImageDescriptors> images) {
    DescriptorBank out;
    if (images.empty()) return out;
    for (const auto& [k, v] : images.front()) {
      Eigen::MatrixXd m(static_cast<Eigen::Index>(images.size()), v.size());
      for (std::size_t i = 0; i < images.size(); ++i) {
        const auto it = images[i].find(k);
        if (it == images[i].end()) throw ConfigError("image " + std::to_string(i) + " lacks " + block_file_stem(k));
        if (it->second.size() != v.size()) throw DimError("descriptor size mismatch in " + block_file_stem(k));
        m.row(static_cast<Eigen::Index>(i)) = it->second.transpose();
      }
      out.blocks.emplace(k, std::move(m));
    }
    return out;
  }
};

// ---- model ---------------------------------------------------------------------

struct WeightBlock {
  BlockKey key;
  Eigen::MatrixXd wm;  // Mahalanobis part
  Eigen::MatrixXd wb;  // bilinear part
};

struct SimilarityModel {
  std::vector<WeightBlock> blocks;
  double bias = 0.0;
  double gamma = 1.1;

  static SimilarityModel zeros(std::span<const BlockKey> keys, std::span<const Eigen::Index> dims, double gamma) {
    SimilarityModel m;
    m.gamma = gamma;
    for (std::size_t i = 0; i < keys.size(); ++i) {
      m.blocks.push_back({keys[i], Eigen::MatrixXd::Zero(dims[i], dims[i]), Eigen::MatrixXd::Zero(dims[i], dims[i])});
    }
    return m;
  }

  double block_weight(const WeightBlock& b) const { return b.key.is_global() ? gamma : 1.0; }

  double max_asymmetry() const {
    double worst = 0.0;
    for (const auto& b : blocks) {
      worst = std::max({worst, (b.wm - b.wm.transpose()).cwiseAbs().maxCoeff(),
                        (b.wb - b.wb.transpose()).cwiseAbs().maxCoeff()});
    }
    return worst;
  }
};

// (a-b)^T W (a-b)
inline double score_mahalanobis(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Eigen::MatrixXd& w) {
  if (a.size() != b.size() || w.rows() != a.size() || w.cols() != a.size()) {
    throw DimError("score_mahalanobis: dimension mismatch");
  }
  const Eigen::VectorXd d = a - b;
  return d.dot(w * d);
}

// a^T W b + b^T W a
inline double score_bilinear(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Eigen::MatrixXd& w) {
  if (a.size() != b.size() || w.rows() != a.size() || w.cols() != a.size()) {
    throw DimError("score_bilinear: dimension mismatch");
  }
  return a.dot(w * b) + b.dot(w * a);
}

namespace detail {

inline const Eigen::VectorXd& lookup(const ImageDescriptors& img, const BlockKey& k) {
  const auto it = img.find(k);
  if (it == img.end()) throw ConfigError("image lacks descriptor " + block_file_stem(k));
  return it->second;
}

}  // namespace detail

struct ScoreParts {
  double local = 0.0;
  double global = 0.0;
};

inline ScoreParts score_parts(const SimilarityModel& model, const ImageDescriptors& a, const ImageDescriptors& b) {
  ScoreParts s;
  for (const auto& blk : model.blocks) {
    const auto& xa = detail::lookup(a, blk.key);
    const auto& xb = detail::lookup(b, blk.key);
    const double v = score_mahalanobis(xa, xb, blk.wm) + score_bilinear(xa, xb, blk.wb);
    (blk.key.is_global() ? s.global : s.local) += v;
  }
  return s;
}

// s_final = s_local + gamma * s_global
inline double score_pair(const SimilarityModel& model, const ImageDescriptors& a, const ImageDescriptors& b) {
  const auto s = score_parts(model, a, b);
  return s.local + model.gamma * s.global;
}

// Similarity of one bank row against many rows of another bank, vectorized per block.
inline Eigen::VectorXd score_rows(const SimilarityModel& model, const DescriptorBank& probe_bank, Eigen::Index probe,
                                  const DescriptorBank& gallery_bank, std::span<const Eigen::Index> gallery) {
  const auto n = static_cast<Eigen::Index>(gallery.size());
  Eigen::VectorXd total = Eigen::VectorXd::Zero(n);
  for (const auto& blk : model.blocks) {
    const auto& pm = probe_bank.block(blk.key);
    const auto& gm = gallery_bank.block(blk.key);
    if (pm.cols() != blk.wm.rows() || gm.cols() != blk.wm.rows()) throw DimError("descriptor/model size mismatch");
    const Eigen::VectorXd p = pm.row(probe).transpose();
    Eigen::MatrixXd g(n, gm.cols());
    for (Eigen::Index i = 0; i < n; ++i) g.row(i) = gm.row(gallery[static_cast<std::size_t>(i)]);
    const Eigen::MatrixXd diff = g.rowwise() - p.transpose();
    const Eigen::VectorXd quad = (diff * blk.wm).cwiseProduct(diff).rowwise().sum();
    const Eigen::VectorXd bil = g * ((blk.wb + blk.wb.transpose()) * p);
    total += model.block_weight(blk) * (quad + bil);
  }
  return total;
}

// ---- rankings ------------------------------------------------------------------

struct RankingList {
  std::size_t probe_index = 0;
  std::vector<std::size_t> order;  // gallery indices, best first
  std::vector<double> scores;      // similarity, indexed by gallery index

  std::size_t size() const { return order.size(); }
  double dissimilarity(std::size_t gallery_index) const { return -scores[gallery_index]; }

  // 1-based position of a gallery index.
  std::size_t rank_of(std::size_t gallery_index) const {
    const auto it = std::find(order.begin(), order.end(), gallery_index);
    if (it == order.end()) throw DataError("gallery index not in ranking");
    return static_cast<std::size_t>(it - order.begin()) + 1;
  }

  // Dissimilarities in rank order.
  std::vector<double> sorted_dissimilarities() const {
    std::vector<double> d;
    d.reserve(order.size());
    for (auto g : order) d.push_back(-scores[g]);
    return d;
  }
};

// Descending similarity, ties by ascending gallery index.
inline std::vector<std::size_t> order_by_similarity(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

inline RankingList make_ranking(std::size_t probe_index, std::vector<double> scores) {
  RankingList r;
  r.probe_index = probe_index;
  r.order = order_by_similarity(scores);
  r.scores = std::move(scores);
  return r;
}

inline RankingList rank_gallery(const SimilarityModel& model, const DescriptorBank& probe_bank, Eigen::Index probe,
                                const DescriptorBank& gallery_bank, std::span<const Eigen::Index> gallery) {
  if (gallery.empty()) throw DataError("rank_gallery: empty gallery");
  const Eigen::VectorXd s = score_rows(model, probe_bank, probe, gallery_bank, gallery);
  return make_ranking(static_cast<std::size_t>(probe), std::vector<double>(s.data(), s.data() + s.size()));
}

// Whole gallery bank as candidates.
inline RankingList rank_gallery(const SimilarityModel& model, const DescriptorBank& probe_bank, Eigen::Index probe,
                                const DescriptorBank& gallery_bank) {
  std::vector<Eigen::Index> all(static_cast<std::size_t>(gallery_bank.images()));
  std::iota(all.begin(), all.end(), Eigen::Index{0});
  return rank_gallery(model, probe_bank, probe, gallery_bank, all);
}

inline RankingList rank_gallery(const SimilarityModel& model, const ImageDescriptors& probe,
                                std::span<const ImageDescriptors> gallery) {
  if (gallery.empty()) throw DataError("rank_gallery: empty gallery");
  std::vector<double> s;
  s.reserve(gallery.size());
  for (const auto& g : gallery) s.push_back(score_pair(model, probe, g));
  return make_ranking(0, std::move(s));
}

// ---- training ------------------------------------------------------------------

struct TrainPair {
  Eigen::Index a = 0;  // row in the first bank
  Eigen::Index b = 0;  // row in the second bank
  int label = 1;       // +1 same identity, -1 different
};

struct TrainConfig {
  double lambda = 1e-3;
  int max_iterations = 500;
  double relative_tolerance = 1e-6;
  double gamma = 1.1;
  int negatives_per_positive = 10;
  std::uint64_t seed = 0;
};

// Positive pair (probe i, gallery i) for every identity i plus up to `ratio`
// distinct random negatives (probe i, gallery j != i).
inline std::vector<TrainPair> make_training_pairs(Eigen::Index identities, int ratio, Rng& rng) {
  std::vector<TrainPair> pairs;
  std::vector<Eigen::Index> others;
  for (Eigen::Index i = 0; i < identities; ++i) {
    pairs.push_back({i, i, 1});
    others.clear();
    for (Eigen::Index j = 0; j < identities; ++j)
      if (j != i) others.push_back(j);
    shuffle(others, rng);
    const auto take = std::min<std::size_t>(others.size(), static_cast<std::size_t>(std::max(ratio, 0)));
    for (std::size_t k = 0; k < take; ++k) pairs.push_back({i, others[k], -1});
  }
  return pairs;
}

// Sum over pairs of log(1 + exp(-y (s - b))) + lambda * sum ||W||_F^2.
class PairObjective {
 public:
  PairObjective(const DescriptorBank& bank_a, const DescriptorBank& bank_b, std::span<const BlockKey> keys,
                std::span<const TrainPair> pairs, double gamma, double lambda)
      : keys_(keys.begin(), keys.end()), gamma_(gamma), lambda_(lambda) {
    const auto n = static_cast<Eigen::Index>(pairs.size());
    labels_.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) labels_[i] = pairs[static_cast<std::size_t>(i)].label;
    for (const auto& k : keys_) {
      const auto& ma = bank_a.block(k);
      const auto& mb = bank_b.block(k);
      if (ma.cols() != mb.cols()) throw DimError("pair banks disagree on " + block_file_stem(k));
      Eigen::MatrixXd xa(n, ma.cols()), xb(n, mb.cols());
      for (Eigen::Index i = 0; i < n; ++i) {
        xa.row(i) = ma.row(pairs[static_cast<std::size_t>(i)].a);
        xb.row(i) = mb.row(pairs[static_cast<std::size_t>(i)].b);
      }
      xa_.push_back(std::move(xa));
      xb_.push_back(std::move(xb));
    }
  }

  std::vector<Eigen::Index> dims() const {
    std::vector<Eigen::Index> d;
    for (const auto& x : xa_) d.push_back(x.cols());
    return d;
  }

  const std::vector<BlockKey>& keys() const { return keys_; }
  double gamma() const { return gamma_; }

  // s_final for every pair.
  Eigen::VectorXd scores(const SimilarityModel& m) const {
    Eigen::VectorXd s = Eigen::VectorXd::Zero(labels_.size());
    for (std::size_t k = 0; k < keys_.size(); ++k) {
      const auto& xa = xa_[k];
      const auto& xb = xb_[k];
      const Eigen::MatrixXd diff = xa - xb;
      const auto& blk = m.blocks[k];
      const Eigen::VectorXd quad = (diff * blk.wm).cwiseProduct(diff).rowwise().sum();
      const Eigen::VectorXd bil =
          (xa * blk.wb).cwiseProduct(xb).rowwise().sum() + (xb * blk.wb).cwiseProduct(xa).rowwise().sum();
      s += m.block_weight(blk) * (quad + bil);
    }
    return s;
  }

  double loss(const SimilarityModel& m) const {
    const Eigen::VectorXd s = scores(m);
    double total = 0.0;
    for (Eigen::Index i = 0; i < s.size(); ++i) total += softplus(-labels_[i] * (s[i] - m.bias));
    for (const auto& b : m.blocks) total += lambda_ * (b.wm.squaredNorm() + b.wb.squaredNorm());
    return total;
  }

  // Gradient with the same layout as the model (bias slot holds dL/db).
  SimilarityModel gradient(const SimilarityModel& m) const {
    const Eigen::VectorXd s = scores(m);
    Eigen::VectorXd g(s.size());
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      const double y = labels_[i];
      g[i] = -y * sigmoid(-y * (s[i] - m.bias));
    }
    SimilarityModel grad = m;
    grad.bias = -g.sum();
    for (std::size_t k = 0; k < keys_.size(); ++k) {
      const auto& xa = xa_[k];
      const auto& xb = xb_[k];
      const Eigen::MatrixXd diff = xa - xb;
      const double c = m.block_weight(m.blocks[k]);
      const Eigen::MatrixXd gd = diff.array().colwise() * g.array();
      const Eigen::MatrixXd ga = xa.array().colwise() * g.array();
      const Eigen::MatrixXd gb = xb.array().colwise() * g.array();
      grad.blocks[k].wm = c * (gd.transpose() * diff) + 2.0 * lambda_ * m.blocks[k].wm;
      grad.blocks[k].wb = c * (ga.transpose() * xb + gb.transpose() * xa) + 2.0 * lambda_ * m.blocks[k].wb;
    }
    return grad;
  }

  static double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
  static double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
  }

 private:
  std::vector<BlockKey> keys_;
  std::vector<Eigen::MatrixXd> xa_, xb_;
  Eigen::VectorXd labels_;
  double gamma_;
  double lambda_;
};

namespace detail {

inline double squared_norm(const SimilarityModel& g) {
  double s = g.bias * g.bias;
  for (const auto& b : g.blocks) s += b.wm.squaredNorm() + b.wb.squaredNorm();
  return s;
}

// m + t * dir, symmetrized.
inline SimilarityModel step(const SimilarityModel& m, const SimilarityModel& dir, double t) {
  SimilarityModel out = m;
  out.bias += t * dir.bias;
  for (std::size_t k = 0; k < out.blocks.size(); ++k) {
    auto& b = out.blocks[k];
    b.wm += t * dir.blocks[k].wm;
    b.wb += t * dir.blocks[k].wb;
    b.wm = 0.5 * (b.wm + b.wm.transpose()).eval();
    b.wb = 0.5 * (b.wb + b.wb.transpose()).eval();
  }
  return out;
}

}  // namespace detail

struct TrainReport {
  int iterations = 0;
  std::vector<double> loss_history;  // loss after each accepted step, starting at the initial loss
};

// Full-batch gradient descent with Armijo backtracking from an all-zero model.
inline SimilarityModel train_model(const PairObjective& objective, const TrainConfig& cfg,
                                   TrainReport* report = nullptr) {
  const auto dims = objective.dims();
  SimilarityModel model = SimilarityModel::zeros(objective.keys(), dims, cfg.gamma);
  double loss = objective.loss(model);
  if (!std::isfinite(loss)) throw NumericError("non-finite initial training loss");
  TrainReport local_report;
  local_report.loss_history.push_back(loss);

  double t = 1.0;
  constexpr double kArmijo = 1e-4;
  for (int it = 0; it < cfg.max_iterations; ++it) {
    const SimilarityModel grad = objective.gradient(model);
    const double gnorm2 = detail::squared_norm(grad);
    if (!std::isfinite(gnorm2)) throw NumericError("non-finite gradient during training");
    if (gnorm2 == 0.0) break;
    t = std::min(t * 2.0, 1e6);
    SimilarityModel candidate;
    double cand_loss = 0.0;
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt) {
      candidate = detail::step(model, grad, -t);
      cand_loss = objective.loss(candidate);
      if (std::isfinite(cand_loss) && cand_loss <= loss - kArmijo * t * gnorm2) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;
    const double change = std::abs(loss - cand_loss) / std::max(std::abs(loss), 1e-12);
    model = std::move(candidate);
    loss = cand_loss;
    local_report.loss_history.push_back(loss);
    local_report.iterations = it + 1;
    if (change < cfg.relative_tolerance) break;
  }
  if (!std::isfinite(loss)) throw NumericError("non-finite training loss");
  if (report) *report = std::move(local_report);
  return model;
}

inline void check_two_classes(std::span<const TrainPair> pairs) {
  bool pos = false, neg = false;
  for (const auto& p : pairs) {
    if (p.label != 1 && p.label != -1) throw DataError("pair labels must be +1 or -1");
    (p.label > 0 ? pos : neg) = true;
  }
  if (!pos || !neg) throw DataError("training pairs must contain both positive and negative labels");
}

// Train on explicit pairs between rows of bank_a and bank_b.
inline SimilarityModel train_model(const Representation& rep, int regions, const DescriptorBank& bank_a,
                                   const DescriptorBank& bank_b, std::span<const TrainPair> pairs,
                                   const TrainConfig& cfg, TrainReport* report = nullptr) {
  check_two_classes(pairs);
  const auto keys = rep.blocks(regions);
  const PairObjective objective(bank_a, bank_b, keys, pairs, cfg.gamma, cfg.lambda);
  return train_model(objective, cfg, report);
}

// Train on aligned probe/gallery banks (row i of each is identity i) with
// sampled negatives.
inline SimilarityModel train_model(const Representation& rep, int regions, const DescriptorBank& probes,
                                   const DescriptorBank& gallery, const TrainConfig& cfg,
                                   TrainReport* report = nullptr) {
  if (probes.images() != gallery.images()) throw DataError("probe and gallery banks must be aligned by identity");
  Rng rng(cfg.seed);
  const auto pairs = make_training_pairs(probes.images(), cfg.negatives_per_positive, rng);
  return train_model(rep, regions, probes, gallery, pairs, cfg, report);
}

// Fraction of pairs where sign(s - b) agrees with the label.
inline double pair_accuracy(const SimilarityModel& model, const DescriptorBank& bank_a, const DescriptorBank& bank_b,
                            std::span<const TrainPair> pairs) {
  if (pairs.empty()) return 0.0;
  std::size_t ok = 0;
  for (const auto& p : pairs) {
    const double s = score_pair(model, bank_a.image(p.a), bank_b.image(p.b)) - model.bias;
    if ((s > 0.0) == (p.label > 0)) ++ok;
  }
  return static_cast<double>(ok) / static_cast<double>(pairs.size());
}

// ---- model files ---------------------------------------------------------------

inline void write_model(std::ostream& out, const SimilarityModel& m) {
  out.write("SIMW", 4);
  detail::put_u32(out, 1);
  detail::put_f32(out, static_cast<float>(m.gamma));
  detail::put_f32(out, static_cast<float>(m.bias));
  detail::put_u32(out, static_cast<std::uint32_t>(m.blocks.size()));
  for (const auto& b : m.blocks) {
    detail::put_i32(out, b.key.region);
    detail::put_u32(out, static_cast<std::uint32_t>(b.key.cue));
    detail::put_u32(out, static_cast<std::uint32_t>(b.wm.rows()));
    for (const auto* w : {&b.wm, &b.wb})
      for (Eigen::Index i = 0; i < w->rows(); ++i)
        for (Eigen::Index j = 0; j < w->cols(); ++j) detail::put_f32(out, static_cast<float>((*w)(i, j)));
  }
  if (!out) throw DataError("failed to write similarity model");
}

inline SimilarityModel read_model(std::istream& in, const std::string& name = {}) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), 4) || std::string_view(magic.data(), 4) != "SIMW") {
    throw FormatError("bad SIMW magic in " + name);
  }
  std::uint32_t version = 0, count = 0;
  float gamma = 0, bias = 0;
  if (!detail::get_u32(in, version) || !detail::get_f32(in, gamma) || !detail::get_f32(in, bias) ||
      !detail::get_u32(in, count)) {
    throw FormatError("truncated SIMW header in " + name);
  }
  if (version != 1) throw FormatError("unsupported SIMW version");
  SimilarityModel m;
  m.gamma = gamma;
  m.bias = bias;
  for (std::uint32_t k = 0; k < count; ++k) {
    std::int32_t region = 0;
    std::uint32_t cue = 0, d = 0;
    if (!detail::get_i32(in, region) || !detail::get_u32(in, cue) || !detail::get_u32(in, d)) {
      throw FormatError("truncated SIMW block header in " + name);
    }
    if (cue >= kCueCount || region < kGlobalRegion) throw FormatError("invalid SIMW block tag in " + name);
    WeightBlock b{{static_cast<Cue>(cue), region}, Eigen::MatrixXd(d, d), Eigen::MatrixXd(d, d)};
    for (auto* w : {&b.wm, &b.wb})
      for (Eigen::Index i = 0; i < w->rows(); ++i)
        for (Eigen::Index j = 0; j < w->cols(); ++j) {
          float v = 0;
          if (!detail::get_f32(in, v)) throw FormatError("truncated SIMW weights in " + name);
          if (!std::isfinite(v)) throw DataError("non-finite SIMW weight in " + name);
          (*w)(i, j) = v;
        }
    m.blocks.push_back(std::move(b));
  }
  return m;
}

inline void save_model(const std::string& path, const SimilarityModel& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot create " + path);
  write_model(out, m);
}

inline SimilarityModel load_model(const std::string& path) {
  auto in = detail::open_binary(path);
  return read_model(in, path);
}

}  // namespace reid
