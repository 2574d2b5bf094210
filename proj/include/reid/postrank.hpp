#pragma once

// Discriminant context information analysis (DCIA) post-ranking: content sets
// from a knee in the dissimilarity curve, context sets from K-common nearest
// neighbors, removal of the shared-appearance subspace, and re-ranking of the
// content prefix with a model trained on the discriminant vectors.

#include <algorithm>
#include <cmath>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>

#include "reid/errors.hpp"
#include "reid/simlearn.hpp"

namespace reid {

struct DciaConfig {
  std::size_t window = 25;      // T: knee search window
  std::size_t context_k = 13;   // K: common neighbors kept
  double energy = 0.35;         // k: common-appearance energy fraction
  std::size_t min_content = 2;  // probes with fewer content members are not used for training
};

// ---- content ---------------------------------------------------------------------

struct KneePoint {
  std::size_t m = 1;  // 1-based count of points up to and including the knee
  double threshold = 0.0;
};

// Knee of an ascending dissimilarity curve over the first `window` points: the
// point lying farthest below the chord joining the first and last point.
// Ties go to the smallest index; a curve with no point below the chord gives m=1.
inline KneePoint knee_point(std::span<const double> sorted, std::size_t window = 25) {
  if (sorted.empty()) throw ContractError("knee_point: empty curve");
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i] < sorted[i - 1]) throw ContractError("knee_point: dissimilarities must be ascending");
  }
  const std::size_t t = std::min(window, sorted.size());
  if (t < 3) return {1, sorted[0]};
  const double x1 = 1.0, y1 = sorted[0];
  const double xt = static_cast<double>(t), yt = sorted[t - 1];
  const double dx = xt - x1, dy = yt - y1;
  const double len = std::hypot(dx, dy);
  std::size_t best = 0;
  double best_dist = 0.0;
  for (std::size_t i = 0; i < t; ++i) {
    // Signed perpendicular distance, positive below the chord.
    const double dist = (dy * (static_cast<double>(i + 1) - x1) - dx * (sorted[i] - y1)) / len;
    if (dist > best_dist) {
      best_dist = dist;
      best = i;
    }
  }
  return {best + 1, sorted[best]};
}

struct ContentSet {
  std::size_t probe_index = 0;
  std::vector<std::size_t> members;  // prefix of the initial ranking
  double threshold = 0.0;

  std::size_t m() const { return members.size(); }
  bool contains(std::size_t g) const { return std::find(members.begin(), members.end(), g) != members.end(); }
};

inline ContentSet content_set(const RankingList& ranking, std::size_t window = 25) {
  if (ranking.order.empty()) throw DataError("content_set: empty ranking");
  const auto d = ranking.sorted_dissimilarities();
  const auto knee = knee_point(d, window);
  ContentSet c;
  c.probe_index = ranking.probe_index;
  c.threshold = knee.threshold;
  c.members.assign(ranking.order.begin(), ranking.order.begin() + static_cast<std::ptrdiff_t>(knee.m));
  return c;
}

// ---- context ---------------------------------------------------------------------

struct ContextSet {
  std::size_t probe_index = 0;
  std::vector<std::vector<std::size_t>> per_match;  // aligned with content members
  std::vector<std::size_t> merged;                  // excludes content members
};

// Ranking of the gallery without image g, as seen from gallery image g.
using NeighborRanker = std::function<RankingList(std::size_t g)>;

// K-common neighbors of the probe and each correlated match. The probe-side
// neighborhood is the top-`window` of its ranking; a match-side neighborhood is
// the knee-limited top of the match's own ranking. Candidates are ordered by
// co-occurrence count, then by similarity to the probe (flat histograms), then
// by index; the best K form the context before content duplicates are dropped.
inline ContextSet context_set(const RankingList& probe_ranking, const ContentSet& content,
                              const NeighborRanker& rank_from, std::size_t k = 13, std::size_t window = 25) {
  ContextSet ctx;
  ctx.probe_index = probe_ranking.probe_index;
  const std::size_t t = std::min(window, probe_ranking.order.size());
  const std::unordered_set<std::size_t> probe_side(probe_ranking.order.begin(),
                                                   probe_ranking.order.begin() + static_cast<std::ptrdiff_t>(t));

  std::map<std::size_t, std::size_t> counts;
  std::vector<std::vector<std::size_t>> candidates;
  for (auto g : content.members) {
    const RankingList rg = rank_from(g);
    std::vector<std::size_t> found;
    if (!rg.order.empty()) {
      const auto knee = knee_point(rg.sorted_dissimilarities(), window);
      for (std::size_t i = 0; i < knee.m; ++i) {
        const auto x = rg.order[i];
        if (x != g && probe_side.contains(x)) {
          found.push_back(x);
          ++counts[x];
        }
      }
    }
    candidates.push_back(std::move(found));
  }

  std::vector<std::size_t> ranked;
  for (const auto& [x, n] : counts) ranked.push_back(x);
  std::sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) {
    if (counts[a] != counts[b]) return counts[a] > counts[b];
    if (probe_ranking.scores[a] != probe_ranking.scores[b]) return probe_ranking.scores[a] > probe_ranking.scores[b];
    return a < b;
  });
  if (ranked.size() > k) ranked.resize(k);
  const std::unordered_set<std::size_t> kept(ranked.begin(), ranked.end());

  for (const auto& found : candidates) {
    std::vector<std::size_t> mine;
    for (auto x : found)
      if (kept.contains(x)) mine.push_back(x);
    ctx.per_match.push_back(std::move(mine));
  }
  for (auto x : ranked)
    if (!content.contains(x)) ctx.merged.push_back(x);
  return ctx;
}

// ---- discriminant removal ------------------------------------------------------------

struct DiscriminantBlock {
  Eigen::MatrixXd centered;  // D_p: d x l, one column per vector, rows sum to zero
  Eigen::MatrixXd basis;     // P: d x k, orthonormal common-appearance directions
  Eigen::MatrixXd discriminant;  // D_p - P P^T D_p

  Eigen::Index components() const { return basis.cols(); }
};

// `vectors` holds one feature vector per column: probe, content, context.
inline DiscriminantBlock discriminant_removal(const Eigen::MatrixXd& vectors, double energy = 0.35) {
  if (vectors.cols() < 2) throw ContractError("discriminant_removal needs at least 2 vectors");
  if (!(energy > 0.0 && energy <= 1.0)) throw ContractError("energy fraction must be in (0, 1]");
  DiscriminantBlock out;
  out.centered = vectors.colwise() - vectors.rowwise().mean();

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(out.centered, Eigen::ComputeThinU);
  const Eigen::VectorXd mass = svd.singularValues().array().square();
  const double total = mass.sum();
  const double scale = std::max(out.centered.cwiseAbs().maxCoeff(), 1.0);
  Eigen::Index k = 0;
  if (total > 1e-24 * scale * scale) {
    const double goal = energy * total * (1.0 - 1e-12);
    double acc = 0.0;
    while (k < mass.size() && acc < goal) acc += mass[k++];
  }
  out.basis = svd.matrixU().leftCols(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    Eigen::Index arg = 0;
    out.basis.col(j).cwiseAbs().maxCoeff(&arg);
    if (out.basis(arg, j) < 0.0) out.basis.col(j) *= -1.0;
  }
  out.discriminant = out.centered - out.basis * (out.basis.transpose() * out.centered);
  return out;
}

// ---- the DCIA pipeline per probe ------------------------------------------------------

struct DciaResult {
  ContentSet content;
  ContextSet context;
  DiscriminantBlock block;  // columns: probe, content members, merged context
};

// Vector rows: probe_vec is the probe; gallery_vecs has one row per gallery image.
inline DciaResult dcia(const RankingList& probe_ranking, const Eigen::VectorXd& probe_vec,
                       const Eigen::MatrixXd& gallery_vecs, const NeighborRanker& rank_from,
                       const DciaConfig& cfg = {}) {
  DciaResult r;
  r.content = content_set(probe_ranking, cfg.window);
  r.context = context_set(probe_ranking, r.content, rank_from, cfg.context_k, cfg.window);
  const auto l = static_cast<Eigen::Index>(1 + r.content.m() + r.context.merged.size());
  Eigen::MatrixXd d(probe_vec.size(), l);
  d.col(0) = probe_vec;
  Eigen::Index c = 1;
  for (auto g : r.content.members) d.col(c++) = gallery_vecs.row(static_cast<Eigen::Index>(g)).transpose();
  for (auto g : r.context.merged) d.col(c++) = gallery_vecs.row(static_cast<Eigen::Index>(g)).transpose();
  r.block = discriminant_removal(d, cfg.energy);
  return r;
}

// Gallery-vs-gallery ranking for context sets, excluding the query image.
inline NeighborRanker gallery_neighbor_ranker(const SimilarityModel& model, const DescriptorBank& gallery) {
  return [&model, &gallery](std::size_t g) {
    std::vector<Eigen::Index> others;
    for (Eigen::Index i = 0; i < gallery.images(); ++i)
      if (static_cast<std::size_t>(i) != g) others.push_back(i);
    RankingList out;
    out.probe_index = g;
    out.scores.assign(static_cast<std::size_t>(gallery.images()), -std::numeric_limits<double>::infinity());
    if (others.empty()) return out;
    const Eigen::VectorXd s = score_rows(model, gallery, static_cast<Eigen::Index>(g), gallery, others);
    std::vector<double> sub(s.data(), s.data() + s.size());
    for (auto pos : order_by_similarity(sub)) out.order.push_back(static_cast<std::size_t>(others[pos]));
    for (std::size_t i = 0; i < others.size(); ++i) out.scores[static_cast<std::size_t>(others[i])] = sub[i];
    return out;
  };
}

// All blocks of a bank side by side, in block-key order.
inline Eigen::MatrixXd concatenated(const DescriptorBank& bank) {
  Eigen::Index cols = 0;
  for (const auto& [k, m] : bank.blocks) cols += m.cols();
  Eigen::MatrixXd out(bank.images(), cols);
  Eigen::Index off = 0;
  for (const auto& [k, m] : bank.blocks) {
    out.middleCols(off, m.cols()) = m;
    off += m.cols();
  }
  return out;
}

// ---- re-ranking training and application ----------------------------------------------

// Post-rank models hold one global block over the whole discriminant vector.
inline constexpr BlockKey kDiscriminantBlock{Cue::C1, kGlobalRegion};

// Pairs (probe x*, content member x*) labeled by identity, over training probes
// with at least `min_content` correlated matches. truth[i] is the true gallery
// index of results[i]'s probe.
inline SimilarityModel train_postrank_model(std::span<const DciaResult> results, std::span<const std::size_t> truth,
                                            const TrainConfig& cfg, std::size_t min_content = 2) {
  if (results.size() != truth.size()) throw DataError("train_postrank_model: results/truth misaligned");
  std::vector<Eigen::VectorXd> a, b;
  std::vector<TrainPair> pairs;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    if (r.content.m() < min_content) continue;
    for (std::size_t j = 0; j < r.content.m(); ++j) {
      const auto row = static_cast<Eigen::Index>(pairs.size());
      a.push_back(r.block.discriminant.col(0));
      b.push_back(r.block.discriminant.col(static_cast<Eigen::Index>(j + 1)));
      pairs.push_back({row, row, r.content.members[j] == truth[i] ? 1 : -1});
    }
  }
  if (pairs.empty()) throw DataError("no training probe has enough correlated matches for post-ranking");
  check_two_classes(pairs);
  const auto dim = a.front().size();
  DescriptorBank bank_a, bank_b;
  Eigen::MatrixXd ma(static_cast<Eigen::Index>(a.size()), dim), mb(static_cast<Eigen::Index>(b.size()), dim);
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma.row(static_cast<Eigen::Index>(i)) = a[i].transpose();
    mb.row(static_cast<Eigen::Index>(i)) = b[i].transpose();
  }
  bank_a.blocks.emplace(kDiscriminantBlock, std::move(ma));
  bank_b.blocks.emplace(kDiscriminantBlock, std::move(mb));
  const std::vector<BlockKey> keys{kDiscriminantBlock};
  TrainConfig post_cfg = cfg;
  post_cfg.gamma = 1.0;
  const PairObjective objective(bank_a, bank_b, keys, pairs, post_cfg.gamma, post_cfg.lambda);
  return train_model(objective, post_cfg);
}

// Similarity of the probe's discriminant vector to each content member's.
inline std::vector<double> postrank_scores(const DiscriminantBlock& block, std::size_t m,
                                           const SimilarityModel& postrank_model) {
  ImageDescriptors probe{{kDiscriminantBlock, block.discriminant.col(0)}};
  std::vector<double> out;
  for (std::size_t j = 0; j < m; ++j) {
    ImageDescriptors g{{kDiscriminantBlock, block.discriminant.col(static_cast<Eigen::Index>(j + 1))}};
    out.push_back(score_pair(postrank_model, probe, g));
  }
  return out;
}

// Re-order the content prefix by `new_scores` (aligned with content members,
// higher is better, ties keep initial order); positions past m are untouched.
inline RankingList postrank(const RankingList& initial, const ContentSet& content,
                            std::span<const double> new_scores) {
  if (new_scores.size() != content.m()) throw DataError("postrank: one new score per content member required");
  for (std::size_t j = 0; j < content.m(); ++j) {
    if (initial.order[j] != content.members[j]) throw ContractError("postrank: content must be a ranking prefix");
  }
  RankingList out = initial;
  const auto pos = order_by_similarity(new_scores);
  for (std::size_t j = 0; j < pos.size(); ++j) out.order[j] = content.members[pos[j]];
  return out;
}

inline RankingList postrank(const RankingList& initial, const DciaResult& dcia_result,
                            const SimilarityModel& postrank_model) {
  const auto s = postrank_scores(dcia_result.block, dcia_result.content.m(), postrank_model);
  return postrank(initial, dcia_result.content, s);
}

// ---- ranking CSV ----------------------------------------------------------------------

// Rankings with the image ids they refer to; gallery index i is gallery_ids[i].
struct RankingTable {
  std::vector<std::string> probe_ids;
  std::vector<std::string> gallery_ids;
  std::vector<RankingList> rankings;  // aligned with probe_ids
};

inline void write_rankings(std::ostream& out, const RankingTable& t) {
  out << "probe_id,rank,gallery_id,score\n";
  char buf[64];
  for (std::size_t p = 0; p < t.rankings.size(); ++p) {
    const auto& r = t.rankings[p];
    for (std::size_t i = 0; i < r.order.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.9g", r.scores[r.order[i]]);
      out << t.probe_ids[p] << ',' << (i + 1) << ',' << t.gallery_ids[r.order[i]] << ',' << buf << '\n';
    }
  }
}

// Gallery indices follow sorted gallery ids; probes keep file order. Every
// probe must rank the same complete gallery.
inline RankingTable read_rankings(std::istream& in) {
  struct Row {
    std::size_t rank;
    std::string gallery;
    double score;
  };
  std::vector<std::string> probe_order;
  std::unordered_map<std::string, std::vector<Row>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = detail::trim(line);
    if (body.empty()) continue;
    const auto f = detail::split_csv_line(body);
    if (line_no == 1 && f[0] == "probe_id") continue;
    if (f.size() != 4) throw FormatError("ranking line " + std::to_string(line_no) + ": expected 4 fields");
    const std::string probe(f[0]);
    if (!rows.contains(probe)) probe_order.push_back(probe);
    rows[probe].push_back({detail::parse_number<std::size_t>(f[1], "rank"), std::string(f[2]),
                           detail::parse_number<double>(f[3], "score")});
  }
  RankingTable t;
  t.probe_ids = probe_order;
  if (probe_order.empty()) return t;
  std::vector<std::string> gallery;
  for (const auto& r : rows[probe_order.front()]) gallery.push_back(r.gallery);
  std::sort(gallery.begin(), gallery.end());
  if (std::adjacent_find(gallery.begin(), gallery.end()) != gallery.end()) throw DataError("duplicate gallery id");
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < gallery.size(); ++i) index.emplace(gallery[i], i);
  t.gallery_ids = gallery;

  for (std::size_t p = 0; p < probe_order.size(); ++p) {
    auto list = rows[probe_order[p]];
    if (list.size() != gallery.size()) throw DataError("probe " + probe_order[p] + " ranks a different gallery");
    std::sort(list.begin(), list.end(), [](const Row& a, const Row& b) { return a.rank < b.rank; });
    RankingList r;
    r.probe_index = p;
    r.scores.assign(gallery.size(), 0.0);
    std::vector<bool> seen(gallery.size(), false);
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (list[i].rank != i + 1) throw DataError("probe " + probe_order[p] + " has non-consecutive ranks");
      const auto it = index.find(list[i].gallery);
      if (it == index.end() || seen[it->second]) {
        throw DataError("probe " + probe_order[p] + " ranks a different gallery");
      }
      seen[it->second] = true;
      r.order.push_back(it->second);
      r.scores[it->second] = list[i].score;
    }
    t.rankings.push_back(std::move(r));
  }
  return t;
}

// Content sets as probe_id,gallery_id rows.
inline void write_content_sets(std::ostream& out, const std::vector<std::string>& probe_ids,
                               const std::vector<std::string>& gallery_ids, std::span<const ContentSet> sets) {
  out << "probe_id,gallery_id\n";
  for (std::size_t p = 0; p < sets.size(); ++p)
    for (auto g : sets[p].members) out << probe_ids[p] << ',' << gallery_ids[g] << '\n';
}

inline std::map<std::string, std::vector<std::string>> read_content_sets(std::istream& in) {
  std::map<std::string, std::vector<std::string>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = detail::trim(line);
    if (body.empty()) continue;
    const auto f = detail::split_csv_line(body);
    if (line_no == 1 && f[0] == "probe_id") continue;
    if (f.size() != 2) throw FormatError("content line " + std::to_string(line_no) + ": expected 2 fields");
    out[std::string(f[0])].emplace_back(f[1]);
  }
  return out;
}

}  // namespace reid
