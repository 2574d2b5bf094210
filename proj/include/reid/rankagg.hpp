#pragma once

// Order-statistics (Stuart) aggregation of complementary ranking lists and the
// best-n selection of which lists to aggregate.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "reid/errors.hpp"
#include "reid/simlearn.hpp"

namespace reid {

// P(U_(1) <= r_1, ..., U_(n) <= r_n) for the order statistics of n iid
// uniforms, with r ascending in (0, 1]. Uses the recursion
//   V_0 = 1,  V_k = sum_{i=1..k} (-1)^(i-1) V_{k-i} r_(n-k+1)^i / i!
// and returns n! V_n clamped to [0, 1].
inline double stuart_statistic(std::span<const double> r) {
  const std::size_t n = r.size();
  if (n == 0) throw ContractError("stuart_statistic: empty rank profile");
  for (std::size_t i = 0; i < n; ++i) {
    if (!(r[i] > 0.0 && r[i] <= 1.0)) throw ContractError("stuart_statistic: ranks must lie in (0, 1]");
    if (i > 0 && r[i] < r[i - 1]) throw ContractError("stuart_statistic: ranks must be sorted ascending");
  }
  // Every order statistic is below 1; the alternating sums would only round to it.
  if (r.front() == 1.0) return 1.0;
  std::vector<double> v(n + 1, 0.0);
  v[0] = 1.0;
  for (std::size_t k = 1; k <= n; ++k) {
    const double x = r[n - k];  // r_(n-k+1), 1-based
    double sum = 0.0, power = 1.0, fact = 1.0;
    for (std::size_t i = 1; i <= k; ++i) {
      power *= x;
      fact *= static_cast<double>(i);
      const double term = v[k - i] * power / fact;
      sum += (i % 2 == 1) ? term : -term;
    }
    v[k] = sum;
  }
  double nfact = 1.0;
  for (std::size_t i = 2; i <= n; ++i) nfact *= static_cast<double>(i);
  return std::clamp(nfact * v[n], 0.0, 1.0);
}

struct AggregationResult {
  std::vector<std::size_t> order;  // gallery indices, best first
  std::vector<double> scores;      // statistic per gallery index, smaller is better
};

// Stuart aggregation of n >= 2 full rankings over the same gallery.
inline AggregationResult aggregate(std::span<const RankingList> lists) {
  if (lists.size() < 2) throw DataError("aggregate needs at least 2 ranking lists");
  const std::size_t m = lists.front().order.size();
  if (m == 0) throw DataError("aggregate: empty gallery");
  // positions[l][g] = 1-based rank of g in list l
  std::vector<std::vector<std::size_t>> positions(lists.size(), std::vector<std::size_t>(m, 0));
  for (std::size_t l = 0; l < lists.size(); ++l) {
    if (lists[l].order.size() != m) throw DataError("aggregate: lists rank galleries of different sizes");
    for (std::size_t i = 0; i < m; ++i) {
      const auto g = lists[l].order[i];
      if (g >= m || positions[l][g] != 0) throw DataError("aggregate: list is not a permutation of the gallery");
      positions[l][g] = i + 1;
    }
  }
  AggregationResult out;
  out.scores.resize(m);
  std::vector<double> profile(lists.size());
  for (std::size_t g = 0; g < m; ++g) {
    for (std::size_t l = 0; l < lists.size(); ++l) {
      profile[l] = static_cast<double>(positions[l][g]) / static_cast<double>(m);
    }
    std::sort(profile.begin(), profile.end());
    out.scores[g] = stuart_statistic(profile);
  }
  out.order.resize(m);
  std::iota(out.order.begin(), out.order.end(), std::size_t{0});
  std::stable_sort(out.order.begin(), out.order.end(),
                   [&](std::size_t a, std::size_t b) { return out.scores[a] < out.scores[b]; });
  return out;
}

// As a RankingList whose scores are negated statistics (higher is better).
inline RankingList aggregate_ranking(std::span<const RankingList> lists) {
  const auto agg = aggregate(lists);
  RankingList r;
  r.probe_index = lists.front().probe_index;
  r.order = agg.order;
  r.scores.resize(agg.scores.size());
  for (std::size_t g = 0; g < agg.scores.size(); ++g) r.scores[g] = -agg.scores[g];
  return r;
}

struct BestNSelection {
  std::vector<std::size_t> ranked;  // representation indices, best validation top-1 first
  std::size_t chosen_n = 2;
  std::vector<double> top1_by_n;    // index n-2 holds the validation top-1 of best-n
};

// validation_top1[i]: top-1 rate of representation i on the validation set.
// rankings[i][p]: representation i's ranking for validation probe p.
// truth[p]: true gallery index of probe p.
inline BestNSelection best_n_select(std::span<const double> validation_top1,
                                    const std::vector<std::vector<RankingList>>& rankings,
                                    std::span<const std::size_t> truth, std::size_t n_max = 12) {
  const std::size_t reps = validation_top1.size();
  if (reps < 2) throw ConfigError("best-n selection needs at least 2 representations");
  if (rankings.size() != reps) throw DataError("best_n_select: one ranking set per representation required");
  for (double v : validation_top1)
    if (!std::isfinite(v)) throw DataError("best_n_select: non-finite validation rate");
  for (const auto& set : rankings)
    if (set.size() != truth.size()) throw DataError("best_n_select: rankings and truth misaligned");

  BestNSelection sel;
  sel.ranked.resize(reps);
  std::iota(sel.ranked.begin(), sel.ranked.end(), std::size_t{0});
  std::stable_sort(sel.ranked.begin(), sel.ranked.end(),
                   [&](std::size_t a, std::size_t b) { return validation_top1[a] > validation_top1[b]; });

  const std::size_t upper = std::min(std::max<std::size_t>(n_max, 2), reps);
  double best = -1.0;
  std::vector<RankingList> lists;
  for (std::size_t n = 2; n <= upper; ++n) {
    std::size_t hits = 0;
    for (std::size_t p = 0; p < truth.size(); ++p) {
      lists.clear();
      for (std::size_t i = 0; i < n; ++i) lists.push_back(rankings[sel.ranked[i]][p]);
      if (aggregate(lists).order.front() == truth[p]) ++hits;
    }
    const double top1 = truth.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(truth.size());
    sel.top1_by_n.push_back(top1);
    if (top1 > best) {
      best = top1;
      sel.chosen_n = n;
    }
  }
  return sel;
}

}  // namespace reid
