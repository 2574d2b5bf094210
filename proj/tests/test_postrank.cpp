#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "reid/eval.hpp"
#include "reid/postrank.hpp"
#include "reid/random.hpp"

using namespace reid;

namespace {

Eigen::MatrixXd random_rows(Rng& rng, Eigen::Index n, Eigen::Index d) {
  Eigen::MatrixXd m(n, d);
  for (auto& v : m.reshaped()) v = 2.0 * uniform01(rng) - 1.0;
  return m;
}

RankingList dot_ranking(std::size_t probe, const Eigen::VectorXd& q, const Eigen::MatrixXd& gallery) {
  const Eigen::VectorXd s = gallery * q;
  return make_ranking(probe, std::vector<double>(s.data(), s.data() + s.size()));
}

NeighborRanker dot_ranker(const Eigen::MatrixXd& gallery) {
  return [&gallery](std::size_t g) {
    RankingList r;
    r.probe_index = g;
    r.scores.assign(static_cast<std::size_t>(gallery.rows()), -1e300);
    std::vector<std::size_t> others;
    std::vector<double> sub;
    for (Eigen::Index i = 0; i < gallery.rows(); ++i) {
      if (static_cast<std::size_t>(i) == g) continue;
      others.push_back(static_cast<std::size_t>(i));
      sub.push_back(gallery.row(i).dot(gallery.row(static_cast<Eigen::Index>(g))));
      r.scores[others.back()] = sub.back();
    }
    for (auto pos : order_by_similarity(sub)) r.order.push_back(others[pos]);
    return r;
  };
}

SimilarityModel random_post_model(Rng& rng, Eigen::Index d) {
  SimilarityModel m;
  m.gamma = 1.0;
  Eigen::MatrixXd a = random_rows(rng, d, d), b = random_rows(rng, d, d);
  m.blocks.push_back({kDiscriminantBlock, 0.5 * (a + a.transpose()), 0.5 * (b + b.transpose())});
  return m;
}

}  // namespace

TEST(Knee, HandExample) {
  const std::vector<double> d{0, 0.1, 0.2, 5, 5.1};
  const auto k = knee_point(d);
  EXPECT_EQ(k.m, 3u);
  EXPECT_EQ(k.threshold, 0.2);
}

TEST(Knee, LinearAndConcaveCurvesGiveOne) {
  std::vector<double> line, concave;
  for (int i = 0; i < 30; ++i) {
    line.push_back(0.5 * i);
    concave.push_back(std::sqrt(static_cast<double>(i)));
  }
  EXPECT_EQ(knee_point(line).m, 1u);
  EXPECT_EQ(knee_point(concave).m, 1u);
  EXPECT_EQ(knee_point(std::vector<double>{3.0}).m, 1u);
  EXPECT_EQ(knee_point(std::vector<double>(10, 2.0)).m, 1u);
  EXPECT_EQ(knee_point(std::vector<double>{1.0, 9.0}).m, 1u);
}

TEST(Knee, MatchesBruteForceChordDistance) {
  Rng rng(1);
  for (int t = 0; t < 300; ++t) {
    std::vector<double> d(40);
    for (auto& v : d) v = uniform01(rng);
    std::sort(d.begin(), d.end());
    std::size_t best = 0;
    double best_dist = 0.0;
    for (std::size_t i = 0; i < 25; ++i) {
      // line through (1, d0) and (25, d24); distance of points below it
      const double on_line = d[0] + (d[24] - d[0]) * static_cast<double>(i) / 24.0;
      const double below = (on_line - d[i]) / std::hypot(24.0, d[24] - d[0]) * 24.0;
      if (below > best_dist + 1e-15) {
        best_dist = below;
        best = i;
      }
    }
    ASSERT_EQ(knee_point(d).m, best + 1);
  }
}

TEST(Knee, ConvexElbowIsFound) {
  // flat then steep: the knee sits at the last flat point
  for (std::size_t e = 2; e < 24; ++e) {
    std::vector<double> d;
    for (std::size_t i = 0; i < 25; ++i) d.push_back(i < e ? 0.01 * i : 10.0 + i);
    EXPECT_EQ(knee_point(d).m, e) << e;
  }
}

TEST(Knee, UnsortedIsContractError) {
  EXPECT_THROW(knee_point(std::vector<double>{0.0, 2.0, 1.0}), ContractError);
  EXPECT_THROW(knee_point(std::vector<double>{}), ContractError);
}

TEST(Content, GapAfterFirstGivesSingleMember) {
  std::vector<double> s{10.0};
  for (int i = 0; i < 29; ++i) s.push_back(-50.0 - 0.01 * i);
  const auto r = make_ranking(0, s);
  EXPECT_EQ(content_set(r).members, std::vector<std::size_t>{0});
}

TEST(Content, IsPrefixWithSoundThreshold) {
  Rng rng(2);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> s(50);
    for (auto& v : s) v = uniform01(rng);
    const auto r = make_ranking(static_cast<std::size_t>(t), s);
    const auto c = content_set(r);
    ASSERT_GE(c.m(), 1u);
    ASSERT_LE(c.m(), 25u);
    for (std::size_t j = 0; j < c.m(); ++j) {
      ASSERT_EQ(c.members[j], r.order[j]);
      ASSERT_LE(r.dissimilarity(c.members[j]), c.threshold);
    }
    // continuous scores: nothing past the prefix reaches the threshold
    for (std::size_t j = c.m(); j < r.order.size(); ++j) ASSERT_GT(r.dissimilarity(r.order[j]), c.threshold);
  }
}

TEST(Context, DisjointNeighborhoodsGiveEmptyContext) {
  // probe's top-25 is 0..24; the match only sees 25..29
  std::vector<double> s;
  for (int i = 0; i < 30; ++i) s.push_back(-i);
  const auto probe = make_ranking(0, s);
  ContentSet content;
  content.members = {0};
  const NeighborRanker far = [](std::size_t) {
    std::vector<double> sc(30, -100.0);
    sc[25] = 5;
    sc[26] = 4.9;
    sc[27] = 4.8;
    return make_ranking(0, sc);
  };
  const auto ctx = context_set(probe, content, far);
  EXPECT_TRUE(ctx.merged.empty());
  ASSERT_EQ(ctx.per_match.size(), 1u);
  EXPECT_TRUE(ctx.per_match[0].empty());
}

TEST(Context, FewCandidatesAreAllKept) {
  std::vector<double> s;
  for (int i = 0; i < 30; ++i) s.push_back(-i);
  const auto probe = make_ranking(0, s);
  ContentSet content;
  content.members = {0, 1};
  const NeighborRanker near = [](std::size_t g) {
    std::vector<double> sc(30, -100.0);
    sc[g == 0 ? 1 : 0] = 10;  // the other content member
    sc[5] = 9;
    sc[7] = 8.9;
    sc[g] = -1000;
    auto r = make_ranking(g, sc);
    r.order.erase(std::find(r.order.begin(), r.order.end(), g));
    return r;
  };
  const auto ctx = context_set(probe, content, near);
  EXPECT_EQ(ctx.merged, (std::vector<std::size_t>{5, 7}));
  EXPECT_EQ(ctx.per_match[0], (std::vector<std::size_t>{1, 5, 7}));
}

TEST(Context, FlatHistogramKeepsMostProbeSimilar) {
  std::vector<double> s;
  for (int i = 0; i < 30; ++i) s.push_back(-i);
  const auto probe = make_ranking(0, s);
  ContentSet content;
  content.members = {0};
  // match 0 sees 20 close neighbors (reversed order), then a jump
  const NeighborRanker twenty = [](std::size_t) {
    std::vector<double> sc(30, -100.0 - 1.0);
    for (int i = 1; i <= 20; ++i) sc[static_cast<std::size_t>(i)] = 0.001 * i;
    for (int i = 21; i < 30; ++i) sc[static_cast<std::size_t>(i)] = -100.0 - i;
    sc[0] = -1e6;
    auto r = make_ranking(0, sc);
    r.order.erase(std::find(r.order.begin(), r.order.end(), 0u));
    return r;
  };
  const auto ctx = context_set(probe, content, twenty);
  std::vector<std::size_t> expected;
  for (std::size_t i = 1; i <= 13; ++i) expected.push_back(i);
  EXPECT_EQ(ctx.merged, expected);
}

TEST(Discriminant, FullEnergyRemovesEverything) {
  Rng rng(3);
  const Eigen::MatrixXd v = random_rows(rng, 8, 6);
  const auto b = discriminant_removal(v, 1.0);
  EXPECT_LE(b.discriminant.cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Discriminant, ProjectorInvariants) {
  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    const Eigen::MatrixXd v = random_rows(rng, 12, 3 + static_cast<Eigen::Index>(uniform_index(rng, 20)));
    const auto b = discriminant_removal(v);
    ASSERT_LE((b.basis.transpose() * b.discriminant).cwiseAbs().maxCoeff(), 1e-10);
    const Eigen::MatrixXd again = b.discriminant - b.basis * (b.basis.transpose() * b.discriminant);
    ASSERT_LE((again - b.discriminant).cwiseAbs().maxCoeff(), 1e-8);
    ASSERT_LE(b.centered.rowwise().sum().cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Discriminant, LargerEnergyRemovesASuperset) {
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    const Eigen::MatrixXd v = random_rows(rng, 10, 15);
    const auto small = discriminant_removal(v, 0.35);
    const auto large = discriminant_removal(v, 0.55);
    ASSERT_LE(small.components(), large.components());
    const Eigen::MatrixXd inside = large.basis * (large.basis.transpose() * small.basis);
    ASSERT_LE((inside - small.basis).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Discriminant, TinyEnergyKeepsTheTopComponent) {
  Rng rng(9);
  const Eigen::MatrixXd v = random_rows(rng, 6, 9);
  const auto b = discriminant_removal(v, 1e-9);
  ASSERT_EQ(b.components(), 1);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(b.centered, Eigen::ComputeThinU);
  EXPECT_NEAR(std::abs(b.basis.col(0).dot(svd.matrixU().col(0))), 1.0, 1e-10);
}

TEST(Discriminant, IdenticalVectorsHaveNoCommonDirection) {
  Eigen::MatrixXd v(4, 5);
  v.colwise() = Eigen::Vector4d(1, 2, 3, 4);
  const auto b = discriminant_removal(v);
  EXPECT_EQ(b.components(), 0);
  EXPECT_EQ(b.discriminant.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Discriminant, Errors) {
  EXPECT_THROW(discriminant_removal(Eigen::MatrixXd::Ones(3, 1)), ContractError);
  EXPECT_THROW(discriminant_removal(Eigen::MatrixXd::Ones(3, 4), 0.0), ContractError);
  EXPECT_THROW(discriminant_removal(Eigen::MatrixXd::Ones(3, 4), 1.5), ContractError);
}

TEST(Postrank, SingleMemberLeavesListUnchanged) {
  const auto r = make_ranking(0, {0.3, 0.9, 0.1});
  ContentSet c;
  c.members = {1};
  const auto out = postrank(r, c, std::vector<double>{-5.0});
  EXPECT_EQ(out.order, r.order);
}

TEST(Postrank, ReversedScoresReverseThePrefix) {
  const auto r = make_ranking(0, {0.9, 0.8, 0.7, 0.6, 0.5});
  ContentSet c;
  c.members = {0, 1, 2};
  const auto out = postrank(r, c, std::vector<double>{1, 2, 3});
  EXPECT_EQ(out.order, (std::vector<std::size_t>{2, 1, 0, 3, 4}));
  EXPECT_THROW(postrank(r, c, std::vector<double>{1, 2}), DataError);
  c.members = {1, 0};
  EXPECT_THROW(postrank(r, c, std::vector<double>{1, 2}), ContractError);
}

TEST(Postrank, PrefixLocalityAndDisjointnessOnRandomProbes) {
  Rng rng(6);
  const Eigen::MatrixXd gallery = random_rows(rng, 60, 10);
  const auto ranker = dot_ranker(gallery);
  const auto model = random_post_model(rng, 10);
  for (std::size_t p = 0; p < 200; ++p) {
    const Eigen::VectorXd q = random_rows(rng, 1, 10).row(0).transpose();
    const auto initial = dot_ranking(p, q, gallery);
    const auto res = dcia(initial, q, gallery, ranker);
    for (auto x : res.context.merged) ASSERT_FALSE(res.content.contains(x));
    ASSERT_LE(res.context.merged.size(), 13u);
    const auto after = postrank(initial, res, model);
    const auto m = res.content.m();
    for (std::size_t i = m; i < initial.order.size(); ++i) ASSERT_EQ(after.order[i], initial.order[i]);
    std::vector<std::size_t> a(after.order.begin(), after.order.begin() + static_cast<std::ptrdiff_t>(m));
    std::vector<std::size_t> b(initial.order.begin(), initial.order.begin() + static_cast<std::ptrdiff_t>(m));
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    ASSERT_EQ(a, b);
  }
}

TEST(PostrankModel, LearnsToPromoteTrueMatches) {
  Rng rng(7);
  const Eigen::Index n = 40, d = 8;
  const Eigen::MatrixXd centers = random_rows(rng, n, d);
  const Eigen::MatrixXd gallery = centers + 0.3 * random_rows(rng, n, d);
  const Eigen::MatrixXd probes = centers + 0.3 * random_rows(rng, n, d);
  const auto ranker = dot_ranker(gallery);
  std::vector<DciaResult> results;
  std::vector<std::size_t> truth;
  std::vector<RankingList> initial;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::VectorXd q = probes.row(i).transpose();
    initial.push_back(dot_ranking(static_cast<std::size_t>(i), q, gallery));
    results.push_back(dcia(initial.back(), q, gallery, ranker));
    truth.push_back(static_cast<std::size_t>(i));
  }
  TrainConfig cfg;
  const auto model = train_postrank_model(results, truth, cfg, 1);
  EXPECT_EQ(model.gamma, 1.0);
  ASSERT_EQ(model.blocks.size(), 1u);
  EXPECT_LE(model.max_asymmetry(), 1e-9);

  // on the training probes, the truth is ranked first more often after post-ranking
  std::size_t before = 0, after = 0;
  for (std::size_t p = 0; p < results.size(); ++p) {
    before += initial[p].order.front() == truth[p];
    after += postrank(initial[p], results[p], model).order.front() == truth[p];
  }
  EXPECT_GE(after, before);

  const auto again = train_postrank_model(results, truth, cfg, 1);
  EXPECT_EQ(again.blocks[0].wm, model.blocks[0].wm);
}

TEST(PostrankModel, SeparatesSharedComponentPairsTheBaseModelConfuses) {
  // identities come in groups of 6 sharing a strong appearance component
  Rng rng(1);
  const int n = 60, d = 10, group = 6;
  Eigen::MatrixXd shared(n / group, d), probes(n, d), gallery(n, d);
  for (auto& v : shared.reshaped()) v = 3.0 * detail::gaussian(rng);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) {
      const double own = detail::gaussian(rng);
      probes(i, j) = shared(i / group, j) + own + 0.5 * detail::gaussian(rng);
      gallery(i, j) = shared(i / group, j) + own + 0.5 * detail::gaussian(rng);
    }
  DescriptorBank bp, bg;
  bp.blocks.emplace(kDiscriminantBlock, probes);
  bg.blocks.emplace(kDiscriminantBlock, gallery);
  const TrainConfig cfg;
  const auto base = train_model(parse_representation("T=C1:G"), 1, bp, bg, cfg);
  const auto rankings = detail::rank_all(base, bp, bg);
  const auto results = detail::run_dcia(base, bp, bg, rankings, DciaConfig{});
  std::vector<std::size_t> truth(n);
  std::iota(truth.begin(), truth.end(), std::size_t{0});
  const auto post = train_postrank_model(results, truth, cfg, 1);

  // the same (probe, content member) pairs, in raw and in discriminant form
  std::vector<TrainPair> raw_pairs, disc_pairs;
  std::vector<Eigen::VectorXd> da, db;
  for (int p = 0; p < n; ++p) {
    const auto& r = results[static_cast<std::size_t>(p)];
    for (std::size_t j = 0; j < r.content.m(); ++j) {
      const int label = r.content.members[j] == static_cast<std::size_t>(p) ? 1 : -1;
      raw_pairs.push_back({p, static_cast<Eigen::Index>(r.content.members[j]), label});
      disc_pairs.push_back({static_cast<Eigen::Index>(da.size()), static_cast<Eigen::Index>(da.size()), label});
      da.push_back(r.block.discriminant.col(0));
      db.push_back(r.block.discriminant.col(static_cast<Eigen::Index>(j + 1)));
    }
  }
  Eigen::MatrixXd ma(static_cast<Eigen::Index>(da.size()), da[0].size()), mb(ma.rows(), ma.cols());
  for (std::size_t i = 0; i < da.size(); ++i) {
    ma.row(static_cast<Eigen::Index>(i)) = da[i].transpose();
    mb.row(static_cast<Eigen::Index>(i)) = db[i].transpose();
  }
  DescriptorBank xa, xb;
  xa.blocks.emplace(kDiscriminantBlock, ma);
  xb.blocks.emplace(kDiscriminantBlock, mb);
  const double before = pair_accuracy(base, bp, bg, raw_pairs);
  const double after = pair_accuracy(post, xa, xb, disc_pairs);
  EXPECT_LT(before, 0.95);
  EXPECT_GT(after, before);
}

TEST(PostrankModel, SingleClassOrNoProbeIsDataError) {
  Rng rng(8);
  DciaResult r;
  r.content.members = {3, 4};
  r.block = discriminant_removal(random_rows(rng, 5, 4));
  const std::vector<DciaResult> results{r};
  EXPECT_THROW(train_postrank_model(results, std::vector<std::size_t>{9}, TrainConfig{}), DataError);
  EXPECT_THROW(train_postrank_model(results, std::vector<std::size_t>{9}, TrainConfig{}, 3), DataError);
  EXPECT_THROW(train_postrank_model(results, std::vector<std::size_t>{}, TrainConfig{}), DataError);
}

TEST(RankingCsv, RoundTrip) {
  RankingTable t;
  t.probe_ids = {"p1", "p0"};
  t.gallery_ids = {"g0", "g1", "g2"};
  t.rankings.push_back(make_ranking(0, {0.5, -1.25, 2.0}));
  t.rankings.push_back(make_ranking(1, {3.0, 0.0, 1.0}));
  std::stringstream buf;
  write_rankings(buf, t);
  const auto back = read_rankings(buf);
  EXPECT_EQ(back.probe_ids, t.probe_ids);
  EXPECT_EQ(back.gallery_ids, t.gallery_ids);
  ASSERT_EQ(back.rankings.size(), 2u);
  for (std::size_t p = 0; p < 2; ++p) {
    EXPECT_EQ(back.rankings[p].order, t.rankings[p].order);
    EXPECT_EQ(back.rankings[p].scores, t.rankings[p].scores);
  }
}

TEST(RankingCsv, Errors) {
  std::istringstream bad_score("probe_id,rank,gallery_id,score\np,1,g,abc\n");
  EXPECT_THROW(read_rankings(bad_score), FormatError);
  std::istringstream fields("probe_id,rank,gallery_id,score\np,1,g\n");
  EXPECT_THROW(read_rankings(fields), FormatError);
  std::istringstream gap("probe_id,rank,gallery_id,score\np,1,a,1\np,3,b,0\n");
  EXPECT_THROW(read_rankings(gap), DataError);
  std::istringstream other("p,1,a,1\np,2,b,0\nq,1,a,1\nq,2,c,0\n");
  EXPECT_THROW(read_rankings(other), DataError);
}

TEST(ContentCsv, RoundTrip) {
  std::vector<ContentSet> sets(2);
  sets[0].members = {2, 0};
  sets[1].members = {1};
  std::stringstream buf;
  write_content_sets(buf, {"p0", "p1"}, {"a", "b", "c"}, sets);
  const auto back = read_content_sets(buf);
  EXPECT_EQ(back.at("p0"), (std::vector<std::string>{"c", "a"}));
  EXPECT_EQ(back.at("p1"), (std::vector<std::string>{"b"}));
}
