#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "reid/random.hpp"
#include "reid/simlearn.hpp"

using namespace reid;

namespace {

Eigen::VectorXd random_vector(Rng& rng, Eigen::Index d) {
  Eigen::VectorXd v(d);
  for (auto& x : v) x = 2.0 * uniform01(rng) - 1.0;
  return v;
}

Eigen::MatrixXd random_symmetric(Rng& rng, Eigen::Index d) {
  Eigen::MatrixXd m(d, d);
  for (auto& x : m.reshaped()) x = 2.0 * uniform01(rng) - 1.0;
  return 0.5 * (m + m.transpose());
}

SimilarityModel random_model(Rng& rng, const std::vector<BlockKey>& keys, Eigen::Index d, double gamma) {
  SimilarityModel m;
  m.gamma = gamma;
  m.bias = uniform01(rng);
  for (const auto& k : keys) m.blocks.push_back({k, random_symmetric(rng, d), random_symmetric(rng, d)});
  return m;
}

ImageDescriptors random_image(Rng& rng, const std::vector<BlockKey>& keys, Eigen::Index d) {
  ImageDescriptors img;
  for (const auto& k : keys) img.emplace(k, random_vector(rng, d));
  return img;
}

// Explicit double-loop expansion of the block sums.
double brute_force(const SimilarityModel& m, const ImageDescriptors& a, const ImageDescriptors& b) {
  double local = 0.0, global = 0.0;
  for (const auto& blk : m.blocks) {
    const auto& x = a.at(blk.key);
    const auto& y = b.at(blk.key);
    double v = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i)
      for (Eigen::Index j = 0; j < x.size(); ++j) {
        v += (x[i] - y[i]) * blk.wm(i, j) * (x[j] - y[j]);
        v += x[i] * blk.wb(i, j) * y[j] + y[i] * blk.wb(i, j) * x[j];
      }
    (blk.key.region == kGlobalRegion ? global : local) += v;
  }
  return local + m.gamma * global;
}

}  // namespace

TEST(Score, HandExamples) {
  const Eigen::Vector2d a(1, 0), b(0, 1);
  const Eigen::Matrix2d eye = Eigen::Matrix2d::Identity();
  EXPECT_EQ(score_mahalanobis(a, b, eye), 2.0);
  EXPECT_EQ(score_mahalanobis(a, a, eye * 5), 0.0);
  EXPECT_EQ(score_bilinear(a, b, Eigen::Matrix2d::Zero()), 0.0);
  EXPECT_EQ(score_bilinear(a, b, eye), 0.0);
  const Eigen::Vector2d u = Eigen::Vector2d(1, 1) / std::sqrt(2.0);
  EXPECT_NEAR(score_bilinear(u, u, eye), 2.0, 1e-15);
  EXPECT_THROW(score_mahalanobis(a, Eigen::Vector3d::Zero(), eye), DimError);
  EXPECT_THROW(score_bilinear(a, b, Eigen::Matrix3d::Identity()), DimError);
}

TEST(Score, MatchesBruteForceAndIsSymmetric) {
  Rng rng(1);
  const std::vector<BlockKey> keys{{Cue::C1, 0}, {Cue::C1, 1}, {Cue::C2, 0}, {Cue::C1, kGlobalRegion}, {Cue::C7, kGlobalRegion}};
  for (int t = 0; t < 200; ++t) {
    const auto m = random_model(rng, keys, 5, 1.1);
    const auto a = random_image(rng, keys, 5), b = random_image(rng, keys, 5);
    EXPECT_NEAR(score_pair(m, a, b), brute_force(m, a, b), 1e-9);
    EXPECT_EQ(score_pair(m, a, b), score_pair(m, b, a));
  }
}

TEST(Score, TwoRegionSingleCueExpansion) {
  Rng rng(2);
  const std::vector<BlockKey> keys{{Cue::C1, 0}, {Cue::C1, 1}};
  const auto m = random_model(rng, keys, 4, 1.1);
  const auto a = random_image(rng, keys, 4), b = random_image(rng, keys, 4);
  double expected = 0.0;
  for (const auto& blk : m.blocks) {
    const auto& x = a.at(blk.key);
    const auto& y = b.at(blk.key);
    expected += (x - y).dot(blk.wm * (x - y));
    expected += x.dot(blk.wb * y) + y.dot(blk.wb * x);
  }
  EXPECT_NEAR(score_pair(m, a, b), expected, 1e-12);
}

TEST(Score, ZeroModelAndGammaReductions) {
  Rng rng(3);
  const std::vector<BlockKey> keys{{Cue::C1, 0}, {Cue::C1, kGlobalRegion}};
  const std::vector<Eigen::Index> dims{3, 3};
  const auto zero = SimilarityModel::zeros(keys, dims, 1.1);
  const auto a = random_image(rng, keys, 3), b = random_image(rng, keys, 3);
  EXPECT_EQ(score_pair(zero, a, b), 0.0);

  auto m = random_model(rng, keys, 3, 0.0);
  const auto parts = score_parts(m, a, b);
  EXPECT_EQ(score_pair(m, a, b), parts.local);
  m.gamma = 1.0;
  EXPECT_NEAR(score_pair(m, a, b), parts.local + parts.global, 1e-9);
}

TEST(Score, MissingDescriptorIsConfigError) {
  Rng rng(4);
  const std::vector<BlockKey> keys{{Cue::C1, kGlobalRegion}};
  const auto m = random_model(rng, keys, 3, 1.1);
  const auto a = random_image(rng, keys, 3);
  EXPECT_THROW(score_pair(m, a, ImageDescriptors{}), ConfigError);
}

TEST(Representation, Table1Rows) {
  // F0: C1..C4 global+local, nothing else
  const auto f0 = table1_representation(0);
  for (int c = 0; c < 4; ++c) EXPECT_EQ(f0.scopes[c], Scope::Both) << c;
  for (int c = 4; c < 8; ++c) EXPECT_EQ(f0.scopes[c], Scope::None) << c;
  EXPECT_EQ(f0.blocks(4).size(), 4u * 4 + 4);
  for (int i = 0; i <= 12; ++i) {
    const auto r = table1_representation(i);
    EXPECT_EQ(r.name, "F" + std::to_string(i));
    EXPECT_FALSE(r.blocks(4).empty());
    EXPECT_EQ(parse_representation(representation_spec(r)), r);
  }
  EXPECT_THROW(table1_representation(13), ConfigError);
  EXPECT_THROW(parse_representation("F99"), ConfigError);
}

TEST(Representation, CustomSpecs) {
  const auto r = parse_representation("S1=C1:G,C7:GL");
  EXPECT_EQ(r.name, "S1");
  EXPECT_EQ(r.scope(Cue::C1), Scope::Global);
  EXPECT_EQ(r.scope(Cue::C7), Scope::Both);
  EXPECT_EQ(r.scope(Cue::C2), Scope::None);
  const auto blocks = r.blocks(2);
  ASSERT_EQ(blocks.size(), 4u);
  EXPECT_EQ(blocks[0], (BlockKey{Cue::C7, 0}));
  EXPECT_EQ(blocks[2], (BlockKey{Cue::C1, kGlobalRegion}));
  EXPECT_THROW(parse_representation("S=C1:X"), ConfigError);
  EXPECT_THROW(parse_representation("S=C9:G"), ConfigError);
  EXPECT_THROW(parse_representation("S=C1:-"), ConfigError);
}

TEST(Representation, UnusedCuesNeverChangeScores) {
  Rng rng(5);
  for (int f = 0; f <= 12; ++f) {
    const auto rep = table1_representation(f);
    const auto keys = rep.blocks(2);
    const auto m = random_model(rng, keys, 3, 1.1);
    std::vector<BlockKey> all;
    for (int c = 0; c < kCueCount; ++c) {
      all.push_back({static_cast<Cue>(c), kGlobalRegion});
      for (int r = 0; r < 2; ++r) all.push_back({static_cast<Cue>(c), r});
    }
    auto a = random_image(rng, all, 3);
    const auto b = random_image(rng, all, 3);
    const double before = score_pair(m, a, b);
    for (auto& [k, v] : a)
      if (std::find(keys.begin(), keys.end(), k) == keys.end()) v = random_vector(rng, 3);
    EXPECT_EQ(score_pair(m, a, b), before) << "F" << f;
  }
}

TEST(Ranking, MatchesSortedScoresAndBreaksTiesByIndex) {
  Rng rng(6);
  const std::vector<BlockKey> keys{{Cue::C1, kGlobalRegion}};
  const auto m = random_model(rng, keys, 4, 1.1);
  std::vector<ImageDescriptors> gallery;
  for (int i = 0; i < 10; ++i) gallery.push_back(random_image(rng, keys, 4));
  const auto probe = random_image(rng, keys, 4);
  const auto r = rank_gallery(m, probe, gallery);
  std::vector<std::pair<double, std::size_t>> oracle;
  for (std::size_t i = 0; i < gallery.size(); ++i) oracle.push_back({-score_pair(m, probe, gallery[i]), i});
  std::sort(oracle.begin(), oracle.end());
  for (std::size_t i = 0; i < oracle.size(); ++i) EXPECT_EQ(r.order[i], oracle[i].second);

  const std::vector<Eigen::Index> dims{4};
  const auto zero = SimilarityModel::zeros(keys, dims, 1.1);
  const auto flat = rank_gallery(zero, probe, gallery);
  for (std::size_t i = 0; i < flat.order.size(); ++i) EXPECT_EQ(flat.order[i], i);
  EXPECT_THROW(rank_gallery(m, probe, std::vector<ImageDescriptors>{}), DataError);
}

TEST(Ranking, DuplicateRanksFirstUnderIdentityModel) {
  const std::vector<BlockKey> keys{{Cue::C1, kGlobalRegion}};
  SimilarityModel m;
  m.blocks.push_back({keys[0], -Eigen::MatrixXd::Identity(3, 3), Eigen::MatrixXd::Zero(3, 3)});
  const ImageDescriptors probe{{keys[0], Eigen::Vector3d(1, 0, 0)}};
  const std::vector<ImageDescriptors> gallery{{{keys[0], Eigen::Vector3d(0, 1, 0)}}, probe};
  EXPECT_EQ(rank_gallery(m, probe, gallery).order.front(), 1u);
}

TEST(Ranking, InvariantUnderMonotoneScoreTransform) {
  Rng rng(7);
  std::vector<double> s(30);
  for (auto& x : s) x = std::round(10 * uniform01(rng)) / 10.0;  // plenty of ties
  auto t = s;
  for (auto& x : t) x = std::exp(3 * x) + 5;
  EXPECT_EQ(order_by_similarity(s), order_by_similarity(t));
}

TEST(Ranking, BankScoringMatchesPairScoring) {
  Rng rng(8);
  const auto rep = parse_representation("X=C1:GL,C2:L");
  const auto keys = rep.blocks(2);
  const auto m = random_model(rng, keys, 3, 1.1);
  std::vector<ImageDescriptors> imgs;
  for (int i = 0; i < 6; ++i) imgs.push_back(random_image(rng, keys, 3));
  const auto bank = DescriptorBank::from_images(imgs);
  const auto r = rank_gallery(m, bank, 0, bank);
  for (std::size_t g = 0; g < imgs.size(); ++g) EXPECT_NEAR(r.scores[g], score_pair(m, imgs[0], imgs[g]), 1e-10);
}

TEST(Training, GradientMatchesFiniteDifferences) {
  Rng rng(9);
  const std::vector<BlockKey> keys{{Cue::C1, 0}, {Cue::C1, kGlobalRegion}};
  std::vector<ImageDescriptors> a, b;
  for (int i = 0; i < 12; ++i) {
    a.push_back(random_image(rng, keys, 6));
    b.push_back(random_image(rng, keys, 6));
  }
  const auto bank_a = DescriptorBank::from_images(a), bank_b = DescriptorBank::from_images(b);
  const auto pairs = make_training_pairs(12, 3, rng);
  const PairObjective obj(bank_a, bank_b, keys, pairs, 1.1, 1e-3);
  auto m = random_model(rng, keys, 6, 1.1);
  for (auto& blk : m.blocks) {
    blk.wm *= 0.3;
    blk.wb *= 0.3;
  }
  const auto grad = obj.gradient(m);
  const double eps = 1e-5;
  double worst = 0.0;
  auto check = [&](double analytic, auto&& perturb) {
    auto plus = m, minus = m;
    perturb(plus, eps);
    perturb(minus, -eps);
    const double fd = (obj.loss(plus) - obj.loss(minus)) / (2 * eps);
    worst = std::max(worst, std::abs(fd - analytic) / std::max(std::abs(fd), 1e-3));
  };
  for (std::size_t k = 0; k < m.blocks.size(); ++k)
    for (Eigen::Index i = 0; i < 6; ++i)
      for (Eigen::Index j = 0; j < 6; ++j) {
        check(grad.blocks[k].wm(i, j), [&](SimilarityModel& x, double e) { x.blocks[k].wm(i, j) += e; });
        check(grad.blocks[k].wb(i, j), [&](SimilarityModel& x, double e) { x.blocks[k].wb(i, j) += e; });
      }
  check(grad.bias, [](SimilarityModel& x, double e) { x.bias += e; });
  EXPECT_LE(worst, 1e-4);
}

TEST(Training, SeparablePairsReachHighAccuracy) {
  Rng rng(10);
  const auto rep = parse_representation("T=C1:G");
  const auto keys = rep.blocks(1);
  std::vector<ImageDescriptors> probes, gallery;
  for (int i = 0; i < 30; ++i) {
    const auto center = random_vector(rng, 8);
    probes.push_back({{keys[0], center + 0.02 * random_vector(rng, 8)}});
    gallery.push_back({{keys[0], center + 0.02 * random_vector(rng, 8)}});
  }
  const auto bp = DescriptorBank::from_images(probes), bg = DescriptorBank::from_images(gallery);
  TrainConfig cfg;
  cfg.seed = 3;
  Rng pair_rng(cfg.seed);
  const auto pairs = make_training_pairs(30, cfg.negatives_per_positive, pair_rng);
  TrainReport report;
  const auto m = train_model(rep, 1, bp, bg, cfg, &report);
  EXPECT_GE(pair_accuracy(m, bp, bg, pairs), 0.95);
  for (std::size_t i = 1; i < report.loss_history.size(); ++i) {
    EXPECT_LT(report.loss_history[i], report.loss_history[i - 1]);
  }
  EXPECT_LE(m.max_asymmetry(), 1e-9);

  // deterministic for a fixed seed
  const auto again = train_model(rep, 1, bp, bg, cfg);
  EXPECT_EQ(again.blocks[0].wm, m.blocks[0].wm);
  EXPECT_EQ(again.bias, m.bias);
}

TEST(Training, HeavyRegularizationShrinksWeights) {
  Rng rng(11);
  const auto rep = parse_representation("T=C1:G");
  const auto keys = rep.blocks(1);
  std::vector<ImageDescriptors> probes, gallery;
  for (int i = 0; i < 10; ++i) {
    probes.push_back(random_image(rng, keys, 4));
    gallery.push_back(random_image(rng, keys, 4));
  }
  TrainConfig cfg;
  cfg.lambda = 1e8;
  const auto m = train_model(rep, 1, DescriptorBank::from_images(probes), DescriptorBank::from_images(gallery), cfg);
  EXPECT_LE(m.blocks[0].wm.cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LE(m.blocks[0].wb.cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Training, SingleClassIsDataError) {
  Rng rng(12);
  const auto rep = parse_representation("T=C1:G");
  const auto keys = rep.blocks(1);
  std::vector<ImageDescriptors> imgs{random_image(rng, keys, 3), random_image(rng, keys, 3)};
  const auto bank = DescriptorBank::from_images(imgs);
  const std::vector<TrainPair> pos{{0, 0, 1}, {1, 1, 1}};
  EXPECT_THROW(train_model(rep, 1, bank, bank, pos, TrainConfig{}), DataError);
}

TEST(Training, NonFiniteLossIsNumericError) {
  const auto rep = parse_representation("T=C1:G");
  const auto keys = rep.blocks(1);
  std::vector<ImageDescriptors> imgs{{{keys[0], Eigen::Vector2d(1e300, 1e300)}}, {{keys[0], Eigen::Vector2d(-1e300, 0)}}};
  const auto bank = DescriptorBank::from_images(imgs);
  const std::vector<TrainPair> pairs{{0, 0, 1}, {0, 1, -1}};
  EXPECT_THROW(train_model(rep, 1, bank, bank, pairs, TrainConfig{}), NumericError);
}

TEST(ModelFile, RoundTrip) {
  Rng rng(13);
  const std::vector<BlockKey> keys{{Cue::C2, 3}, {Cue::C8, kGlobalRegion}};
  const auto m = random_model(rng, keys, 3, 1.1);
  std::stringstream buf;
  write_model(buf, m);
  const auto back = read_model(buf);
  ASSERT_EQ(back.blocks.size(), 2u);
  EXPECT_EQ(back.blocks[0].key, keys[0]);
  EXPECT_EQ(back.blocks[1].key, keys[1]);
  EXPECT_NEAR(back.gamma, 1.1, 1e-6);
  EXPECT_LE((back.blocks[1].wb - m.blocks[1].wb).cwiseAbs().maxCoeff(), 1e-6);
  std::stringstream bad("SIMX");
  EXPECT_THROW(read_model(bad), FormatError);
  std::string truncated;
  {
    std::ostringstream out;
    write_model(out, m);
    truncated = out.str().substr(0, 30);
  }
  std::istringstream tin(truncated);
  EXPECT_THROW(read_model(tin), FormatError);
}
