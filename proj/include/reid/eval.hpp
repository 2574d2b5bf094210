#pragma once

// Evaluation protocol: identity-disjoint 50/50 splits repeated over seeds,
// per-representation training, ranking, DCIA post-ranking, best-n Stuart
// aggregation, and CMC / post-ranking statistics reports.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "reid/datamodel.hpp"
#include "reid/errors.hpp"
#include "reid/features.hpp"
#include "reid/log.hpp"
#include "reid/postrank.hpp"
#include "reid/rankagg.hpp"
#include "reid/simlearn.hpp"

namespace reid {

// ---- CMC -------------------------------------------------------------------------

struct CmcCurve {
  std::vector<double> rates;  // rates[k]: fraction of probes matched within rank k+1

  double at_rank(std::size_t rank) const { return rates.empty() ? 0.0 : rates[std::min(rank, rates.size()) - 1]; }
  bool operator==(const CmcCurve&) const = default;
};

// truth[i] is the true gallery index for rankings[i].
inline CmcCurve cmc_curve(std::span<const RankingList> rankings, std::span<const std::size_t> truth) {
  if (truth.size() != rankings.size()) throw DataError("cmc_curve: every probe needs a truth entry");
  CmcCurve c;
  if (rankings.empty()) return c;
  const std::size_t m = rankings.front().order.size();
  std::vector<std::size_t> hits(m, 0);
  for (std::size_t p = 0; p < rankings.size(); ++p) {
    if (rankings[p].order.size() != m) throw DataError("cmc_curve: rankings over different gallery sizes");
    ++hits[rankings[p].rank_of(truth[p]) - 1];
  }
  c.rates.resize(m);
  std::size_t acc = 0;
  for (std::size_t k = 0; k < m; ++k) {
    acc += hits[k];
    c.rates[k] = static_cast<double>(acc) / static_cast<double>(rankings.size());
  }
  return c;
}

// Truth keyed by probe_index; a probe without an entry is an error.
inline CmcCurve cmc_curve(std::span<const RankingList> rankings, const std::map<std::size_t, std::size_t>& truth) {
  std::vector<std::size_t> aligned;
  for (const auto& r : rankings) {
    const auto it = truth.find(r.probe_index);
    if (it == truth.end()) throw DataError("cmc_curve: probe " + std::to_string(r.probe_index) + " has no truth");
    aligned.push_back(it->second);
  }
  return cmc_curve(rankings, aligned);
}

inline CmcCurve mean_cmc(std::span<const CmcCurve> curves) {
  CmcCurve out;
  if (curves.empty()) return out;
  out.rates.assign(curves.front().rates.size(), 0.0);
  for (const auto& c : curves) {
    if (c.rates.size() != out.rates.size()) throw DataError("mean_cmc: curves of different length");
    for (std::size_t k = 0; k < c.rates.size(); ++k) out.rates[k] += c.rates[k];
  }
  for (auto& r : out.rates) r /= static_cast<double>(curves.size());
  return out;
}

// ---- post-ranking statistics ----------------------------------------------------------

struct Percentage {
  double mean = 0.0;
  double stddev = 0.0;
};

// Percentages over all probes, except improved_to_top1 which is a share of the
// improved probes.
struct PostrankStats {
  Percentage in_content;
  Percentage improved;
  Percentage improved_to_top1;
  Percentage unchanged;
  Percentage worsened;
};

inline PostrankStats postrank_stats(std::span<const RankingList> before, std::span<const RankingList> after,
                                    std::span<const ContentSet> content, std::span<const std::size_t> truth) {
  const auto n = before.size();
  if (after.size() != n || content.size() != n || truth.size() != n) {
    throw DataError("postrank_stats: before/after/content/truth misaligned");
  }
  std::size_t in = 0, better = 0, top1 = 0, same = 0, worse = 0;
  for (std::size_t p = 0; p < n; ++p) {
    if (before[p].probe_index != after[p].probe_index) throw DataError("postrank_stats: probe order differs");
    if (content[p].contains(truth[p])) ++in;
    const auto rb = before[p].rank_of(truth[p]), ra = after[p].rank_of(truth[p]);
    if (ra < rb) {
      ++better;
      if (ra == 1) ++top1;
    } else if (ra == rb) {
      ++same;
    } else {
      ++worse;
    }
  }
  auto pct = [](std::size_t k, std::size_t of) {
    return Percentage{of == 0 ? 0.0 : 100.0 * static_cast<double>(k) / static_cast<double>(of), 0.0};
  };
  return {pct(in, n), pct(better, n), pct(top1, better), pct(same, n), pct(worse, n)};
}

// Mean and sample standard deviation over runs.
inline PostrankStats combine_stats(std::span<const PostrankStats> runs) {
  PostrankStats out;
  if (runs.empty()) return out;
  auto fold = [&](auto member) {
    double mean = 0.0;
    for (const auto& r : runs) mean += (r.*member).mean;
    mean /= static_cast<double>(runs.size());
    double var = 0.0;
    for (const auto& r : runs) var += ((r.*member).mean - mean) * ((r.*member).mean - mean);
    const double sd = runs.size() > 1 ? std::sqrt(var / static_cast<double>(runs.size() - 1)) : 0.0;
    return Percentage{mean, sd};
  };
  out.in_content = fold(&PostrankStats::in_content);
  out.improved = fold(&PostrankStats::improved);
  out.improved_to_top1 = fold(&PostrankStats::improved_to_top1);
  out.unchanged = fold(&PostrankStats::unchanged);
  out.worsened = fold(&PostrankStats::worsened);
  return out;
}

// ---- configuration -----------------------------------------------------------------

struct ExperimentConfig {
  std::string identities_path;
  std::string features_dir;
  std::vector<Representation> representations{table1_representation(0)};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  int pca_dim = 120;
  int regions = 4;
  TrainConfig train;
  DciaConfig dcia;
  bool postrank = true;
  bool best_n = true;
  std::size_t n_max = 12;
  FeatureConfig features;

  void validate() const {
    if (representations.empty()) throw ConfigError("no representation selected");
    if (seeds.empty()) throw ConfigError("no seeds given");
    auto sorted = seeds;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) throw ConfigError("seeds must be distinct");
    if (pca_dim < 1) throw ConfigError("pca dimension must be positive");
    if (regions < 1) throw ConfigError("region count must be positive");
    if (!(train.lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
    if (train.max_iterations < 0) throw ConfigError("max_iterations must be non-negative");
    if (!(dcia.energy > 0.0 && dcia.energy <= 1.0)) throw ConfigError("energy must be in (0, 1]");
    if (dcia.context_k < 1 || dcia.window < 1) throw ConfigError("K and T must be positive");
    for (std::size_t i = 0; i < representations.size(); ++i)
      for (std::size_t j = i + 1; j < representations.size(); ++j)
        if (representations[i].name == representations[j].name) {
          throw ConfigError("representation '" + representations[i].name + "' listed twice");
        }
    features.palette.validate();
  }
};

namespace detail {

template <typename T>
T config_number(const std::string& key, const std::string& value) {
  try {
    return parse_number<T>(value, key);
  } catch (const FormatError&) {
    throw ConfigError("bad value for " + key + ": '" + value + "'");
  }
}

inline bool config_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "on" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "off" || value == "0" || value == "no") return false;
  throw ConfigError("bad boolean for " + key + ": '" + value + "'");
}

}  // namespace detail

// `key = value` lines grouped in [data], [experiment], [features], [simlearn],
// [postrank] and [representations] (custom name = C1:G,C7:GL) sections.
inline ExperimentConfig parse_config(std::istream& in, const std::filesystem::path& base_dir = {}) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  ExperimentConfig cfg;
  std::vector<Representation> custom;
  std::optional<std::vector<std::string>> selected;

  auto resolve = [&](const std::string& p) {
    const std::filesystem::path path(p);
    return (path.is_relative() && !base_dir.empty() ? base_dir / path : path).string();
  };

  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError("config key '" + section + "' outside a section");
    for (const auto& [key, node] : body) {
      const std::string value = std::string(detail::trim(node.data()));
      const std::string full = section + "." + key;
      if (section == "data") {
        if (key == "identities") {
          cfg.identities_path = resolve(value);
        } else if (key == "features") {
          cfg.features_dir = resolve(value);
        } else {
          throw ConfigError("unknown config key " + full);
        }
      } else if (section == "experiment") {
        if (key == "representations") {
          selected.emplace();
          for (auto item : detail::split_csv_line(value))
            if (!item.empty()) selected->emplace_back(item);
        } else if (key == "seeds") {
          cfg.seeds.clear();
          for (auto item : detail::split_csv_line(value)) cfg.seeds.push_back(detail::config_number<std::uint64_t>(full, std::string(detail::trim(item))));
        } else if (key == "postrank") {
          cfg.postrank = detail::config_bool(full, value);
        } else if (key == "best_n") {
          cfg.best_n = detail::config_bool(full, value);
        } else if (key == "n_max") {
          cfg.n_max = detail::config_number<std::size_t>(full, value);
        } else {
          throw ConfigError("unknown config key " + full);
        }
      } else if (section == "features") {
        auto& f = cfg.features;
        if (key == "pca_dim") {
          cfg.pca_dim = detail::config_number<int>(full, value);
        } else if (key == "regions") {
          cfg.regions = detail::config_number<int>(full, value);
          f.stripes = cfg.regions;
        } else if (key == "siltp_tau") {
          f.siltp_tau = detail::config_number<double>(full, value);
        } else if (key == "hog_bins") {
          f.hog_bins = detail::config_number<int>(full, value);
        } else if (key == "background_blend") {
          f.background_blend = detail::config_number<double>(full, value);
        } else if (key == "palette_nearest") {
          f.palette.nearest = detail::config_number<int>(full, value);
        } else if (key == "palette_bandwidth") {
          f.palette.bandwidth = detail::config_number<double>(full, value);
        } else if (key == "scncd_bins") {
          f.scncd_hist_bins = detail::config_number<int>(full, value);
        } else {
          throw ConfigError("unknown config key " + full);
        }
      } else if (section == "simlearn") {
        auto& t = cfg.train;
        if (key == "gamma") {
          t.gamma = detail::config_number<double>(full, value);
        } else if (key == "lambda") {
          t.lambda = detail::config_number<double>(full, value);
        } else if (key == "max_iterations") {
          t.max_iterations = detail::config_number<int>(full, value);
        } else if (key == "tolerance") {
          t.relative_tolerance = detail::config_number<double>(full, value);
        } else if (key == "negatives_per_positive") {
          t.negatives_per_positive = detail::config_number<int>(full, value);
        } else {
          throw ConfigError("unknown config key " + full);
        }
      } else if (section == "postrank") {
        auto& d = cfg.dcia;
        if (key == "K") {
          d.context_k = detail::config_number<std::size_t>(full, value);
        } else if (key == "energy") {
          d.energy = detail::config_number<double>(full, value);
        } else if (key == "window") {
          d.window = detail::config_number<std::size_t>(full, value);
        } else if (key == "min_content") {
          d.min_content = detail::config_number<std::size_t>(full, value);
        } else {
          throw ConfigError("unknown config key " + full);
        }
      } else if (section == "representations") {
        custom.push_back(parse_representation(key + "=" + value));
      } else {
        throw ConfigError("unknown config section [" + section + "]");
      }
    }
  }

  if (selected) {
    cfg.representations.clear();
    for (const auto& name : *selected) {
      const auto it = std::find_if(custom.begin(), custom.end(), [&](const auto& r) { return r.name == name; });
      cfg.representations.push_back(it != custom.end() ? *it : parse_representation(name));
    }
  } else if (!custom.empty()) {
    cfg.representations = custom;
  }
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  return parse_config(in, std::filesystem::path(path).parent_path());
}

// ---- dataset -------------------------------------------------------------------------

// Records plus raw (pre-PCA) descriptor blocks with rows aligned to records.
struct Dataset {
  std::vector<ImageRecord> records;
  std::map<BlockKey, Eigen::MatrixXd> blocks;
};

inline std::vector<BlockKey> required_blocks(const ExperimentConfig& cfg) {
  std::vector<BlockKey> keys;
  for (const auto& rep : cfg.representations)
    for (const auto& k : rep.blocks(cfg.regions))
      if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  return keys;
}

// Loads <features_dir>/<cue>_<scope>.feat for every block the config needs.
inline Dataset load_dataset(const ExperimentConfig& cfg) {
  Dataset ds;
  ds.records = load_identities(cfg.identities_path);
  for (const auto& k : required_blocks(cfg)) {
    const auto path = (std::filesystem::path(cfg.features_dir) / (block_file_stem(k) + ".feat")).string();
    auto fm = load_feature_matrix(path);
    if (fm.rows() != ds.records.size()) {
      throw DataError(path + ": " + std::to_string(fm.rows()) + " rows for " + std::to_string(ds.records.size()) +
                      " images");
    }
    ds.blocks.emplace(k, fm.as_double());
  }
  return ds;
}

// Writes identities.csv and one FEAT file per block into `dir`.
inline void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "identities.csv");
    if (!out) throw DataError("cannot write " + (dir / "identities.csv").string());
    write_identities(out, ds.records);
  }
  for (const auto& [key, m] : ds.blocks) {
    FeatureMatrix fm;
    fm.descriptor_name = block_file_stem(key);
    fm.values = m.cast<float>();
    save_feature_matrix((dir / (block_file_stem(key) + ".feat")).string(), fm);
  }
}

// Two-view Gaussian clusters: every identity has a random center per cue and
// each view is the center plus small isotropic noise. Only global blocks of
// cues C1..C<cues> are produced.
struct SyntheticSpec {
  int identities = 40;
  int cues = 3;
  int dims = 24;
  double view_noise = 0.1;
  std::uint64_t seed = 7;
};

namespace detail {

// Box-Muller on the portable uniform source, so datasets match across
// standard libraries.
inline double gaussian(Rng& rng) {
  double u = 0.0;
  while (u <= 0.0) u = uniform01(rng);
  const double v = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * std::numbers::pi * v);
}

}  // namespace detail

inline Dataset synthetic_dataset(const SyntheticSpec& spec) {
  if (spec.identities < 2 || spec.cues < 1 || spec.cues > kCueCount || spec.dims < 1) {
    throw ConfigError("bad synthetic dataset shape");
  }
  Rng rng(spec.seed);
  Dataset ds;
  for (int id = 1; id <= spec.identities; ++id) {
    for (auto cam : {Camera::A, Camera::B}) {
      ImageRecord r;
      r.image_id = "p" + std::to_string(id) + "_" + camera_char(cam);
      r.person_id = id;
      r.camera = cam;
      ds.records.push_back(r);
    }
  }
  for (int c = 0; c < spec.cues; ++c) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(ds.records.size()), spec.dims);
    for (int id = 0; id < spec.identities; ++id) {
      Eigen::VectorXd center(spec.dims);
      for (auto& x : center) x = detail::gaussian(rng);
      for (int view = 0; view < 2; ++view) {
        auto row = m.row(2 * id + view);
        for (int j = 0; j < spec.dims; ++j) row[j] = center[j] + spec.view_noise * detail::gaussian(rng);
      }
    }
    ds.blocks.emplace(BlockKey{static_cast<Cue>(c), kGlobalRegion}, std::move(m));
  }
  return ds;
}

// ---- protocol ------------------------------------------------------------------------

// One representation evaluated on one (train, eval) identity partition.
struct RepOutcome {
  std::vector<RankingList> initial;
  std::vector<RankingList> postranked;
  std::vector<ContentSet> content;
  bool postrank_applied = false;
};

struct SeedResult {
  std::uint64_t seed = 0;
  std::vector<RepOutcome> reps;          // test-set outcome per representation
  std::vector<double> validation_top1;   // per representation, empty without best-n
  std::vector<std::size_t> aggregated;   // representation indices that were aggregated
  std::vector<RankingList> aggregate;    // empty with a single representation
};

namespace detail {

inline double top1_rate(std::span<const RankingList> rankings) {
  if (rankings.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t p = 0; p < rankings.size(); ++p)
    if (rankings[p].order.front() == p) ++hits;
  return static_cast<double>(hits) / static_cast<double>(rankings.size());
}

inline std::vector<std::size_t> identity_truth(std::size_t n) {
  std::vector<std::size_t> t(n);
  std::iota(t.begin(), t.end(), std::size_t{0});
  return t;
}

struct ViewRows {
  std::vector<Eigen::Index> probes;
  std::vector<Eigen::Index> gallery;
};

inline ViewRows view_rows(const Split& split, const std::vector<int>& ids) {
  ViewRows v;
  for (int id : ids) {
    const auto& vp = split.views.at(id);
    v.probes.push_back(static_cast<Eigen::Index>(vp.probe));
    v.gallery.push_back(static_cast<Eigen::Index>(vp.gallery));
  }
  return v;
}

inline Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& m, std::span<const Eigen::Index> rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

inline void normalize_rows(Eigen::MatrixXd& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double n = m.row(i).norm();
    if (n > 0.0) m.row(i) /= n;
  }
}

// DCIA for every probe of a probe/gallery bank pair.
inline std::vector<DciaResult> run_dcia(const SimilarityModel& model, const DescriptorBank& probes,
                                        const DescriptorBank& gallery, std::span<const RankingList> rankings,
                                        const DciaConfig& cfg) {
  const Eigen::MatrixXd pv = concatenated(probes);
  const Eigen::MatrixXd gv = concatenated(gallery);
  const auto ranker = gallery_neighbor_ranker(model, gallery);
  std::vector<DciaResult> out;
  out.reserve(rankings.size());
  for (std::size_t p = 0; p < rankings.size(); ++p) {
    out.push_back(dcia(rankings[p], pv.row(static_cast<Eigen::Index>(p)).transpose(), gv, ranker, cfg));
  }
  return out;
}

inline std::vector<RankingList> rank_all(const SimilarityModel& model, const DescriptorBank& probes,
                                         const DescriptorBank& gallery) {
  std::vector<RankingList> out;
  for (Eigen::Index p = 0; p < probes.images(); ++p) out.push_back(rank_gallery(model, probes, p, gallery));
  return out;
}

}  // namespace detail

// A representation's PCA projections, similarity model and (optional)
// post-ranking model, trained on one identity set.
struct TrainedRepresentation {
  Representation rep;
  int regions = 4;
  std::map<BlockKey, PcaModel> pca;
  SimilarityModel model;
  std::optional<SimilarityModel> postrank_model;

  // Projected, unit-norm descriptors for the given dataset rows.
  DescriptorBank project(const Dataset& ds, std::span<const Eigen::Index> rows) const {
    DescriptorBank bank;
    for (const auto& key : rep.blocks(regions)) {
      const auto it = ds.blocks.find(key);
      if (it == ds.blocks.end()) throw ConfigError("dataset lacks descriptor block " + block_file_stem(key));
      const auto p = pca.find(key);
      if (p == pca.end()) throw ConfigError("no PCA model for block " + block_file_stem(key));
      Eigen::MatrixXd raw = detail::gather_rows(it->second, rows);
      detail::normalize_rows(raw);
      bank.blocks.emplace(key, apply_pca_rows(p->second, raw));
    }
    return bank;
  }
};

inline TrainedRepresentation train_representation(const ExperimentConfig& cfg, const Dataset& ds, const Split& split,
                                                  const Representation& rep, const std::vector<int>& train_ids,
                                                  std::uint64_t seed) {
  const auto train = detail::view_rows(split, train_ids);
  TrainedRepresentation tr;
  tr.rep = rep;
  tr.regions = cfg.regions;
  in_stage("pca", [&] {
    for (const auto& key : rep.blocks(cfg.regions)) {
      const auto it = ds.blocks.find(key);
      if (it == ds.blocks.end()) throw ConfigError("dataset lacks descriptor block " + block_file_stem(key));
      Eigen::MatrixXd fit(static_cast<Eigen::Index>(train.probes.size() * 2), it->second.cols());
      fit << detail::gather_rows(it->second, train.probes), detail::gather_rows(it->second, train.gallery);
      detail::normalize_rows(fit);
      tr.pca.emplace(key, fit_pca(fit, cfg.pca_dim));
    }
  });
  const auto train_p = tr.project(ds, train.probes);
  const auto train_g = tr.project(ds, train.gallery);

  TrainConfig tc = cfg.train;
  tc.seed = stage_rng(seed, 0x7261696E)();
  tr.model = in_stage("train", [&] { return train_model(rep, cfg.regions, train_p, train_g, tc); });
  if (!cfg.postrank) return tr;

  const auto train_dcia = in_stage("train dcia", [&] {
    return detail::run_dcia(tr.model, train_p, train_g, detail::rank_all(tr.model, train_p, train_g), cfg.dcia);
  });
  try {
    tr.postrank_model = train_postrank_model(train_dcia, detail::identity_truth(train_dcia.size()), tc,
                                             cfg.dcia.min_content);
  } catch (const DataError& e) {
    log_warning(rep.name + ": post-ranking skipped (" + e.what() + ")");
  }
  return tr;
}

// Rank probes against gallery (row i of each is identity i) and post-rank when
// a post-ranking model exists.
inline RepOutcome evaluate_trained(const ExperimentConfig& cfg, const TrainedRepresentation& tr, const Dataset& ds,
                                   std::span<const Eigen::Index> probe_rows, std::span<const Eigen::Index> gallery_rows) {
  const auto eval_p = tr.project(ds, probe_rows);
  const auto eval_g = tr.project(ds, gallery_rows);
  RepOutcome out;
  out.initial = in_stage("rank", [&] { return detail::rank_all(tr.model, eval_p, eval_g); });
  out.postranked = out.initial;
  if (!cfg.postrank) return out;
  const auto eval_dcia = in_stage("dcia", [&] { return detail::run_dcia(tr.model, eval_p, eval_g, out.initial, cfg.dcia); });
  for (const auto& r : eval_dcia) out.content.push_back(r.content);
  if (!tr.postrank_model) return out;
  out.postrank_applied = true;
  for (std::size_t p = 0; p < eval_dcia.size(); ++p) {
    out.postranked[p] = postrank(out.initial[p], eval_dcia[p], *tr.postrank_model);
  }
  return out;
}

// Train on `train_ids`, evaluate on `eval_ids` (probe i and gallery i belong to eval_ids[i]).
inline RepOutcome evaluate_representation(const ExperimentConfig& cfg, const Dataset& ds, const Split& split,
                                          const Representation& rep, const std::vector<int>& train_ids,
                                          const std::vector<int>& eval_ids, std::uint64_t seed) {
  const auto tr = train_representation(cfg, ds, split, rep, train_ids, seed);
  const auto eval = detail::view_rows(split, eval_ids);
  return evaluate_trained(cfg, tr, ds, eval.probes, eval.gallery);
}

inline SeedResult run_seed(const ExperimentConfig& cfg, const Dataset& ds, std::uint64_t seed) {
  SeedResult res;
  res.seed = seed;
  const auto split = in_stage("split", [&] { return make_split(ds.records, seed); });
  const auto n_reps = cfg.representations.size();

  std::vector<std::size_t> chosen(n_reps);
  std::iota(chosen.begin(), chosen.end(), std::size_t{0});
  if (cfg.best_n && n_reps >= 2) {
    const auto [fit_ids, val_ids] = halve_identities(split.train_ids, stage_rng(seed, 0x76616C)());
    std::vector<std::vector<RankingList>> val_rankings;
    for (const auto& rep : cfg.representations) {
      auto o = in_stage("validation " + rep.name,
                        [&] { return evaluate_representation(cfg, ds, split, rep, fit_ids, val_ids, seed); });
      res.validation_top1.push_back(detail::top1_rate(o.postranked));
      val_rankings.push_back(std::move(o.postranked));
    }
    const auto sel = best_n_select(res.validation_top1, val_rankings, detail::identity_truth(val_ids.size()),
                                   cfg.n_max);
    chosen.assign(sel.ranked.begin(), sel.ranked.begin() + static_cast<std::ptrdiff_t>(sel.chosen_n));
  }

  for (const auto& rep : cfg.representations) {
    res.reps.push_back(in_stage(
        rep.name, [&] { return evaluate_representation(cfg, ds, split, rep, split.train_ids, split.test_ids, seed); }));
  }
  if (n_reps >= 2) {
    res.aggregated = chosen;
    const auto probes = res.reps.front().postranked.size();
    std::vector<RankingList> lists;
    for (std::size_t p = 0; p < probes; ++p) {
      lists.clear();
      for (auto i : chosen) lists.push_back(res.reps[i].postranked[p]);
      res.aggregate.push_back(aggregate_ranking(lists));
    }
  }
  return res;
}

struct StageSummary {
  std::string name;
  CmcCurve mean;
  std::vector<double> top1_per_seed;
};

struct ExperimentReport {
  std::vector<std::uint64_t> seeds;
  std::vector<StageSummary> stages;  // "<rep>/initial", "<rep>/postrank", then "aggregate"
  std::vector<std::pair<std::string, PostrankStats>> postrank;  // per representation
  std::vector<std::vector<std::string>> aggregated_per_seed;    // representation names
  std::vector<std::vector<double>> validation_top1_per_seed;

  const StageSummary& stage(const std::string& name) const {
    for (const auto& s : stages)
      if (s.name == name) return s;
    throw DataError("report has no stage " + name);
  }
};

inline ExperimentReport run_experiment(const ExperimentConfig& cfg, const Dataset& ds) {
  cfg.validate();
  std::vector<SeedResult> results;
  for (auto seed : cfg.seeds) {
    results.push_back(in_stage("seed " + std::to_string(seed), [&] { return run_seed(cfg, ds, seed); }));
  }

  ExperimentReport report;
  report.seeds = cfg.seeds;
  auto add_stage = [&](const std::string& name, auto pick) {
    StageSummary s;
    s.name = name;
    std::vector<CmcCurve> curves;
    for (const auto& r : results) {
      const std::vector<RankingList>& lists = pick(r);
      curves.push_back(cmc_curve(lists, detail::identity_truth(lists.size())));
      s.top1_per_seed.push_back(curves.back().at_rank(1));
    }
    s.mean = mean_cmc(curves);
    report.stages.push_back(std::move(s));
  };
  for (std::size_t i = 0; i < cfg.representations.size(); ++i) {
    const auto& name = cfg.representations[i].name;
    add_stage(name + "/initial", [i](const SeedResult& r) -> const std::vector<RankingList>& { return r.reps[i].initial; });
    add_stage(name + "/postrank",
              [i](const SeedResult& r) -> const std::vector<RankingList>& { return r.reps[i].postranked; });
    if (cfg.postrank) {
      std::vector<PostrankStats> runs;
      for (const auto& r : results) {
        const auto& o = r.reps[i];
        runs.push_back(postrank_stats(o.initial, o.postranked, o.content, detail::identity_truth(o.initial.size())));
      }
      report.postrank.emplace_back(name, combine_stats(runs));
    }
  }
  if (cfg.representations.size() >= 2) {
    add_stage("aggregate", [](const SeedResult& r) -> const std::vector<RankingList>& { return r.aggregate; });
  }
  for (const auto& r : results) {
    std::vector<std::string> names;
    for (auto i : r.aggregated) names.push_back(cfg.representations[i].name);
    report.aggregated_per_seed.push_back(std::move(names));
    report.validation_top1_per_seed.push_back(r.validation_top1);
  }
  return report;
}

inline ExperimentReport run_experiment(const ExperimentConfig& cfg) { return run_experiment(cfg, load_dataset(cfg)); }

// ---- report files -----------------------------------------------------------------------

namespace detail {

inline std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace detail

inline std::string format_cmc_csv(const ExperimentReport& r) {
  std::ostringstream out;
  out << "stage,rank,rate\n";
  for (const auto& s : r.stages)
    for (std::size_t k = 0; k < s.mean.rates.size(); ++k)
      out << s.name << ',' << (k + 1) << ',' << detail::fixed(s.mean.rates[k]) << '\n';
  return out.str();
}

inline std::string format_top1_csv(const ExperimentReport& r) {
  std::ostringstream out;
  out << "stage,seed,top1\n";
  for (const auto& s : r.stages)
    for (std::size_t i = 0; i < s.top1_per_seed.size(); ++i)
      out << s.name << ',' << r.seeds[i] << ',' << detail::fixed(s.top1_per_seed[i]) << '\n';
  return out.str();
}

inline std::string format_postrank_csv(const ExperimentReport& r) {
  std::ostringstream out;
  out << "representation,metric,mean,std\n";
  for (const auto& [name, st] : r.postrank) {
    const std::pair<const char*, Percentage> rows[] = {{"in_content", st.in_content},
                                                       {"improved", st.improved},
                                                       {"improved_to_top1", st.improved_to_top1},
                                                       {"unchanged", st.unchanged},
                                                       {"worsened", st.worsened}};
    for (const auto& [metric, p] : rows)
      out << name << ',' << metric << ',' << detail::fixed(p.mean, 3) << ',' << detail::fixed(p.stddev, 3) << '\n';
  }
  return out.str();
}

inline std::string format_summary(const ExperimentReport& r) {
  std::ostringstream out;
  out << "seeds:";
  for (auto s : r.seeds) out << ' ' << s;
  out << "\n\n";
  char line[256];
  std::snprintf(line, sizeof line, "%-28s %8s %8s %8s %8s\n", "stage", "r1", "r5", "r10", "r20");
  out << line;
  for (const auto& s : r.stages) {
    std::snprintf(line, sizeof line, "%-28s %8.2f %8.2f %8.2f %8.2f\n", s.name.c_str(), 100 * s.mean.at_rank(1),
                  100 * s.mean.at_rank(5), 100 * s.mean.at_rank(10), 100 * s.mean.at_rank(20));
    out << line;
  }
  if (!r.postrank.empty()) {
    out << "\npost-ranking (% of probes; improved-to-top1 as % of improved)\n";
    for (const auto& [name, st] : r.postrank) {
      std::snprintf(line, sizeof line,
                    "%-12s in-content %.1f+-%.1f  improved %.1f+-%.1f  to-top1 %.1f+-%.1f  unchanged %.1f+-%.1f  "
                    "worsened %.1f+-%.1f\n",
                    name.c_str(), st.in_content.mean, st.in_content.stddev, st.improved.mean, st.improved.stddev,
                    st.improved_to_top1.mean, st.improved_to_top1.stddev, st.unchanged.mean, st.unchanged.stddev,
                    st.worsened.mean, st.worsened.stddev);
      out << line;
    }
  }
  bool any_agg = false;
  for (const auto& names : r.aggregated_per_seed) any_agg = any_agg || !names.empty();
  if (any_agg) {
    out << "\naggregated representations per seed\n";
    for (std::size_t i = 0; i < r.aggregated_per_seed.size(); ++i) {
      out << "  seed " << r.seeds[i] << ':';
      for (const auto& n : r.aggregated_per_seed[i]) out << ' ' << n;
      out << '\n';
    }
  }
  return out.str();
}

inline void write_report(const std::filesystem::path& dir, const ExperimentReport& r) {
  std::filesystem::create_directories(dir);
  const std::pair<const char*, std::string> files[] = {{"cmc.csv", format_cmc_csv(r)},
                                                       {"top1.csv", format_top1_csv(r)},
                                                       {"postrank_stats.csv", format_postrank_csv(r)},
                                                       {"summary.txt", format_summary(r)}};
  for (const auto& [name, body] : files) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw DataError("cannot write " + (dir / name).string());
    out << body;
  }
}

}  // namespace reid
