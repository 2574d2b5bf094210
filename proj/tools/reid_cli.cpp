// reid: command-line front end for the re-identification pipeline.
//
//   reid extract   --config C --images DIR [--masks DIR] [--out DIR] [--cues C1,C5]
//   reid train     --config C --representation F3 [--seed S] --out MODEL_DIR
//   reid rank      --config C --model MODEL_DIR [--seed S] --out rankings.csv
//   reid postrank  --config C --model MODEL_DIR --rankings in.csv --out out.csv [--content c.csv]
//   reid aggregate --out agg.csv [--statistics s.csv] a.csv b.csv ...
//   reid eval      --config C --out REPORT_DIR
//   reid stats     --identities ids.csv --before a.csv --after b.csv --content c.csv

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "reid/eval.hpp"

namespace fs = std::filesystem;
using namespace reid;

namespace {

std::ifstream open_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return in;
}

std::ofstream create_text(const std::string& path) {
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  return out;
}

std::uint64_t pick_seed(const ExperimentConfig& cfg, std::optional<std::uint64_t> seed) {
  return seed ? *seed : cfg.seeds.front();
}

// Rows of the split's test half plus their image ids.
struct TestSide {
  std::vector<Eigen::Index> probes, gallery;
  std::vector<std::string> probe_ids, gallery_ids;
};

TestSide test_side(const Dataset& ds, const Split& split) {
  TestSide t;
  for (int id : split.test_ids) {
    const auto& v = split.views.at(id);
    t.probes.push_back(static_cast<Eigen::Index>(v.probe));
    t.gallery.push_back(static_cast<Eigen::Index>(v.gallery));
    t.probe_ids.push_back(ds.records[v.probe].image_id);
    t.gallery_ids.push_back(ds.records[v.gallery].image_id);
  }
  return t;
}

std::map<std::string, Eigen::Index> row_index(const Dataset& ds) {
  std::map<std::string, Eigen::Index> out;
  for (std::size_t i = 0; i < ds.records.size(); ++i) out.emplace(ds.records[i].image_id, static_cast<Eigen::Index>(i));
  return out;
}

// ---- model directories ---------------------------------------------------------

void save_trained(const fs::path& dir, const TrainedRepresentation& tr, std::uint64_t seed) {
  fs::create_directories(dir);
  boost::property_tree::ptree meta;
  meta.put("model.representation", representation_spec(tr.rep));
  meta.put("model.regions", tr.regions);
  meta.put("model.seed", seed);
  meta.put("model.postrank", tr.postrank_model.has_value());
  boost::property_tree::write_ini((dir / "model.ini").string(), meta);
  save_model((dir / "similarity.simw").string(), tr.model);
  if (tr.postrank_model) save_model((dir / "postrank.simw").string(), *tr.postrank_model);
  for (const auto& [key, pca] : tr.pca) save_pca((dir / (block_file_stem(key) + ".pcam")).string(), pca);
}

TrainedRepresentation load_trained(const fs::path& dir) {
  boost::property_tree::ptree meta;
  try {
    boost::property_tree::read_ini((dir / "model.ini").string(), meta);
  } catch (const boost::property_tree::ptree_error& e) {
    throw DataError(std::string("model directory: ") + e.what());
  }
  TrainedRepresentation tr;
  try {
    tr.rep = parse_representation(meta.get<std::string>("model.representation"));
    tr.regions = meta.get<int>("model.regions");
    if (meta.get<bool>("model.postrank", false)) tr.postrank_model = load_model((dir / "postrank.simw").string());
  } catch (const boost::property_tree::ptree_error& e) {
    throw DataError(std::string("model.ini: ") + e.what());
  }
  tr.model = load_model((dir / "similarity.simw").string());
  for (const auto& key : tr.rep.blocks(tr.regions)) {
    tr.pca.emplace(key, load_pca((dir / (block_file_stem(key) + ".pcam")).string()));
  }
  return tr;
}

// ---- subcommands ------------------------------------------------------------------

struct ExtractArgs {
  std::string config, images, masks, out, cues = "C1,C2,C3,C4,C5,C6";
};

int run_extract(const ExtractArgs& a) {
  const auto cfg = load_config(a.config);
  const auto records = load_identities(cfg.identities_path);
  const auto out_dir = a.out.empty() ? cfg.features_dir : a.out;
  if (out_dir.empty()) throw ConfigError("no output directory (--out or [data] features)");

  std::vector<Cue> cues;
  for (auto item : detail::split_csv_line(a.cues)) {
    const Cue c = parse_cue(item);
    if (!is_handcrafted(c)) throw ConfigError(cue_name(c) + " is not extracted from images");
    cues.push_back(c);
  }
  const auto base = fs::path(cfg.identities_path).parent_path();

  std::map<BlockKey, FloatMatrix> blocks;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const fs::path path = r.source_path ? base / *r.source_path : fs::path(a.images) / (r.image_id + ".ppm");
    const auto image = load_image(path.string());
    std::optional<ForegroundMask> mask;
    if (!a.masks.empty()) mask = load_mask((fs::path(a.masks) / (r.image_id + ".pgm")).string());
    for (Cue c : cues) {
      const auto d = assemble_cue(image, c, mask ? &*mask : nullptr, cfg.features);
      auto put = [&](const BlockKey& key, const Eigen::VectorXd& v) {
        auto& m = blocks[key];
        if (m.rows() == 0) m.resize(static_cast<Eigen::Index>(records.size()), v.size());
        m.row(static_cast<Eigen::Index>(i)) = v.cast<float>().transpose();
      };
      put({c, kGlobalRegion}, d.global);
      for (std::size_t s = 0; s < d.local.size(); ++s) put({c, static_cast<int>(s)}, d.local[s]);
    }
  }
  fs::create_directories(out_dir);
  for (auto& [key, m] : blocks) {
    FeatureMatrix fm;
    fm.descriptor_name = block_file_stem(key);
    fm.values = std::move(m);
    save_feature_matrix((fs::path(out_dir) / (fm.descriptor_name + ".feat")).string(), fm);
  }
  std::cout << "extracted " << blocks.size() << " blocks for " << records.size() << " images\n";
  return 0;
}

int run_train(const std::string& config, const std::string& representation, std::optional<std::uint64_t> seed_opt,
              const std::string& out) {
  auto cfg = load_config(config);
  // a name from the config's representation list, else a table row or inline definition
  const auto it = std::find_if(cfg.representations.begin(), cfg.representations.end(),
                               [&](const Representation& r) { return r.name == representation; });
  const auto rep = it != cfg.representations.end() ? *it : parse_representation(representation);
  cfg.representations = {rep};
  const auto seed = pick_seed(cfg, seed_opt);
  const auto ds = load_dataset(cfg);
  const auto split = make_split(ds.records, seed);
  const auto tr = train_representation(cfg, ds, split, rep, split.train_ids, seed);
  save_trained(out, tr, seed);
  std::cout << "trained " << rep.name << " on " << split.train_ids.size() << " identities (seed " << seed << ")\n";
  return 0;
}

int run_rank(const std::string& config, const std::string& model_dir, std::optional<std::uint64_t> seed_opt,
             const std::string& out) {
  auto cfg = load_config(config);
  const auto tr = load_trained(model_dir);
  cfg.representations = {tr.rep};
  cfg.regions = tr.regions;
  const auto seed = pick_seed(cfg, seed_opt);
  const auto ds = load_dataset(cfg);
  const auto side = test_side(ds, make_split(ds.records, seed));
  const auto probes = tr.project(ds, side.probes);
  const auto gallery = tr.project(ds, side.gallery);
  RankingTable table{side.probe_ids, side.gallery_ids, {}};
  for (Eigen::Index p = 0; p < probes.images(); ++p) table.rankings.push_back(rank_gallery(tr.model, probes, p, gallery));
  auto f = create_text(out);
  write_rankings(f, table);
  return 0;
}

int run_postrank(const std::string& config, const std::string& model_dir, const std::string& rankings_path,
                 const std::string& out, const std::string& content_out) {
  auto cfg = load_config(config);
  const auto tr = load_trained(model_dir);
  cfg.representations = {tr.rep};
  cfg.regions = tr.regions;
  if (!tr.postrank_model) throw ConfigError(model_dir + " holds no post-ranking model");
  auto in = open_text(rankings_path);
  auto table = read_rankings(in);
  const auto ds = load_dataset(cfg);
  const auto rows = row_index(ds);
  auto lookup = [&](const std::vector<std::string>& ids) {
    std::vector<Eigen::Index> out_rows;
    for (const auto& id : ids) {
      const auto it = rows.find(id);
      if (it == rows.end()) throw DataError("image " + id + " is not in the identities file");
      out_rows.push_back(it->second);
    }
    return out_rows;
  };
  const auto probes = tr.project(ds, lookup(table.probe_ids));
  const auto gallery = tr.project(ds, lookup(table.gallery_ids));
  const Eigen::MatrixXd pv = concatenated(probes), gv = concatenated(gallery);
  const auto ranker = gallery_neighbor_ranker(tr.model, gallery);
  std::vector<ContentSet> content;
  for (std::size_t p = 0; p < table.rankings.size(); ++p) {
    auto& r = table.rankings[p];
    r.probe_index = p;
    const auto res = dcia(r, pv.row(static_cast<Eigen::Index>(p)).transpose(), gv, ranker, cfg.dcia);
    r = postrank(r, res, *tr.postrank_model);
    content.push_back(res.content);
  }
  auto f = create_text(out);
  write_rankings(f, table);
  if (!content_out.empty()) {
    auto c = create_text(content_out);
    write_content_sets(c, table.probe_ids, table.gallery_ids, content);
  }
  return 0;
}

int run_aggregate(const std::vector<std::string>& inputs, const std::string& out, const std::string& stats_out) {
  if (inputs.size() < 2) throw ConfigError("aggregate needs at least 2 ranking files");
  std::vector<RankingTable> tables;
  for (const auto& path : inputs) {
    auto in = open_text(path);
    tables.push_back(in_stage(path, [&] { return read_rankings(in); }));
  }
  const auto& first = tables.front();
  for (const auto& t : tables) {
    if (t.probe_ids != first.probe_ids || t.gallery_ids != first.gallery_ids) {
      throw DataError("ranking files cover different probes or galleries");
    }
  }
  RankingTable result{first.probe_ids, first.gallery_ids, {}};
  std::vector<AggregationResult> stats;
  std::vector<RankingList> lists;
  for (std::size_t p = 0; p < first.rankings.size(); ++p) {
    lists.clear();
    for (const auto& t : tables) lists.push_back(t.rankings[p]);
    result.rankings.push_back(aggregate_ranking(lists));
    stats.push_back(aggregate(lists));
  }
  auto f = create_text(out);
  write_rankings(f, result);
  if (!stats_out.empty()) {
    auto s = create_text(stats_out);
    s << "probe_id,gallery_id,statistic\n";
    char buf[64];
    for (std::size_t p = 0; p < stats.size(); ++p)
      for (auto g : stats[p].order) {
        std::snprintf(buf, sizeof buf, "%.9g", stats[p].scores[g]);
        s << result.probe_ids[p] << ',' << result.gallery_ids[g] << ',' << buf << '\n';
      }
  }
  return 0;
}

int run_eval(const std::string& config, const std::string& out) {
  const auto cfg = load_config(config);
  const auto report = run_experiment(cfg);
  write_report(out, report);
  std::cout << format_summary(report);
  return 0;
}

int run_stats(const std::string& identities, const std::string& before_path, const std::string& after_path,
              const std::string& content_path) {
  const auto records = load_identities(identities);
  std::map<std::string, int> person;
  for (const auto& r : records) person.emplace(r.image_id, r.person_id);
  auto person_of = [&](const std::string& id) {
    const auto it = person.find(id);
    if (it == person.end()) throw DataError("image " + id + " is not in the identities file");
    return it->second;
  };
  auto bin = open_text(before_path);
  auto ain = open_text(after_path);
  auto cin = open_text(content_path);
  const auto before = read_rankings(bin);
  const auto after = read_rankings(ain);
  const auto content_ids = read_content_sets(cin);
  if (before.probe_ids != after.probe_ids || before.gallery_ids != after.gallery_ids) {
    throw DataError("before/after rankings are misaligned");
  }
  std::vector<std::size_t> truth;
  std::vector<ContentSet> content;
  for (std::size_t p = 0; p < before.probe_ids.size(); ++p) {
    const int pid = person_of(before.probe_ids[p]);
    std::optional<std::size_t> match;
    for (std::size_t g = 0; g < before.gallery_ids.size(); ++g)
      if (person_of(before.gallery_ids[g]) == pid) match = g;
    if (!match) throw DataError("probe " + before.probe_ids[p] + " has no true match in the gallery");
    truth.push_back(*match);
    ContentSet cs;
    cs.probe_index = p;
    if (const auto it = content_ids.find(before.probe_ids[p]); it != content_ids.end()) {
      for (const auto& gid : it->second) {
        const auto pos = std::find(before.gallery_ids.begin(), before.gallery_ids.end(), gid);
        if (pos == before.gallery_ids.end()) throw DataError("content member " + gid + " is not in the gallery");
        cs.members.push_back(static_cast<std::size_t>(pos - before.gallery_ids.begin()));
      }
    }
    content.push_back(std::move(cs));
  }
  const auto s = postrank_stats(before.rankings, after.rankings, content, truth);
  std::printf("in_content %.3f\nimproved %.3f\nimproved_to_top1 %.3f\nunchanged %.3f\nworsened %.3f\n",
              s.in_content.mean, s.improved.mean, s.improved_to_top1.mean, s.unchanged.mean, s.worsened.mean);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"person re-identification pipeline"};
  app.require_subcommand(1);

  ExtractArgs ex;
  auto* extract = app.add_subcommand("extract", "images and masks to FEAT descriptor files");
  extract->add_option("--config", ex.config)->required();
  extract->add_option("--images", ex.images, "directory of <image_id>.ppm files");
  extract->add_option("--masks", ex.masks, "directory of <image_id>.pgm foreground masks");
  extract->add_option("--out", ex.out, "output directory (default: [data] features)");
  extract->add_option("--cues", ex.cues);

  std::string config, model_dir, out, representation, rankings, content, statistics, identities, before, after;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> inputs;

  auto* train = app.add_subcommand("train", "fit PCA, similarity and post-ranking models on a split's train half");
  train->add_option("--config", config)->required();
  train->add_option("--representation", representation)->required();
  train->add_option("--seed", seed);
  train->add_option("--out", out)->required();

  auto* rank = app.add_subcommand("rank", "rank the test half of a split");
  rank->add_option("--config", config)->required();
  rank->add_option("--model", model_dir)->required();
  rank->add_option("--seed", seed);
  rank->add_option("--out", out)->required();

  auto* post = app.add_subcommand("postrank", "DCIA post-ranking of a rankings file");
  post->add_option("--config", config)->required();
  post->add_option("--model", model_dir)->required();
  post->add_option("--rankings", rankings)->required();
  post->add_option("--out", out)->required();
  post->add_option("--content", content, "write content sets here");

  auto* agg = app.add_subcommand("aggregate", "Stuart aggregation of ranking files");
  agg->add_option("inputs", inputs)->required();
  agg->add_option("--out", out)->required();
  agg->add_option("--statistics", statistics, "write per-item statistics here");

  auto* ev = app.add_subcommand("eval", "full protocol over all configured seeds");
  ev->add_option("--config", config)->required();
  ev->add_option("--out", out)->required();

  auto* st = app.add_subcommand("stats", "post-ranking statistics");
  st->add_option("--identities", identities)->required();
  st->add_option("--before", before)->required();
  st->add_option("--after", after)->required();
  st->add_option("--content", content)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*extract) return run_extract(ex);
    if (*train) return run_train(config, representation, seed, out);
    if (*rank) return run_rank(config, model_dir, seed, out);
    if (*post) return run_postrank(config, model_dir, rankings, out, content);
    if (*agg) return run_aggregate(inputs, out, statistics);
    if (*ev) return run_eval(config, out);
    if (*st) return run_stats(identities, before, after, content);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
