#pragma once

// Shared by the eval tests and the acceptance runner: a synthetic experiment on
// disk and a way to call the CLI.

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "reid/eval.hpp"

namespace fixture {

namespace fs = std::filesystem;

inline fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("reid_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Three single-cue representations over the synthetic cues C1..C3.
inline reid::ExperimentConfig synthetic_config(std::size_t seeds = 10) {
  reid::ExperimentConfig cfg;
  cfg.representations = {reid::parse_representation("S1=C1:G"), reid::parse_representation("S2=C2:G"),
                         reid::parse_representation("S3=C3:G")};
  cfg.seeds.clear();
  for (std::size_t s = 1; s <= seeds; ++s) cfg.seeds.push_back(s);
  cfg.pca_dim = 16;
  return cfg;
}

inline std::string synthetic_config_text(std::size_t seeds) {
  std::ostringstream out;
  out << "[data]\nidentities = data/identities.csv\nfeatures = data\n\n";
  out << "[experiment]\nrepresentations = S1,S2,S3\nseeds = ";
  for (std::size_t s = 1; s <= seeds; ++s) out << (s > 1 ? "," : "") << s;
  out << "\n\n[features]\npca_dim = 16\n\n";
  out << "[representations]\nS1 = C1:G\nS2 = C2:G\nS3 = C3:G\n";
  return out.str();
}

// Writes data/ and experiment.ini under `dir`; returns the config path.
inline fs::path write_synthetic_experiment(const fs::path& dir, std::size_t seeds) {
  reid::save_dataset(dir / "data", reid::synthetic_dataset({}));
  const auto path = dir / "experiment.ini";
  std::ofstream(path) << synthetic_config_text(seeds);
  return path;
}

// Exit status of the CLI, output discarded.
inline int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + REID_CLI_PATH + "\" " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace fixture
