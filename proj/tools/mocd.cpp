#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mocd/dataio.hpp"
#include "mocd/experiment.hpp"
#include "mocd/numfmt.hpp"

namespace {

int env_threads() {
  const char* v = std::getenv("MOCD_THREADS");
  if (!v || !*v) return 1;
  const long n = mocd::parse_long(v);
  if (n < 1) throw std::invalid_argument("MOCD_THREADS must be a positive integer");
  return static_cast<int>(n);
}

mocd::ExperimentConfig load_config(const std::string& path) {
  mocd::ExperimentConfig cfg = mocd::load_experiment_config(path);
  cfg.train.threads = env_threads();
  return cfg;
}

std::vector<double> parse_values(const std::string& csv) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    const auto comma = csv.find(',', start);
    const auto end = comma == std::string::npos ? csv.size() : comma;
    out.push_back(mocd::parse_double(std::string_view(csv).substr(start, end - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Open-set multi-view classification with O-Mix"};
  app.require_subcommand(1);

  std::string spec_path;
  std::string out_dir;
  auto* gen = app.add_subcommand("generate", "Write a synthetic multi-view dataset");
  gen->add_option("--spec", spec_path, "synthetic spec JSON")->required();
  gen->add_option("--out", out_dir, "output directory")->required();

  std::string config_path;
  auto* run = app.add_subcommand("run", "Train and evaluate one configuration");
  run->add_option("--config", config_path, "experiment config JSON")->required();

  std::string grid;
  auto* ablate = app.add_subcommand("ablate", "Run the component ablation grid");
  ablate->add_option("--config", config_path, "experiment config JSON")->required();
  ablate->add_option("--grid", grid, "grid name")->required()->check(CLI::IsMember({"table3"}));

  std::string values;
  auto* sweep = app.add_subcommand("sweep-openness", "Run one configuration across openness levels");
  sweep->add_option("--config", config_path, "experiment config JSON")->required();
  sweep->add_option("--values", values, "comma-separated target openness values")->required();

  std::vector<std::string> dirs;
  auto* rep = app.add_subcommand("report", "Merge metrics.json files into one CSV on stdout");
  rep->add_option("dirs", dirs, "run directories")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      std::ifstream in(spec_path);
      if (!in) throw std::invalid_argument("cannot open spec " + spec_path);
      std::uint64_t seed = 0;
      const auto spec = mocd::parse_synthetic_spec(nlohmann::json::parse(in), &seed);
      mocd::save_dataset(mocd::generate_synthetic(spec, seed), out_dir);
    } else if (*run) {
      const auto cfg = load_config(config_path);
      mocd::run_experiment(cfg, cfg.output_dir);
    } else if (*ablate) {
      const auto cfg = load_config(config_path);
      mocd::run_ablation(cfg, cfg.output_dir);
    } else if (*sweep) {
      const auto cfg = load_config(config_path);
      mocd::run_openness_sweep(cfg, parse_values(values), cfg.output_dir);
    } else if (*rep) {
      std::vector<std::filesystem::path> paths(dirs.begin(), dirs.end());
      std::vector<std::string> warnings;
      const std::string table = mocd::report(paths, &warnings);
      for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
      std::cout << table;
    }
  } catch (const std::exception& e) {
    std::cerr << "mocd: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
