#include <doctest.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mocd/dataio.hpp"
#include "mocd/experiment.hpp"
#include "oracles.hpp"

using namespace mocd;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json tiny_config(const fs::path& out) {
  auto j = json::parse(R"({
    "dataset": {"synthetic": {"known_classes": 3, "unknown_classes": 4, "samples_per_class": 40,
                              "views": 2, "view_dims": [6, 6], "latent_dim": 4, "seed": 3}},
    "train": {"epochs": 3, "batch_size": 8, "hidden": [8], "apn_hidden": [8], "k_neighbors": 4},
    "seed": 1
  })");
  j["output_dir"] = out.string();
  return j;
}

fs::path write_config(const fs::path& dir, const json& j) {
  const auto p = dir / "cfg.json";
  std::ofstream(p) << j.dump(2);
  return p;
}

struct Cmd {
  int status;
  std::string output;
};

Cmd run_cli(const std::string& args) {
  const std::string cmd = std::string(MOCD_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::string out;
  std::array<char, 512> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe)) out += buf.data();
  const int status = pclose(pipe);
  return {WEXITSTATUS(status), out};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) {
    if (!l.empty()) out.push_back(l);
  }
  return out;
}

}  // namespace

TEST_CASE("strict config parsing") {
  const auto base = tiny_config("x");
  CHECK_NOTHROW(parse_experiment_config(base));

  auto typo = base;
  typo["train"]["epoch"] = 3;
  CHECK_THROWS_AS(parse_experiment_config(typo), std::invalid_argument);
  typo = base;
  typo["sead"] = 1;
  CHECK_THROWS_AS(parse_experiment_config(typo), std::invalid_argument);
  auto both = base;
  both["dataset"]["directory"] = "d";
  CHECK_THROWS_AS(parse_experiment_config(both), std::invalid_argument);
  auto mix = base;
  mix["ablation"] = {{"mix", "cutmix"}};
  CHECK_THROWS_AS(parse_experiment_config(mix), std::invalid_argument);
  auto lr = base;
  lr["train"]["learning_rate"] = -1;
  CHECK_THROWS_AS(parse_experiment_config(lr), std::invalid_argument);
  auto type = base;
  type["train"]["epochs"] = "many";
  CHECK_THROWS_AS(parse_experiment_config(type), std::invalid_argument);

  const auto cfg = parse_experiment_config(base);
  CHECK(parse_experiment_config(cfg.to_json()).to_json() == cfg.to_json());
}

TEST_CASE("config hash ignores seeds and output location") {
  const auto a = parse_experiment_config(tiny_config("a"));
  auto jb = tiny_config("b");
  jb["seed"] = 99;
  const auto b = parse_experiment_config(jb);
  CHECK(a.config_hash() == b.config_hash());
  jb["train"]["epochs"] = 4;
  CHECK(parse_experiment_config(jb).config_hash() != a.config_hash());
  CHECK(a.config_hash().size() == 16);
}

TEST_CASE("run writes every artifact") {
  const auto dir = oracle::temp_dir("run");
  const auto cfg = parse_experiment_config(tiny_config(dir / "out"));
  const auto m = run_experiment(cfg, cfg.output_dir);
  for (const char* f : {"metrics.json", "oscr_curve.csv", "history.csv", "predictions.csv",
                        "checkpoint.bin", "split.json"}) {
    CHECK(fs::exists(cfg.output_dir / f));
  }
  const auto j = json::parse(slurp(cfg.output_dir / "metrics.json"));
  for (const char* k : {"run_id", "config_hash", "seed", "closed_set_accuracy", "ccr_at_fpr",
                        "openness", "config", "epochs_run", "best_epoch"}) {
    CHECK(j.contains(k));
  }
  CHECK(j["ccr_at_fpr"].size() == 5);
  for (const auto& [key, q] : kFprGrid) CHECK(j["ccr_at_fpr"].contains(key));
  CHECK(j["ccr_at_fpr"]["1.00"].get<double>() == doctest::Approx(m.closed_set_accuracy));
  CHECK(j["openness"].get<double>() == doctest::Approx(1 - std::sqrt(6.0 / 10.0)));
  const auto split = load_split(cfg.output_dir / "split.json");
  CHECK(split.test_unknown.size() == 160);
  CHECK(lines(slurp(cfg.output_dir / "history.csv")).size() == 4);
}

TEST_CASE("cli run, errors and determinism") {
  const auto dir = oracle::temp_dir("cli_run");
  const auto cfg = write_config(dir, tiny_config(dir / "out"));
  auto r = run_cli("run --config " + cfg.string());
  REQUIRE(r.status == 0);
  const auto first = slurp(dir / "out" / "metrics.json");
  r = run_cli("run --config " + cfg.string());
  REQUIRE(r.status == 0);
  CHECK(slurp(dir / "out" / "metrics.json") == first);

  auto bad = tiny_config(dir / "bad");
  bad["train"]["lr"] = 0.1;
  const auto bad_path = dir / "bad.json";
  std::ofstream(bad_path) << bad.dump();
  r = run_cli("run --config " + bad_path.string());
  CHECK(r.status != 0);
  CHECK(r.output.find("lr") != std::string::npos);

  std::ofstream(dir / "broken.json") << "{ not json";
  CHECK(run_cli("run --config " + (dir / "broken.json").string()).status != 0);
  CHECK(run_cli("run --config " + (dir / "missing.json").string()).status != 0);
  CHECK(run_cli("frobnicate").status != 0);
}

TEST_CASE("divergent run fails and keeps partial artifacts") {
  const auto dir = oracle::temp_dir("cli_diverge");
  auto j = tiny_config(dir / "out");
  j["train"]["learning_rate"] = 1e300;
  const auto r = run_cli("run --config " + write_config(dir, j).string());
  CHECK(r.status != 0);
  CHECK(r.output.find("epoch") != std::string::npos);
  CHECK(fs::exists(dir / "out" / "split.json"));
}

TEST_CASE("cli generate") {
  const auto dir = oracle::temp_dir("cli_gen");
  std::ofstream(dir / "spec.json")
      << R"({"known_classes": 2, "unknown_classes": 1, "samples_per_class": 10, "views": 2,
             "view_dims": [3, 4], "seed": 2})";
  REQUIRE(run_cli("generate --spec " + (dir / "spec.json").string() + " --out " +
                  (dir / "data").string())
              .status == 0);
  const auto d = load_dataset(dir / "data");
  CHECK(d.size() == 30);
  CHECK(d.view_dims() == std::vector<Eigen::Index>{3, 4});

  auto j = tiny_config(dir / "from_dir");
  j["dataset"] = {{"directory", (dir / "data").string()}};
  j["known_class_ids"] = {0, 1};
  j["train"]["batch_size"] = 2;
  j["train"]["k_neighbors"] = 1;
  j["split"] = {{"train", 0.4}, {"val", 0.2}};
  CHECK(run_cli("run --config " + write_config(dir, j).string()).status == 0);
}

TEST_CASE("report aggregation") {
  const auto dir = oracle::temp_dir("cli_report");
  for (int seed : {1, 2}) {
    auto j = tiny_config(dir / "a" / ("seed_" + std::to_string(seed)));
    j["seed"] = seed;
    REQUIRE(run_cli("run --config " + write_config(dir, j).string()).status == 0);
  }
  auto r = run_cli("report " + (dir / "a").string());
  REQUIRE(r.status == 0);
  auto rows = lines(r.output);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].find("ccr_fpr_0.10_mean") != std::string::npos);
  CHECK(rows[0].find("ccr_fpr_0.10_std") != std::string::npos);
  CHECK(rows[1].find(",2,") != std::string::npos);

  auto other = tiny_config(dir / "b" / "seed_1");
  other["train"]["epochs"] = 2;
  REQUIRE(run_cli("run --config " + write_config(dir, other).string()).status == 0);
  fs::create_directories(dir / "junk");
  std::ofstream(dir / "junk" / "metrics.json") << R"({"hello": 1})";
  r = run_cli("report " + (dir / "a").string() + " " + (dir / "b").string() + " " +
              (dir / "junk").string());
  REQUIRE(r.status == 0);
  CHECK(r.output.find("warning") != std::string::npos);
  CHECK(lines(report({dir / "a", dir / "b", dir / "junk"})).size() == 3);

  fs::create_directories(dir / "empty");
  r = run_cli("report " + (dir / "empty").string());
  CHECK(r.status != 0);
}

TEST_CASE("ablation grid and openness sweep") {
  const auto dir = oracle::temp_dir("cli_grid");
  auto j = tiny_config(dir / "ablation");
  j["seeds"] = {1, 2};
  REQUIRE(run_cli("ablate --config " + write_config(dir, j).string() + " --grid table3").status == 0);
  const auto table = lines(slurp(dir / "ablation" / "ablation_table3.csv"));
  REQUIRE(table.size() == 5);
  CHECK(table[0].find("ccr_fpr_0.10_mean") != std::string::npos);
  CHECK(table[1].rfind("h,", 0) == 0);
  CHECK(table[4].rfind("h+g+omix,", 0) == 0);
  CHECK(run_cli("ablate --config " + (dir / "cfg.json").string() + " --grid nope").status != 0);

  j = tiny_config(dir / "sweep");
  REQUIRE(run_cli("sweep-openness --config " + write_config(dir, j).string() +
                  " --values 0.05,0.1,0.15,0.2")
              .status == 0);
  int metrics = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir / "sweep")) {
    if (e.path().filename() == "metrics.json") ++metrics;
  }
  CHECK(metrics == 4);
  const auto sweep = lines(slurp(dir / "sweep" / "sweep_openness.csv"));
  REQUIRE(sweep.size() == 5);
  double prev_open = -1.0;
  long prev_unknown = -1;
  for (std::size_t i = 1; i < sweep.size(); ++i) {
    std::vector<std::string> cells;
    std::istringstream row(sweep[i]);
    for (std::string c; std::getline(row, c, ',');) cells.push_back(c);
    const long unknown = std::stol(cells[2]);
    const double realized = std::stod(cells[3]);
    CHECK(unknown >= prev_unknown);
    CHECK(realized >= prev_open);
    prev_unknown = unknown;
    prev_open = realized;
  }
  CHECK(run_cli("sweep-openness --config " + (dir / "cfg.json").string() + " --values 0.9")
            .status != 0);
}
