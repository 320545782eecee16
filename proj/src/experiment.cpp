#include "mocd/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "mocd/evaluator.hpp"
#include "mocd/numfmt.hpp"

namespace mocd {
namespace {

using json = nlohmann::json;

void require_keys(const json& j, const std::set<std::string>& allowed, const std::string& ctx) {
  if (!j.is_object()) throw std::invalid_argument(ctx + " must be a JSON object");
  for (const auto& item : j.items()) {
    if (!allowed.count(item.key())) {
      throw std::invalid_argument("unknown key '" + item.key() + "' in " + ctx);
    }
  }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& ctx) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(ctx + "." + key + ": " + e.what());
  }
}

std::string mix_name(MixMode m) {
  switch (m) {
    case MixMode::kNone: return "none";
    case MixMode::kVanilla: return "vanilla";
    case MixMode::kOMix: return "omix";
  }
  return "omix";
}

MixMode parse_mix(const std::string& s) {
  if (s == "none") return MixMode::kNone;
  if (s == "vanilla" || s == "mixup") return MixMode::kVanilla;
  if (s == "omix") return MixMode::kOMix;
  throw std::invalid_argument("ablation.mix must be one of none, vanilla, omix; got '" + s + "'");
}

json train_json(const TrainConfig& t) {
  json j;
  j["epochs"] = t.epochs;
  j["batch_size"] = t.batch_size;
  j["learning_rate"] = t.learning_rate;
  j["tau"] = t.tau;
  j["c"] = t.c;
  j["gamma"] = t.gamma;
  j["alpha"] = t.alpha;
  j["beta"] = t.beta;
  j["k_neighbors"] = t.k_neighbors;
  j["hidden"] = t.hidden;
  j["apn_hidden"] = t.apn_hidden;
  j["activation"] = t.activation == Activation::kRelu ? "relu" : "tanh";
  j["patience"] = t.patience;
  j["learnable_gamma"] = t.learnable_gamma;
  if (t.bandwidth.median) {
    j["bandwidth"] = "median";
  } else {
    j["bandwidth"] = t.bandwidth.fixed_sigma;
  }
  return j;
}

TrainConfig parse_train(const json& j) {
  const std::string ctx = "train";
  require_keys(j, {"epochs", "batch_size", "learning_rate", "tau", "c", "gamma", "alpha", "beta",
                   "k_neighbors", "hidden", "apn_hidden", "activation", "patience",
                   "learnable_gamma", "bandwidth"},
               ctx);
  TrainConfig t;
  read(j, "epochs", t.epochs, ctx);
  read(j, "batch_size", t.batch_size, ctx);
  read(j, "learning_rate", t.learning_rate, ctx);
  read(j, "tau", t.tau, ctx);
  read(j, "c", t.c, ctx);
  read(j, "gamma", t.gamma, ctx);
  read(j, "alpha", t.alpha, ctx);
  read(j, "beta", t.beta, ctx);
  read(j, "k_neighbors", t.k_neighbors, ctx);
  read(j, "hidden", t.hidden, ctx);
  read(j, "apn_hidden", t.apn_hidden, ctx);
  read(j, "patience", t.patience, ctx);
  read(j, "learnable_gamma", t.learnable_gamma, ctx);
  if (j.contains("activation")) {
    std::string act;
    read(j, "activation", act, ctx);
    if (act == "relu") {
      t.activation = Activation::kRelu;
    } else if (act == "tanh") {
      t.activation = Activation::kTanh;
    } else {
      throw std::invalid_argument("train.activation must be relu or tanh");
    }
  }
  if (j.contains("bandwidth")) {
    const auto& b = j.at("bandwidth");
    if (b.is_string() && b.get<std::string>() == "median") {
      t.bandwidth = BandwidthPolicy{};
    } else if (b.is_number()) {
      t.bandwidth = BandwidthPolicy::fixed(b.get<double>());
    } else {
      throw std::invalid_argument("train.bandwidth must be \"median\" or a positive number");
    }
  }
  try {
    t.validate();
  } catch (const std::domain_error& e) {
    throw std::invalid_argument(std::string("train: ") + e.what());
  }
  return t;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
}

std::vector<long> known_ids_for(const ExperimentConfig& cfg) {
  if (!cfg.known_class_ids.empty()) return cfg.known_class_ids;
  if (cfg.synthetic) {
    std::vector<long> ids(static_cast<std::size_t>(cfg.synthetic->known_classes));
    std::iota(ids.begin(), ids.end(), 0L);
    return ids;
  }
  throw std::invalid_argument("known_class_ids is required for directory datasets");
}

MultiViewDataset load_source(const ExperimentConfig& cfg) {
  if (cfg.synthetic) return generate_synthetic(*cfg.synthetic, cfg.data_seed);
  return load_dataset(*cfg.directory);
}

TrainConfig effective_train(const ExperimentConfig& cfg) {
  TrainConfig t = cfg.train;
  t.seed = cfg.seed;
  t.use_structural = cfg.ablation.enable_g;
  t.mix = cfg.ablation.mix;
  if (!cfg.ablation.enable_hsic) t.beta = 0.0;
  return t;
}

PreparedSplit prepare_rows(const MultiViewDataset& data, const std::vector<long>& rows,
                           const std::map<long, Index>& class_index, const TrainConfig& t) {
  std::vector<Matrix> features;
  for (const auto& x : data.views) features.push_back(select_rows(x, rows));
  std::vector<Index> labels;
  for (long r : rows) {
    auto it = class_index.find(data.labels[r]);
    labels.push_back(it == class_index.end() ? -1 : it->second);
  }
  return prepare_split(features, std::move(labels), t.k_neighbors, t.use_structural);
}

double mean_of(const std::vector<double>& xs) {
  return xs.empty() ? std::nan("") : std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
}

double std_of(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean_of(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

std::string cell(double x) { return std::isnan(x) ? "" : format_double(x); }

std::vector<std::uint64_t> seeds_of(const ExperimentConfig& cfg) {
  return cfg.seeds.empty() ? std::vector<std::uint64_t>{cfg.seed} : cfg.seeds;
}

}  // namespace

SyntheticSpec parse_synthetic_spec(const json& j, std::uint64_t* seed) {
  const std::string ctx = "synthetic";
  require_keys(j, {"known_classes", "unknown_classes", "samples_per_class", "views", "view_dims",
                   "latent_dim", "noise_std", "view_noise_std", "bias_view", "bias_strength",
                   "seed"},
               ctx);
  SyntheticSpec s;
  read(j, "known_classes", s.known_classes, ctx);
  read(j, "unknown_classes", s.unknown_classes, ctx);
  read(j, "samples_per_class", s.samples_per_class, ctx);
  read(j, "views", s.views, ctx);
  read(j, "view_dims", s.view_dims, ctx);
  read(j, "latent_dim", s.latent_dim, ctx);
  read(j, "noise_std", s.noise_std, ctx);
  read(j, "view_noise_std", s.view_noise_std, ctx);
  read(j, "bias_strength", s.bias_strength, ctx);
  if (j.contains("bias_view") && !j.at("bias_view").is_null()) {
    long b = 0;
    read(j, "bias_view", b, ctx);
    s.bias_view = b;
  }
  if (j.contains("views") && !j.contains("view_dims")) {
    s.view_dims.assign(static_cast<std::size_t>(std::max(0L, s.views)), 24);
  }
  if (seed) {
    *seed = 0;
    read(j, "seed", *seed, ctx);
  }
  try {
    s.validate();
  } catch (const std::domain_error& e) {
    throw std::invalid_argument(e.what());
  }
  return s;
}

json synthetic_spec_json(const SyntheticSpec& s, std::uint64_t seed) {
  json j;
  j["known_classes"] = s.known_classes;
  j["unknown_classes"] = s.unknown_classes;
  j["samples_per_class"] = s.samples_per_class;
  j["views"] = s.views;
  j["view_dims"] = s.view_dims;
  j["latent_dim"] = s.latent_dim;
  j["noise_std"] = s.noise_std;
  j["view_noise_std"] = s.view_noise_std;
  j["bias_view"] = s.bias_view ? json(*s.bias_view) : json(nullptr);
  j["bias_strength"] = s.bias_strength;
  j["seed"] = seed;
  return j;
}

json ExperimentConfig::to_json() const {
  json j;
  if (synthetic) {
    j["dataset"]["synthetic"] = synthetic_spec_json(*synthetic, data_seed);
  } else {
    j["dataset"]["directory"] = directory->generic_string();
  }
  j["known_class_ids"] = known_class_ids;
  j["unknown_class_ids"] = unknown_class_ids;
  j["split"] = {{"train", ratios.train}, {"val", ratios.val}};
  j["train"] = train_json(train);
  j["ablation"] = {{"enable_g", ablation.enable_g},
                   {"mix", mix_name(ablation.mix)},
                   {"enable_hsic", ablation.enable_hsic}};
  j["seed"] = seed;
  j["seeds"] = seeds;
  j["output_dir"] = output_dir.generic_string();
  return j;
}

std::string ExperimentConfig::config_hash() const {
  json j = to_json();
  j.erase("seed");
  j.erase("seeds");
  j.erase("output_dir");
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
  return buf;
}

ExperimentConfig parse_experiment_config(const json& j) {
  require_keys(j, {"dataset", "known_class_ids", "unknown_class_ids", "split", "train", "ablation",
                   "seed", "seeds", "output_dir"},
               "config");
  ExperimentConfig cfg;
  if (!j.contains("dataset")) throw std::invalid_argument("config.dataset is required");
  const auto& ds = j.at("dataset");
  require_keys(ds, {"synthetic", "directory"}, "dataset");
  if (ds.contains("synthetic") == ds.contains("directory")) {
    throw std::invalid_argument("dataset needs exactly one of synthetic, directory");
  }
  if (ds.contains("synthetic")) {
    cfg.synthetic = parse_synthetic_spec(ds.at("synthetic"), &cfg.data_seed);
  } else {
    std::string dir;
    read(ds, "directory", dir, "dataset");
    cfg.directory = dir;
  }
  read(j, "known_class_ids", cfg.known_class_ids, "config");
  read(j, "unknown_class_ids", cfg.unknown_class_ids, "config");
  if (j.contains("split")) {
    require_keys(j.at("split"), {"train", "val"}, "split");
    read(j.at("split"), "train", cfg.ratios.train, "split");
    read(j.at("split"), "val", cfg.ratios.val, "split");
  }
  if (j.contains("train")) cfg.train = parse_train(j.at("train"));
  if (j.contains("ablation")) {
    const auto& a = j.at("ablation");
    require_keys(a, {"enable_g", "mix", "enable_hsic"}, "ablation");
    read(a, "enable_g", cfg.ablation.enable_g, "ablation");
    read(a, "enable_hsic", cfg.ablation.enable_hsic, "ablation");
    if (a.contains("mix")) {
      std::string mix;
      read(a, "mix", mix, "ablation");
      cfg.ablation.mix = parse_mix(mix);
    }
  }
  read(j, "seed", cfg.seed, "config");
  read(j, "seeds", cfg.seeds, "config");
  std::string out = cfg.output_dir.string();
  read(j, "output_dir", out, "config");
  cfg.output_dir = out;
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
  ExperimentConfig cfg = parse_experiment_config(j);
  if (cfg.directory && cfg.directory->is_relative()) {
    cfg.directory = path.parent_path() / *cfg.directory;
  }
  return cfg;
}

RunMetrics run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  MultiViewDataset data = load_source(cfg);
  const std::vector<long> known = known_ids_for(cfg);
  std::optional<std::vector<long>> unknown;
  if (!cfg.unknown_class_ids.empty()) unknown = cfg.unknown_class_ids;
  const OpenSplit split = open_split(data, known, cfg.ratios, cfg.seed, unknown);
  save_split(out_dir / "split.json", split);

  data = Standardizer::fit(data, split.train).apply(data);
  std::map<long, Index> class_index;
  for (std::size_t i = 0; i < known.size(); ++i) class_index[known[i]] = static_cast<Index>(i);
  const auto num_classes = static_cast<Index>(known.size());

  const TrainConfig tc = effective_train(cfg);
  const PreparedSplit train_rows = prepare_rows(data, split.train, class_index, tc);
  const PreparedSplit val_rows = prepare_rows(data, split.val, class_index, tc);
  const TrainResult result = train(train_rows, val_rows, num_classes, tc);
  result.history.write_csv(out_dir / "history.csv");
  write_checkpoint(out_dir / "checkpoint.bin", to_checkpoint(result.model));

  std::vector<long> test = split.test_known;
  test.insert(test.end(), split.test_unknown.begin(), split.test_unknown.end());
  const PreparedSplit test_rows = prepare_rows(data, test, class_index, tc);
  const Prediction pred = predict(result.model, test_rows.features, test_rows.aggregated);
  std::vector<PredictionRecord> records;
  for (Index r = 0; r < test_rows.size(); ++r) {
    PredictionRecord rec;
    rec.score = pred.scores(r);
    rec.predicted = static_cast<long>(pred.predicted[r]);
    rec.label = static_cast<long>(test_rows.labels[r]);
    rec.is_unknown = test_rows.labels[r] < 0;
    records.push_back(rec);
  }
  write_prediction_csv(out_dir / "predictions.csv", records);

  RunMetrics m;
  m.closed_set_accuracy = closed_set_accuracy(records);
  m.openness = split.realized_openness;
  m.known_classes = static_cast<long>(split.known_class_ids.size());
  m.unknown_classes = static_cast<long>(split.unknown_class_ids.size());
  m.epochs_run = static_cast<int>(result.history.epochs.size());
  if (!split.test_unknown.empty()) {
    const OscrCurve curve = oscr_curve(records);
    write_curve_csv(out_dir / "oscr_curve.csv", curve);
    for (const auto& [key, q] : kFprGrid) m.ccr_at_fpr[key] = ccr_at_fpr(curve, q);
  } else {
    write_curve_csv(out_dir / "oscr_curve.csv", OscrCurve{});
    for (const auto& [key, q] : kFprGrid) m.ccr_at_fpr[key] = std::nullopt;
  }

  json j;
  j["run_id"] = out_dir.lexically_normal().generic_string();
  j["config_hash"] = cfg.config_hash();
  j["seed"] = cfg.seed;
  j["closed_set_accuracy"] = m.closed_set_accuracy;
  for (const auto& [key, value] : m.ccr_at_fpr) {
    j["ccr_at_fpr"][key] = value ? json(*value) : json(nullptr);
  }
  j["openness"] = m.openness;
  j["known_classes"] = m.known_classes;
  j["unknown_classes"] = m.unknown_classes;
  j["test_known"] = split.test_known.size();
  j["test_unknown"] = split.test_unknown.size();
  j["epochs_run"] = m.epochs_run;
  j["best_epoch"] = result.history.best_epoch;
  j["config"] = cfg.to_json();
  write_text(out_dir / "metrics.json", j.dump(2) + "\n");
  return m;
}

std::vector<AblationArm> table3_arms() {
  return {{"h", {false, MixMode::kNone, false}},
          {"h+g", {true, MixMode::kNone, false}},
          {"h+g+mixup", {true, MixMode::kVanilla, true}},
          {"h+g+omix", {true, MixMode::kOMix, true}}};
}

void run_ablation(const ExperimentConfig& config, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::ostringstream csv;
  csv << "arm,h,g,mixup,omix,seeds,ccr_fpr_0.10_mean,ccr_fpr_0.10_std,closed_acc_mean\n";
  for (const auto& arm : table3_arms()) {
    std::vector<double> ccr;
    std::vector<double> acc;
    for (auto seed : seeds_of(config)) {
      ExperimentConfig cfg = config;
      cfg.ablation = arm.flags;
      cfg.seed = seed;
      const auto m = run_experiment(cfg, out_dir / arm.name / ("seed_" + std::to_string(seed)));
      acc.push_back(m.closed_set_accuracy);
      if (m.ccr_at_fpr.at("0.10")) ccr.push_back(*m.ccr_at_fpr.at("0.10"));
    }
    csv << arm.name << ",1," << (arm.flags.enable_g ? 1 : 0) << ','
        << (arm.flags.mix == MixMode::kVanilla ? 1 : 0) << ','
        << (arm.flags.mix == MixMode::kOMix ? 1 : 0) << ',' << acc.size() << ','
        << cell(mean_of(ccr)) << ',' << cell(std_of(ccr)) << ',' << cell(mean_of(acc)) << '\n';
  }
  write_text(out_dir / "ablation_table3.csv", csv.str());
}

void run_openness_sweep(const ExperimentConfig& config, const std::vector<double>& targets,
                        const std::filesystem::path& out_dir) {
  if (targets.empty()) throw std::invalid_argument("sweep-openness needs at least one value");
  std::filesystem::create_directories(out_dir);
  const MultiViewDataset data = load_source(config);
  const std::vector<long> known = known_ids_for(config);
  std::vector<long> pool = config.unknown_class_ids;
  if (pool.empty()) {
    const std::set<long> k(known.begin(), known.end());
    for (long c = 0; c < data.class_count; ++c) {
      if (!k.count(c)) pool.push_back(c);
    }
  }

  std::ostringstream csv;
  csv << "target_openness,known_classes,unknown_classes,realized_openness,seeds,"
         "ccr_fpr_0.10_mean,ccr_fpr_0.10_std,closed_acc_mean\n";
  for (double t : targets) {
    const long count = unknown_classes_for_openness(static_cast<long>(known.size()), t);
    if (count > static_cast<long>(pool.size())) {
      throw std::invalid_argument("openness " + format_double(t) + " needs " +
                                  std::to_string(count) + " unknown classes, only " +
                                  std::to_string(pool.size()) + " available");
    }
    ExperimentConfig cfg = config;
    cfg.known_class_ids = known;
    cfg.unknown_class_ids.assign(pool.begin(), pool.begin() + count);
    if (count == 0) {
      // open_split treats an empty list as "all other classes".
      throw std::invalid_argument("openness " + format_double(t) + " resolves to zero unknown classes");
    }
    std::vector<double> ccr;
    std::vector<double> acc;
    double realized = 0.0;
    for (auto seed : seeds_of(config)) {
      cfg.seed = seed;
      const auto m = run_experiment(
          cfg, out_dir / ("openness_" + format_double(t)) / ("seed_" + std::to_string(seed)));
      realized = m.openness;
      acc.push_back(m.closed_set_accuracy);
      if (m.ccr_at_fpr.at("0.10")) ccr.push_back(*m.ccr_at_fpr.at("0.10"));
    }
    csv << format_double(t) << ',' << known.size() << ',' << count << ',' << format_double(realized)
        << ',' << acc.size() << ',' << cell(mean_of(ccr)) << ',' << cell(std_of(ccr)) << ','
        << cell(mean_of(acc)) << '\n';
  }
  write_text(out_dir / "sweep_openness.csv", csv.str());
}

std::string report(const std::vector<std::filesystem::path>& dirs,
                   std::vector<std::string>* warnings) {
  std::vector<std::filesystem::path> files;
  for (const auto& d : dirs) {
    if (!std::filesystem::exists(d)) throw std::runtime_error("no such directory " + d.string());
    if (std::filesystem::is_regular_file(d) && d.filename() == "metrics.json") {
      files.push_back(d);
      continue;
    }
    for (const auto& e : std::filesystem::recursive_directory_iterator(d)) {
      if (e.is_regular_file() && e.path().filename() == "metrics.json") files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no metrics.json found");

  struct Group {
    std::vector<std::string> runs;
    std::vector<double> acc;
    std::map<std::string, std::vector<double>> ccr;
    std::vector<double> openness;
  };
  std::map<std::string, Group> groups;
  for (const auto& f : files) {
    try {
      std::ifstream in(f);
      const json j = json::parse(in);
      const auto hash = j.at("config_hash").get<std::string>();
      const auto run = j.at("run_id").get<std::string>();
      const double acc = j.at("closed_set_accuracy").get<double>();
      const double open = j.at("openness").get<double>();
      std::map<std::string, std::optional<double>> ccr;
      for (const auto& [key, q] : kFprGrid) {
        const auto& v = j.at("ccr_at_fpr").at(key);
        ccr[key] = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
      }
      auto& g = groups[hash];
      g.runs.push_back(run);
      g.acc.push_back(acc);
      g.openness.push_back(open);
      for (const auto& [key, v] : ccr) {
        if (v) g.ccr[key].push_back(*v);
      }
    } catch (const std::exception& e) {
      if (warnings) warnings->push_back(f.string() + ": skipped (" + e.what() + ")");
    }
  }
  if (groups.empty()) throw std::runtime_error("no compatible metrics.json found");

  std::ostringstream csv;
  csv << "config_hash,runs,run_ids,closed_acc_mean,closed_acc_std";
  for (const auto& [key, q] : kFprGrid) csv << ",ccr_fpr_" << key << "_mean,ccr_fpr_" << key << "_std";
  csv << ",openness\n";
  for (const auto& [hash, g] : groups) {
    std::string ids;
    for (const auto& r : g.runs) ids += (ids.empty() ? "" : ";") + r;
    csv << hash << ',' << g.runs.size() << ',' << ids << ',' << cell(mean_of(g.acc)) << ','
        << cell(std_of(g.acc));
    for (const auto& [key, q] : kFprGrid) {
      auto it = g.ccr.find(key);
      if (it == g.ccr.end()) {
        csv << ",,";
      } else {
        csv << ',' << cell(mean_of(it->second)) << ',' << cell(std_of(it->second));
      }
    }
    csv << ',' << cell(mean_of(g.openness)) << '\n';
  }
  return csv.str();
}

}  // namespace mocd
