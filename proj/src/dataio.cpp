#include "mocd/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "mocd/evaluator.hpp"
#include "mocd/numfmt.hpp"

namespace mocd {
namespace {

using json = nlohmann::json;

std::string where(const std::filesystem::path& file, long line) {
  return file.string() + ":" + std::to_string(line) + ": ";
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
}

Eigen::MatrixXd read_matrix_csv(const std::filesystem::path& path, long rows, long cols) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing file " + path.string());
  Eigen::MatrixXd m(rows, cols);
  std::string line;
  long r = 0;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    if (r >= rows) throw std::runtime_error(where(path, line_no) + "more rows than declared");
    std::string_view rest(line);
    long c = 0;
    while (true) {
      const auto comma = rest.find(',');
      const auto cell = rest.substr(0, comma);
      if (c >= cols) throw std::runtime_error(where(path, line_no) + "more columns than declared");
      try {
        m(r, c) = parse_double(cell);
      } catch (const std::exception& e) {
        throw std::runtime_error(where(path, line_no) + e.what());
      }
      if (!std::isfinite(m(r, c))) throw std::runtime_error(where(path, line_no) + "non-finite value");
      ++c;
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (c != cols) {
      throw std::runtime_error(where(path, line_no) + "expected " + std::to_string(cols) +
                               " columns, found " + std::to_string(c));
    }
    ++r;
  }
  if (r != rows) {
    throw std::runtime_error(path.string() + ": expected " + std::to_string(rows) +
                             " rows, found " + std::to_string(r));
  }
  return m;
}

}  // namespace

std::vector<Eigen::Index> MultiViewDataset::view_dims() const {
  std::vector<Eigen::Index> dims;
  for (const auto& v : views) dims.push_back(v.cols());
  return dims;
}

void MultiViewDataset::validate() const {
  if (views.empty()) throw std::domain_error("dataset has no views");
  if (class_count < 1) throw std::domain_error("dataset needs at least one class");
  for (std::size_t v = 0; v < views.size(); ++v) {
    if (static_cast<std::size_t>(views[v].rows()) != labels.size()) {
      throw std::domain_error("view " + std::to_string(v) + " has " +
                              std::to_string(views[v].rows()) + " rows, expected " +
                              std::to_string(labels.size()));
    }
    if (!views[v].allFinite()) throw std::domain_error("view " + std::to_string(v) + " is not finite");
  }
  for (long y : labels) {
    if (y < 0 || y >= class_count) {
      throw std::domain_error("label " + std::to_string(y) + " outside [0, " +
                              std::to_string(class_count) + ")");
    }
  }
}

void SyntheticSpec::validate() const {
  if (known_classes < 1 || unknown_classes < 0 || samples_per_class < 1 || views < 1 ||
      latent_dim < 1) {
    throw std::domain_error("synthetic spec: counts must be positive");
  }
  if (static_cast<long>(view_dims.size()) != views) {
    throw std::domain_error("synthetic spec: view_dims must list one entry per view");
  }
  for (long d : view_dims) {
    if (d < 1) throw std::domain_error("synthetic spec: view dims must be positive");
  }
  if (!view_noise_std.empty() && static_cast<long>(view_noise_std.size()) != views) {
    throw std::domain_error("synthetic spec: view_noise_std must list one entry per view");
  }
  if (!(noise_std >= 0.0)) throw std::domain_error("synthetic spec: noise_std must be >= 0");
  for (double s : view_noise_std) {
    if (!(s >= 0.0)) throw std::domain_error("synthetic spec: view noise must be >= 0");
  }
  if (!(bias_strength >= 0.0)) throw std::domain_error("synthetic spec: bias_strength must be >= 0");
  if (bias_view) {
    if (*bias_view < 0 || *bias_view >= views) {
      throw std::domain_error("synthetic spec: bias_view out of range");
    }
    if (view_dims[*bias_view] < known_classes) {
      throw std::domain_error("synthetic spec: biased view needs at least known_classes dims");
    }
  }
}

MultiViewDataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const long classes = spec.known_classes + spec.unknown_classes;
  const long n = classes * spec.samples_per_class;
  const long latent = spec.latent_dim;

  Eigen::MatrixXd protos(classes, latent);
  for (long c = 0; c < classes; ++c) {
    for (long j = 0; j < latent; ++j) protos(c, j) = normal(rng);
  }
  double min_gap = std::numeric_limits<double>::infinity();
  for (long a = 0; a < classes; ++a) {
    for (long b = a + 1; b < classes; ++b) min_gap = std::min(min_gap, (protos.row(a) - protos.row(b)).norm());
  }
  const double required = 4.0 * spec.noise_std;
  if (classes > 1 && min_gap < required) protos *= required / std::max(min_gap, 1e-12);

  std::vector<Eigen::MatrixXd> maps;
  for (long v = 0; v < spec.views; ++v) {
    Eigen::MatrixXd a(latent, spec.view_dims[v]);
    for (long i = 0; i < a.size(); ++i) a.data()[i] = normal(rng) / std::sqrt(static_cast<double>(latent));
    maps.push_back(std::move(a));
  }

  MultiViewDataset data;
  data.name = "synthetic";
  data.class_count = classes;
  data.labels.resize(n);
  Eigen::MatrixXd z(n, latent);
  for (long c = 0, r = 0; c < classes; ++c) {
    for (long s = 0; s < spec.samples_per_class; ++s, ++r) {
      data.labels[r] = c;
      for (long j = 0; j < latent; ++j) z(r, j) = protos(c, j) + spec.noise_std * normal(rng);
    }
  }
  for (long v = 0; v < spec.views; ++v) {
    const double noise = spec.view_noise_std.empty() ? spec.noise_std : spec.view_noise_std[v];
    Eigen::MatrixXd x = z * maps[v];
    for (long i = 0; i < x.size(); ++i) x.data()[i] += noise * normal(rng);
    data.views.push_back(std::move(x));
  }
  if (spec.bias_view) {
    auto& x = data.views[*spec.bias_view];
    const long offset = x.cols() - spec.known_classes;
    std::uniform_int_distribution<long> pick(0, spec.known_classes - 1);
    for (long r = 0; r < n; ++r) {
      const long c = data.labels[r] < spec.known_classes ? data.labels[r] : pick(rng);
      x(r, offset + c) += spec.bias_strength;
    }
  }
  data.validate();
  return data;
}

void save_dataset(const MultiViewDataset& data, const std::filesystem::path& dir) {
  data.validate();
  std::filesystem::create_directories(dir);
  json meta;
  meta["name"] = data.name;
  meta["views"] = data.views.size();
  std::vector<long> dims;
  for (const auto& v : data.views) dims.push_back(v.cols());
  meta["view_dims"] = dims;
  meta["classes"] = data.class_count;
  meta["samples"] = data.size();
  write_text(dir / "meta.json", meta.dump(2) + "\n");

  for (std::size_t v = 0; v < data.views.size(); ++v) {
    std::string text;
    const auto& x = data.views[v];
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      for (Eigen::Index c = 0; c < x.cols(); ++c) {
        if (c) text += ',';
        text += format_double(x(r, c));
      }
      text += '\n';
    }
    write_text(dir / ("view_" + std::to_string(v) + ".csv"), text);
  }
  std::string labels;
  for (long y : data.labels) labels += std::to_string(y) + "\n";
  write_text(dir / "labels.csv", labels);
}

MultiViewDataset load_dataset(const std::filesystem::path& dir) {
  const auto meta_path = dir / "meta.json";
  const json meta = read_json(meta_path);
  MultiViewDataset data;
  long views = 0;
  long samples = 0;
  std::vector<long> dims;
  try {
    data.name = meta.at("name").get<std::string>();
    views = meta.at("views").get<long>();
    dims = meta.at("view_dims").get<std::vector<long>>();
    data.class_count = meta.at("classes").get<long>();
    samples = meta.at("samples").get<long>();
  } catch (const json::exception& e) {
    throw std::runtime_error(meta_path.string() + ": " + e.what());
  }
  if (views < 1 || static_cast<long>(dims.size()) != views || samples < 0 || data.class_count < 1) {
    throw std::runtime_error(meta_path.string() + ": inconsistent metadata");
  }

  const auto labels_path = dir / "labels.csv";
  const Eigen::MatrixXd labels = read_matrix_csv(labels_path, samples, 1);
  for (long r = 0; r < samples; ++r) {
    const double y = labels(r, 0);
    if (y != std::floor(y)) {
      throw std::runtime_error(where(labels_path, r + 1) + "class id is not an integer");
    }
    if (y < 0 || y >= static_cast<double>(data.class_count)) {
      throw std::runtime_error(where(labels_path, r + 1) + "class id " + format_double(y) +
                               " outside [0, " + std::to_string(data.class_count) + ")");
    }
    data.labels.push_back(static_cast<long>(y));
  }
  for (long v = 0; v < views; ++v) {
    if (dims[v] < 1) throw std::runtime_error(meta_path.string() + ": view dims must be positive");
    data.views.push_back(
        read_matrix_csv(dir / ("view_" + std::to_string(v) + ".csv"), samples, dims[v]));
  }
  data.validate();
  return data;
}

OpenSplit open_split(const MultiViewDataset& data, const std::vector<long>& known_class_ids,
                     const SplitRatios& ratios, std::uint64_t seed,
                     std::optional<std::vector<long>> unknown_class_ids) {
  if (known_class_ids.empty()) throw std::domain_error("open_split: no known classes");
  if (!(ratios.train > 0 && ratios.val > 0 && ratios.train + ratios.val < 1)) {
    throw std::domain_error("open_split: ratios must be positive and leave room for testing");
  }
  const std::set<long> known(known_class_ids.begin(), known_class_ids.end());
  if (known.size() != known_class_ids.size()) throw std::domain_error("open_split: duplicate known class");
  for (long c : known) {
    if (c < 0 || c >= data.class_count) throw std::domain_error("open_split: known class out of range");
  }
  std::set<long> unknown;
  if (unknown_class_ids) {
    unknown.insert(unknown_class_ids->begin(), unknown_class_ids->end());
    for (long c : unknown) {
      if (c < 0 || c >= data.class_count || known.count(c)) {
        throw std::domain_error("open_split: invalid unknown class " + std::to_string(c));
      }
    }
  } else {
    for (long c = 0; c < data.class_count; ++c) {
      if (!known.count(c)) unknown.insert(c);
    }
  }

  std::vector<std::vector<long>> by_class(data.class_count);
  for (std::size_t i = 0; i < data.size(); ++i) by_class[data.labels[i]].push_back(static_cast<long>(i));

  OpenSplit split;
  std::mt19937_64 rng(seed);
  for (long c : known_class_ids) {
    auto rows = by_class[c];
    const auto n = static_cast<long>(rows.size());
    if (n < 3) {
      throw std::domain_error("open_split: class " + std::to_string(c) + " has fewer than 3 samples");
    }
    std::shuffle(rows.begin(), rows.end(), rng);
    const long n_train = std::max(1L, static_cast<long>(std::floor(ratios.train * n)));
    const long n_val = std::max(1L, static_cast<long>(std::floor(ratios.val * n)));
    split.train.insert(split.train.end(), rows.begin(), rows.begin() + n_train);
    split.val.insert(split.val.end(), rows.begin() + n_train, rows.begin() + n_train + n_val);
    split.test_known.insert(split.test_known.end(), rows.begin() + n_train + n_val, rows.end());
  }
  for (long c : unknown) split.test_unknown.insert(split.test_unknown.end(), by_class[c].begin(), by_class[c].end());
  for (auto* list : {&split.train, &split.val, &split.test_known, &split.test_unknown}) {
    std::sort(list->begin(), list->end());
  }
  split.known_class_ids = known_class_ids;
  split.unknown_class_ids.assign(unknown.begin(), unknown.end());
  split.realized_openness = openness(static_cast<long>(known.size()), static_cast<long>(unknown.size()));
  return split;
}

void save_split(const std::filesystem::path& path, const OpenSplit& split) {
  json j;
  j["train"] = split.train;
  j["val"] = split.val;
  j["test_known"] = split.test_known;
  j["test_unknown"] = split.test_unknown;
  j["known_class_ids"] = split.known_class_ids;
  j["openness"] = split.realized_openness;
  write_text(path, j.dump(2) + "\n");
}

OpenSplit load_split(const std::filesystem::path& path) {
  const json j = read_json(path);
  OpenSplit split;
  try {
    split.train = j.at("train").get<std::vector<long>>();
    split.val = j.at("val").get<std::vector<long>>();
    split.test_known = j.at("test_known").get<std::vector<long>>();
    split.test_unknown = j.at("test_unknown").get<std::vector<long>>();
    split.known_class_ids = j.at("known_class_ids").get<std::vector<long>>();
    split.realized_openness = j.at("openness").get<double>();
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
  return split;
}

Standardizer Standardizer::fit(const MultiViewDataset& data, const std::vector<long>& rows) {
  if (rows.empty()) throw std::domain_error("Standardizer::fit: no rows");
  Standardizer s;
  for (const auto& x : data.views) {
    const Eigen::MatrixXd sub = select_rows(x, rows);
    Eigen::RowVectorXd mean = sub.colwise().mean();
    Eigen::RowVectorXd var = (sub.rowwise() - mean).array().square().colwise().mean();
    Eigen::RowVectorXd scale = var.array().sqrt();
    for (Eigen::Index c = 0; c < scale.size(); ++c) {
      if (!(scale(c) > 1e-12)) scale(c) = 1.0;
    }
    s.mean.push_back(std::move(mean));
    s.scale.push_back(std::move(scale));
  }
  return s;
}

MultiViewDataset Standardizer::apply(const MultiViewDataset& data) const {
  if (data.views.size() != mean.size()) throw std::domain_error("Standardizer: view count mismatch");
  MultiViewDataset out = data;
  for (std::size_t v = 0; v < out.views.size(); ++v) {
    out.views[v] = ((out.views[v].rowwise() - mean[v]).array().rowwise() / scale[v].array()).matrix();
  }
  return out;
}

Eigen::MatrixXd select_rows(const Eigen::MatrixXd& m, const std::vector<long>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

}  // namespace mocd
