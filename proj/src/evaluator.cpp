#include "mocd/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "mocd/numfmt.hpp"

namespace mocd {
namespace {

struct Counts {
  long known = 0;
  long unknown = 0;
};

Counts count(const std::vector<PredictionRecord>& records) {
  Counts c;
  for (const auto& r : records) {
    if (!(r.score >= 0.0 && r.score <= 1.0)) {
      throw std::domain_error("prediction score outside [0, 1]");
    }
    (r.is_unknown ? c.unknown : c.known) += 1;
  }
  if (c.known == 0) throw std::domain_error("no known-class records");
  if (c.unknown == 0) throw std::domain_error("no unknown-class records");
  return c;
}

RatePair rates(const std::vector<PredictionRecord>& records, const Counts& c, double p) {
  long fp = 0;
  long cc = 0;
  for (const auto& r : records) {
    if (r.is_unknown) {
      if (r.score >= p) ++fp;
    } else if (r.correct() && r.score > p) {
      ++cc;
    }
  }
  return {static_cast<double>(fp) / static_cast<double>(c.unknown),
          static_cast<double>(cc) / static_cast<double>(c.known)};
}

}  // namespace

RatePair ccr_fpr_at(const std::vector<PredictionRecord>& records, double threshold) {
  return rates(records, count(records), threshold);
}

OscrCurve oscr_curve(const std::vector<PredictionRecord>& records) {
  const Counts c = count(records);
  std::vector<double> thresholds;
  thresholds.reserve(records.size() + 2);
  for (const auto& r : records) thresholds.push_back(r.score);
  thresholds.push_back(0.0);
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  thresholds.insert(thresholds.begin(), std::nextafter(thresholds.front(), 2.0));

  // Single pass over records sorted by score, highest first.
  std::vector<const PredictionRecord*> sorted;
  sorted.reserve(records.size());
  for (const auto& r : records) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(),
            [](const auto* a, const auto* b) { return a->score > b->score; });

  OscrCurve curve;
  std::size_t at_least = 0;  // records with score >= threshold
  std::size_t above = 0;     // records with score > threshold
  long fp = 0;
  long cc = 0;
  for (double p : thresholds) {
    while (at_least < sorted.size() && sorted[at_least]->score >= p) {
      if (sorted[at_least]->is_unknown) ++fp;
      ++at_least;
    }
    while (above < sorted.size() && sorted[above]->score > p) {
      if (sorted[above]->correct()) ++cc;
      ++above;
    }
    curve.points.push_back({p, static_cast<double>(fp) / static_cast<double>(c.unknown),
                            static_cast<double>(cc) / static_cast<double>(c.known)});
  }
  return curve;
}

double ccr_at_fpr(const OscrCurve& curve, double target_fpr) {
  double best = 0.0;
  for (const auto& pt : curve.points) {
    if (pt.fpr <= target_fpr) best = std::max(best, pt.ccr);
  }
  return best;
}

double closed_set_accuracy(const std::vector<PredictionRecord>& records) {
  long known = 0;
  long correct = 0;
  for (const auto& r : records) {
    if (r.is_unknown) continue;
    ++known;
    if (r.correct()) ++correct;
  }
  if (known == 0) throw std::domain_error("closed_set_accuracy: no known-class records");
  return static_cast<double>(correct) / static_cast<double>(known);
}

double openness(long known_classes, long unknown_classes) {
  if (known_classes < 1) throw std::domain_error("openness needs at least one known class");
  if (unknown_classes < 0) throw std::domain_error("unknown class count must be >= 0");
  const double k2 = 2.0 * static_cast<double>(known_classes);
  return 1.0 - std::sqrt(k2 / (k2 + static_cast<double>(unknown_classes)));
}

long unknown_classes_for_openness(long known_classes, double target) {
  if (!(target >= 0.0 && target < 1.0)) throw std::domain_error("openness must lie in [0, 1)");
  if (known_classes < 1) throw std::domain_error("openness needs at least one known class");
  const double k2 = 2.0 * static_cast<double>(known_classes);
  const double exact = k2 / ((1.0 - target) * (1.0 - target)) - k2;
  const long lo = static_cast<long>(std::floor(exact));
  const long hi = lo + 1;
  return std::abs(openness(known_classes, lo) - target) <=
                 std::abs(openness(known_classes, hi) - target)
             ? lo
             : hi;
}

std::vector<PredictionRecord> read_prediction_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<PredictionRecord> out;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("score", 0) == 0) continue;
    std::stringstream ss(line);
    std::string cell[4];
    for (auto& c : cell) {
      if (!std::getline(ss, c, ',')) {
        throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                 ": expected 4 columns");
      }
    }
    try {
      PredictionRecord r;
      r.score = parse_double(cell[0]);
      r.predicted = parse_long(cell[1]);
      r.label = parse_long(cell[2]);
      r.is_unknown = parse_long(cell[3]) != 0;
      out.push_back(r);
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_prediction_csv(const std::filesystem::path& path,
                          const std::vector<PredictionRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "score,predicted,label,is_unknown\n";
  for (const auto& r : records) {
    out << format_double(r.score) << ',' << r.predicted << ',' << r.label << ','
        << (r.is_unknown ? 1 : 0) << '\n';
  }
}

void write_curve_csv(const std::filesystem::path& path, const OscrCurve& curve) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "threshold,fpr,ccr\n";
  for (const auto& pt : curve.points) {
    out << format_double(pt.threshold) << ',' << format_double(pt.fpr) << ','
        << format_double(pt.ccr) << '\n';
  }
}

}  // namespace mocd
