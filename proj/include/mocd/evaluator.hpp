#pragma once

// Open-set metrics over max-probability scores: CCR/FPR at a threshold, the
// OSCR threshold sweep, CCR at a target FPR, and openness.

#include <filesystem>
#include <vector>

namespace mocd {

struct PredictionRecord {
  double score = 0.0;  // max class probability
  long predicted = 0;
  long label = 0;  // ground-truth class; ignored for unknown samples
  bool is_unknown = false;

  bool correct() const { return !is_unknown && predicted == label; }
};

struct OscrPoint {
  double threshold;
  double fpr;
  double ccr;
};

/// Points ordered by threshold, highest first.
struct OscrCurve {
  std::vector<OscrPoint> points;
};

struct RatePair {
  double fpr;
  double ccr;
};

/// FPR(p) counts unknowns with score >= p; CCR(p) counts correctly
/// classified knowns with score > p. Both normalize by their set size.
RatePair ccr_fpr_at(const std::vector<PredictionRecord>& records, double threshold);

/// Sweeps every distinct score plus 0 and a threshold above every score.
OscrCurve oscr_curve(const std::vector<PredictionRecord>& records);

/// Largest CCR over curve points with fpr <= target; 0 if there is none.
double ccr_at_fpr(const OscrCurve& curve, double target_fpr);

double closed_set_accuracy(const std::vector<PredictionRecord>& records);

/// 1 - sqrt(2 known / (2 known + unknown)), over class counts.
double openness(long known_classes, long unknown_classes);

/// Unknown-class count whose openness is closest to `target` for a fixed
/// number of known classes.
long unknown_classes_for_openness(long known_classes, double target);

std::vector<PredictionRecord> read_prediction_csv(const std::filesystem::path& path);
void write_prediction_csv(const std::filesystem::path& path,
                          const std::vector<PredictionRecord>& records);
void write_curve_csv(const std::filesystem::path& path, const OscrCurve& curve);

}  // namespace mocd
