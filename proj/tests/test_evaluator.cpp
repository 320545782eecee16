#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <set>

#include "mocd/evaluator.hpp"
#include "oracles.hpp"

using namespace mocd;

TEST_CASE("rates at a threshold") {
  const auto recs = oracle::six_records();
  auto r = ccr_fpr_at(recs, 0.5);
  CHECK(r.fpr == 0.5);
  CHECK(r.ccr == 0.5);
  r = ccr_fpr_at(recs, 0.0);
  CHECK(r.fpr == 1.0);
  CHECK(r.ccr == 0.75);
  CHECK(closed_set_accuracy(recs) == 0.75);
  r = ccr_fpr_at(recs, 1.5);
  CHECK(r.fpr == 0.0);
  CHECK(r.ccr == 0.0);
  // Ties: FPR counts scores equal to the threshold, CCR does not.
  r = ccr_fpr_at(recs, 0.7);
  CHECK(r.fpr == 0.5);
  r = ccr_fpr_at(recs, 0.9);
  CHECK(r.ccr == 0.0);

  auto known_only = recs;
  known_only.resize(4);
  CHECK_THROWS_AS(ccr_fpr_at(known_only, 0.5), std::domain_error);
  CHECK_THROWS_AS(ccr_fpr_at({{0.5, 0, -1, true}}, 0.5), std::domain_error);
}

TEST_CASE("hand-enumerated curve") {
  const auto curve = oscr_curve(oracle::six_records());
  struct P {
    double t, fpr, ccr;
  };
  const std::vector<P> expect{{0.9, 0.0, 0.0},  {0.8, 0.0, 0.25}, {0.7, 0.5, 0.25},
                              {0.6, 0.5, 0.25}, {0.4, 0.5, 0.5},  {0.3, 1.0, 0.75},
                              {0.0, 1.0, 0.75}};
  REQUIRE(curve.points.size() == expect.size() + 1);
  CHECK(curve.points.front().threshold > 0.9);
  CHECK(curve.points.front().fpr == 0.0);
  CHECK(curve.points.front().ccr == 0.0);
  for (std::size_t i = 0; i < expect.size(); ++i) {
    CHECK(curve.points[i + 1].threshold == expect[i].t);
    CHECK(curve.points[i + 1].fpr == expect[i].fpr);
    CHECK(curve.points[i + 1].ccr == expect[i].ccr);
  }
  CHECK(ccr_at_fpr(curve, 0.5) == 0.5);
  CHECK(ccr_at_fpr(curve, 1.0) == 0.75);
  CHECK(ccr_at_fpr(curve, 0.0) == 0.25);
  CHECK(ccr_at_fpr(OscrCurve{}, 0.1) == 0.0);
}

TEST_CASE("curve agrees with pointwise rates") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<PredictionRecord> recs;
  for (int i = 0; i < 200; ++i) {
    const bool unk = i % 4 == 0;
    recs.push_back({std::round(unit(rng) * 20) / 20, i % 3, unk ? -1 : (unit(rng) < 0.8 ? i % 3 : 0),
                    unk});
  }
  for (const auto& p : oscr_curve(recs).points) {
    const auto r = ccr_fpr_at(recs, p.threshold);
    CHECK(r.fpr == p.fpr);
    CHECK(r.ccr == p.ccr);
  }
}

TEST_CASE("separation extremes") {
  std::vector<PredictionRecord> perfect{
      {0.9, 0, 0, false}, {0.8, 1, 1, false}, {0.2, 0, -1, true}, {0.1, 1, -1, true}};
  const auto c = oscr_curve(perfect);
  // Strict CCR at a score threshold drops the lowest known record, so the
  // best zero-FPR point is at p = 0.8; full CCR arrives with the first unknown.
  double best_at_zero = 0.0;
  for (const auto& p : c.points) {
    if (p.fpr == 0.0) best_at_zero = std::max(best_at_zero, p.ccr);
  }
  CHECK(best_at_zero == 0.5);
  CHECK(ccr_at_fpr(c, 0.01) == 0.5);
  CHECK(ccr_at_fpr(c, 0.5) == 1.0);

  std::vector<PredictionRecord> flat{
      {0.5, 0, 0, false}, {0.5, 1, 1, false}, {0.5, 0, -1, true}, {0.5, 1, -1, true}};
  const auto f = oscr_curve(flat);
  // Non-dominated points: (0, 0) and (1, 1).
  std::set<std::pair<double, double>> frontier;
  for (const auto& p : f.points) {
    bool dominated = false;
    for (const auto& q : f.points) {
      dominated |= q.fpr <= p.fpr && q.ccr >= p.ccr && (q.fpr < p.fpr || q.ccr > p.ccr);
    }
    if (!dominated) frontier.insert({p.fpr, p.ccr});
  }
  CHECK(frontier == std::set<std::pair<double, double>>{{0.0, 0.0}, {1.0, 1.0}});
}

TEST_CASE("openness") {
  CHECK(openness(2, 1) == doctest::Approx(1 - std::sqrt(0.8)).epsilon(1e-15));
  CHECK(openness(2, 1) == doctest::Approx(0.10557).epsilon(1e-5));
  CHECK(openness(7, 0) == 0.0);
  CHECK(openness(10, 5) == doctest::Approx(1 - std::sqrt(20.0 / 25.0)));
  CHECK(unknown_classes_for_openness(10, 0.1) == 5);
  CHECK(unknown_classes_for_openness(6, 0.0) == 0);
  CHECK_THROWS_AS(openness(0, 1), std::domain_error);
  CHECK_THROWS_AS(unknown_classes_for_openness(5, 1.0), std::domain_error);
  for (long u = 0; u < 20; ++u) CHECK(openness(6, u) < openness(6, u + 1));
}

TEST_CASE("prediction csv round trip") {
  const auto dir = oracle::temp_dir("eval");
  const auto recs = oracle::six_records();
  write_prediction_csv(dir / "p.csv", recs);
  const auto back = read_prediction_csv(dir / "p.csv");
  REQUIRE(back.size() == recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK(back[i].score == recs[i].score);
    CHECK(back[i].predicted == recs[i].predicted);
    CHECK(back[i].is_unknown == recs[i].is_unknown);
  }
  std::ofstream(dir / "bad.csv") << "score,predicted,label,is_unknown\n0.5,x,1,0\n";
  try {
    read_prediction_csv(dir / "bad.csv");
    FAIL("expected parse error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("bad.csv:2") != std::string::npos);
  }
  write_curve_csv(dir / "c.csv", oscr_curve(recs));
  std::ifstream in(dir / "c.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "threshold,fpr,ccr");
}
