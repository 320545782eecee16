#include <doctest.h>

#include <fstream>
#include <random>

#include "mocd/checkpoint.hpp"
#include "mocd/hsic.hpp"
#include "mocd/model.hpp"
#include "oracles.hpp"

using namespace mocd;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> nd;
  MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  return m;
}

}  // namespace

TEST_CASE("HSIC hand value and oracles") {
  MatrixXd z(2, 1), h(2, 1);
  z << 0, 1;
  h << 0, 1;
  const double expect = std::pow(1.0 - std::exp(-0.5), 2);
  CHECK(hsic<double>(z, h, BandwidthPolicy::fixed(1.0)) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(expect == doctest::Approx(0.154818).epsilon(1e-6));

  std::mt19937_64 rng(21);
  for (int t = 0; t < 30; ++t) {
    const Eigen::Index n = 2 + t;
    const MatrixXd a = random_matrix(rng, n, 3);
    const MatrixXd b = random_matrix(rng, n, 2);
    const auto r = hsic_grad<double>(a, b);
    CHECK(r.value == doctest::Approx(oracle::hsic_double_sum(a, b, r.sigma_z, r.sigma_h)).epsilon(1e-10));
    CHECK(r.value == doctest::Approx(oracle::hsic_trace(a, b, r.sigma_z, r.sigma_h)).epsilon(1e-10));
    CHECK(r.value >= -1e-12);
    CHECK(std::abs(hsic<double>(a, b) - hsic<double>(b, a)) < 1e-12);
    const MatrixXd shifted = b.rowwise() + Eigen::RowVector2d(3.0, -7.0);
    CHECK(std::abs(hsic<double>(a, shifted) - r.value) < 1e-10);
  }
}

TEST_CASE("HSIC degenerate inputs") {
  std::mt19937_64 rng(2);
  const MatrixXd z = random_matrix(rng, 6, 2);
  CHECK(std::abs(hsic<double>(z, MatrixXd::Ones(6, 2))) < 1e-12);
  CHECK_THROWS_AS(hsic<double>(MatrixXd::Ones(1, 2), MatrixXd::Ones(1, 2)), std::domain_error);
  CHECK_THROWS_AS(hsic<double>(z, MatrixXd::Ones(5, 2)), std::domain_error);
  CHECK(median_bandwidth(MatrixXd(MatrixXd::Zero(4, 2))) == 1.0);
  MatrixXd line(3, 1);
  line << 0, 1, 3;
  CHECK(median_bandwidth(line) == doctest::Approx(2.0));
}

TEST_CASE("HSIC gradients match finite differences") {
  std::mt19937_64 rng(9);
  const MatrixXd z = random_matrix(rng, 8, 3);
  const MatrixXd h = random_matrix(rng, 8, 3);
  const auto policy = BandwidthPolicy::fixed(1.3);
  const auto r = hsic_grad<double>(z, h, policy);
  auto fz = [&](const VectorXd& p) { return hsic<double>(p.reshaped(8, 3), h, policy); };
  auto fh = [&](const VectorXd& p) { return hsic<double>(z, p.reshaped(8, 3), policy); };
  CHECK(oracle::max_rel_error(r.grad_z.reshaped(), oracle::fd_gradient(fz, z.reshaped())) < 1e-4);
  CHECK(oracle::max_rel_error(r.grad_h.reshaped(), oracle::fd_gradient(fh, h.reshaped())) < 1e-4);
}

TEST_CASE("MSAN blend and fusion") {
  ViewNets v;
  v.feature = Mlp<double>(NetSpec{{1, 2}, Activation::kRelu});
  v.structural = Mlp<double>(NetSpec{{1, 2}, Activation::kRelu});
  v.feature.layers()[0].weight << 1, 2;
  v.feature.layers()[0].bias << 0, 1;
  v.structural.layers()[0].weight << -1, 0;
  v.structural.layers()[0].bias << 3, 0;
  MatrixXd x(2, 1), agg(2, 1);
  x << 1, 2;
  agg << 0.5, 1;
  const MatrixXd h = mlp_forward(v.feature, x);
  const MatrixXd g = mlp_forward(v.structural, agg);
  CHECK(msan_forward(v, 1.0, true, x, agg) == h);
  CHECK(msan_forward(v, 0.0, true, x, agg) == g);
  MatrixXd expect(2, 2);
  // h = [[1,3],[2,5]], g = [[2.5,0],[2,0]].
  expect << 0.7 * 1 + 0.3 * 2.5, 0.7 * 3, 0.7 * 2 + 0.3 * 2, 0.7 * 5;
  CHECK((msan_forward(v, 0.7, true, x, agg) - expect).cwiseAbs().maxCoeff() < 1e-15);
  CHECK_THROWS_AS(msan_forward(v, 0.7, true, x, MatrixXd::Ones(3, 1)), std::domain_error);

  const MatrixXd e = MatrixXd::Random(3, 2);
  CHECK(fuse({e}) == e);
  CHECK(fuse({e, MatrixXd(-e)}).isZero());
  CHECK(fuse({MatrixXd::Constant(2, 2, 1), MatrixXd::Constant(2, 2, 2), MatrixXd::Constant(2, 2, 6)})
            .isApproxToConstant(3.0));
  CHECK_THROWS_AS(fuse({}), std::domain_error);
  CHECK_THROWS_AS(fuse({e, MatrixXd::Zero(2, 2)}), std::domain_error);
}

TEST_CASE("closed-set loss") {
  CHECK(closed_set_loss(MatrixXd::Zero(4, 3), {0, 1, 2, 0}) == doctest::Approx(std::log(3.0)));
  MatrixXd confident(2, 3);
  confident << 20, 0, 0, 0, 20, 0;
  CHECK(closed_set_loss(confident, {0, 1}) < 1e-8);
  MatrixXd wrong(2, 2);
  wrong << 5, 0, 0, 5;
  CHECK(closed_set_loss(wrong, {1, 0}) > std::log(2.0));
}

TEST_CASE("perception loss equals CE against the soft label") {
  std::mt19937_64 rng(4);
  std::vector<MatrixXd> views{random_matrix(rng, 10, 3)};
  std::vector<Index> labels{0, 1, 2, 3, 0, 1, 2, 3, 0, 1};
  const auto batch = mix_batch<double>(views, labels, 4, OMixConfig{1.0, 0.6}, rng);
  const MatrixXd logits = random_matrix(rng, 10, 4);
  const auto pl = perception_loss(logits, perception_targets(batch, 0));
  const auto ce = soft_cross_entropy_grad<double>(logits, batch.views[0].soft_labels);
  CHECK(std::abs(pl.value - ce.value) < 1e-10);
  CHECK((pl.grad - ce.grad).cwiseAbs().maxCoeff() < 1e-12);

  PerceptionTargets uniform{{0, 1}, {1, 0}, VectorXd::Zero(2), VectorXd::Zero(2), VectorXd::Ones(2)};
  CHECK(perception_loss(MatrixXd::Zero(2, 3), uniform).value == doctest::Approx(std::log(3.0)));

  PerceptionTargets bad = uniform;
  bad.w_unk << 0.5, 1.0;
  CHECK_THROWS_AS(perception_loss(MatrixXd::Zero(2, 3), bad), std::domain_error);
}

TEST_CASE("perception loss at u = 0 is the vanilla Mixup loss") {
  std::mt19937_64 rng(6);
  std::vector<MatrixXd> views{random_matrix(rng, 8, 2)};
  std::vector<Index> labels{0, 1, 2, 0, 1, 2, 0, 1};
  const auto batch =
      mix_batch<double>(views, labels, 3, OMixConfig{1.0, 0.5}, rng, MixMode::kVanilla);
  const MatrixXd logits = random_matrix(rng, 8, 3);
  const MatrixXd logp = log_softmax(logits);
  double mixup = 0.0;
  for (Index r = 0; r < 8; ++r) {
    const double l = batch.views[0].lambda(r);
    mixup += -l * logp(r, batch.class_i[r]) - (1 - l) * logp(r, batch.class_j[r]);
  }
  CHECK(std::abs(perception_loss(logits, perception_targets(batch, 0)).value - mixup / 8) < 1e-12);
}

TEST_CASE("total loss composition") {
  auto m = oracle::micro(3, 0.0, 0.0);
  m.batch.mix = &m.mix;
  auto obj = total_loss(m.model, m.batch);
  double cc = 0.0;
  for (Index v = 0; v < 2; ++v) {
    cc += closed_set_loss(msan_forward(m.model.views[v], 0.7, true, m.batch.features[v],
                                       m.batch.aggregated[v]),
                          m.batch.labels);
  }
  CHECK(obj.loss.total == doctest::Approx(cc).epsilon(1e-14));
  CHECK(obj.loss.om == 0.0);
  CHECK(obj.loss.cd == 0.0);

  auto one = oracle::micro(3, 1.0, 0.0);
  one.model.views.resize(1);
  one.batch.features.resize(1);
  one.batch.aggregated.resize(1);
  one.mix.views.resize(1);
  one.batch.mix = &one.mix;
  obj = total_loss(one.model, one.batch);
  const double cc1 = closed_set_loss(
      msan_forward(one.model.views[0], 0.7, true, one.batch.features[0], one.batch.aggregated[0]),
      one.batch.labels);
  const double om1 =
      perception_loss(mlp_forward(one.model.views[0].apn, one.mix.views[0].mixed_features),
                      perception_targets(one.mix, 0))
          .value;
  CHECK(obj.loss.total == doctest::Approx(cc1 + om1).epsilon(1e-14));

  auto full = oracle::micro(3);
  full.batch.mix = &full.mix;
  obj = total_loss(full.model, full.batch);
  CHECK(obj.loss.total ==
        doctest::Approx(obj.loss.cc + obj.loss.om + obj.loss.cd).epsilon(1e-14));
  CHECK(obj.loss.cd >= 0.0);
}

TEST_CASE("total loss gradient matches finite differences") {
  for (bool learnable : {false, true}) {
    auto m = oracle::micro(12);
    m.model.options.learnable_gamma = learnable;
    m.batch.mix = &m.mix;
    const auto obj = total_loss(m.model, m.batch);
    auto f = [&](const VectorXd& p) {
      auto copy = m.model;
      copy.assign(p);
      return total_loss(copy, m.batch, false).loss.total;
    };
    const VectorXd numeric = oracle::fd_gradient(f, m.model.flatten());
    CHECK(oracle::max_rel_error(obj.grad, numeric) < 1e-4);
    const auto threaded = total_loss(m.model, m.batch, true, 2);
    CHECK(threaded.grad == obj.grad);
  }
}

TEST_CASE("baseline leaves the perception branch untouched") {
  auto m = oracle::micro(5, 0.0, 0.0);
  m.batch.mix = &m.mix;
  const auto obj = total_loss(m.model, m.batch);
  Index offset = 0;
  for (const auto& v : m.model.views) {
    offset += v.feature.num_params() + v.structural.num_params();
    CHECK(obj.grad.segment(offset, v.apn.num_params()).isZero());
    offset += v.apn.num_params();
  }
}

TEST_CASE("prediction") {
  auto m = oracle::micro(1);
  for (auto& v : m.model.views) {
    for (auto* net : {&v.feature, &v.structural}) {
      for (auto& l : net->layers()) {
        l.weight.setZero();
        l.bias.setZero();
      }
    }
  }
  const auto p = predict(m.model, m.batch.features, m.batch.aggregated);
  CHECK(p.probabilities.isApproxToConstant(1.0 / 3));
  CHECK(p.scores.isApproxToConstant(1.0 / 3));

  ModelOptions o;
  o.use_structural = false;
  o.hidden = {};
  std::mt19937_64 rng(0);
  auto two = make_model({1, 1}, 2, o, rng);
  two.views[0].feature.layers()[0].weight.setZero();
  two.views[0].feature.layers()[0].bias << 2, 0;
  two.views[1].feature.layers()[0].weight.setZero();
  two.views[1].feature.layers()[0].bias << 0, 2;
  const auto q = predict(two, {MatrixXd::Ones(1, 1), MatrixXd::Ones(1, 1)}, {});
  CHECK(q.probabilities(0, 0) == doctest::Approx(0.5));
  CHECK(q.scores(0) == doctest::Approx(0.5));

  auto same = make_model({3}, 3, o, rng);
  const MatrixXd x = MatrixXd::Random(5, 3);
  auto twin = same;
  twin.views.push_back(same.views[0]);
  const auto a = predict(same, {x}, {});
  const auto b = predict(twin, {x, x}, {});
  CHECK((a.probabilities - b.probabilities).cwiseAbs().maxCoeff() < 1e-15);

  m.model.views[0].feature.layers()[0].weight(0, 0) = std::nan("");
  CHECK_THROWS_AS(predict(m.model, m.batch.features, m.batch.aggregated), std::logic_error);
}

TEST_CASE("checkpoint round trip") {
  auto m = oracle::micro(8);
  m.model.options.learnable_gamma = true;
  m.model.views[1].gamma_logit = 0.3;
  const auto path = oracle::temp_dir("ckpt") / "model.bin";
  write_checkpoint(path, to_checkpoint(m.model));
  const auto back = from_checkpoint(read_checkpoint(path));
  CHECK(back.flatten() == m.model.flatten());
  CHECK(back.num_classes == 3);
  CHECK(back.options.learnable_gamma);
  CHECK(back.options.activation == Activation::kTanh);
  CHECK(back.options.bandwidth.fixed_sigma == 1.5);

  std::ofstream(path, std::ios::binary) << "JUNK";
  CHECK_THROWS(read_checkpoint(path));
}
