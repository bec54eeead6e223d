#include "doctest.h"

#include <cmath>
#include <limits>

#include "sorbfit/error.hpp"
#include "sorbfit/pinn.hpp"
#include "sorbfit/rng.hpp"

using namespace sorbfit;
using namespace sorbfit::pinn;

namespace {

ArchSpec tiny(int d = 3, double dropout = 0.0) {
  ArchSpec a;
  a.input_dim = d;
  a.scale_widths = {4, 4};
  a.backbone_widths = {4, 4, 4};
  a.dropout = dropout;
  a.seed = 7;
  return a;
}

Matrix randn(Rng& rng, Eigen::Index r, Eigen::Index c, double sd = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = sd * standard_normal(rng);
  return m;
}

Matrix random_pt(Rng& rng, Eigen::Index n) {
  Matrix pt(2, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    pt(0, i) = uniform(rng, 1.0, 120.0);
    pt(1, i) = uniform(rng, 300.0, 360.0);
  }
  return pt;
}

// dX/dp is a fixed random direction; X(p +- h) = X +- h dXdp.
Dataset random_dataset(Rng& rng, int d, Eigen::Index n, double h = 1e-3) {
  Dataset ds;
  ds.h = h;
  ds.X = randn(rng, d, n);
  ds.PT = random_pt(rng, n);
  const Matrix dir = randn(rng, d, n, 0.05);
  ds.X_plus = ds.X + h * dir;
  ds.X_minus = ds.X - h * dir;
  ds.PT_plus = ds.PT;
  ds.PT_minus = ds.PT;
  ds.PT_plus.row(0).array() += h;
  ds.PT_minus.row(0).array() -= h;
  ds.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    ds.y[i] = uniform(rng, 0.0, 1.3);
    ds.lithology.push_back(static_cast<data::Lithology>(i % 3));
  }
  return ds;
}

void randomize_running_stats(Network& net, Rng& rng) {
  for (std::size_t j = 0; j < net.running_mean.size(); ++j) {
    for (Eigen::Index k = 0; k < net.running_mean[j].size(); ++k) {
      net.running_mean[j][k] = 0.3 * standard_normal(rng);
      net.running_var[j][k] = uniform(rng, 0.5, 2.0);
    }
  }
  net.gate_center = {60.0, 330.0};
  net.gate_scale = {35.0, 17.0};
}

bool close_rel(double a, double b, double rel, double abs_floor) {
  return std::abs(a - b) <= rel * std::max(std::abs(a), std::abs(b)) + abs_floor;
}

}  // namespace

TEST_CASE("network: zero weights give softplus(0) and a half-open gate") {
  Network net(tiny());
  std::fill(net.theta.begin(), net.theta.end(), 0.0);
  Rng rng = make_rng(1);
  const Matrix X = randn(rng, 3, 5), PT = random_pt(rng, 5);
  Tape t;
  const Vector y = forward(net, X, PT, {}, &t);
  for (Eigen::Index i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK((t.gate.array() == 0.5).all());
}

TEST_CASE("network: parameter count matches the layer arithmetic") {
  ArchSpec a;
  a.input_dim = 50;
  Network net(a);
  const long d = 50;
  const long scale = (d + 1) * (64 + 128 + 256);
  const long gate = 3 * 448;
  const long bb = (448 * 256 + 256 + 512) + (256 * 512 + 512 + 1024) + (512 * 256 + 256 + 512) + (256 * 128 + 128 + 256);
  CHECK(static_cast<long>(net.parameter_count()) == scale + gate + bb + 129);
  CHECK(net.skip_source(0) == -1);
  CHECK(net.skip_source(1) == -1);
  CHECK(net.skip_source(2) == 0);
  CHECK(net.skip_source(3) == -1);
  CHECK(Network(a).theta == net.theta);
}

TEST_CASE("network: initialization scales") {
  ArchSpec a;
  a.input_dim = 40;
  Network net(a);
  auto w = net.W(net.dense[1]);  // 256 -> 512
  const double var = w.array().square().mean();
  CHECK(var == doctest::Approx(2.0 / 256.0).epsilon(0.03));
  auto wo = net.W(net.out);
  const double lim = 0.1 * std::sqrt(6.0 / 129.0);
  CHECK(wo.cwiseAbs().maxCoeff() <= lim);
  CHECK(wo.cwiseAbs().maxCoeff() > 0.8 * lim);
  CHECK(net.b(net.dense[0]).isZero());
}

TEST_CASE("network: dimension mismatch") {
  Network net(tiny());
  Rng rng = make_rng(2);
  CHECK_THROWS_AS(forward(net, randn(rng, 4, 3), random_pt(rng, 3)), Error);
  try {
    forward(net, randn(rng, 4, 3), random_pt(rng, 3));
  } catch (const Error& e) {
    CHECK(e.code() == Errc::DimensionMismatch);
  }
  ArchSpec bad = tiny();
  bad.dropout = 1.0;
  CHECK_THROWS_AS(Network{bad}, Error);
  bad = tiny();
  bad.backbone_widths = {4, 0};
  CHECK_THROWS_AS(Network{bad}, Error);
}

TEST_CASE("network: outputs are non-negative on 1e5 random inputs") {
  ArchSpec a;
  a.input_dim = 12;
  a.width_mult = 0.25;
  Network net(a);
  Rng rng = make_rng(11);
  for (auto& v : net.theta) v *= 3.0;
  std::size_t negatives = 0, nonfinite = 0;
  for (int chunk = 0; chunk < 100; ++chunk) {
    Matrix X = randn(rng, 12, 1000, 1.0 + chunk);
    Matrix PT(2, 1000);
    for (Eigen::Index i = 0; i < 1000; ++i) {
      PT(0, i) = uniform(rng, -500.0, 500.0);
      PT(1, i) = uniform(rng, 0.0, 1000.0);
    }
    const Vector y = predict(net, X, PT);
    negatives += static_cast<std::size_t>((y.array() < 0.0).count());
    nonfinite += static_cast<std::size_t>((!y.array().isFinite()).count());
  }
  CHECK(negatives == 0);
  CHECK(nonfinite == 0);
}

TEST_CASE("network: train equals eval without dropout once statistics are frozen") {
  Network net(tiny(3, 0.0));
  Rng rng = make_rng(3);
  const Matrix X = randn(rng, 3, 16), PT = random_pt(rng, 16);
  Tape t;
  ForwardOptions tr;
  tr.train = true;
  forward(net, X, PT, tr, &t);
  for (std::size_t j = 0; j < net.running_mean.size(); ++j) {
    net.running_mean[j] = t.mean[j];
    net.running_var[j] = (t.inv_std[j].array().square().inverse() - kBatchNormEps).matrix();
  }
  const Vector train_out = t.y;
  const Vector eval_out = forward(net, X, PT);
  CHECK((train_out - eval_out).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("network: dropout only acts in train mode") {
  Network net(tiny(3, 0.5));
  Rng rng = make_rng(4);
  const Matrix X = randn(rng, 3, 8), PT = random_pt(rng, 8);
  CHECK(forward(net, X, PT) == forward(net, X, PT));
  Rng d1 = make_rng(1), d2 = make_rng(2);
  ForwardOptions a, b;
  a.train = b.train = true;
  a.dropout_rng = &d1;
  b.dropout_rng = &d2;
  CHECK(forward(net, X, PT, a) != forward(net, X, PT, b));
}

TEST_CASE("network: input gradients match central differences") {
  Network net(tiny());
  Rng rng = make_rng(5);
  randomize_running_stats(net, rng);
  for (int point = 0; point < 10; ++point) {
    Matrix X = randn(rng, 3, 1), PT = random_pt(rng, 1);
    Tape t;
    forward(net, X, PT, {}, &t);
    Params g;
    Matrix dX, dPT;
    backward(net, t, Vector::Ones(1), g, &dX, &dPT);
    const double eps = 1e-4;
    for (int j = 0; j < 3; ++j) {
      Matrix xp = X, xm = X;
      xp(j, 0) += eps;
      xm(j, 0) -= eps;
      const double fd = (forward(net, xp, PT)[0] - forward(net, xm, PT)[0]) / (2 * eps);
      CHECK(close_rel(dX(j, 0), fd, 1e-4, 1e-9));
    }
    for (int r = 0; r < 2; ++r) {
      Matrix pp = PT, pm = PT;
      pp(r, 0) += eps;
      pm(r, 0) -= eps;
      const double fd = (forward(net, X, pp)[0] - forward(net, X, pm)[0]) / (2 * eps);
      CHECK(close_rel(dPT(r, 0), fd, 1e-4, 1e-9));
    }
  }
}

TEST_CASE("network: loss gradient matches central differences for every parameter") {
  Rng rng = make_rng(6);
  Network net(tiny());
  randomize_running_stats(net, rng);
  for (auto& v : net.theta) v *= 1.5;
  Dataset ds = random_dataset(rng, 3, 12);
  ds.PT.row(0).head(6).array() += 40.0;  // some rows above the physics threshold
  ds.PT_plus.row(0).head(6).array() += 40.0;
  ds.PT_minus.row(0).head(6).array() += 40.0;
  const std::array<double, 4> lam{1.0, 2.0, 0.5, 50.0};
  const QmaxTable q{0.2, 0.3, 0.25};  // small capacities so the hinge terms are active

  Params grad(net.parameter_count(), 0.0);
  const auto lb = loss_and_gradient(net, ds, lam, q, {}, grad);
  REQUIRE(lb.physics > 0.0);
  REQUIRE(lb.bounds > 0.0);
  REQUIRE(lb.monotonicity > 0.0);

  const double eps = 1e-5;
  int bad = 0;
  for (std::size_t k = 0; k < net.parameter_count(); ++k) {
    Network np = net, nm = net;
    np.theta[k] += eps;
    nm.theta[k] -= eps;
    Params scratch(net.parameter_count(), 0.0);
    const double lp = loss_and_gradient(np, ds, lam, q, {}, scratch).total;
    const double lm = loss_and_gradient(nm, ds, lam, q, {}, scratch).total;
    const double fd = (lp - lm) / (2 * eps);
    if (!close_rel(grad[k], fd, 1e-3, 1e-7)) {
      ++bad;
      MESSAGE("param " << k << " analytic " << grad[k] << " fd " << fd);
    }
  }
  CHECK(bad == 0);
}

TEST_CASE("network: batch-statistics gradient matches central differences") {
  Rng rng = make_rng(8);
  Network net(tiny());
  Dataset ds = random_dataset(rng, 3, 10);
  ForwardOptions tr;
  tr.train = true;
  const std::array<double, 4> lam{1.0, 0.0, 0.0, 0.0};
  Params grad(net.parameter_count(), 0.0);
  loss_and_gradient(net, ds, lam, {}, tr, grad);
  const double eps = 1e-6;
  int bad = 0;
  for (std::size_t k = 0; k < net.parameter_count(); ++k) {
    Network np = net, nm = net;
    np.theta[k] += eps;
    nm.theta[k] -= eps;
    Params scratch(net.parameter_count(), 0.0);
    const double fd = (loss_and_gradient(np, ds, lam, {}, tr, scratch).total -
                       loss_and_gradient(nm, ds, lam, {}, tr, scratch).total) /
                      (2 * eps);
    if (!close_rel(grad[k], fd, 1e-3, 1e-8)) ++bad;
  }
  CHECK(bad == 0);
}

TEST_CASE("network: reverse-mode and central-difference dq/dp agree") {
  Rng rng = make_rng(9);
  ArchSpec a = tiny(6);
  a.scale_widths = {8, 16};
  a.backbone_widths = {16, 32, 16};
  Network net(a);
  randomize_running_stats(net, rng);
  const double h = 1e-3;
  const Matrix X = randn(rng, 6, 40), PT = random_pt(rng, 40);
  const Matrix dXdp = randn(rng, 6, 40, 0.05);
  Matrix PTp = PT, PTm = PT;
  PTp.row(0).array() += h;
  PTm.row(0).array() -= h;
  const Vector rev = dqdp_reverse(net, X, PT, dXdp);
  const Vector cen = dqdp_central(net, X + h * dXdp, PTp, X - h * dXdp, PTm, h);
  CHECK((rev - cen).cwiseAbs().maxCoeff() < 1e-3);
  CHECK(rev.cwiseAbs().maxCoeff() > 1e-4);
}

TEST_CASE("loss: weight function values") {
  CHECK(data_weight(0.1) == 1.0);
  CHECK(data_weight(0.3) == doctest::Approx(1.0 / (1.0 + std::exp(-1.0)) + 0.5).epsilon(1e-15));
  CHECK(data_weight(0.3) == doctest::Approx(1.23106).epsilon(1e-5));
}

TEST_CASE("loss: physics contribution of an over-capacity clay row") {
  const std::vector<double> yh{1.5}, y{1.5}, p{60.0};
  const std::vector<data::Lithology> l{data::Lithology::Clay};
  const auto lb = loss_terms(yh, y, p, l, {}, {}, {0.0, 1.0, 0.0, 0.0});
  CHECK(lb.physics == doctest::Approx(0.3).epsilon(1e-14));
  CHECK(lb.bounds == doctest::Approx(0.3).epsilon(1e-14));
  CHECK(lb.data == 0.0);
  CHECK(lb.total == lb.physics);
}

TEST_CASE("loss: lower band and empty high-pressure subset") {
  const std::vector<data::Lithology> l{data::Lithology::Shale, data::Lithology::Shale};
  const std::vector<double> yh{0.5, 0.5}, y{0.5, 0.5};
  const auto low = loss_terms(yh, y, std::vector<double>{10.0, 50.0}, l, {}, {});
  CHECK(low.physics == 0.0);
  const auto high = loss_terms(yh, y, std::vector<double>{60.0, 10.0}, l, {}, {});
  CHECK(high.physics == doctest::Approx(0.1 * 0.2).epsilon(1e-12));
}

TEST_CASE("loss: monotonicity penalty is zero exactly when dq/dp >= -1e-6") {
  const std::vector<data::Lithology> l(3, data::Lithology::Coal);
  const std::vector<double> yh{0.3, 0.3, 0.3}, p{10.0, 20.0, 30.0};
  CHECK(loss_terms(yh, yh, p, l, {}, std::vector<double>{0.0, 1.0, -1e-6}).monotonicity == 0.0);
  CHECK(loss_terms(yh, yh, p, l, {}, std::vector<double>{0.0, 1.0, -1e-5}).monotonicity > 0.0);
  CHECK(loss_terms(yh, yh, p, l, {}, std::vector<double>{0.0, -0.3, 2.0}).monotonicity ==
        doctest::Approx((0.3 - 1e-6) / 3.0).epsilon(1e-14));
}

TEST_CASE("loss: total is the weighted sum and terms are non-negative (property)") {
  Rng rng = make_rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 30);
    std::vector<double> yh(n), y(n), p(n), dq(n);
    std::vector<data::Lithology> l(n);
    for (std::size_t i = 0; i < n; ++i) {
      yh[i] = uniform(rng, -0.5, 2.0);
      y[i] = uniform(rng, 0.0, 1.5);
      p[i] = uniform(rng, 0.0, 120.0);
      dq[i] = uniform(rng, -0.1, 0.1);
      l[i] = static_cast<data::Lithology>(uniform_index(rng, 3));
    }
    const std::array<double, 4> lam{uniform01(rng), uniform01(rng), uniform01(rng), uniform01(rng)};
    const auto lb = loss_terms(yh, y, p, l, {}, dq, lam);
    for (double t : lb.terms()) CHECK(t >= 0.0);
    CHECK(lb.total == doctest::Approx(lam[0] * lb.data + lam[1] * lb.physics + lam[2] * lb.bounds +
                                      lam[3] * lb.monotonicity)
                          .epsilon(1e-14));
  }
}

TEST_CASE("loss: length mismatch") {
  const std::vector<double> a{1.0}, b{1.0, 2.0};
  const std::vector<data::Lithology> l{data::Lithology::Clay};
  CHECK_THROWS_AS(loss_terms(a, b, a, l, {}, {}), Error);
}

TEST_CASE("adaptive lambdas") {
  {
    EmaState s;
    const auto lam = adaptive_lambdas({3.0, 3.0, 3.0, 3.0}, s);
    for (double v : lam) CHECK(v == doctest::Approx(1.0).epsilon(1e-10));
  }
  {
    EmaState s;
    std::array<double, 4> lam{};
    for (int i = 0; i < 400; ++i) lam = adaptive_lambdas({2.0, 1.0, 1.0, 1.0}, s);
    CHECK(lam[0] == doctest::Approx(1.0).epsilon(1e-9));
    for (int k = 1; k < 4; ++k) CHECK(lam[static_cast<std::size_t>(k)] == doctest::Approx(2.0).epsilon(1e-9));
  }
  {
    EmaState s;
    const auto lam = adaptive_lambdas({1.0, 0.0, 1.0, 1.0}, s);
    CHECK(std::isfinite(lam[1]));
    CHECK(lam[1] == doctest::Approx(0.1 / kLambdaEps));
  }
  {
    EmaState s;
    const auto lam = adaptive_lambdas({4.0, 1.0, 9.0, 9.0}, s, 0.1, {true, true, false, false});
    CHECK(lam[1] == doctest::Approx(4.0));
    CHECK(lam[2] == 1.0);
    CHECK(s.g[2] == 0.0);
  }
}

TEST_CASE("schedule: learning rates and weights") {
  CHECK(lr_at(Phase::Warmup, 0) == 1.2e-3);
  CHECK(lr_at(Phase::Warmup, 49) == 1.2e-3);
  CHECK(lr_at(Phase::Physics, 0) == 5e-4);
  CHECK(lr_at(Phase::Physics, 250) == doctest::Approx(1e-6).epsilon(1e-12));
  CHECK(lr_at(Phase::Physics, 125) == doctest::Approx(2.505e-4).epsilon(1e-12));
  CHECK(lr_at(Phase::Full, 0) == 1e-4);
  CHECK(lr_at(Phase::Full, 100) == doctest::Approx(1e-7).epsilon(1e-12));
  for (int e = 0; e <= 250; ++e) CHECK(phase_weights(Phase::Physics, e)[1] == static_cast<double>(e) / 250.0);
  CHECK(phase_weights(Phase::Warmup, 10) == std::array<double, 4>{1.0, 0.0, 0.0, 0.0});
  CHECK(phase_weights(Phase::Full, 10) == std::array<double, 4>{1.0, 1.0, 0.1, 0.05});
  TrainSchedule off;
  off.physics_enabled = false;
  CHECK(phase_weights(Phase::Full, 10, off) == std::array<double, 4>{1.0, 0.0, 0.0, 0.0});
}

TEST_CASE("train: a single row is memorized") {
  ArchSpec a = tiny(3);
  a.scale_widths = {16, 16};
  a.backbone_widths = {16, 16};
  Network net(a);
  Rng rng = make_rng(13);
  Dataset ds = random_dataset(rng, 3, 1);
  ds.y[0] = 0.6;
  TrainSchedule s;
  s.epochs = {3000, 0, 0};
  s.patience = 100000;
  const auto r = train(net, ds, ds, s);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& e : r.history) best = std::min(best, e.train.data);
  CHECK(best < 1e-6);
}

TEST_CASE("train: early stopping fires exactly at patience when validation is frozen") {
  Network net(tiny());
  Rng rng = make_rng(14);
  Dataset tr = random_dataset(rng, 3, 20), val = random_dataset(rng, 3, 10);
  TrainSchedule s;
  s.epochs = {60, 60, 60};
  s.lr_phase1 = s.lr2_max = s.lr2_min = s.lr3_max = s.lr3_min = 0.0;
  s.batch_size = 1;  // single-row batches leave the running statistics alone
  const auto r = train(net, tr, val, s);
  for (std::size_t p = 0; p < 3; ++p) {
    CHECK(r.stopped_early[p]);
    CHECK(r.epochs_run[p] == s.patience + 1);
  }
}

TEST_CASE("train: history is bit-identical across runs and records the ramp") {
  Rng rng = make_rng(15);
  Dataset tr = random_dataset(rng, 3, 70), val = random_dataset(rng, 3, 20);
  TrainSchedule s;
  s.epochs = {3, 6, 3};
  s.patience = 1000;
  ArchSpec a = tiny(3, 0.1);
  Network n1(a), n2(a);
  const auto r1 = train(n1, tr, val, s, {}, 99);
  const auto r2 = train(n2, tr, val, s, {}, 99);
  CHECK(history_csv(r1) == history_csv(r2));
  CHECK(n1.theta == n2.theta);
  REQUIRE(r1.history.size() == 12);
  for (int e = 0; e < 6; ++e) {
    const auto& rec = r1.history[static_cast<std::size_t>(3 + e)];
    CHECK(rec.phase == 2);
    CHECK(rec.schedule_weights[1] == static_cast<double>(e) / 6.0);
  }
  CHECK(r1.history.back().train.lambdas == std::array<double, 4>{1.0, 1.0, 0.1, 0.05});
  Network n3(a);
  const auto r3 = train(n3, tr, val, s, {}, 100);
  CHECK(history_csv(r1) != history_csv(r3));
}

TEST_CASE("train: empty partitions are rejected") {
  Network net(tiny());
  Rng rng = make_rng(16);
  Dataset tr = random_dataset(rng, 3, 5);
  CHECK_THROWS_AS(train(net, tr, tr.subset({}), TrainSchedule{}), Error);
}

TEST_CASE("serialization round-trips") {
  Rng rng = make_rng(17);
  Network net(tiny());
  randomize_running_stats(net, rng);
  const Network back = network_from_json(nlohmann::json::parse(to_json(net).dump()));
  CHECK(back.theta == net.theta);
  CHECK(back.gate_scale == net.gate_scale);
  const Matrix X = randn(rng, 3, 4), PT = random_pt(rng, 4);
  CHECK(predict(back, X, PT) == predict(net, X, PT));

  TrainSchedule s;
  s.epochs = {1, 2, 3};
  s.physics_enabled = false;
  CHECK(schedule_from_json(to_json(s)) == s);
  auto j = to_json(s);
  j["learning_rate"] = 1.0;
  CHECK_THROWS_AS(schedule_from_json(j), Error);
  CHECK(arch_from_json(to_json(tiny())) == tiny());
}
