#include <doctest.h>

#include <Eigen/Cholesky>
#include <random>

#include "mcglm/covariance.hpp"
#include "mcglm/error.hpp"
#include "support.hpp"

using namespace mcglm;
using testing::max_abs;
using testing::rel_err;

namespace {

GroupIndex one_group(std::vector<double> time, std::vector<std::string> key = {}) {
  std::vector<std::string> labels(time.size(), "g");
  return GroupIndex::from_labels(labels, std::move(time), std::move(key));
}

MatrixXd random_spd(std::mt19937_64& rng, Index n) {
  std::normal_distribution<double> z;
  MatrixXd a(n, n);
  for (Index i = 0; i < a.size(); ++i) a.data()[i] = z(rng);
  return a * a.transpose() + n * MatrixXd::Identity(n, n);
}

MatrixXd random_symmetric(std::mt19937_64& rng, Index n) {
  std::normal_distribution<double> z;
  MatrixXd a(n, n);
  for (Index i = 0; i < a.size(); ++i) a.data()[i] = z(rng);
  return (a + a.transpose()) / 2;
}

MatrixXd chol(const MatrixXd& s) { return Eigen::LLT<MatrixXd>(s).matrixL(); }

ModelSpec two_identical_responses() {
  ModelSpec spec = testing::simple_spec(3, 3, true, 1.7, true);
  auto second = spec.responses[0];
  second.name = "y2";
  spec.responses.push_back(second);
  return spec;
}

}  // namespace

TEST_CASE("omega is the weighted sum of components") {
  const auto g = one_group({1, 2, 3});
  const std::vector<KnownMatrix> cs{build_identity(g), build_exchangeable(g, ClusterKey::whole_group)};
  VectorXd tau(2);
  tau << 0.7, 0.2;
  const MatrixXd expected = 0.7 * MatrixXd::Identity(3, 3) + 0.2 * MatrixXd::Ones(3, 3);
  CHECK(max_abs(omega(tau, cs).dense(g) - expected) == 0.0);

  const std::vector<KnownMatrix> id{build_identity(g)};
  CHECK(omega(VectorXd::Ones(1), id).dense(g) == MatrixXd::Identity(3, 3));
  CHECK_THROWS_AS(omega(tau, id), SpecificationError);
}

TEST_CASE("omega of the four-component hunting structure") {
  const auto g = one_group({1, 1, 2, 2}, {"m1", "m1", "m2", "m2"});
  const std::vector<double> snare{1, 0, 1, 1};
  const std::vector<KnownMatrix> cs{build_identity(g),
                                    build_exchangeable(g, ClusterKey::within_group),
                                    build_covariate_block(g, snare),
                                    build_inverse_distance(g)};
  VectorXd tau(4);
  tau << 0.474, 0.722, 0.928, -0.155;
  const MatrixXd om = omega(tau, cs).dense(g);
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 4; ++j) {
      const bool same_month = (i < 2) == (j < 2);
      double v = 0.928 * snare[i] * snare[j];
      if (i == j) {
        v += 0.474 + 0.722;
      } else if (same_month) {
        v += 0.722 - 0.155;
      } else {
        v += -0.155 / 1.0;
      }
      CHECK(om(i, j) == doctest::Approx(v).epsilon(1e-15));
    }
}

TEST_CASE("sigma_r closed forms") {
  const auto g1 = one_group({1});
  const BlockDiagonal half{{MatrixXd::Constant(1, 1, 0.5)}};
  CHECK(sigma_r(VectorXd::Constant(1, 2.0), 2.0, half, g1).dense(g1)(0, 0) == 4.0);
  const BlockDiagonal t0{{MatrixXd::Constant(1, 1, 0.3)}};
  CHECK(sigma_r(VectorXd::Constant(1, 3.0), 1.0, t0, g1).dense(g1)(0, 0) ==
        doctest::Approx(1.3 * 3.0).epsilon(1e-15));

  std::mt19937_64 rng(3);
  const auto g = one_group({1, 2, 3, 4});
  const MatrixXd om = random_symmetric(rng, 4);
  for (double p : {0.0, 1.0, 1.7, 3.0}) {
    const MatrixXd s = sigma_r(VectorXd::Ones(4), p, BlockDiagonal{{om}}, g).dense(g);
    CHECK(max_abs(s - (MatrixXd::Identity(4, 4) + om)) == 0.0);
  }
}

TEST_CASE("sigma_r scaling with p = 2") {
  std::mt19937_64 rng(4);
  const auto g = one_group({1, 2, 3, 4, 5});
  const MatrixXd om = random_symmetric(rng, 5);
  VectorXd mu(5);
  mu << 0.5, 1.2, 3.0, 0.8, 7.5;
  const double c = 2.5;
  const MatrixXd s1 = sigma_r(mu, 2.0, BlockDiagonal{{om}}, g).dense(g);
  const MatrixXd s2 = sigma_r(c * mu, 2.0, BlockDiagonal{{om}}, g).dense(g);
  for (Index i = 0; i < 5; ++i)
    for (Index j = 0; j < 5; ++j) {
      const double poisson = i == j ? mu(i) : 0.0;
      const double part1 = s1(i, j) - poisson;
      const double part2 = s2(i, j) - c * poisson;
      CHECK(part2 == doctest::Approx(c * c * part1).epsilon(1e-12));
    }
}

TEST_CASE("sigma_r is exactly symmetric") {
  std::mt19937_64 rng(5);
  const auto g = one_group({1, 2, 3, 4, 5, 6});
  const MatrixXd om = random_symmetric(rng, 6);
  VectorXd mu = VectorXd::LinSpaced(6, 0.3, 9.0);
  const MatrixXd s = sigma_r(mu, 1.37, BlockDiagonal{{om}}, g).dense(g);
  CHECK(max_abs(s - s.transpose()) == 0.0);
}

TEST_CASE("joint covariance special cases") {
  std::mt19937_64 rng(6);
  const auto g = GroupIndex::from_labels(std::vector<std::string>{"a", "a", "b", "a", "b"},
                                         {1, 2, 1, 3, 2}, {});
  auto sig = [&](Index o1, Index o2) {
    return BlockDiagonal{{random_spd(rng, o1), random_spd(rng, o2)}};
  };
  const BlockDiagonal s1 = sig(3, 2), s2 = sig(3, 2);

  SUBCASE("one response reproduces sigma bit for bit") {
    const auto c = JointCovariance::assemble({s1}, VectorXd(0), g);
    CHECK(max_abs(c.dense() - s1.dense(g)) == 0.0);
  }
  SUBCASE("zero correlation gives the block diagonal") {
    const auto c = JointCovariance::assemble({s1, s2}, VectorXd::Zero(1), g);
    const MatrixXd d = c.dense();
    const double scale = std::max(max_abs(s1.dense(g)), max_abs(s2.dense(g)));
    CHECK(max_abs(d.topLeftCorner(5, 5) - s1.dense(g)) <= 1e-12 * scale);
    CHECK(max_abs(d.bottomRightCorner(5, 5) - s2.dense(g)) <= 1e-12 * scale);
    CHECK(max_abs(d.topRightCorner(5, 5)) <= 1e-12 * scale);
  }
  SUBCASE("identity sigmas give the Kronecker form") {
    const BlockDiagonal id{{MatrixXd::Identity(3, 3), MatrixXd::Identity(2, 2)}};
    const auto c = JointCovariance::assemble({id, id}, VectorXd::Constant(1, 0.3), g);
    MatrixXd expected = MatrixXd::Identity(10, 10);
    expected.topRightCorner(5, 5) = 0.3 * MatrixXd::Identity(5, 5);
    expected.bottomLeftCorner(5, 5) = 0.3 * MatrixXd::Identity(5, 5);
    CHECK(max_abs(c.dense() - expected) <= 1e-15);
  }
  SUBCASE("brute-force generalized Kronecker product") {
    // Lower Cholesky factors of the assembled N x N matrices, rows in group order.
    std::vector<Index> order;
    for (const auto& grp : g)
      for (Index r : grp.rows) order.push_back(r);
    Eigen::PermutationMatrix<Eigen::Dynamic> perm(5);
    for (Index k = 0; k < 5; ++k) perm.indices()(order[k]) = k;
    auto factor = [&](const BlockDiagonal& s) {
      const MatrixXd grouped = perm * s.dense(g) * perm.transpose();
      return MatrixXd(perm.transpose() * chol(grouped) * perm);
    };
    VectorXd rho = VectorXd::Constant(1, -0.45);
    MatrixXd l = MatrixXd::Zero(10, 10);
    l.topLeftCorner(5, 5) = factor(s1);
    l.bottomRightCorner(5, 5) = factor(s2);
    MatrixXd kron = MatrixXd::Identity(10, 10);
    kron.topRightCorner(5, 5) = -0.45 * MatrixXd::Identity(5, 5);
    kron.bottomLeftCorner(5, 5) = -0.45 * MatrixXd::Identity(5, 5);
    const MatrixXd expected = l * kron * l.transpose();
    const auto c = JointCovariance::assemble({s1, s2}, rho, g);
    CHECK(rel_err(c.dense(), expected) <= 1e-13);
    CHECK(c.log_det() == doctest::Approx(std::log(expected.determinant())).epsilon(1e-10));
    const VectorXd v = VectorXd::LinSpaced(10, -1, 2);
    CHECK(max_abs(c.solve(v) - expected.ldlt().solve(v)) <= 1e-10);
    CHECK(max_abs(c.diagonal() - expected.diagonal()) <= 1e-12 * max_abs(expected));
  }
}

TEST_CASE("infeasible points are signalled") {
  const auto g = one_group({1, 2});
  const BlockDiagonal id{{MatrixXd::Identity(2, 2)}};
  CHECK_THROWS_AS(JointCovariance::assemble({id, id}, VectorXd::Constant(1, 1.0), g),
                  InfeasiblePoint);
  CHECK_THROWS_AS(JointCovariance::assemble({id, id}, VectorXd::Constant(1, -1.2), g),
                  InfeasiblePoint);
  MatrixXd bad(2, 2);
  bad << 1, 2, 2, 1;
  CHECK_THROWS_AS(JointCovariance::assemble({BlockDiagonal{{bad}}}, VectorXd(0), g),
                  InfeasiblePoint);
  // Three responses with pairwise correlations that are individually legal
  // but jointly indefinite.
  VectorXd rho(3);
  rho << -0.9, -0.9, -0.9;
  CHECK_THROWS_AS(JointCovariance::assemble({id, id, id}, rho, g), InfeasiblePoint);
  CHECK_THROWS_AS(d_cholesky(MatrixXd::Zero(2, 2), MatrixXd::Identity(2, 2)), InfeasiblePoint);
}

TEST_CASE("d_cholesky") {
  CHECK(max_abs(d_cholesky(MatrixXd::Identity(3, 3), MatrixXd::Identity(3, 3)) -
                0.5 * MatrixXd::Identity(3, 3)) == 0.0);
  CHECK(d_cholesky(MatrixXd::Constant(1, 1, 2.0), MatrixXd::Constant(1, 1, 1.0))(0, 0) == 0.25);

  std::mt19937_64 rng(8);
  for (int rep = 0; rep < 10; ++rep) {
    const MatrixXd s = random_spd(rng, 4);
    const MatrixXd ds = random_symmetric(rng, 4);
    const MatrixXd l = chol(s);
    const MatrixXd dl = d_cholesky(l, ds);
    const double h = 1e-5;
    const MatrixXd fd = (chol(s + h * ds) - chol(s - h * ds)) / (2 * h);
    CHECK(rel_err(dl, fd) <= 1e-6);
    CHECK(rel_err(dl * l.transpose() + l * dl.transpose(), ds) <= 1e-12);
    CHECK(max_abs(dl.triangularView<Eigen::StrictlyUpper>().toDenseMatrix()) == 0.0);
  }
}

TEST_CASE("scalar-family derivative") {
  auto spec = testing::simple_spec(2, 3, false, 1.5, false);
  const double t0 = 0.8;
  const auto state = testing::simple_state(spec, 0.0, {t0});
  const auto mean = mean_state(spec, state);
  const auto cov = joint_covariance(spec, state, mean);
  const auto dc = d_joint_covariance(spec, state, mean, cov);
  REQUIRE(dc.size() == 1);
  const MatrixXd d = dc[0].dense(cov);
  CHECK(max_abs(d - MatrixXd::Identity(6, 6)) <= 1e-15);
  const MatrixXd c_inv = cov.dense().inverse();
  const MatrixXd w = c_inv * d * c_inv;
  CHECK(max_abs(w - std::pow(1 + t0, -2) * MatrixXd::Identity(6, 6)) <= 1e-14);
}

TEST_CASE("rho derivative at zero correlation") {
  const ModelSpec spec = two_identical_responses();
  ParameterState state;
  state.beta = {VectorXd::Constant(1, 0.4), VectorXd::Constant(1, 0.4)};
  state.rho = VectorXd::Zero(1);
  state.power = VectorXd::Constant(2, 1.7);
  VectorXd tau(2);
  tau << 0.6, 0.25;
  state.tau = {tau, tau};
  const auto mean = mean_state(spec, state);
  const auto cov = joint_covariance(spec, state, mean);
  const auto dc = d_joint_covariance(spec, state, mean, cov);
  const ParameterLayout layout(spec);
  const MatrixXd d = dc[layout.rho_index(0, 1)].dense(cov);
  const Index n = spec.n_rows();
  const MatrixXd sigma1 = reference::sigma(spec, state, 0);
  CHECK(rel_err(d.topRightCorner(n, n), sigma1) <= 1e-12);
  CHECK(rel_err(d.bottomLeftCorner(n, n), sigma1) <= 1e-12);
  CHECK(max_abs(d.topLeftCorner(n, n)) == 0.0);
}

TEST_CASE("engine matches the dense reference and finite differences") {
  std::mt19937_64 rng(2024);
  double worst_c = 0.0, worst_d = 0.0;
  for (int rep = 0; rep < 30; ++rep) {
    const auto toy = random_toy_model(rng, {.max_rows = 24});
    const auto mean = mean_state(toy.spec, toy.state);
    const auto cov = joint_covariance(toy.spec, toy.state, mean);
    const MatrixXd dense = reference::joint_covariance(toy.spec, toy.state);
    worst_c = std::max(worst_c, rel_err(cov.dense(), dense));
    CHECK(max_abs(cov.dense() - cov.dense().transpose()) == 0.0);

    const auto dc = d_joint_covariance(toy.spec, toy.state, mean, cov);
    const auto ref = reference::covariance_derivatives(toy.spec, toy.state);
    REQUIRE(dc.size() == ref.size());
    for (std::size_t i = 0; i < dc.size(); ++i) {
      const MatrixXd d = dc[i].dense(cov);
      CHECK(rel_err(d, ref[i]) <= 1e-10);
      const MatrixXd fd = testing::fd_joint_covariance(toy.spec, toy.state, static_cast<Index>(i), 1e-4);
      worst_d = std::max(worst_d, rel_err(d, fd));
    }
  }
  CHECK(worst_c <= 1e-12);
  CHECK(worst_d <= 1e-6);
}

TEST_CASE("zero correlation keeps responses uncoupled for any sigma mix") {
  std::mt19937_64 rng(77);
  for (int rep = 0; rep < 10; ++rep) {
    auto toy = random_toy_model(rng, {.max_rows = 20, .responses = 2});
    toy.state.rho.setZero();
    const auto cov = joint_covariance(toy.spec, toy.state, mean_state(toy.spec, toy.state));
    const MatrixXd d = cov.dense();
    const Index n = toy.spec.n_rows();
    CHECK(max_abs(d.topRightCorner(n, n)) <= 1e-12 * max_abs(d));
    CHECK(rel_err(d.topLeftCorner(n, n), reference::sigma(toy.spec, toy.state, 0)) <= 1e-12);
  }
}
