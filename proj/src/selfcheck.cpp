#include "mcglm/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mcglm/covariance.hpp"
#include "mcglm/error.hpp"

namespace mcglm {

ToyModel random_toy_model(std::mt19937_64& rng, const ToyOptions& options) {
  std::uniform_real_distribution<double> unif;
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unif(rng); };
  auto integer = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  for (int attempt = 0; attempt < 100; ++attempt) {
    std::vector<std::string> labels;
    std::vector<double> time;
    std::vector<std::string> key;
    int g = 0;
    while (true) {
      const int size = integer(2, 6);
      if (static_cast<int>(labels.size()) + size > options.max_rows) break;
      double t = 0.0;
      for (int o = 0; o < size; ++o) {
        t += integer(1, 2);
        labels.push_back("g" + std::to_string(g));
        time.push_back(t);
        key.push_back("g" + std::to_string(g) + "k" + std::to_string(o / 2));
      }
      ++g;
      if (g >= 3 && unif(rng) < 0.15) break;
    }
    const auto n = static_cast<Index>(labels.size());
    const GroupIndex groups = GroupIndex::from_labels(labels, time, key);

    ToyModel toy;
    toy.spec.groups = groups;
    const int R = options.responses > 0 ? options.responses : integer(1, 2);
    toy.state.rho = VectorXd::Zero(R * (R - 1) / 2);
    toy.state.power.resize(R);
    for (int r = 0; r < R; ++r) {
      ResponseSpec resp;
      resp.name = "y" + std::to_string(r + 1);
      resp.X.resize(n, 2);
      resp.X.col(0).setOnes();
      for (Index i = 0; i < n; ++i) resp.X(i, 1) = uniform(-1.0, 1.0);
      resp.columns = {"(Intercept)", "x"};
      resp.terms = {{"Intercept", 0, 1, {}}, {"x", 1, 1, {}}};
      resp.offset = VectorXd::Zero(n);
      resp.y = VectorXd::Zero(n);
      resp.power = {true, uniform(options.min_power, options.max_power)};

      resp.components.push_back(build_identity(groups));
      const int extra = integer(options.min_components, options.max_components) - 1;
      std::vector<int> kinds{0, 1, 2, 3};
      std::shuffle(kinds.begin(), kinds.end(), rng);
      for (int k = 0; k < extra; ++k) {
        switch (kinds[static_cast<std::size_t>(k % 4)]) {
          case 0:
            resp.components.push_back(build_exchangeable(groups, ClusterKey::whole_group));
            break;
          case 1:
            resp.components.push_back(build_ma_band(groups, 1));
            break;
          case 2:
            resp.components.push_back(build_inverse_distance(groups));
            break;
          default: {
            std::vector<double> a(static_cast<std::size_t>(n));
            for (auto& v : a) v = uniform(-1.0, 1.0);
            resp.components.push_back(build_covariate_block(groups, a));
          }
        }
        resp.components.back().label += "#" + std::to_string(k + 1);
      }
      VectorXd tau(static_cast<Index>(resp.components.size()));
      tau(0) = uniform(0.5, 1.5);
      for (Index d = 1; d < tau.size(); ++d) tau(d) = uniform(-0.1, 0.3);
      toy.state.beta.push_back((VectorXd(2) << uniform(0.0, 1.0), uniform(-0.5, 0.5)).finished());
      toy.state.tau.push_back(tau);
      toy.state.power(r) = resp.power.value;
      toy.spec.responses.push_back(std::move(resp));
    }
    for (Index k = 0; k < toy.state.rho.size(); ++k) toy.state.rho(k) = uniform(-0.5, 0.5);
    try {
      joint_covariance(toy.spec, toy.state, mean_state(toy.spec, toy.state));
      return toy;
    } catch (const InfeasiblePoint&) {
    }
  }
  throw std::runtime_error("random_toy_model: no feasible draw");
}

double relative_max_error(const MatrixXd& a, const MatrixXd& b) {
  const double scale = std::max(b.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

MatrixXd finite_difference_dc(const ModelSpec& spec, const ParameterState& state, Index lambda,
                              double step) {
  const ParameterLayout layout(spec);
  const VectorXd base = layout.pack_lambda(state);
  const MeanState mean = mean_state(spec, state);
  auto at = [&](double shift) {
    ParameterState s = state;
    VectorXd l = base;
    l(lambda) += shift;
    layout.unpack_lambda(l, s);
    return joint_covariance(spec, s, mean).dense();
  };
  return (at(step) - at(-step)) / (2.0 * step);
}

std::vector<CheckRecord> derivative_self_test(std::uint64_t seed, int n_models, double tolerance) {
  std::mt19937_64 rng(seed);
  std::vector<CheckRecord> out;
  double worst = 0.0;
  for (int m = 0; m < n_models; ++m) {
    const ToyModel toy = random_toy_model(rng);
    const MeanState mean = mean_state(toy.spec, toy.state);
    const JointCovariance cov = joint_covariance(toy.spec, toy.state, mean);
    const auto derivs = d_joint_covariance(toy.spec, toy.state, mean, cov);
    const ParameterLayout layout(toy.spec);
    const VectorXd lambda = layout.pack_lambda(toy.state);
    for (Index i = 0; i < layout.n_lambda(); ++i) {
      const double h = 1e-5 * std::max(1.0, std::abs(lambda(i)));
      const double err = relative_max_error(derivs[i].dense(cov),
                                            finite_difference_dc(toy.spec, toy.state, i, h));
      worst = std::max(worst, err);
    }
  }
  out.push_back({"dC/dlambda vs central differences", worst, tolerance, worst <= tolerance});

  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  double worst_chol = 0.0;
  for (int m = 0; m < n_models; ++m) {
    const Index n = 2 + m % 7;
    MatrixXd a(n, n);
    MatrixXd d(n, n);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) {
        a(i, j) = unif(rng);
        d(i, j) = unif(rng);
      }
    const MatrixXd sigma = a * a.transpose() + MatrixXd::Identity(n, n) * static_cast<double>(n);
    const MatrixXd ds = d + d.transpose();
    const MatrixXd chol = sigma.llt().matrixL();
    const double h = 1e-5;
    const MatrixXd up = MatrixXd((sigma + h * ds).llt().matrixL());
    const MatrixXd down = MatrixXd((sigma - h * ds).llt().matrixL());
    const double err = relative_max_error(d_cholesky(chol, ds), (up - down) / (2.0 * h));
    worst_chol = std::max(worst_chol, err);
  }
  out.push_back({"d_cholesky vs central differences", worst_chol, tolerance, worst_chol <= tolerance});
  return out;
}

}  // namespace mcglm
