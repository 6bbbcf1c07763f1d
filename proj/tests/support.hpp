#pragma once

// Helpers shared by the unit tests.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "mcglm/model.hpp"
#include "mcglm/reference.hpp"
#include "mcglm/selfcheck.hpp"
#include "mcglm/simulate.hpp"

namespace testing {

using mcglm::Index;
using mcglm::MatrixXd;
using mcglm::VectorXd;

inline double max_abs(const MatrixXd& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

inline double rel_err(const MatrixXd& a, const MatrixXd& b) {
  return max_abs(a - b) / std::max(max_abs(b), 1e-300);
}

// Moves lambda_i of `state` by `h` through the public layout.
inline mcglm::ParameterState shift_lambda(const mcglm::ModelSpec& spec,
                                          mcglm::ParameterState state, Index i, double h) {
  const mcglm::ParameterLayout layout(spec);
  VectorXd lambda = layout.pack_lambda(state);
  lambda(i) += h;
  layout.unpack_lambda(lambda, state);
  return state;
}

inline mcglm::ParameterState shift_beta(const mcglm::ModelSpec& spec, mcglm::ParameterState state,
                                        Index k, double h) {
  const mcglm::ParameterLayout layout(spec);
  VectorXd beta = layout.pack_beta(state);
  beta(k) += h;
  layout.unpack_beta(beta, state);
  return state;
}

// Five-point central difference of the dense reference covariance.
inline MatrixXd fd_joint_covariance(const mcglm::ModelSpec& spec,
                                    const mcglm::ParameterState& state, Index i, double h) {
  using mcglm::reference::joint_covariance;
  const MatrixXd p1 = joint_covariance(spec, shift_lambda(spec, state, i, h));
  const MatrixXd m1 = joint_covariance(spec, shift_lambda(spec, state, i, -h));
  const MatrixXd p2 = joint_covariance(spec, shift_lambda(spec, state, i, 2 * h));
  const MatrixXd m2 = joint_covariance(spec, shift_lambda(spec, state, i, -2 * h));
  return (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
}

// Random toy model with Gaussian responses drawn at its own parameters.
inline mcglm::ToyModel toy_with_data(std::mt19937_64& rng, const mcglm::ToyOptions& options = {}) {
  auto toy = mcglm::random_toy_model(rng, options);
  toy.spec = mcglm::with_responses(toy.spec, mcglm::simulate_gaussian(toy.spec, toy.state, rng));
  return toy;
}

// Single-group-structure model: `groups` groups of size `m`, one response,
// intercept-only mean at log(mu0), identity plus optional exchangeable.
inline mcglm::ModelSpec simple_spec(int groups, int m, bool exchangeable, double p,
                                    bool estimate_p) {
  using namespace mcglm;
  std::vector<std::string> labels;
  std::vector<double> time;
  for (int g = 0; g < groups; ++g)
    for (int o = 0; o < m; ++o) {
      labels.push_back("g" + std::to_string(g));
      time.push_back(o + 1);
    }
  ModelSpec spec;
  spec.groups = GroupIndex::from_labels(labels, time, {});
  const Index n = spec.n_rows();
  ResponseSpec resp;
  resp.name = "y";
  resp.X = MatrixXd::Ones(n, 1);
  resp.columns = {"(Intercept)"};
  resp.terms = {{"Intercept", 0, 1, {}}};
  resp.offset = VectorXd::Zero(n);
  resp.y = VectorXd::Ones(n);
  resp.components.push_back(build_identity(spec.groups));
  if (exchangeable) resp.components.push_back(build_exchangeable(spec.groups, ClusterKey::whole_group));
  resp.power = {estimate_p, p};
  spec.responses.push_back(std::move(resp));
  return spec;
}

inline mcglm::ParameterState simple_state(const mcglm::ModelSpec& spec, double beta0,
                                          std::vector<double> tau) {
  mcglm::ParameterState s;
  s.beta = {VectorXd::Constant(1, beta0)};
  s.rho = VectorXd::Zero(0);
  s.power = VectorXd::Constant(1, spec.responses[0].power.value);
  s.tau = {Eigen::Map<VectorXd>(tau.data(), static_cast<Index>(tau.size()))};
  return s;
}

}  // namespace testing
