#pragma once

// Dense NR x NR evaluation of the model, straight from the defining
// formulas. Cubic in N*R; used as an independent oracle in tests.
//
// The Cholesky factors of Sigma_r are taken with rows stacked group by
// group, which is the order the block-wise engine uses.

#include <Eigen/Dense>
#include <vector>

#include "mcglm/model.hpp"

namespace mcglm::reference {

MatrixXd sigma(const ModelSpec& spec, const ParameterState& state, int response);

MatrixXd joint_covariance(const ModelSpec& spec, const ParameterState& state);

std::vector<MatrixXd> covariance_derivatives(const ModelSpec& spec, const ParameterState& state);

struct Pearson {
  VectorXd score;
  MatrixXd sensitivity;
  MatrixXd variability;
};

// psi_i = tr(W_i (r r' - C)), S_ij = -tr(W_i C W_j C),
// V_ij = 2 tr(W_i C W_j C) + sum_l k4_l (W_i)_ll (W_j)_ll with W_i = C^-1 dC_i C^-1.
Pearson pearson(const ModelSpec& spec, const ParameterState& state);

struct QuasiScore {
  VectorXd score;
  MatrixXd sensitivity;
};

QuasiScore quasi_score(const ModelSpec& spec, const ParameterState& state);

}  // namespace mcglm::reference
