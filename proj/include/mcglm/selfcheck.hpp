#pragma once

// Randomized toy models and the finite-difference self-test run by the
// `check` command.

#include <random>
#include <string>
#include <vector>

#include "mcglm/model.hpp"

namespace mcglm {

struct ToyModel {
  ModelSpec spec;
  ParameterState state;
};

struct ToyOptions {
  int max_rows = 60;
  int responses = 0;       // 0: pick 1 or 2 at random
  int min_components = 2;  // including the identity
  int max_components = 4;
  double min_power = 1.0;
  double max_power = 3.0;
};

// Random feasible model: groups of 2..6 rows, identity plus a random mix
// of exchangeable, moving-average, inverse-distance and covariate
// components, p estimated, rho drawn when R = 2.
ToyModel random_toy_model(std::mt19937_64& rng, const ToyOptions& options = {});

struct CheckRecord {
  std::string name;
  double value = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// Max-norm relative error of every dC/dlambda_i against central
// differences of C, over `n_models` random toy models, plus d_cholesky on
// random SPD matrices.
std::vector<CheckRecord> derivative_self_test(std::uint64_t seed, int n_models = 25,
                                              double tolerance = 1e-6);

// Central-difference dC/dlambda_i of the dense joint covariance.
MatrixXd finite_difference_dc(const ModelSpec& spec, const ParameterState& state, Index lambda,
                              double step);

// max |a - b| / max(max |b|, tiny)
double relative_max_error(const MatrixXd& a, const MatrixXd& b);

}  // namespace mcglm
