#pragma once

// Quasi-score (regression) and Pearson (dispersion) estimating functions,
// their sensitivity and variability matrices, the alternating
// Newton-scoring fitter and the Godambe sandwich.

#include <Eigen/Dense>
#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mcglm/covariance.hpp"
#include "mcglm/model.hpp"

namespace mcglm {

// Stacked (Y_1', .., Y_R')' and the matching mean / residual vectors.
VectorXd stacked_response(const ModelSpec& spec);
VectorXd stacked_mean(const MeanState& mean);

struct QuasiScore {
  VectorXd score;         // D' C^{-1} (Y - M)
  MatrixXd sensitivity;   // -D' C^{-1} D
};

QuasiScore quasi_score_beta(const ModelSpec& spec, const ParameterState& state,
                            const MeanState& mean, const JointCovariance& cov, int threads = 1);
QuasiScore quasi_score_beta(const ModelSpec& spec, const ParameterState& state, int threads = 1);

// Per-group derivative set for the Pearson estimating function. With
// `products`, also keeps A_i = C^{-1} dC_i, its transpose and diag(W_i)
// needed by the sensitivity and variability matrices.
class LambdaDerivatives {
 public:
  LambdaDerivatives(const ModelSpec& spec, const ParameterState& state, const MeanState& mean,
                    const JointCovariance& cov, bool products, int threads = 1);

  Index size() const { return n_; }
  bool has_products() const { return products_; }

  struct GroupTerms {
    std::vector<MatrixXd> dc;        // dC_i
    std::vector<MatrixXd> a;         // C^{-1} dC_i
    std::vector<MatrixXd> a_t;       // dC_i C^{-1}
    std::vector<VectorXd> w_diag;    // diag(C^{-1} dC_i C^{-1})
  };
  const GroupTerms& group(std::size_t g) const { return groups_[g]; }
  std::size_t n_groups() const { return groups_.size(); }
  int threads() const { return threads_; }

 private:
  Index n_ = 0;
  bool products_ = false;
  int threads_ = 1;
  std::vector<GroupTerms> groups_;
};

// psi_i = r' W_i r - tr(W_i C), evaluated as u' dC_i u - tr(C^{-1} dC_i)
// with u = C^{-1} r.
VectorXd pearson_score(const LambdaDerivatives& derivs, const JointCovariance& cov,
                       const VectorXd& residual);

// S_ij = -tr(W_i C W_j C)
MatrixXd sensitivity_lambda(const LambdaDerivatives& derivs);

// V_ij = 2 tr(W_i C W_j C) + sum_l k4_l (W_i)_ll (W_j)_ll,
// k4_l = r_l^4 - 3 C_ll^2.
MatrixXd variability_lambda(const LambdaDerivatives& derivs, const JointCovariance& cov,
                            const VectorXd& residual);

// Convenience: Pearson score at an arbitrary state (no products kept).
VectorXd pearson_score(const ModelSpec& spec, const ParameterState& state, int threads = 1);

struct FitOptions {
  int max_iter = 200;
  double score_tol = 1e-4;
  double step_tol = 1e-6;
  int max_halvings = 10;
  int threads = 1;
  // Estimated powers outside this range count as infeasible trial points.
  double power_lower = 0.0;
  double power_upper = 5.0;
  // Largest sup-norm of an accepted dispersion step.
  double max_lambda_step = 1.0;
};

struct IterationRecord {
  int iteration = 0;
  double score_beta = 0.0;    // sup-norm at the start of the iteration
  double score_lambda = 0.0;
  double step_beta = 0.0;     // sup-norm of the accepted step
  double step_lambda = 0.0;
  double alpha = 1.0;         // lambda damping factor
  int halvings = 0;
};

struct FittedModel {
  std::shared_ptr<const ModelSpec> spec;
  ParameterState state;
  VectorXd psi_beta;
  VectorXd psi_lambda;
  MatrixXd s_beta;
  MatrixXd v_beta;
  MatrixXd s_lambda;
  MatrixXd v_lambda;
  MatrixXd s_lambda_beta;  // d psi_lambda / d beta
  MatrixXd vcov;           // Godambe J^{-1}, theta order
  VectorXd fitted;         // stacked M
  VectorXd residual;       // stacked Y - M
  double gpl = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<IterationRecord> trace;

  ParameterLayout layout() const { return ParameterLayout(*spec); }
  VectorXd theta() const;
  VectorXd std_errors() const { return vcov.diagonal().cwiseMax(0.0).cwiseSqrt(); }
};

// Quasi-Poisson independence fit per response; tau_0 from the squared
// residuals at the configured p (at least 0.1), other tau = 0, rho = 0.
ParameterState initial_state(const ModelSpec& spec);

// Alternating scoring: beta <- beta - S_beta^{-1} psi_beta, then
// lambda <- lambda - alpha S_lambda^{-1} psi_lambda with step halving.
// Throws DiagnosticError (with the iteration trace) if it does not converge.
FittedModel fit(const ModelSpec& spec, const FitOptions& options = {},
                std::optional<ParameterState> start = std::nullopt);
FittedModel fit(std::shared_ptr<const ModelSpec> spec, const FitOptions& options = {},
                std::optional<ParameterState> start = std::nullopt);

// Number of fit() calls in this process.
std::size_t fit_invocations();

// Sandwich S^{-1} V S^{-T} from the blocks stored in the fitted model.
MatrixXd godambe_vcov(const FittedModel& fitted);

// d psi_lambda / d beta by central differences, data held fixed.
MatrixXd lambda_beta_sensitivity(const ModelSpec& spec, const ParameterState& state,
                                 int threads = 1);

// -1/2 [NR log(2 pi) + log det C + r' C^{-1} r]
double gaussian_pseudo_likelihood(const JointCovariance& cov, const VectorXd& residual);

}  // namespace mcglm
