#pragma once

// Matrix linear predictor, Poisson-Tweedie dispersion matrices, the joint
// covariance built by the generalized Kronecker product, and its analytic
// derivatives with respect to the dispersion parameters.
//
// Every known matrix is block-diagonal over the same groups, so C is
// block-diagonal by group once the stacked vector (Y_1', .., Y_R')' is
// permuted. Group-local vectors use response-major order: local index
// r * O_g + o maps to global index r * N + rows[o].

#include <Eigen/Dense>
#include <span>
#include <string>
#include <vector>

#include "mcglm/model.hpp"
#include "mcglm/structure.hpp"

namespace mcglm {

// Omega = sum_d tau_d Z_d, per group. Throws SpecificationError if the
// lengths differ.
BlockDiagonal omega(const VectorXd& tau, std::span<const KnownMatrix> components);

// Sigma = diag(mu) + diag(mu^{p/2}) Omega diag(mu^{p/2}), exactly symmetric.
// The diagonal uses mu^p directly so that p = 1, 2 reproduce the textbook
// variance functions without square-root round-off.
BlockDiagonal sigma_r(const VectorXd& mu, double power, const BlockDiagonal& omega,
                      const GroupIndex& groups);

// Differential of the lower Cholesky factor: dL with dL L' + L dL' = dsigma.
// Throws InfeasiblePoint if L has a non-positive diagonal entry.
MatrixXd d_cholesky(const MatrixXd& chol, const MatrixXd& dsigma);

class JointCovariance {
 public:
  struct GroupBlock {
    std::vector<MatrixXd> sigma;  // per response
    std::vector<MatrixXd> chol;   // lower Cholesky factor of sigma
    MatrixXd c;                   // R*O_g square
    MatrixXd c_inv;
    double log_det = 0.0;
  };

  // C = Bdiag(L_r) (Sigma_b kron I) Bdiag(L_r'). Throws InfeasiblePoint if
  // some Sigma_r or Sigma_b is not positive definite.
  static JointCovariance assemble(std::vector<BlockDiagonal> sigmas, const VectorXd& rho,
                                  const GroupIndex& groups, int threads = 1);

  int n_responses() const { return n_responses_; }
  Index n_rows() const { return n_rows_; }
  std::size_t n_groups() const { return blocks_.size(); }
  const GroupBlock& block(std::size_t g) const { return blocks_[g]; }
  const std::vector<Index>& rows(std::size_t g) const { return rows_[g]; }
  const MatrixXd& correlation() const { return correlation_; }

  double log_det() const;

  // Local <-> stacked global vectors for group g.
  VectorXd gather(std::size_t g, const VectorXd& global) const;
  void scatter(std::size_t g, const VectorXd& local, VectorXd& global) const;

  VectorXd solve(const VectorXd& v) const;  // C^{-1} v
  VectorXd diagonal() const;                // diag(C), stacked

  MatrixXd dense() const;  // NR x NR, for tests and small problems

 private:
  int n_responses_ = 0;
  Index n_rows_ = 0;
  MatrixXd correlation_;
  std::vector<std::vector<Index>> rows_;
  std::vector<GroupBlock> blocks_;
};

struct MeanState {
  std::vector<VectorXd> eta;  // X_r beta_r + offset_r
  std::vector<VectorXd> mu;   // exp(eta)
};

MeanState mean_state(const ModelSpec& spec, const ParameterState& state);

// Sigma_r for every response at the given state.
std::vector<BlockDiagonal> response_sigmas(const ModelSpec& spec, const ParameterState& state,
                                           const MeanState& mean);

JointCovariance joint_covariance(const ModelSpec& spec, const ParameterState& state,
                                 const MeanState& mean, int threads = 1);

// dC/dlambda_i for one parameter, per group in local order.
struct CovarianceDerivative {
  std::string label;
  std::vector<MatrixXd> blocks;

  MatrixXd dense(const JointCovariance& cov) const;
};

// Derivatives in ParameterLayout lambda order.
std::vector<CovarianceDerivative> d_joint_covariance(const ModelSpec& spec,
                                                     const ParameterState& state,
                                                     const MeanState& mean,
                                                     const JointCovariance& cov, int threads = 1);

}  // namespace mcglm

namespace mcglm {

// dC_g/dlambda_i for all i, for a single group (local order). Building
// block of d_joint_covariance and of the estimating-function code, which
// processes groups independently.
std::vector<MatrixXd> group_covariance_derivatives(const ModelSpec& spec,
                                                   const ParameterLayout& layout,
                                                   const ParameterState& state,
                                                   const MeanState& mean,
                                                   const JointCovariance& cov, std::size_t g);

}  // namespace mcglm
