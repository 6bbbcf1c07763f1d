#include "mcglm/reference.hpp"

#include <cmath>

#include "mcglm/covariance.hpp"
#include "mcglm/error.hpp"

namespace mcglm::reference {

namespace {

// Global row -> position in the group-stacked order.
Eigen::PermutationMatrix<Eigen::Dynamic> group_order(const GroupIndex& groups) {
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(groups.n_rows());
  Index pos = 0;
  for (const auto& group : groups)
    for (Index row : group.rows) perm.indices()(row) = pos++;
  return perm;
}

MatrixXd dense_sigma(const ModelSpec& spec, const ParameterState& state, const VectorXd& mu,
                     int r) {
  const auto& resp = spec.responses[r];
  MatrixXd om = MatrixXd::Zero(spec.n_rows(), spec.n_rows());
  for (std::size_t d = 0; d < resp.components.size(); ++d)
    om += state.tau[r](static_cast<Index>(d)) * resp.components[d].dense(spec.groups);
  const VectorXd w = mu.array().pow(0.5 * state.power(r));
  MatrixXd sigma = w.asDiagonal() * om * w.asDiagonal();
  sigma.diagonal() += mu;
  return 0.5 * (sigma + sigma.transpose());
}

struct DenseParts {
  std::vector<MatrixXd> sigma;   // group-sorted order
  std::vector<MatrixXd> chol;    // group-sorted order
  MatrixXd sb;
  Eigen::PermutationMatrix<Eigen::Dynamic> perm;
  std::vector<VectorXd> mu;      // original order
};

DenseParts parts(const ModelSpec& spec, const ParameterState& state) {
  DenseParts p;
  const int R = static_cast<int>(spec.n_responses());
  p.perm = group_order(spec.groups);
  p.sb = correlation_matrix(state.rho, R);
  const MeanState mean = mean_state(spec, state);
  p.mu = mean.mu;
  for (int r = 0; r < R; ++r) {
    MatrixXd s = p.perm * dense_sigma(spec, state, mean.mu[r], r) * p.perm.transpose();
    Eigen::LLT<MatrixXd> llt(s);
    if (llt.info() != Eigen::Success) throw InfeasiblePoint("reference: Sigma_r not PD");
    p.chol.push_back(llt.matrixL());
    p.sigma.push_back(std::move(s));
  }
  return p;
}

// Bdiag(A_1..A_R) (M kron I_N) Bdiag(B_1'..B_R'), back in original row order.
MatrixXd kron_sandwich(const std::vector<MatrixXd>& left, const MatrixXd& middle,
                       const std::vector<MatrixXd>& right,
                       const Eigen::PermutationMatrix<Eigen::Dynamic>& perm) {
  const int R = static_cast<int>(left.size());
  const Index N = left.front().rows();
  MatrixXd out(R * N, R * N);
  for (int r = 0; r < R; ++r)
    for (int s = 0; s < R; ++s) {
      const MatrixXd block = middle(r, s) * (left[r] * right[s].transpose());
      out.block(r * N, s * N, N, N) = perm.transpose() * block * perm;
    }
  return out;
}

}  // namespace

MatrixXd sigma(const ModelSpec& spec, const ParameterState& state, int response) {
  const MeanState mean = mean_state(spec, state);
  return dense_sigma(spec, state, mean.mu[response], response);
}

MatrixXd joint_covariance(const ModelSpec& spec, const ParameterState& state) {
  const DenseParts p = parts(spec, state);
  return kron_sandwich(p.chol, p.sb, p.chol, p.perm);
}

std::vector<MatrixXd> covariance_derivatives(const ModelSpec& spec, const ParameterState& state) {
  const DenseParts p = parts(spec, state);
  const ParameterLayout layout(spec);
  const int R = static_cast<int>(spec.n_responses());
  const Index N = spec.n_rows();
  std::vector<MatrixXd> out;
  for (const auto& e : layout.lambda_entries()) {
    if (e.kind == LambdaKind::rho) {
      MatrixXd unit = MatrixXd::Zero(R, R);
      unit(e.response, e.other) = unit(e.other, e.response) = 1.0;
      out.push_back(kron_sandwich(p.chol, unit, p.chol, p.perm));
      continue;
    }
    const int r = e.response;
    const auto& resp = spec.responses[r];
    const VectorXd& mu = p.mu[r];
    const VectorXd w = mu.array().pow(0.5 * state.power(r));
    MatrixXd ds;
    if (e.kind == LambdaKind::tau) {
      ds = w.asDiagonal() * resp.components[e.component].dense(spec.groups) * w.asDiagonal();
    } else {
      MatrixXd om = MatrixXd::Zero(N, N);
      for (std::size_t d = 0; d < resp.components.size(); ++d)
        om += state.tau[r](static_cast<Index>(d)) * resp.components[d].dense(spec.groups);
      const VectorXd dw = 0.5 * (w.array() * mu.array().log()).matrix();
      ds = dw.asDiagonal() * om * w.asDiagonal() + w.asDiagonal() * om * dw.asDiagonal();
    }
    const MatrixXd ds_sorted = p.perm * ds * p.perm.transpose();
    // dC = Bdiag(dL) (Sb kron I) Bdiag(L') + Bdiag(L) (Sb kron I) Bdiag(dL')
    std::vector<MatrixXd> dl(R, MatrixXd::Zero(N, N));
    dl[r] = d_cholesky(p.chol[r], ds_sorted);
    MatrixXd dc = kron_sandwich(dl, p.sb, p.chol, p.perm);
    dc += dc.transpose().eval();
    out.push_back(std::move(dc));
  }
  return out;
}

Pearson pearson(const ModelSpec& spec, const ParameterState& state) {
  const MatrixXd c = joint_covariance(spec, state);
  const MatrixXd c_inv = c.inverse();
  const auto dcs = covariance_derivatives(spec, state);
  const MeanState mean = mean_state(spec, state);
  const int R = static_cast<int>(spec.n_responses());
  const Index N = spec.n_rows();
  VectorXd resid(R * N);
  for (int r = 0; r < R; ++r) resid.segment(r * N, N) = spec.responses[r].y - mean.mu[r];

  const auto q = dcs.size();
  std::vector<MatrixXd> w(q);
  for (std::size_t i = 0; i < q; ++i) w[i] = c_inv * dcs[i] * c_inv;
  const MatrixXd rr = resid * resid.transpose();
  const VectorXd k4 = resid.array().pow(4) - 3.0 * c.diagonal().array().square();

  Pearson out;
  out.score.resize(static_cast<Index>(q));
  out.sensitivity.resize(static_cast<Index>(q), static_cast<Index>(q));
  out.variability.resize(static_cast<Index>(q), static_cast<Index>(q));
  for (std::size_t i = 0; i < q; ++i) {
    out.score(i) = (w[i] * (rr - c)).trace();
    for (std::size_t j = 0; j < q; ++j) {
      const double t = (w[i] * c * w[j] * c).trace();
      out.sensitivity(i, j) = -t;
      out.variability(i, j) =
          2.0 * t + (k4.array() * w[i].diagonal().array() * w[j].diagonal().array()).sum();
    }
  }
  return out;
}

QuasiScore quasi_score(const ModelSpec& spec, const ParameterState& state) {
  const MatrixXd c_inv = joint_covariance(spec, state).inverse();
  const MeanState mean = mean_state(spec, state);
  const ParameterLayout layout(spec);
  const int R = static_cast<int>(spec.n_responses());
  const Index N = spec.n_rows();
  MatrixXd d = MatrixXd::Zero(R * N, layout.n_beta());
  VectorXd resid(R * N);
  for (int r = 0; r < R; ++r) {
    const auto& resp = spec.responses[r];
    d.block(r * N, layout.beta_offset(r), N, resp.X.cols()) = mean.mu[r].asDiagonal() * resp.X;
    resid.segment(r * N, N) = resp.y - mean.mu[r];
  }
  return {d.transpose() * c_inv * resid, -(d.transpose() * c_inv * d)};
}

}  // namespace mcglm::reference
