#include "mcglm/covariance.hpp"

#include <cmath>

#include "mcglm/error.hpp"
#include "mcglm/parallel.hpp"

namespace mcglm {

namespace {

void mirror_upper(MatrixXd& m) {
  for (Index j = 0; j < m.cols(); ++j)
    for (Index i = j + 1; i < m.rows(); ++i) m(i, j) = m(j, i);
}

VectorXd slice(const VectorXd& v, const std::vector<Index>& rows) {
  VectorXd out(static_cast<Index>(rows.size()));
  for (std::size_t o = 0; o < rows.size(); ++o) out(static_cast<Index>(o)) = v(rows[o]);
  return out;
}

}  // namespace

BlockDiagonal omega(const VectorXd& tau, std::span<const KnownMatrix> components) {
  if (tau.size() != static_cast<Index>(components.size())) {
    throw SpecificationError("matrix linear predictor: " + std::to_string(tau.size()) +
                             " dispersion parameters for " + std::to_string(components.size()) +
                             " known matrices");
  }
  if (components.empty()) return {};
  BlockDiagonal out;
  const std::size_t n_groups = components.front().matrix.blocks.size();
  out.blocks.reserve(n_groups);
  for (std::size_t g = 0; g < n_groups; ++g) {
    MatrixXd block = tau(0) * components[0].block(g);
    for (std::size_t d = 1; d < components.size(); ++d) {
      if (components[d].matrix.blocks.size() != n_groups ||
          components[d].block(g).rows() != block.rows()) {
        throw SpecificationError("known matrix '" + components[d].label +
                                 "' does not match the group structure");
      }
      block.noalias() += tau(static_cast<Index>(d)) * components[d].block(g);
    }
    out.blocks.push_back(std::move(block));
  }
  return out;
}

namespace {

// pow is not correctly rounded everywhere; p = 1, 2 are computed exactly.
double mu_power(double m, double power) {
  if (power == 1.0) return m;
  if (power == 2.0) return m * m;
  return std::pow(m, power);
}

}  // namespace

BlockDiagonal sigma_r(const VectorXd& mu, double power, const BlockDiagonal& omega,
                      const GroupIndex& groups) {
  if (mu.size() != groups.n_rows()) throw SpecificationError("sigma_r: mean length mismatch");
  if (omega.blocks.size() != groups.size()) {
    throw SpecificationError("sigma_r: dispersion matrix does not match the group structure");
  }
  BlockDiagonal out;
  out.blocks.reserve(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& rows = groups[g].rows;
    const auto n = static_cast<Index>(rows.size());
    const MatrixXd& om = omega.blocks[g];
    if (om.rows() != n) throw SpecificationError("sigma_r: block size mismatch");
    VectorXd w(n);
    for (Index i = 0; i < n; ++i) w(i) = std::pow(mu(rows[i]), 0.5 * power);
    MatrixXd sigma(n, n);
    for (Index j = 0; j < n; ++j) {
      for (Index i = 0; i < j; ++i) sigma(i, j) = (w(i) * w(j)) * om(i, j);
      const double m = mu(rows[j]);
      sigma(j, j) = m + mu_power(m, power) * om(j, j);
    }
    mirror_upper(sigma);
    out.blocks.push_back(std::move(sigma));
  }
  return out;
}

MatrixXd d_cholesky(const MatrixXd& chol, const MatrixXd& dsigma) {
  const Index n = chol.rows();
  for (Index i = 0; i < n; ++i) {
    if (!(chol(i, i) > 0.0)) throw InfeasiblePoint("d_cholesky: singular Cholesky factor");
  }
  const auto lower = chol.triangularView<Eigen::Lower>();
  // X = L^{-1} dSigma L^{-T}
  MatrixXd x = lower.solve(dsigma);
  x = lower.solve(x.transpose()).eval();
  // Phi: strict lower triangle plus half the diagonal
  MatrixXd phi = MatrixXd::Zero(n, n);
  for (Index j = 0; j < n; ++j) {
    phi(j, j) = 0.5 * x(j, j);
    for (Index i = j + 1; i < n; ++i) phi(i, j) = x(i, j);
  }
  MatrixXd out = lower * phi;
  return out.triangularView<Eigen::Lower>();
}

JointCovariance JointCovariance::assemble(std::vector<BlockDiagonal> sigmas, const VectorXd& rho,
                                          const GroupIndex& groups, int threads) {
  const int R = static_cast<int>(sigmas.size());
  if (R == 0) throw SpecificationError("joint covariance: no responses");
  if (rho.size() != R * (R - 1) / 2) {
    throw SpecificationError("joint covariance: expected " + std::to_string(R * (R - 1) / 2) +
                             " correlation parameters");
  }
  for (Index i = 0; i < rho.size(); ++i) {
    if (!(std::abs(rho(i)) < 1.0)) throw InfeasiblePoint("|rho| >= 1");
  }
  JointCovariance out;
  out.n_responses_ = R;
  out.n_rows_ = groups.n_rows();
  out.correlation_ = correlation_matrix(rho, R);

  Eigen::LLT<MatrixXd> sb_llt(out.correlation_);
  if (sb_llt.info() != Eigen::Success) throw InfeasiblePoint("Sigma_b is not positive definite");
  const MatrixXd sb_inv = sb_llt.solve(MatrixXd::Identity(R, R));
  double sb_log_det = 0.0;
  for (int r = 0; r < R; ++r) sb_log_det += 2.0 * std::log(sb_llt.matrixL()(r, r));

  out.rows_.reserve(groups.size());
  for (const auto& group : groups) out.rows_.push_back(group.rows);
  out.blocks_.resize(groups.size());

  parallel_for(groups.size(), threads, [&](std::size_t g) {
    const auto n = static_cast<Index>(groups[g].rows.size());
    GroupBlock& gb = out.blocks_[g];
    gb.sigma.resize(R);
    gb.chol.resize(R);
    std::vector<MatrixXd> chol_inv(R);
    double log_det = n * sb_log_det;
    for (int r = 0; r < R; ++r) {
      gb.sigma[r] = std::move(sigmas[r].blocks[g]);
      Eigen::LLT<MatrixXd> llt(gb.sigma[r]);
      gb.chol[r] = llt.matrixL();
      // LLT reports success on NaN input, so check the factor too.
      if (llt.info() != Eigen::Success || !gb.chol[r].allFinite()) {
        throw InfeasiblePoint("Sigma_" + std::to_string(r + 1) +
                              " is not positive definite in group '" + groups[g].id + "'");
      }
      for (Index i = 0; i < n; ++i) log_det += 2.0 * std::log(gb.chol[r](i, i));
      chol_inv[r] = gb.chol[r].triangularView<Eigen::Lower>().solve(MatrixXd::Identity(n, n));
    }
    gb.log_det = log_det;

    gb.c.resize(R * n, R * n);
    gb.c_inv.resize(R * n, R * n);
    for (int r = 0; r < R; ++r) {
      gb.c.block(r * n, r * n, n, n) = gb.sigma[r];
      MatrixXd inv_rr = sb_inv(r, r) * (chol_inv[r].transpose() * chol_inv[r]);
      mirror_upper(inv_rr);
      gb.c_inv.block(r * n, r * n, n, n) = inv_rr;
      for (int s = r + 1; s < R; ++s) {
        const MatrixXd crs = out.correlation_(r, s) * (gb.chol[r] * gb.chol[s].transpose());
        gb.c.block(r * n, s * n, n, n) = crs;
        gb.c.block(s * n, r * n, n, n) = crs.transpose();
        const MatrixXd irs = sb_inv(r, s) * (chol_inv[r].transpose() * chol_inv[s]);
        gb.c_inv.block(r * n, s * n, n, n) = irs;
        gb.c_inv.block(s * n, r * n, n, n) = irs.transpose();
      }
    }
  });
  return out;
}

double JointCovariance::log_det() const {
  double sum = 0.0;
  for (const auto& gb : blocks_) sum += gb.log_det;
  return sum;
}

VectorXd JointCovariance::gather(std::size_t g, const VectorXd& global) const {
  const auto& rows = rows_[g];
  const auto n = static_cast<Index>(rows.size());
  VectorXd local(n * n_responses_);
  for (int r = 0; r < n_responses_; ++r)
    for (Index o = 0; o < n; ++o) local(r * n + o) = global(r * n_rows_ + rows[o]);
  return local;
}

void JointCovariance::scatter(std::size_t g, const VectorXd& local, VectorXd& global) const {
  const auto& rows = rows_[g];
  const auto n = static_cast<Index>(rows.size());
  for (int r = 0; r < n_responses_; ++r)
    for (Index o = 0; o < n; ++o) global(r * n_rows_ + rows[o]) = local(r * n + o);
}

VectorXd JointCovariance::solve(const VectorXd& v) const {
  VectorXd out(v.size());
  for (std::size_t g = 0; g < blocks_.size(); ++g) scatter(g, blocks_[g].c_inv * gather(g, v), out);
  return out;
}

VectorXd JointCovariance::diagonal() const {
  VectorXd out(n_rows_ * n_responses_);
  for (std::size_t g = 0; g < blocks_.size(); ++g) scatter(g, blocks_[g].c.diagonal(), out);
  return out;
}

namespace {

MatrixXd dense_from_blocks(const std::vector<MatrixXd>& blocks,
                           const std::vector<std::vector<Index>>& rows, int R, Index N) {
  MatrixXd out = MatrixXd::Zero(R * N, R * N);
  for (std::size_t g = 0; g < blocks.size(); ++g) {
    const auto n = static_cast<Index>(rows[g].size());
    for (Index j = 0; j < R * n; ++j) {
      const Index gj = (j / n) * N + rows[g][j % n];
      for (Index i = 0; i < R * n; ++i) out((i / n) * N + rows[g][i % n], gj) = blocks[g](i, j);
    }
  }
  return out;
}

}  // namespace

MatrixXd JointCovariance::dense() const {
  std::vector<MatrixXd> cs;
  cs.reserve(blocks_.size());
  for (const auto& gb : blocks_) cs.push_back(gb.c);
  return dense_from_blocks(cs, rows_, n_responses_, n_rows_);
}

MatrixXd CovarianceDerivative::dense(const JointCovariance& cov) const {
  std::vector<std::vector<Index>> rows;
  for (std::size_t g = 0; g < cov.n_groups(); ++g) rows.push_back(cov.rows(g));
  return dense_from_blocks(blocks, rows, cov.n_responses(), cov.n_rows());
}

MeanState mean_state(const ModelSpec& spec, const ParameterState& state) {
  MeanState out;
  for (std::size_t r = 0; r < spec.responses.size(); ++r) {
    const auto& resp = spec.responses[r];
    VectorXd eta = resp.X * state.beta[r] + resp.offset;
    out.mu.push_back(eta.array().exp().matrix());
    out.eta.push_back(std::move(eta));
  }
  return out;
}

std::vector<BlockDiagonal> response_sigmas(const ModelSpec& spec, const ParameterState& state,
                                           const MeanState& mean) {
  std::vector<BlockDiagonal> out;
  for (std::size_t r = 0; r < spec.responses.size(); ++r) {
    const auto& resp = spec.responses[r];
    out.push_back(
        sigma_r(mean.mu[r], state.power(r), omega(state.tau[r], resp.components), spec.groups));
  }
  return out;
}

JointCovariance joint_covariance(const ModelSpec& spec, const ParameterState& state,
                                 const MeanState& mean, int threads) {
  return JointCovariance::assemble(response_sigmas(spec, state, mean), state.rho, spec.groups,
                                   threads);
}

std::vector<MatrixXd> group_covariance_derivatives(const ModelSpec& spec,
                                                   const ParameterLayout& layout,
                                                   const ParameterState& state,
                                                   const MeanState& mean,
                                                   const JointCovariance& cov, std::size_t g) {
  const int R = cov.n_responses();
  const auto& rows = cov.rows(g);
  const auto n = static_cast<Index>(rows.size());
  const auto& gb = cov.block(g);
  const auto& entries = layout.lambda_entries();

  // Power weights mu^{p/2} and log mu per response on this group.
  std::vector<VectorXd> w(R), log_mu(R);
  for (int r = 0; r < R; ++r) {
    const VectorXd mu = slice(mean.mu[r], rows);
    log_mu[r] = mu.array().log();
    w[r] = mu.array().pow(0.5 * state.power(r));
  }

  // Diagonal block dSigma_r placed in C, and the matching off-diagonal
  // blocks rho_rs dL_r L_s' obtained through the Cholesky differential.
  auto place_response_derivative = [&](int r, MatrixXd dsigma) {
    MatrixXd dc = MatrixXd::Zero(R * n, R * n);
    if (R > 1) {
      const MatrixXd dl = d_cholesky(gb.chol[r], dsigma);
      for (int s = 0; s < R; ++s) {
        if (s == r) continue;
        const double corr = cov.correlation()(r, s);
        if (corr == 0.0) continue;
        const MatrixXd block = corr * (dl * gb.chol[s].transpose());
        dc.block(r * n, s * n, n, n) = block;
        dc.block(s * n, r * n, n, n) = block.transpose();
      }
    }
    dc.block(r * n, r * n, n, n) = std::move(dsigma);
    return dc;
  };

  std::vector<MatrixXd> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    switch (e.kind) {
      case LambdaKind::rho: {
        MatrixXd dc = MatrixXd::Zero(R * n, R * n);
        const MatrixXd block = gb.chol[e.response] * gb.chol[e.other].transpose();
        dc.block(e.response * n, e.other * n, n, n) = block;
        dc.block(e.other * n, e.response * n, n, n) = block.transpose();
        out.push_back(std::move(dc));
        break;
      }
      case LambdaKind::power: {
        const int r = e.response;
        const auto& resp = spec.responses[r];
        MatrixXd om = state.tau[r](0) * resp.components[0].block(g);
        for (std::size_t d = 1; d < resp.components.size(); ++d)
          om.noalias() += state.tau[r](static_cast<Index>(d)) * resp.components[d].block(g);
        MatrixXd ds(n, n);
        for (Index j = 0; j < n; ++j)
          for (Index i = 0; i <= j; ++i)
            ds(i, j) = om(i, j) * (w[r](i) * w[r](j)) * 0.5 * (log_mu[r](i) + log_mu[r](j));
        mirror_upper(ds);
        out.push_back(place_response_derivative(r, std::move(ds)));
        break;
      }
      case LambdaKind::tau: {
        const int r = e.response;
        const MatrixXd& z = spec.responses[r].components[e.component].block(g);
        MatrixXd ds(n, n);
        for (Index j = 0; j < n; ++j)
          for (Index i = 0; i <= j; ++i) ds(i, j) = (w[r](i) * w[r](j)) * z(i, j);
        mirror_upper(ds);
        out.push_back(place_response_derivative(r, std::move(ds)));
        break;
      }
    }
  }
  return out;
}

std::vector<CovarianceDerivative> d_joint_covariance(const ModelSpec& spec,
                                                     const ParameterState& state,
                                                     const MeanState& mean,
                                                     const JointCovariance& cov, int threads) {
  const ParameterLayout layout(spec);
  const auto& entries = layout.lambda_entries();
  std::vector<CovarianceDerivative> out(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    out[i].label = entries[i].label;
    out[i].blocks.resize(cov.n_groups());
  }
  parallel_for(cov.n_groups(), threads, [&](std::size_t g) {
    auto blocks = group_covariance_derivatives(spec, layout, state, mean, cov, g);
    for (std::size_t i = 0; i < blocks.size(); ++i) out[i].blocks[g] = std::move(blocks[i]);
  });
  return out;
}

}  // namespace mcglm
