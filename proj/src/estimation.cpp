#include "mcglm/estimation.hpp"

#include <atomic>
#include <cmath>
#include <numbers>
#include <sstream>

#include "mcglm/error.hpp"
#include "mcglm/kernels.hpp"
#include "mcglm/parallel.hpp"

namespace mcglm {

namespace {

std::atomic<std::size_t> g_fit_invocations{0};

std::span<const double> flat(const MatrixXd& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}

std::span<const double> flat(const VectorXd& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

double sup_norm(const VectorXd& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

// Solves (-S) x = b for a negative (semi)definite sensitivity S, falling
// back to a minimum-norm solution when -S is singular.
VectorXd solve_negated(const MatrixXd& s, const VectorXd& b) {
  const MatrixXd neg = -s;
  Eigen::LDLT<MatrixXd> ldlt(neg);
  if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
    VectorXd x = ldlt.solve(b);
    if (x.allFinite() && ldlt.rcond() > 1e-14) return x;
  }
  return neg.completeOrthogonalDecomposition().solve(b);
}

// Independence quasi-Poisson fit, Fisher scoring on X' (y - mu) = 0. Falls
// back to the intercept-only root when scoring does not settle, which
// happens when the responses are not counts.
VectorXd quasi_poisson_start(const ResponseSpec& resp) {
  VectorXd fallback = VectorXd::Zero(resp.X.cols());
  {
    const VectorXd rate = resp.y.array() / resp.offset.array().exp();
    const double level = std::log(std::max(rate.mean(), 0.1));
    // Least squares of a constant log level on X.
    fallback = resp.X.colPivHouseholderQr().solve(VectorXd::Constant(resp.X.rows(), level));
  }
  VectorXd mu = resp.y.cwiseMax(0.1);
  VectorXd eta = mu.array().log();
  VectorXd beta = VectorXd::Zero(resp.X.cols());
  for (int it = 0; it < 50; ++it) {
    const VectorXd z = (eta - resp.offset).array() + (resp.y - mu).array() / mu.array();
    const MatrixXd xtw = resp.X.transpose() * mu.asDiagonal();
    const VectorXd next = (xtw * resp.X).ldlt().solve(xtw * z);
    if (!next.allFinite()) return fallback;
    const double change = (next - beta).cwiseAbs().maxCoeff();
    beta = next;
    eta = resp.X * beta + resp.offset;
    if (eta.cwiseAbs().maxCoeff() > 50.0) return fallback;
    mu = eta.array().exp();
    if (change < 1e-10) return beta;
  }
  return fallback;
}

// Least-squares fit of diag(Sigma) = mu + tau0 mu^p to the squared residuals.
double moment_tau0(const ResponseSpec& resp, const VectorXd& beta, double power) {
  const VectorXd mu = (resp.X * beta + resp.offset).array().min(700.0).exp();
  const VectorXd w = mu.array().pow(power);
  const double num = (((resp.y - mu).array().square() - mu.array()) * w.array()).sum();
  const double den = w.squaredNorm();
  return den > 0.0 ? num / den : 0.0;
}

}  // namespace

VectorXd stacked_response(const ModelSpec& spec) {
  const Index N = spec.n_rows();
  VectorXd out(N * spec.n_responses());
  for (Index r = 0; r < spec.n_responses(); ++r) out.segment(r * N, N) = spec.responses[r].y;
  return out;
}

VectorXd stacked_mean(const MeanState& mean) {
  const Index N = mean.mu.front().size();
  VectorXd out(N * static_cast<Index>(mean.mu.size()));
  for (std::size_t r = 0; r < mean.mu.size(); ++r)
    out.segment(static_cast<Index>(r) * N, N) = mean.mu[r];
  return out;
}

QuasiScore quasi_score_beta(const ModelSpec& spec, const ParameterState& state,
                            const MeanState& mean, const JointCovariance& cov, int threads) {
  const ParameterLayout layout(spec);
  const Index K = layout.n_beta();
  const int R = cov.n_responses();
  const VectorXd resid = stacked_response(spec) - stacked_mean(mean);
  (void)state;

  std::vector<VectorXd> scores(cov.n_groups());
  std::vector<MatrixXd> sens(cov.n_groups());
  parallel_for(cov.n_groups(), threads, [&](std::size_t g) {
    const auto& rows = cov.rows(g);
    const auto n = static_cast<Index>(rows.size());
    MatrixXd d = MatrixXd::Zero(R * n, K);
    for (int r = 0; r < R; ++r) {
      const auto& resp = spec.responses[r];
      for (Index o = 0; o < n; ++o)
        d.row(r * n + o).segment(layout.beta_offset(r), resp.X.cols()) =
            mean.mu[r](rows[o]) * resp.X.row(rows[o]);
    }
    const MatrixXd cinv_d = cov.block(g).c_inv * d;
    scores[g] = cinv_d.transpose() * cov.gather(g, resid);
    sens[g] = -(d.transpose() * cinv_d);
  });

  QuasiScore out{VectorXd::Zero(K), MatrixXd::Zero(K, K)};
  for (std::size_t g = 0; g < cov.n_groups(); ++g) {
    out.score += scores[g];
    out.sensitivity += sens[g];
  }
  out.sensitivity = 0.5 * (out.sensitivity + out.sensitivity.transpose()).eval();
  return out;
}

QuasiScore quasi_score_beta(const ModelSpec& spec, const ParameterState& state, int threads) {
  const MeanState mean = mean_state(spec, state);
  const JointCovariance cov = joint_covariance(spec, state, mean, threads);
  return quasi_score_beta(spec, state, mean, cov, threads);
}

LambdaDerivatives::LambdaDerivatives(const ModelSpec& spec, const ParameterState& state,
                                     const MeanState& mean, const JointCovariance& cov,
                                     bool products, int threads)
    : products_(products), threads_(threads) {
  const ParameterLayout layout(spec);
  n_ = layout.n_lambda();
  groups_.resize(cov.n_groups());
  parallel_for(cov.n_groups(), threads, [&](std::size_t g) {
    GroupTerms& terms = groups_[g];
    terms.dc = group_covariance_derivatives(spec, layout, state, mean, cov, g);
    if (!products) return;
    const MatrixXd& c_inv = cov.block(g).c_inv;
    const Index m = c_inv.rows();
    for (const auto& dc : terms.dc) {
      MatrixXd a = c_inv * dc;
      MatrixXd a_t = a.transpose();
      VectorXd w(m);
      for (Index k = 0; k < m; ++k)
        w(k) = kernels::dot({a_t.col(k).data(), static_cast<std::size_t>(m)},
                            {c_inv.col(k).data(), static_cast<std::size_t>(m)});
      terms.a.push_back(std::move(a));
      terms.a_t.push_back(std::move(a_t));
      terms.w_diag.push_back(std::move(w));
    }
  });
}

VectorXd pearson_score(const LambdaDerivatives& derivs, const JointCovariance& cov,
                       const VectorXd& residual) {
  const Index q = derivs.size();
  std::vector<VectorXd> parts(derivs.n_groups());
  parallel_for(derivs.n_groups(), derivs.threads(), [&](std::size_t g) {
    const MatrixXd& c_inv = cov.block(g).c_inv;
    const VectorXd u = c_inv * cov.gather(g, residual);
    const auto& terms = derivs.group(g);
    VectorXd psi(q);
    for (Index i = 0; i < q; ++i) {
      const MatrixXd& dc = terms.dc[i];
      const VectorXd dcu = dc * u;
      psi(i) = kernels::dot(flat(u), flat(dcu)) - kernels::dot(flat(c_inv), flat(dc));
    }
    parts[g] = std::move(psi);
  });
  VectorXd out = VectorXd::Zero(q);
  for (const auto& p : parts) out += p;
  return out;
}

namespace {

void require_products(const LambdaDerivatives& derivs) {
  if (!derivs.has_products()) {
    throw std::logic_error("LambdaDerivatives built without products");
  }
}

// T_ij = sum_g tr(A_i A_j), filled symmetrically from the upper triangle.
MatrixXd trace_products(const LambdaDerivatives& derivs,
                        const std::vector<VectorXd>* k4_per_group) {
  const Index q = derivs.size();
  std::vector<MatrixXd> parts(derivs.n_groups());
  parallel_for(derivs.n_groups(), derivs.threads(), [&](std::size_t g) {
    const auto& terms = derivs.group(g);
    MatrixXd t(q, q);
    for (Index i = 0; i < q; ++i) {
      for (Index j = i; j < q; ++j) {
        double v = kernels::dot(flat(terms.a[i]), flat(terms.a_t[j]));
        if (k4_per_group) {
          v = 2.0 * v + kernels::dot3(flat((*k4_per_group)[g]), flat(terms.w_diag[i]),
                                      flat(terms.w_diag[j]));
        }
        t(i, j) = v;
        t(j, i) = v;
      }
    }
    parts[g] = std::move(t);
  });
  MatrixXd out = MatrixXd::Zero(q, q);
  for (const auto& p : parts) out += p;
  return out;
}

}  // namespace

MatrixXd sensitivity_lambda(const LambdaDerivatives& derivs) {
  require_products(derivs);
  return -trace_products(derivs, nullptr);
}

MatrixXd variability_lambda(const LambdaDerivatives& derivs, const JointCovariance& cov,
                            const VectorXd& residual) {
  require_products(derivs);
  std::vector<VectorXd> k4(cov.n_groups());
  for (std::size_t g = 0; g < cov.n_groups(); ++g) {
    const VectorXd r = cov.gather(g, residual);
    const VectorXd c_diag = cov.block(g).c.diagonal();
    k4[g] = r.array().pow(4) - 3.0 * c_diag.array().square();
  }
  return trace_products(derivs, &k4);
}

VectorXd pearson_score(const ModelSpec& spec, const ParameterState& state, int threads) {
  const MeanState mean = mean_state(spec, state);
  const JointCovariance cov = joint_covariance(spec, state, mean, threads);
  const LambdaDerivatives derivs(spec, state, mean, cov, false, threads);
  return pearson_score(derivs, cov, stacked_response(spec) - stacked_mean(mean));
}

double gaussian_pseudo_likelihood(const JointCovariance& cov, const VectorXd& residual) {
  const double nr = static_cast<double>(residual.size());
  const double quad = residual.dot(cov.solve(residual));
  return -0.5 * (nr * std::log(2.0 * std::numbers::pi) + cov.log_det() + quad);
}

VectorXd FittedModel::theta() const {
  const ParameterLayout lay = layout();
  VectorXd out(lay.n_theta());
  out << lay.pack_beta(state), lay.pack_lambda(state);
  return out;
}

ParameterState initial_state(const ModelSpec& spec) {
  ParameterState state;
  const auto R = spec.n_responses();
  state.rho = VectorXd::Zero(R * (R - 1) / 2);
  state.power.resize(R);
  for (Index r = 0; r < R; ++r) {
    const auto& resp = spec.responses[r];
    state.beta.push_back(quasi_poisson_start(resp));
    state.power(r) = resp.power.value;
    VectorXd tau = VectorXd::Zero(static_cast<Index>(resp.components.size()));
    const double t0 = moment_tau0(resp, state.beta.back(), resp.power.value);
    tau(0) = std::isfinite(t0) ? std::max(0.1, t0) : 0.1;
    state.tau.push_back(std::move(tau));
  }
  return state;
}

std::size_t fit_invocations() { return g_fit_invocations.load(); }

MatrixXd lambda_beta_sensitivity(const ModelSpec& spec, const ParameterState& state,
                                 int threads) {
  const ParameterLayout layout(spec);
  const VectorXd beta = layout.pack_beta(state);
  MatrixXd out(layout.n_lambda(), layout.n_beta());
  ParameterState probe = state;
  for (Index k = 0; k < layout.n_beta(); ++k) {
    const double h = 1e-5 * std::max(1.0, std::abs(beta(k)));
    VectorXd b = beta;
    b(k) = beta(k) + h;
    layout.unpack_beta(b, probe);
    const VectorXd up = pearson_score(spec, probe, threads);
    b(k) = beta(k) - h;
    layout.unpack_beta(b, probe);
    const VectorXd down = pearson_score(spec, probe, threads);
    out.col(k) = (up - down) / (2.0 * h);
  }
  return out;
}

MatrixXd godambe_vcov(const FittedModel& fitted) {
  const Index K = fitted.s_beta.rows();
  const Index Q = fitted.s_lambda.rows();
  MatrixXd s = MatrixXd::Zero(K + Q, K + Q);
  s.topLeftCorner(K, K) = fitted.s_beta;
  s.bottomLeftCorner(Q, K) = fitted.s_lambda_beta;
  s.bottomRightCorner(Q, Q) = fitted.s_lambda;
  MatrixXd v = MatrixXd::Zero(K + Q, K + Q);
  v.topLeftCorner(K, K) = fitted.v_beta;
  v.bottomRightCorner(Q, Q) = fitted.v_lambda;

  Eigen::FullPivLU<MatrixXd> lu(s);
  if (!lu.isInvertible()) {
    throw DiagnosticError("Godambe sandwich: sensitivity matrix is singular");
  }
  const MatrixXd s_inv = lu.inverse();
  MatrixXd out = s_inv * v * s_inv.transpose();
  return 0.5 * (out + out.transpose());
}

namespace {

bool power_in_range(const ModelSpec& spec, const ParameterState& state, const FitOptions& options) {
  for (Index r = 0; r < spec.n_responses(); ++r) {
    if (!spec.responses[r].power.estimate) continue;
    const double p = state.power(r);
    if (!(p >= options.power_lower && p <= options.power_upper)) return false;
  }
  return true;
}

std::string format_trace(const std::vector<IterationRecord>& trace) {
  std::ostringstream os;
  os << "iter score_beta score_lambda step_beta step_lambda alpha halvings\n";
  for (const auto& t : trace) {
    os << t.iteration << ' ' << t.score_beta << ' ' << t.score_lambda << ' ' << t.step_beta << ' '
       << t.step_lambda << ' ' << t.alpha << ' ' << t.halvings << '\n';
  }
  return os.str();
}

}  // namespace

FittedModel fit(const ModelSpec& spec, const FitOptions& options,
                std::optional<ParameterState> start) {
  return fit(std::make_shared<const ModelSpec>(spec), options, std::move(start));
}

FittedModel fit(std::shared_ptr<const ModelSpec> spec_ptr, const FitOptions& options,
                std::optional<ParameterState> start) {
  ++g_fit_invocations;
  const ModelSpec& spec = *spec_ptr;
  spec.validate();
  const ParameterLayout layout(spec);
  const int threads = options.threads;
  const VectorXd y = stacked_response(spec);

  ParameterState state = start ? *start : initial_state(spec);
  std::vector<IterationRecord> trace;
  double last_step_beta = std::numeric_limits<double>::infinity();
  double last_step_lambda = std::numeric_limits<double>::infinity();
  bool converged = false;
  int iteration = 0;
  int stalled = 0;

  for (iteration = 1; iteration <= options.max_iter; ++iteration) {
    IterationRecord rec;
    rec.iteration = iteration;

    MeanState mean = mean_state(spec, state);
    std::optional<JointCovariance> cov;
    try {
      cov.emplace(joint_covariance(spec, state, mean, threads));
    } catch (const InfeasiblePoint& e) {
      throw DiagnosticError(std::string("infeasible starting point: ") + e.what(),
                            format_trace(trace));
    }
    const QuasiScore qs = quasi_score_beta(spec, state, mean, *cov, threads);
    {
      const LambdaDerivatives d0(spec, state, mean, *cov, false, threads);
      rec.score_lambda = sup_norm(pearson_score(d0, *cov, y - stacked_mean(mean)));
    }
    rec.score_beta = sup_norm(qs.score);
    if (!std::isfinite(rec.score_beta) || !std::isfinite(rec.score_lambda)) {
      trace.push_back(rec);
      throw DiagnosticError("non-finite estimating function", format_trace(trace));
    }
    if (rec.score_beta <= options.score_tol && rec.score_lambda <= options.score_tol &&
        last_step_beta <= options.step_tol && last_step_lambda <= options.step_tol) {
      converged = true;
      trace.push_back(rec);
      break;
    }

    // Regression step.
    const VectorXd beta = layout.pack_beta(state);
    const VectorXd dbeta = solve_negated(qs.sensitivity, qs.score);
    ParameterState trial = state;
    bool moved = false;
    for (int h = 0; h <= options.max_halvings; ++h) {
      const double a = std::ldexp(1.0, -h);
      layout.unpack_beta(beta + a * dbeta, trial);
      MeanState m = mean_state(spec, trial);
      try {
        JointCovariance c = joint_covariance(spec, trial, m, threads);
        state = trial;
        mean = std::move(m);
        cov.emplace(std::move(c));
        rec.step_beta = a * sup_norm(dbeta);
        moved = true;
        break;
      } catch (const InfeasiblePoint&) {
      }
    }
    if (!moved) rec.step_beta = 0.0;

    // Dispersion step at the updated regression parameters.
    const VectorXd resid = y - stacked_mean(mean);
    const LambdaDerivatives d1(spec, state, mean, *cov, true, threads);
    const VectorXd psi = pearson_score(d1, *cov, resid);
    const MatrixXd sens = sensitivity_lambda(d1);
    const VectorXd dlambda = solve_negated(sens, psi);
    const double merit0 = psi.dot(dlambda);
    const VectorXd lambda = layout.pack_lambda(state);

    std::optional<ParameterState> accepted;
    std::optional<ParameterState> first_feasible;
    double first_feasible_alpha = 0.0;
    // Start from the largest alpha in {1, 1/2, ..} keeping the step inside the trust radius.
    int h0 = 0;
    while (h0 < 60 && std::ldexp(sup_norm(dlambda), -h0) > options.max_lambda_step) ++h0;
    for (int h = h0; h <= h0 + options.max_halvings; ++h) {
      const double a = std::ldexp(1.0, -h);
      trial = state;
      layout.unpack_lambda(lambda + a * dlambda, trial);
      rec.halvings = h;
      if (!power_in_range(spec, trial, options)) continue;
      try {
        const JointCovariance c = joint_covariance(spec, trial, mean, threads);
        const LambdaDerivatives dt(spec, trial, mean, c, false, threads);
        const VectorXd psi_t = pearson_score(dt, c, resid);
        if (!first_feasible) {
          first_feasible = trial;
          first_feasible_alpha = a;
        }
        if (psi_t.dot(solve_negated(sens, psi_t)) < merit0) {
          accepted = trial;
          rec.alpha = a;
          break;
        }
      } catch (const InfeasiblePoint&) {
      }
    }
    if (!accepted && first_feasible) {
      accepted = first_feasible;
      rec.alpha = first_feasible_alpha;
    }
    if (accepted) {
      state = *accepted;
      rec.step_lambda = rec.alpha * sup_norm(dlambda);
    } else {
      rec.alpha = 0.0;
      rec.step_lambda = 0.0;
      if (rec.step_beta <= options.step_tol) {
        trace.push_back(rec);
        throw DiagnosticError("no feasible dispersion step after " +
                                  std::to_string(options.max_halvings) + " halvings",
                              format_trace(trace));
      }
    }
    last_step_beta = rec.step_beta;
    last_step_lambda = rec.step_lambda;
    trace.push_back(rec);
    stalled = (rec.step_beta <= 1e-12 && rec.step_lambda <= 1e-12) ? stalled + 1 : 0;
    if (stalled >= 3) {
      throw DiagnosticError("fit stalled: parameters unchanged for 3 iterations with nonzero scores",
                            format_trace(trace));
    }
  }

  if (!converged) {
    throw DiagnosticError("fit did not converge in " + std::to_string(options.max_iter) +
                              " iterations",
                          format_trace(trace));
  }

  FittedModel out;
  out.spec = std::move(spec_ptr);
  out.state = state;
  out.iterations = iteration;
  out.converged = true;
  out.trace = std::move(trace);

  const MeanState mean = mean_state(spec, state);
  const JointCovariance cov = joint_covariance(spec, state, mean, threads);
  out.fitted = stacked_mean(mean);
  out.residual = y - out.fitted;
  const QuasiScore qs = quasi_score_beta(spec, state, mean, cov, threads);
  out.psi_beta = qs.score;
  out.s_beta = qs.sensitivity;
  out.v_beta = -qs.sensitivity;
  const LambdaDerivatives derivs(spec, state, mean, cov, true, threads);
  out.psi_lambda = pearson_score(derivs, cov, out.residual);
  out.s_lambda = sensitivity_lambda(derivs);
  out.v_lambda = variability_lambda(derivs, cov, out.residual);
  try {
    out.s_lambda_beta = lambda_beta_sensitivity(spec, state, threads);
  } catch (const InfeasiblePoint& e) {
    throw DiagnosticError(std::string("cross sensitivity: ") + e.what(), format_trace(out.trace));
  }
  out.vcov = godambe_vcov(out);
  out.gpl = gaussian_pseudo_likelihood(cov, out.residual);
  return out;
}

}  // namespace mcglm
