#include "mcglm/selection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mcglm/error.hpp"
#include "mcglm/parallel.hpp"
#include "mcglm/stats.hpp"

namespace mcglm {

namespace {

MatrixXd rows_cols(const MatrixXd& m, const std::vector<Index>& rows,
                   const std::vector<Index>& cols) {
  MatrixXd out(static_cast<Index>(rows.size()), static_cast<Index>(cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j) out(i, j) = m(rows[i], cols[j]);
  return out;
}

VectorXd select(const VectorXd& v, const std::vector<Index>& idx) {
  VectorXd out(static_cast<Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out(i) = v(idx[i]);
  return out;
}

// Var(psi_2) = V22 - S21 S11^-1 V12 - V21 S11^-1 S12 + S21 S11^-1 V11 S11^-1 S12.
void partition_variance(const MatrixXd& s, const MatrixXd& v, const std::vector<Index>& active,
                        const std::vector<Index>& cand, ScoreStatistic& out) {
  const MatrixXd v22 = rows_cols(v, cand, cand);
  MatrixXd var = v22;
  if (!active.empty()) {
    const MatrixXd s11 = rows_cols(s, active, active);
    const MatrixXd s12 = rows_cols(s, active, cand);
    const MatrixXd s21 = rows_cols(s, cand, active);
    const MatrixXd v11 = rows_cols(v, active, active);
    const MatrixXd v12 = rows_cols(v, active, cand);
    const MatrixXd v21 = rows_cols(v, cand, active);
    const auto lu = s11.fullPivLu();
    if (!lu.isInvertible()) throw DiagnosticError("score statistic: S11 is singular");
    const MatrixXd s11_inv_s12 = lu.solve(s12);
    const MatrixXd s21_s11_inv = lu.solve(s21.transpose()).transpose();
    var = v22 - s21_s11_inv * v12 - v21 * s11_inv_s12 + s21_s11_inv * v11 * s11_inv_s12;
  }
  out.asymmetry = (var - var.transpose()).cwiseAbs().maxCoeff();
  out.variance = 0.5 * (var + var.transpose());
}

// psi' A^+ psi over the positive eigen-directions of A; flags the
// pseudo-inverse path when A is not numerically positive definite.
void quadratic_form(ScoreStatistic& out) {
  const Eigen::SelfAdjointEigenSolver<MatrixXd> eig(out.variance);
  const VectorXd& ev = eig.eigenvalues();
  const double scale = std::max(ev.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  const double tol = scale * 1e-12 * static_cast<double>(ev.size());
  const VectorXd proj = eig.eigenvectors().transpose() * out.psi;
  double t = 0.0;
  for (Index k = 0; k < ev.size(); ++k) {
    if (ev(k) > tol) {
      t += proj(k) * proj(k) / ev(k);
    } else {
      out.pseudo_inverse = true;
    }
  }
  out.statistic = t;
}

struct Augmented {
  ModelSpec spec;
  ParameterState state;
  std::vector<Index> candidate_lambda;
};

Augmented augment(const FittedModel& base, std::span<const CandidateComponent> candidates) {
  Augmented aug{*base.spec, base.state, {}};
  std::vector<std::pair<int, int>> added;
  for (const auto& c : candidates) {
    if (c.response < 0 || c.response >= aug.spec.n_responses()) {
      throw SpecificationError("candidate '" + c.matrix.label + "' refers to unknown response");
    }
    auto& comps = aug.spec.responses[c.response].components;
    comps.push_back(c.matrix);
    auto& tau = aug.state.tau[c.response];
    tau.conservativeResize(tau.size() + 1);
    tau(tau.size() - 1) = 0.0;
    added.emplace_back(c.response, static_cast<int>(comps.size()) - 1);
  }
  const ParameterLayout layout(aug.spec);
  for (const auto& [r, d] : added) aug.candidate_lambda.push_back(layout.tau_index(r, d));
  return aug;
}

}  // namespace

Index tau_count(const ModelSpec& spec) {
  Index n = 0;
  for (const auto& r : spec.responses) n += static_cast<Index>(r.components.size());
  return n;
}

ScoreStatistic generalized_score_statistic(const FittedModel& base,
                                           std::span<const CandidateComponent> candidates,
                                           int threads) {
  ScoreStatistic out;
  if (candidates.empty()) return out;
  const Augmented aug = augment(base, candidates);
  const MeanState mean = mean_state(aug.spec, aug.state);
  const JointCovariance cov = joint_covariance(aug.spec, aug.state, mean, threads);
  const VectorXd resid = stacked_response(aug.spec) - stacked_mean(mean);
  const LambdaDerivatives derivs(aug.spec, aug.state, mean, cov, true, threads);
  const VectorXd psi = pearson_score(derivs, cov, resid);
  const MatrixXd s = sensitivity_lambda(derivs);
  const MatrixXd v = variability_lambda(derivs, cov, resid);

  std::vector<Index> active;
  for (Index i = 0; i < psi.size(); ++i)
    if (std::find(aug.candidate_lambda.begin(), aug.candidate_lambda.end(), i) ==
        aug.candidate_lambda.end())
      active.push_back(i);

  out.df = static_cast<Index>(candidates.size());
  out.psi = select(psi, aug.candidate_lambda);
  partition_variance(s, v, active, aug.candidate_lambda, out);
  quadratic_form(out);
  return out;
}

double sic_one_step(const FittedModel& base, std::span<const CandidateComponent> candidates,
                    double delta, int threads) {
  const double t = generalized_score_statistic(base, candidates, threads).statistic;
  return -t + delta * static_cast<double>(tau_count(*base.spec) +
                                          static_cast<Index>(candidates.size()));
}

SequentialSic sic_sequential(const FittedModel& base,
                             std::span<const CandidateComponent> candidates, double delta,
                             const FitOptions& options) {
  SequentialSic out;
  out.sic = delta * static_cast<double>(tau_count(*base.spec));
  FittedModel current = base;
  std::vector<std::size_t> remaining(candidates.size());
  for (std::size_t i = 0; i < remaining.size(); ++i) remaining[i] = i;

  while (!remaining.empty()) {
    std::vector<double> t(remaining.size());
    parallel_for(remaining.size(), options.threads, [&](std::size_t k) {
      t[k] = generalized_score_statistic(current, candidates.subspan(remaining[k], 1)).statistic;
    });
    const auto best = static_cast<std::size_t>(std::max_element(t.begin(), t.end()) - t.begin());
    const std::size_t idx = remaining[best];
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(best));

    if (!remaining.empty()) {
      ModelSpec next = *current.spec;
      next.responses[candidates[idx].response].components.push_back(candidates[idx].matrix);
      try {
        ParameterState start = transfer_state(*current.spec, current.state, next);
        FittedModel refit = fit(next, options, start);
        ++out.fits;
        current = std::move(refit);
      } catch (const std::exception& e) {
        ++out.fits;
        out.diagnostics.push_back("candidate '" + candidates[idx].matrix.label +
                                  "' skipped: " + e.what());
        continue;
      }
    }
    out.sic += -t[best] + delta;
    out.order.push_back(idx);
    out.steps.push_back({idx, t[best], out.sic});
  }
  return out;
}

WaldResult wald_test(const FittedModel& fitted, std::span<const Index> indices) {
  WaldResult out;
  out.df = static_cast<Index>(indices.size());
  if (indices.empty()) return out;
  const std::vector<Index> idx(indices.begin(), indices.end());
  const VectorXd theta = select(fitted.theta(), idx);
  const MatrixXd v = rows_cols(fitted.vcov, idx, idx);
  const Eigen::LDLT<MatrixXd> ldlt(v);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.rcond() < 1e-14) {
    throw SpecificationError("Wald test: covariance sub-matrix is singular");
  }
  out.statistic = std::max(0.0, theta.dot(ldlt.solve(theta)));
  out.p_value = stats::chi_square_sf(out.statistic, static_cast<double>(out.df));
  return out;
}

double mean_score_statistic(const FittedModel& base, const ModelSpec& augmented, int response,
                            const std::string& term) {
  const auto& terms = augmented.responses[response].terms;
  const auto it = std::find_if(terms.begin(), terms.end(),
                               [&](const MeanTerm& t) { return t.label == term; });
  if (it == terms.end()) throw SpecificationError("unknown mean term '" + term + "'");

  const ParameterState state = transfer_state(*base.spec, base.state, augmented);
  const QuasiScore qs = quasi_score_beta(augmented, state);
  const ParameterLayout layout(augmented);
  std::vector<Index> cand;
  std::vector<Index> active;
  for (Index k = 0; k < layout.n_beta(); ++k) {
    const Index lo = layout.beta_offset(response) + it->first;
    if (k >= lo && k < lo + it->width) {
      cand.push_back(k);
    } else {
      active.push_back(k);
    }
  }
  ScoreStatistic out;
  out.psi = select(qs.score, cand);
  const MatrixXd f = -qs.sensitivity;
  // With V = -S the partition formula collapses to F22 - F21 F11^-1 F12.
  partition_variance(-f, f, active, cand, out);
  quadratic_form(out);
  return out.statistic;
}

namespace {

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

ModelSpec with_components(ModelSpec spec, int response, std::vector<KnownMatrix> comps) {
  spec.responses[response].components = std::move(comps);
  return spec;
}

FittedModel refit(const ModelSpec& spec, const FittedModel& from, const FitOptions& options) {
  return fit(spec, options, transfer_state(*from.spec, from.state, spec));
}

}  // namespace

WorkflowResult stepwise_workflow(const WorkflowInput& input, const WorkflowOptions& options) {
  const ModelSpec& full = input.full;
  const int R = static_cast<int>(full.n_responses());
  if (static_cast<int>(input.base_terms.size()) != R ||
      static_cast<int>(input.cov_candidates.size()) != R) {
    throw SpecificationError("workflow input needs base terms and candidates per response");
  }
  SelectionTrace trace;
  const double delta = options.delta;
  const int threads = options.fit.threads;

  std::vector<std::vector<std::string>> selected_terms(R);
  std::vector<std::vector<KnownMatrix>> selected_comps(R);
  std::vector<FittedModel> marginal;

  for (int r = 0; r < R; ++r) {
    const std::string& name = full.responses[r].name;
    const ModelSpec spec_r = single_response(full, r);

    // (i) Mean model with independent observations.
    const ModelSpec indep = with_components(spec_r, 0, {build_identity(full.groups)});
    std::vector<std::string> present = input.base_terms[r];
    FittedModel current = fit(restrict_mean(indep, 0, present), options.fit);
    for (int step = 0; step < options.max_steps; ++step) {
      std::vector<const MeanTerm*> eligible;
      for (const auto& t : full.responses[r].terms) {
        if (contains(present, t.label)) continue;
        const bool parents_in = std::all_of(t.parents.begin(), t.parents.end(),
                                            [&](const std::string& p) { return contains(present, p); });
        if (parents_in) eligible.push_back(&t);
      }
      if (eligible.empty()) break;
      std::vector<double> t(eligible.size());
      std::vector<double> sic(eligible.size());
      parallel_for(eligible.size(), threads, [&](std::size_t k) {
        auto keep = present;
        keep.push_back(eligible[k]->label);
        t[k] = mean_score_statistic(current, restrict_mean(indep, 0, keep), 0, eligible[k]->label);
        sic[k] = -t[k] + delta * static_cast<double>(eligible[k]->width);
      });
      const auto best = static_cast<std::size_t>(std::min_element(sic.begin(), sic.end()) -
                                                 sic.begin());
      const double p = stats::chi_square_sf(t[best], static_cast<double>(eligible[best]->width));
      if (sic[best] > 0.0) {
        trace.steps.push_back({"mean", name, eligible[best]->label, t[best], sic[best], p, "stop"});
        break;
      }
      trace.steps.push_back({"mean", name, eligible[best]->label, t[best], sic[best], p, "add"});
      present.push_back(eligible[best]->label);
      current = refit(restrict_mean(indep, 0, present), current, options.fit);
    }
    selected_terms[r] = present;

    // (ii) Covariance components with the mean fixed.
    std::vector<KnownMatrix> comps = full.responses[r].components;
    const ModelSpec mean_fixed = restrict_mean(spec_r, 0, present);
    current = refit(with_components(mean_fixed, 0, comps), current, options.fit);
    std::vector<KnownMatrix> pool = input.cov_candidates[r];
    for (int step = 0; step < options.max_steps && !pool.empty(); ++step) {
      std::vector<double> t(pool.size());
      parallel_for(pool.size(), threads, [&](std::size_t k) {
        const CandidateComponent c{0, pool[k]};
        t[k] = generalized_score_statistic(current, std::span(&c, 1)).statistic;
      });
      const auto best = static_cast<std::size_t>(std::max_element(t.begin(), t.end()) - t.begin());
      const double sic = -t[best] + delta * static_cast<double>(comps.size() + 1);
      const double p = stats::chi_square_sf(t[best], 1.0);
      if (sic > 0.0) {
        trace.steps.push_back({"covariance", name, pool[best].label, t[best], sic, p, "stop"});
        break;
      }
      trace.steps.push_back({"covariance", name, pool[best].label, t[best], sic, p, "add"});
      comps.push_back(pool[best]);
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(best));
      current = refit(with_components(mean_fixed, 0, comps), current, options.fit);
    }
    selected_comps[r] = comps;
    marginal.push_back(std::move(current));
  }

  // (iii) Joint model.
  ModelSpec joint = full;
  for (int r = 0; r < R; ++r) {
    joint = restrict_mean(joint, r, selected_terms[r]);
    joint.responses[r].components = selected_comps[r];
  }
  ParameterState start = transfer_state(*marginal.front().spec, marginal.front().state, joint);
  for (int r = 1; r < R; ++r) {
    const ParameterState s = transfer_state(*marginal[r].spec, marginal[r].state, joint);
    start.beta[r] = s.beta[r];
    start.tau[r] = s.tau[r];
    start.power(r) = s.power(r);
  }
  FittedModel model = fit(joint, options.fit, start);
  trace.steps.push_back({"joint", "", "", 0.0, 0.0, 0.0, "fit"});

  // (iv) Backward removal by Wald tests.
  for (int step = 0; step < options.max_steps; ++step) {
    const ModelSpec& spec = *model.spec;
    const ParameterLayout layout(spec);
    struct Removal {
      int response;
      bool is_term;
      std::string label;
      WaldResult wald;
    };
    std::vector<Removal> options_list;
    for (int r = 0; r < R; ++r) {
      const auto& resp = spec.responses[r];
      for (const auto& t : resp.terms) {
        if (contains(input.base_terms[r], t.label)) continue;
        const bool is_parent = std::any_of(resp.terms.begin(), resp.terms.end(), [&](const MeanTerm& o) {
          return contains(o.parents, t.label);
        });
        if (is_parent) continue;
        std::vector<Index> idx;
        for (Index c = 0; c < t.width; ++c) idx.push_back(layout.beta_offset(r) + t.first + c);
        options_list.push_back({r, true, t.label, wald_test(model, idx)});
      }
      const auto n_base = full.responses[r].components.size();
      for (std::size_t d = n_base; d < resp.components.size(); ++d) {
        const Index i = layout.n_beta() + layout.tau_index(r, static_cast<int>(d));
        options_list.push_back(
            {r, false, resp.components[d].label, wald_test(model, std::span(&i, 1))});
      }
    }
    if (options_list.empty()) break;
    const auto worst = std::max_element(
        options_list.begin(), options_list.end(),
        [](const Removal& a, const Removal& b) { return a.wald.p_value < b.wald.p_value; });
    const std::string& name = spec.responses[worst->response].name;
    if (worst->wald.p_value <= options.alpha) {
      trace.steps.push_back(
          {"backward", name, worst->label, worst->wald.statistic, 0.0, worst->wald.p_value, "keep"});
      break;
    }
    trace.steps.push_back(
        {"backward", name, worst->label, worst->wald.statistic, 0.0, worst->wald.p_value, "remove"});
    ModelSpec next = spec;
    if (worst->is_term) {
      std::vector<std::string> keep;
      for (const auto& t : spec.responses[worst->response].terms)
        if (t.label != worst->label) keep.push_back(t.label);
      next = restrict_mean(next, worst->response, keep);
    } else {
      auto& comps = next.responses[worst->response].components;
      comps.erase(std::find_if(comps.begin(), comps.end(),
                               [&](const KnownMatrix& z) { return z.label == worst->label; }));
    }
    model = refit(next, model, options.fit);
  }

  return {std::move(model), std::move(trace)};
}

}  // namespace mcglm
