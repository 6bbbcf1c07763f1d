#pragma once

// Score-statistic model selection for covariance components and mean
// terms, Wald tests, and the forward/backward model-building workflow.

#include <Eigen/Dense>
#include <span>
#include <string>
#include <vector>

#include "mcglm/estimation.hpp"
#include "mcglm/model.hpp"
#include "mcglm/structure.hpp"

namespace mcglm {

// A known matrix proposed as an extra component of one response.
struct CandidateComponent {
  int response = 0;
  KnownMatrix matrix;
};

struct ScoreStatistic {
  double statistic = 0.0;  // psi_2' Var(psi_2)^{-1} psi_2
  Index df = 0;
  VectorXd psi;            // candidate block of the Pearson score
  MatrixXd variance;       // symmetrized Var(psi_2)
  double asymmetry = 0.0;  // max |A - A'| before symmetrizing
  bool pseudo_inverse = false;
};

// Partitioned blocks at tau~ = (tau_1 hat, 0): the candidates are appended
// to the base model with zero coefficients. Never fits a model.
ScoreStatistic generalized_score_statistic(const FittedModel& base,
                                           std::span<const CandidateComponent> candidates,
                                           int threads = 1);

// Number of tau parameters in the model (all responses).
Index tau_count(const ModelSpec& spec);

// -T + delta * (|tau_1| + |tau_2|)
double sic_one_step(const FittedModel& base, std::span<const CandidateComponent> candidates,
                    double delta, int threads = 1);

struct SequentialStep {
  std::size_t candidate = 0;  // index into the candidate list
  double statistic = 0.0;
  double sic = 0.0;           // cumulative
};

struct SequentialSic {
  double sic = 0.0;
  std::vector<std::size_t> order;
  std::vector<SequentialStep> steps;
  std::vector<std::string> diagnostics;
  std::size_t fits = 0;
};

// Greedy one-parameter increments: at each step the remaining candidate
// with the largest score statistic is added and the model refitted.
// SIC = delta |tau_1| + sum_k (-T_k + delta).
SequentialSic sic_sequential(const FittedModel& base,
                             std::span<const CandidateComponent> candidates, double delta,
                             const FitOptions& options = {});

struct WaldResult {
  double statistic = 0.0;
  Index df = 0;
  double p_value = 1.0;
};

// W = theta_g' Vcov_g^{-1} theta_g for positions `indices` of theta.
WaldResult wald_test(const FittedModel& fitted, std::span<const Index> indices);

// Score statistic for the columns of one mean term that is absent from
// `base`; `augmented` is the base model with the term's columns added.
// Uses the model-based variance -S_beta.
double mean_score_statistic(const FittedModel& base, const ModelSpec& augmented, int response,
                            const std::string& term);

struct SelectionStep {
  std::string phase;      // mean, covariance, joint, backward
  std::string response;
  std::string candidate;
  double statistic = 0.0; // score statistic, or Wald chi-square in the backward phase
  double sic = 0.0;
  double p_value = 0.0;
  std::string decision;   // add, stop, remove, keep, fit
};

struct SelectionTrace {
  std::vector<SelectionStep> steps;
  std::vector<std::string> diagnostics;
};

struct WorkflowInput {
  // Each response carries the full design with every candidate mean term,
  // and its base covariance components (normally just the identity).
  ModelSpec full;
  std::vector<std::vector<std::string>> base_terms;   // per response, never removed
  std::vector<std::vector<KnownMatrix>> cov_candidates;  // per response
};

struct WorkflowOptions {
  double delta = 2.0;
  double alpha = 0.05;
  int max_steps = 50;
  FitOptions fit;
};

struct WorkflowResult {
  FittedModel model;
  SelectionTrace trace;
};

WorkflowResult stepwise_workflow(const WorkflowInput& input, const WorkflowOptions& options = {});

}  // namespace mcglm
