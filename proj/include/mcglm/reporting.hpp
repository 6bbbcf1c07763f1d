#pragma once

// Post-fit artifacts: derived correlations, pseudo-likelihood, fitted
// values with confidence bands, and the report directory.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mcglm/estimation.hpp"
#include "mcglm/selection.hpp"

namespace mcglm {

struct DerivedCorrelation {
  std::string label;
  double value = 0.0;
  double se = 0.0;
  std::vector<std::string> components;
  std::vector<double> weights;
};

// rho = sum_k w_k tau_k / (tau_0 + sum_k w_k tau_k). `vcov` is the
// covariance of (tau_0, tau_1, .., tau_K).
DerivedCorrelation derived_correlation(double tau0, const VectorXd& tau, const VectorXd& weights,
                                       const MatrixXd& vcov);

DerivedCorrelation derived_correlation(const FittedModel& fitted, int response,
                                       const std::string& component, double weight = 1.0);
DerivedCorrelation derived_correlation(const FittedModel& fitted, int response,
                                       std::span<const std::string> components,
                                       std::span<const double> weights);

double gaussian_pseudo_likelihood(const FittedModel& fitted);

struct FittedValue {
  double eta = 0.0;
  double se = 0.0;
  double mean = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

// exp(x'beta + offset +- z SE) with SE^2 = x' Vcov(beta) x.
std::vector<FittedValue> fitted_values_ci(const FittedModel& fitted, int response,
                                          const MatrixXd& x, const VectorXd& offset,
                                          double level = 0.95);

struct WaldRow {
  std::string response;
  std::string effect;
  Index df = 0;
  double chi2 = 0.0;
  double p_value = 0.0;
};

// One row per mean term except the intercept.
std::vector<WaldRow> wald_table(const FittedModel& fitted);

struct DispersionRow {
  std::string parameter;
  double estimate = 0.0;
  double se = 0.0;
  double z = 0.0;
};

std::vector<DispersionRow> dispersion_table(const FittedModel& fitted);

struct ReportOptions {
  std::filesystem::path directory;
  std::string metadata_json = "{}";  // merged into results.json under "metadata"
  // Per response: design and log offset of the rows to tabulate.
  std::vector<MatrixXd> curve_x;
  std::vector<VectorXd> curve_offset;
  // Optional leading columns: per response one pre-joined CSV prefix per
  // row, named by `curve_header`.
  std::vector<std::vector<std::string>> curve_labels;
  std::vector<std::string> curve_header;
};

// results.json, coefficients.csv, wald.csv, dispersion.csv,
// correlations.csv, fitted_<response>.csv, summary.txt, trace.csv.
void emit_report(const FittedModel& fitted, const SelectionTrace* trace,
                 const ReportOptions& options);

// Parameters stored in results.json, in the fitted model's layout.
ParameterState read_estimates(const std::filesystem::path& results_json);

}  // namespace mcglm
