#pragma once

// Design-level model description and parameter bookkeeping shared by the
// covariance engine, the fitter and model selection.

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "mcglm/structure.hpp"

namespace mcglm {

// Contiguous block of design columns tested jointly (one Wald row).
struct MeanTerm {
  std::string label;
  Index first = 0;
  Index width = 0;
  // Labels of lower-order terms that must stay while this term is present.
  std::vector<std::string> parents;
};

struct PowerSpec {
  bool estimate = true;
  double value = 1.5;  // fixed value, or starting value when estimated
};

struct ResponseSpec {
  std::string name;
  VectorXd y;                         // N
  MatrixXd X;                         // N x k_r
  std::vector<std::string> columns;   // k_r names
  std::vector<MeanTerm> terms;        // column groups; the intercept is its own term
  VectorXd offset;                    // N, log scale (zeros when absent)
  std::vector<KnownMatrix> components;  // Z_r0 .. Z_rD
  PowerSpec power;
};

struct ModelSpec {
  GroupIndex groups;
  std::vector<ResponseSpec> responses;

  Index n_rows() const { return groups.n_rows(); }
  Index n_responses() const { return static_cast<Index>(responses.size()); }

  // Throws SpecificationError on dimension mismatches, rank-deficient X_r
  // (naming the aliased columns) or non-finite data.
  void validate() const;
};

struct ParameterState {
  std::vector<VectorXd> beta;  // per response
  VectorXd rho;                // R(R-1)/2, pairs (0,1),(0,2),..,(1,2),..
  VectorXd power;              // per response; fixed entries are carried along
  std::vector<VectorXd> tau;   // per response
};

enum class LambdaKind { rho, power, tau };

struct LambdaEntry {
  LambdaKind kind;
  int response = 0;   // rho: first response of the pair
  int other = 0;      // rho: second response of the pair
  int component = 0;  // tau: index into the response's components
  std::string label;
};

// Stacking order of theta = (beta_1..beta_R, rho.., free p.., tau_1..tau_R).
class ParameterLayout {
 public:
  explicit ParameterLayout(const ModelSpec& spec);

  Index n_beta() const { return n_beta_; }
  Index n_lambda() const { return static_cast<Index>(lambda_.size()); }
  Index n_theta() const { return n_beta_ + n_lambda(); }

  Index beta_offset(int response) const { return beta_offset_[response]; }
  Index beta_size(int response) const { return beta_size_[response]; }

  const std::vector<LambdaEntry>& lambda_entries() const { return lambda_; }
  const std::vector<std::string>& beta_labels() const { return beta_labels_; }

  // Position of tau_{r,d} within lambda, or -1.
  Index tau_index(int response, int component) const;
  Index power_index(int response) const;
  Index rho_index(int first, int second) const;

  VectorXd pack_beta(const ParameterState& state) const;
  void unpack_beta(const VectorXd& beta, ParameterState& state) const;
  VectorXd pack_lambda(const ParameterState& state) const;
  void unpack_lambda(const VectorXd& lambda, ParameterState& state) const;

 private:
  Index n_beta_ = 0;
  std::vector<Index> beta_offset_;
  std::vector<Index> beta_size_;
  std::vector<std::string> beta_labels_;
  std::vector<LambdaEntry> lambda_;
};

Index rho_pair_index(int first, int second, int n_responses);

// Sigma_b: unit diagonal, rho off-diagonal.
MatrixXd correlation_matrix(const VectorXd& rho, int n_responses);

// Model with only the listed mean terms of one response kept (in the
// order they appear in the original design).
ModelSpec restrict_mean(const ModelSpec& spec, int response, const std::vector<std::string>& keep);

// Single-response model for response r.
ModelSpec single_response(const ModelSpec& spec, int response);

// Carries parameter values between two models over the same responses:
// beta by column name, tau by component label, power per response, rho
// when the response count matches. Anything new starts at zero.
ParameterState transfer_state(const ModelSpec& from, const ParameterState& state,
                              const ModelSpec& to);

}  // namespace mcglm
