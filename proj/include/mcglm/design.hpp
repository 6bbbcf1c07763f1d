#pragma once

// Model configuration (JSON) and construction of design matrices and
// covariance components from a dataset.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mcglm/dataset.hpp"
#include "mcglm/estimation.hpp"
#include "mcglm/model.hpp"

namespace mcglm {

struct ColumnRef {
  std::string column;
  std::string level;  // categorical columns: indicator of this level
};

struct ComponentConfig {
  std::string type;   // identity, exchangeable, ma, inverse_distance, covariate, interaction
  std::string label;
  std::string cluster = "key";  // exchangeable: key | group
  int lag = 1;
  std::string adjacency = "rank";  // ma: rank | calendar
  std::vector<ColumnRef> columns;  // covariate: 1, interaction: 2
};

struct ResponseConfig {
  std::string name;
  std::vector<std::string> mean;             // terms besides the intercept
  std::vector<std::string> mean_candidates;  // extra terms offered to selection
  std::vector<ComponentConfig> covariance;
  std::vector<ComponentConfig> covariance_candidates;
  PowerSpec power;
};

struct SelectionConfig {
  std::string penalty = "aic";  // aic: delta = 2, bic: delta = log N
  double alpha = 0.05;
  int max_steps = 50;
};

struct ModelConfig {
  Schema schema;
  std::vector<ResponseConfig> responses;
  SelectionConfig selection;
  FitOptions fit;
};

// Throws SpecificationError on schema violations.
ModelConfig parse_config(const std::string& text);
ModelConfig load_config(const std::filesystem::path& path);

// Mean-term grammar: COL, poly(COL,d), A:B (second order). Categorical
// columns are treatment coded against their first level; polynomial terms
// are raw powers of the column centred at its training mean.
class DesignBuilder {
 public:
  DesignBuilder(ModelConfig config, const Dataset& training);

  const ModelConfig& config() const { return config_; }
  const std::map<std::string, double>& centers() const { return centers_; }

  // Full model spec; with `candidates` the candidate mean terms are
  // appended to each design (covariance candidates are never included).
  ModelSpec build(const Dataset& data, bool candidates = false) const;

  // Design matrix for new rows with the training coding.
  MatrixXd design_matrix(int response, const Dataset& data, bool candidates = false) const;
  std::vector<std::string> column_names(int response, bool candidates = false) const;
  std::vector<MeanTerm> terms(int response, bool candidates = false) const;
  VectorXd log_offset(const Dataset& data) const;

  std::vector<KnownMatrix> components(const std::vector<ComponentConfig>& list,
                                      const Dataset& data, const GroupIndex& groups) const;

 private:
  struct Factor {
    std::vector<std::string> names;
    std::vector<std::vector<double>> columns;
  };
  Factor factor(const std::string& spec, const Dataset& data) const;
  std::vector<std::string> term_list(int response, bool candidates) const;

  ModelConfig config_;
  std::map<std::string, std::vector<std::string>> levels_;
  std::map<std::string, double> centers_;
};

ModelSpec build_design(const Dataset& data, const ModelConfig& config);

}  // namespace mcglm
