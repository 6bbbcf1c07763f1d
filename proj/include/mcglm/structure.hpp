#pragma once

// Known symmetric matrices that make up a matrix linear predictor.
//
// Matrices are stored per group; entries pairing rows of different groups
// are zero by construction and never materialized outside of tests.

#include <Eigen/Dense>
#include <span>
#include <string>
#include <vector>

namespace mcglm {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct Group {
  std::string id;
  std::vector<Index> rows;  // stable order, matches response stacking
};

class GroupIndex {
 public:
  GroupIndex() = default;

  // `time` and `key` are per-row (length N). Throws SpecificationError if
  // the groups overlap or do not cover 0..N-1.
  GroupIndex(std::vector<Group> groups, std::vector<double> time, std::vector<std::string> key);

  // Groups in first-appearance order of `labels`, rows in input order.
  static GroupIndex from_labels(std::span<const std::string> labels, std::vector<double> time,
                                std::vector<std::string> key);

  Index n_rows() const { return static_cast<Index>(time_.size()); }
  std::size_t size() const { return groups_.size(); }
  const Group& operator[](std::size_t g) const { return groups_[g]; }
  auto begin() const { return groups_.begin(); }
  auto end() const { return groups_.end(); }

  const std::vector<double>& time() const { return time_; }
  const std::vector<std::string>& key() const { return key_; }

  // Same groups with rows reordered inside each group by `order[g]`
  // (a permutation of 0..O_g-1).
  GroupIndex permuted(const std::vector<std::vector<Index>>& order) const;

 private:
  std::vector<Group> groups_;
  std::vector<double> time_;
  std::vector<std::string> key_;
};

// Block-diagonal N x N matrix, one dense block per group.
struct BlockDiagonal {
  std::vector<MatrixXd> blocks;

  MatrixXd dense(const GroupIndex& groups) const;
};

struct KnownMatrix {
  std::string label;
  BlockDiagonal matrix;

  const MatrixXd& block(std::size_t g) const { return matrix.blocks[g]; }
  MatrixXd dense(const GroupIndex& groups) const { return matrix.dense(groups); }
};

enum class ClusterKey { whole_group, within_group };

// How "lag" is measured for moving-average bands.
enum class TimeAdjacency {
  rank,      // rank of distinct time points within the group
  calendar,  // |t_i - t_j| == lag
};

KnownMatrix build_identity(const GroupIndex& groups);

KnownMatrix build_exchangeable(const GroupIndex& groups, ClusterKey key);

// Lag >= 1. Lags beyond the number of time points give an all-zero block.
KnownMatrix build_ma_band(const GroupIndex& groups, int lag,
                          TimeAdjacency adjacency = TimeAdjacency::rank);

// Off-diagonal 1/|t_i - t_j|; tied time stamps get 1, the diagonal 0.
KnownMatrix build_inverse_distance(const GroupIndex& groups);

// Per-group outer product a a^T of the column slice.
KnownMatrix build_covariate_block(const GroupIndex& groups, std::span<const double> column,
                                  std::string label = "covariate");

// Per-group a b^T + b a^T.
KnownMatrix build_covariate_interaction(const GroupIndex& groups, std::span<const double> first,
                                        std::span<const double> second,
                                        std::string label = "interaction");

}  // namespace mcglm
