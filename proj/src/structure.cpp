#include "mcglm/structure.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "mcglm/error.hpp"

namespace mcglm {

GroupIndex::GroupIndex(std::vector<Group> groups, std::vector<double> time,
                       std::vector<std::string> key)
    : groups_(std::move(groups)), time_(std::move(time)), key_(std::move(key)) {
  const auto n = time_.size();
  if (key_.empty()) key_.assign(n, std::string{});
  if (key_.size() != n) {
    throw SpecificationError("group index: key column has " + std::to_string(key_.size()) +
                             " entries, expected " + std::to_string(n));
  }
  std::vector<char> seen(n, 0);
  for (const auto& group : groups_) {
    if (group.rows.empty()) throw SpecificationError("group '" + group.id + "' is empty");
    for (Index row : group.rows) {
      if (row < 0 || static_cast<std::size_t>(row) >= n) {
        throw SpecificationError("group '" + group.id + "' references row " +
                                 std::to_string(row) + " outside 0.." + std::to_string(n - 1));
      }
      if (seen[row]) {
        throw SpecificationError("row " + std::to_string(row) + " belongs to more than one group");
      }
      seen[row] = 1;
    }
  }
  auto missing = std::find(seen.begin(), seen.end(), 0);
  if (missing != seen.end()) {
    throw SpecificationError("row " + std::to_string(missing - seen.begin()) +
                             " is not assigned to any group");
  }
}

GroupIndex GroupIndex::from_labels(std::span<const std::string> labels, std::vector<double> time,
                                   std::vector<std::string> key) {
  std::vector<Group> groups;
  std::unordered_map<std::string, std::size_t> position;
  for (std::size_t row = 0; row < labels.size(); ++row) {
    auto [it, inserted] = position.try_emplace(labels[row], groups.size());
    if (inserted) groups.push_back(Group{labels[row], {}});
    groups[it->second].rows.push_back(static_cast<Index>(row));
  }
  if (time.empty()) time.assign(labels.size(), 0.0);
  return GroupIndex(std::move(groups), std::move(time), std::move(key));
}

GroupIndex GroupIndex::permuted(const std::vector<std::vector<Index>>& order) const {
  if (order.size() != groups_.size()) {
    throw SpecificationError("permutation list does not match the number of groups");
  }
  std::vector<Group> groups = groups_;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& perm = order[g];
    if (perm.size() != groups[g].rows.size()) {
      throw SpecificationError("permutation size mismatch for group '" + groups[g].id + "'");
    }
    std::vector<Index> rows(perm.size());
    for (std::size_t o = 0; o < perm.size(); ++o) rows[o] = groups_[g].rows[perm[o]];
    groups[g].rows = std::move(rows);
  }
  return GroupIndex(std::move(groups), time_, key_);
}

MatrixXd BlockDiagonal::dense(const GroupIndex& groups) const {
  MatrixXd out = MatrixXd::Zero(groups.n_rows(), groups.n_rows());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& rows = groups[g].rows;
    const auto n = static_cast<Index>(rows.size());
    for (Index j = 0; j < n; ++j)
      for (Index i = 0; i < n; ++i) out(rows[i], rows[j]) = blocks[g](i, j);
  }
  return out;
}

namespace {

template <typename EntryFn>
KnownMatrix build_symmetric(const GroupIndex& groups, std::string label, EntryFn entry) {
  KnownMatrix out{std::move(label), {}};
  out.matrix.blocks.reserve(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& rows = groups[g].rows;
    const auto n = static_cast<Index>(rows.size());
    MatrixXd block(n, n);
    for (Index j = 0; j < n; ++j) {
      for (Index i = 0; i <= j; ++i) {
        block(i, j) = entry(g, i, j);
        block(j, i) = block(i, j);
      }
    }
    out.matrix.blocks.push_back(std::move(block));
  }
  return out;
}

void check_column(const GroupIndex& groups, std::span<const double> column) {
  if (static_cast<Index>(column.size()) != groups.n_rows()) {
    throw SpecificationError("covariate column has " + std::to_string(column.size()) +
                             " values, expected " + std::to_string(groups.n_rows()));
  }
}

// Rank of each row's time among the distinct times of its group.
std::vector<std::vector<long>> time_ranks(const GroupIndex& groups) {
  std::vector<std::vector<long>> ranks(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    std::vector<double> distinct;
    for (Index row : groups[g].rows) distinct.push_back(groups.time()[row]);
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    for (Index row : groups[g].rows) {
      auto it = std::lower_bound(distinct.begin(), distinct.end(), groups.time()[row]);
      ranks[g].push_back(static_cast<long>(it - distinct.begin()));
    }
  }
  return ranks;
}

}  // namespace

KnownMatrix build_identity(const GroupIndex& groups) {
  return build_symmetric(groups, "Intercept",
                         [](std::size_t, Index i, Index j) { return i == j ? 1.0 : 0.0; });
}

KnownMatrix build_exchangeable(const GroupIndex& groups, ClusterKey key) {
  if (key == ClusterKey::whole_group) {
    return build_symmetric(groups, "Exchangeable", [](std::size_t, Index, Index) { return 1.0; });
  }
  const auto& keys = groups.key();
  return build_symmetric(groups, "Exchangeable(key)", [&](std::size_t g, Index i, Index j) {
    const auto& rows = groups[g].rows;
    return keys[rows[i]] == keys[rows[j]] ? 1.0 : 0.0;
  });
}

KnownMatrix build_ma_band(const GroupIndex& groups, int lag, TimeAdjacency adjacency) {
  if (lag < 1) throw SpecificationError("moving-average lag must be >= 1");
  const std::string label = "MA(" + std::to_string(lag) + ")";
  if (adjacency == TimeAdjacency::calendar) {
    const auto& time = groups.time();
    return build_symmetric(groups, label, [&](std::size_t g, Index i, Index j) {
      const auto& rows = groups[g].rows;
      return std::abs(time[rows[i]] - time[rows[j]]) == static_cast<double>(lag) ? 1.0 : 0.0;
    });
  }
  const auto ranks = time_ranks(groups);
  return build_symmetric(groups, label, [&](std::size_t g, Index i, Index j) {
    return std::abs(ranks[g][i] - ranks[g][j]) == lag ? 1.0 : 0.0;
  });
}

KnownMatrix build_inverse_distance(const GroupIndex& groups) {
  const auto& time = groups.time();
  return build_symmetric(groups, "InverseDistance", [&](std::size_t g, Index i, Index j) {
    if (i == j) return 0.0;
    const auto& rows = groups[g].rows;
    const double d = std::abs(time[rows[i]] - time[rows[j]]);
    return d == 0.0 ? 1.0 : 1.0 / d;
  });
}

KnownMatrix build_covariate_block(const GroupIndex& groups, std::span<const double> column,
                                  std::string label) {
  check_column(groups, column);
  return build_symmetric(groups, std::move(label), [&](std::size_t g, Index i, Index j) {
    const auto& rows = groups[g].rows;
    return column[rows[i]] * column[rows[j]];
  });
}

KnownMatrix build_covariate_interaction(const GroupIndex& groups, std::span<const double> first,
                                        std::span<const double> second, std::string label) {
  check_column(groups, first);
  check_column(groups, second);
  return build_symmetric(groups, std::move(label), [&](std::size_t g, Index i, Index j) {
    const auto& rows = groups[g].rows;
    const Index ri = rows[i];
    const Index rj = rows[j];
    // Written so that (i,j) and (j,i) evaluate the same expression.
    const double lo = first[std::min(ri, rj)] * second[std::max(ri, rj)];
    const double hi = first[std::max(ri, rj)] * second[std::min(ri, rj)];
    return lo + hi;
  });
}

}  // namespace mcglm
