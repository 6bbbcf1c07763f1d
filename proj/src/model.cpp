#include "mcglm/model.hpp"

#include <algorithm>
#include <cmath>

#include "mcglm/error.hpp"

namespace mcglm {

void ModelSpec::validate() const {
  const Index n = n_rows();
  if (responses.empty()) throw SpecificationError("model has no responses");
  for (const auto& resp : responses) {
    const std::string where = "response '" + resp.name + "': ";
    if (resp.y.size() != n) throw SpecificationError(where + "response length mismatch");
    if (resp.X.rows() != n) throw SpecificationError(where + "design row count mismatch");
    if (resp.offset.size() != n) throw SpecificationError(where + "offset length mismatch");
    if (resp.X.cols() == 0) throw SpecificationError(where + "empty design matrix");
    if (!resp.columns.empty() && static_cast<Index>(resp.columns.size()) != resp.X.cols()) {
      throw SpecificationError(where + "column names do not match design width");
    }
    if (!resp.y.allFinite() || !resp.X.allFinite() || !resp.offset.allFinite()) {
      throw SpecificationError(where + "non-finite values in data");
    }
    if (resp.components.empty()) {
      throw SpecificationError(where + "matrix linear predictor has no components");
    }
    for (const auto& z : resp.components) {
      if (z.matrix.blocks.size() != groups.size()) {
        throw SpecificationError(where + "component '" + z.label + "' has wrong block count");
      }
      for (std::size_t g = 0; g < groups.size(); ++g) {
        const auto og = static_cast<Index>(groups[g].rows.size());
        if (z.matrix.blocks[g].rows() != og || z.matrix.blocks[g].cols() != og) {
          throw SpecificationError(where + "component '" + z.label + "' block size mismatch");
        }
      }
    }

    Eigen::ColPivHouseholderQR<MatrixXd> qr(resp.X);
    if (qr.rank() < resp.X.cols()) {
      // Columns outside the leading `rank` pivots are aliased.
      std::string names;
      const auto& perm = qr.colsPermutation().indices();
      for (Index k = qr.rank(); k < resp.X.cols(); ++k) {
        const Index c = perm(k);
        if (!names.empty()) names += ", ";
        names += resp.columns.empty() ? "column " + std::to_string(c) : resp.columns[c];
      }
      throw SpecificationError(where + "design matrix is rank deficient; aliased columns: " +
                               names);
    }
  }
}

Index rho_pair_index(int first, int second, int n_responses) {
  if (first > second) std::swap(first, second);
  Index idx = 0;
  for (int r = 0; r < first; ++r) idx += n_responses - 1 - r;
  return idx + (second - first - 1);
}

MatrixXd correlation_matrix(const VectorXd& rho, int n_responses) {
  MatrixXd sb = MatrixXd::Identity(n_responses, n_responses);
  for (int r = 0; r < n_responses; ++r)
    for (int s = r + 1; s < n_responses; ++s) {
      const double v = rho(rho_pair_index(r, s, n_responses));
      sb(r, s) = v;
      sb(s, r) = v;
    }
  return sb;
}

ParameterLayout::ParameterLayout(const ModelSpec& spec) {
  const int R = static_cast<int>(spec.n_responses());
  for (int r = 0; r < R; ++r) {
    const auto& resp = spec.responses[r];
    beta_offset_.push_back(n_beta_);
    beta_size_.push_back(resp.X.cols());
    n_beta_ += resp.X.cols();
    for (Index c = 0; c < resp.X.cols(); ++c) {
      const std::string col = resp.columns.empty() ? "x" + std::to_string(c) : resp.columns[c];
      beta_labels_.push_back(resp.name + ":" + col);
    }
  }
  for (int r = 0; r < R; ++r)
    for (int s = r + 1; s < R; ++s)
      lambda_.push_back({LambdaKind::rho, r, s, 0,
                         "rho(" + spec.responses[r].name + "," + spec.responses[s].name + ")"});
  for (int r = 0; r < R; ++r)
    if (spec.responses[r].power.estimate)
      lambda_.push_back({LambdaKind::power, r, r, 0, spec.responses[r].name + ":power"});
  for (int r = 0; r < R; ++r) {
    const auto& comps = spec.responses[r].components;
    for (int d = 0; d < static_cast<int>(comps.size()); ++d)
      lambda_.push_back({LambdaKind::tau, r, r, d, spec.responses[r].name + ":" + comps[d].label});
  }
}

Index ParameterLayout::tau_index(int response, int component) const {
  for (std::size_t i = 0; i < lambda_.size(); ++i)
    if (lambda_[i].kind == LambdaKind::tau && lambda_[i].response == response &&
        lambda_[i].component == component)
      return static_cast<Index>(i);
  return -1;
}

Index ParameterLayout::power_index(int response) const {
  for (std::size_t i = 0; i < lambda_.size(); ++i)
    if (lambda_[i].kind == LambdaKind::power && lambda_[i].response == response)
      return static_cast<Index>(i);
  return -1;
}

Index ParameterLayout::rho_index(int first, int second) const {
  if (first > second) std::swap(first, second);
  for (std::size_t i = 0; i < lambda_.size(); ++i)
    if (lambda_[i].kind == LambdaKind::rho && lambda_[i].response == first &&
        lambda_[i].other == second)
      return static_cast<Index>(i);
  return -1;
}

VectorXd ParameterLayout::pack_beta(const ParameterState& state) const {
  VectorXd out(n_beta_);
  for (std::size_t r = 0; r < beta_offset_.size(); ++r)
    out.segment(beta_offset_[r], beta_size_[r]) = state.beta[r];
  return out;
}

void ParameterLayout::unpack_beta(const VectorXd& beta, ParameterState& state) const {
  state.beta.resize(beta_offset_.size());
  for (std::size_t r = 0; r < beta_offset_.size(); ++r)
    state.beta[r] = beta.segment(beta_offset_[r], beta_size_[r]);
}

VectorXd ParameterLayout::pack_lambda(const ParameterState& state) const {
  VectorXd out(n_lambda());
  const int R = static_cast<int>(beta_offset_.size());
  for (std::size_t i = 0; i < lambda_.size(); ++i) {
    const auto& e = lambda_[i];
    switch (e.kind) {
      case LambdaKind::rho:
        out(i) = state.rho(rho_pair_index(e.response, e.other, R));
        break;
      case LambdaKind::power:
        out(i) = state.power(e.response);
        break;
      case LambdaKind::tau:
        out(i) = state.tau[e.response](e.component);
        break;
    }
  }
  return out;
}

void ParameterLayout::unpack_lambda(const VectorXd& lambda, ParameterState& state) const {
  const int R = static_cast<int>(beta_offset_.size());
  for (std::size_t i = 0; i < lambda_.size(); ++i) {
    const auto& e = lambda_[i];
    switch (e.kind) {
      case LambdaKind::rho:
        state.rho(rho_pair_index(e.response, e.other, R)) = lambda(i);
        break;
      case LambdaKind::power:
        state.power(e.response) = lambda(i);
        break;
      case LambdaKind::tau:
        state.tau[e.response](e.component) = lambda(i);
        break;
    }
  }
}

ModelSpec restrict_mean(const ModelSpec& spec, int response, const std::vector<std::string>& keep) {
  ModelSpec out = spec;
  const auto& src = spec.responses[response];
  auto& dst = out.responses[response];
  std::vector<Index> cols;
  dst.terms.clear();
  for (const auto& term : src.terms) {
    if (std::find(keep.begin(), keep.end(), term.label) == keep.end()) continue;
    MeanTerm t = term;
    t.first = static_cast<Index>(cols.size());
    for (Index c = 0; c < term.width; ++c) cols.push_back(term.first + c);
    dst.terms.push_back(std::move(t));
  }
  dst.X.resize(src.X.rows(), static_cast<Index>(cols.size()));
  dst.columns.clear();
  for (std::size_t k = 0; k < cols.size(); ++k) {
    dst.X.col(static_cast<Index>(k)) = src.X.col(cols[k]);
    if (!src.columns.empty()) dst.columns.push_back(src.columns[cols[k]]);
  }
  return out;
}

ModelSpec single_response(const ModelSpec& spec, int response) {
  ModelSpec out;
  out.groups = spec.groups;
  out.responses.push_back(spec.responses[response]);
  return out;
}

ParameterState transfer_state(const ModelSpec& from, const ParameterState& state,
                              const ModelSpec& to) {
  ParameterState out;
  const Index R = to.n_responses();
  out.rho = VectorXd::Zero(R * (R - 1) / 2);
  if (from.n_responses() == R && state.rho.size() == out.rho.size()) out.rho = state.rho;
  out.power.resize(R);
  for (Index r = 0; r < R; ++r) {
    const auto& dst = to.responses[r];
    const auto src_it = std::find_if(from.responses.begin(), from.responses.end(),
                                     [&](const ResponseSpec& s) { return s.name == dst.name; });
    out.power(r) = dst.power.value;
    VectorXd beta = VectorXd::Zero(dst.X.cols());
    VectorXd tau = VectorXd::Zero(static_cast<Index>(dst.components.size()));
    if (src_it != from.responses.end()) {
      const auto k = static_cast<std::size_t>(src_it - from.responses.begin());
      const auto& src = *src_it;
      if (dst.power.estimate || src.power.estimate) out.power(r) = state.power(k);
      if (!dst.power.estimate) out.power(r) = dst.power.value;
      if (dst.columns.empty() || src.columns.empty()) {
        if (src.X.cols() == dst.X.cols()) beta = state.beta[k];
      } else {
        for (Index c = 0; c < dst.X.cols(); ++c) {
          const auto it = std::find(src.columns.begin(), src.columns.end(), dst.columns[c]);
          if (it != src.columns.end()) beta(c) = state.beta[k](it - src.columns.begin());
        }
      }
      for (std::size_t d = 0; d < dst.components.size(); ++d)
        for (std::size_t e = 0; e < src.components.size(); ++e)
          if (src.components[e].label == dst.components[d].label)
            tau(static_cast<Index>(d)) = state.tau[k](static_cast<Index>(e));
    }
    out.beta.push_back(std::move(beta));
    out.tau.push_back(std::move(tau));
  }
  return out;
}

}  // namespace mcglm
