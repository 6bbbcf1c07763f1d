#include "mcglm/design.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <sstream>

#include "mcglm/error.hpp"

namespace mcglm {

namespace {

using nlohmann::json;

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  int depth = 0;
  for (char c : s) {
    if (c == '(') ++depth;
    if (c == ')') --depth;
    if (c == sep && depth == 0) {
      out.push_back(cur);
      cur.clear();
    } else if (c != ' ') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

struct Poly {
  std::string column;
  int degree = 0;
};

bool parse_poly(const std::string& spec, Poly& out) {
  if (!spec.starts_with("poly(") || !spec.ends_with(")")) return false;
  const auto inner = spec.substr(5, spec.size() - 6);
  const auto comma = inner.find(',');
  if (comma == std::string::npos) throw SpecificationError("malformed term '" + spec + "'");
  out.column = inner.substr(0, comma);
  try {
    std::size_t used = 0;
    out.degree = std::stoi(inner.substr(comma + 1), &used);
    if (used != inner.size() - comma - 1) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw SpecificationError("malformed polynomial degree in '" + spec + "'");
  }
  if (out.degree < 1) throw SpecificationError("polynomial degree must be >= 1 in '" + spec + "'");
  return true;
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

ColumnRef parse_column_ref(const json& j) {
  if (j.is_string()) return {j.get<std::string>(), ""};
  return {j.at("column").get<std::string>(), get_or<std::string>(j, "level", "")};
}

ComponentConfig parse_component(const json& j) {
  ComponentConfig c;
  c.type = j.at("type").get<std::string>();
  c.label = get_or<std::string>(j, "label", "");
  if (c.type == "identity" || c.type == "inverse_distance") {
  } else if (c.type == "exchangeable") {
    c.cluster = get_or<std::string>(j, "cluster", "key");
    if (c.cluster != "key" && c.cluster != "group") {
      throw SpecificationError("exchangeable cluster must be 'key' or 'group'");
    }
  } else if (c.type == "ma") {
    c.lag = get_or<int>(j, "lag", 1);
    c.adjacency = get_or<std::string>(j, "adjacency", "rank");
    if (c.lag < 1) throw SpecificationError("ma lag must be >= 1");
    if (c.adjacency != "rank" && c.adjacency != "calendar") {
      throw SpecificationError("ma adjacency must be 'rank' or 'calendar'");
    }
  } else if (c.type == "covariate") {
    c.columns.push_back(parse_column_ref(j));
  } else if (c.type == "interaction") {
    for (const auto& ref : j.at("columns")) c.columns.push_back(parse_column_ref(ref));
    if (c.columns.size() != 2) throw SpecificationError("interaction needs exactly two columns");
  } else {
    throw SpecificationError("unknown covariance component type '" + c.type + "'");
  }
  if (c.label.empty()) {
    if (c.type == "identity") c.label = "Intercept";
    else if (c.type == "exchangeable") c.label = "exchangeable(" + c.cluster + ")";
    else if (c.type == "ma") c.label = "ma(" + std::to_string(c.lag) + ")";
    else if (c.type == "inverse_distance") c.label = "inverse_distance";
    else {
      c.label = c.type + "(";
      for (std::size_t k = 0; k < c.columns.size(); ++k) {
        c.label += (k ? "," : "") + c.columns[k].column;
        if (!c.columns[k].level.empty()) c.label += "=" + c.columns[k].level;
      }
      c.label += ")";
    }
  }
  return c;
}

std::vector<std::string> string_list(const json& j, const char* key) {
  return j.contains(key) ? j.at(key).get<std::vector<std::string>>() : std::vector<std::string>{};
}

}  // namespace

ModelConfig parse_config(const std::string& text) {
  ModelConfig cfg;
  try {
    const json doc = json::parse(text);
    const std::string link = get_or<std::string>(doc, "link", "identity");
    if (link != "identity") {
      throw SpecificationError("unsupported covariance link '" + link + "'; only 'identity'");
    }
    const json& data = doc.at("data");
    cfg.schema.group = data.at("group").get<std::string>();
    cfg.schema.time = get_or<std::string>(data, "time", "");
    cfg.schema.key = get_or<std::string>(data, "key", "");
    cfg.schema.offset = get_or<std::string>(data, "offset", "");
    cfg.schema.categorical = string_list(data, "categorical");
    cfg.schema.numeric = string_list(data, "numeric");

    const json& responses = doc.at("responses");
    if (!responses.is_array() || responses.empty()) {
      throw SpecificationError("config needs at least one response");
    }
    for (const auto& r : responses) {
      ResponseConfig rc;
      rc.name = r.at("name").get<std::string>();
      rc.mean = string_list(r, "mean");
      rc.mean_candidates = string_list(r, "mean_candidates");
      if (r.contains("covariance")) {
        for (const auto& c : r.at("covariance")) rc.covariance.push_back(parse_component(c));
      } else {
        rc.covariance.push_back(parse_component(json{{"type", "identity"}}));
      }
      if (rc.covariance.empty()) throw SpecificationError("response '" + rc.name + "' has no covariance components");
      if (r.contains("covariance_candidates")) {
        for (const auto& c : r.at("covariance_candidates"))
          rc.covariance_candidates.push_back(parse_component(c));
      }
      if (r.contains("power")) {
        const auto& p = r.at("power");
        const std::string mode = get_or<std::string>(p, "mode", "estimate");
        if (mode != "estimate" && mode != "fixed") {
          throw SpecificationError("power mode must be 'estimate' or 'fixed'");
        }
        rc.power.estimate = mode == "estimate";
        rc.power.value = get_or<double>(p, "value", 1.5);
      }
      if (std::any_of(cfg.responses.begin(), cfg.responses.end(),
                      [&](const ResponseConfig& o) { return o.name == rc.name; })) {
        throw SpecificationError("duplicate response '" + rc.name + "'");
      }
      cfg.schema.responses.push_back(rc.name);
      cfg.responses.push_back(std::move(rc));
    }
    if (doc.contains("selection")) {
      const auto& s = doc.at("selection");
      cfg.selection.penalty = get_or<std::string>(s, "penalty", "aic");
      cfg.selection.alpha = get_or<double>(s, "alpha", 0.05);
      cfg.selection.max_steps = get_or<int>(s, "max_steps", 50);
      if (cfg.selection.penalty != "aic" && cfg.selection.penalty != "bic") {
        throw SpecificationError("selection penalty must be 'aic' or 'bic'");
      }
    }
    if (doc.contains("fit")) {
      const auto& f = doc.at("fit");
      cfg.fit.max_iter = get_or<int>(f, "max_iter", cfg.fit.max_iter);
      cfg.fit.score_tol = get_or<double>(f, "tol", cfg.fit.score_tol);
    }
  } catch (const json::exception& e) {
    throw SpecificationError(std::string("config: ") + e.what());
  }
  return cfg;
}

ModelConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SpecificationError("cannot open config file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

DesignBuilder::DesignBuilder(ModelConfig config, const Dataset& training)
    : config_(std::move(config)) {
  for (const auto& c : config_.schema.categorical) levels_[c] = training.levels(c);
  for (int r = 0; r < static_cast<int>(config_.responses.size()); ++r) {
    for (const auto& term : term_list(r, true)) {
      for (const auto& f : split(term, ':')) {
        Poly poly;
        if (!parse_poly(f, poly)) continue;
        if (centers_.contains(poly.column)) continue;
        const auto& v = training.values(poly.column);
        centers_[poly.column] = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      }
    }
  }
  // Resolve every term once against the training data to fail early.
  for (int r = 0; r < static_cast<int>(config_.responses.size()); ++r) terms(r, true);
}

std::vector<std::string> DesignBuilder::term_list(int response, bool candidates) const {
  const auto& rc = config_.responses.at(response);
  std::vector<std::string> out{"Intercept"};
  out.insert(out.end(), rc.mean.begin(), rc.mean.end());
  if (candidates) out.insert(out.end(), rc.mean_candidates.begin(), rc.mean_candidates.end());
  for (std::size_t i = 0; i < out.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (out[i] == out[j]) throw SpecificationError("duplicate mean term '" + out[i] + "'");
  return out;
}

DesignBuilder::Factor DesignBuilder::factor(const std::string& spec, const Dataset& data) const {
  Factor f;
  const auto n = static_cast<std::size_t>(data.n_rows());
  Poly poly;
  if (parse_poly(spec, poly)) {
    const auto c = centers_.find(poly.column);
    if (c == centers_.end()) throw SpecificationError("unknown polynomial column '" + poly.column + "'");
    const auto& v = data.values(poly.column);
    for (int k = 1; k <= poly.degree; ++k) {
      f.names.push_back(spec + std::to_string(k));
      std::vector<double> col(n);
      for (std::size_t i = 0; i < n; ++i) col[i] = std::pow(v[i] - c->second, k);
      f.columns.push_back(std::move(col));
    }
    return f;
  }
  if (const auto lv = levels_.find(spec); lv != levels_.end()) {
    const auto& raw = data.text(spec);
    for (std::size_t i = 0; i < n; ++i)
      if (std::find(lv->second.begin(), lv->second.end(), raw[i]) == lv->second.end()) {
        throw SpecificationError("column '" + spec + "': level '" + raw[i] +
                                 "' not present in the training data");
      }
    for (std::size_t l = 1; l < lv->second.size(); ++l) {
      f.names.push_back(spec + lv->second[l]);
      std::vector<double> col(n);
      for (std::size_t i = 0; i < n; ++i) col[i] = raw[i] == lv->second[l] ? 1.0 : 0.0;
      f.columns.push_back(std::move(col));
    }
    return f;
  }
  const auto& s = config_.schema;
  const bool numeric = spec == s.time || std::find(s.numeric.begin(), s.numeric.end(), spec) != s.numeric.end();
  if (!numeric) throw SpecificationError("mean term refers to unknown column '" + spec + "'");
  f.names.push_back(spec);
  f.columns.push_back(data.values(spec));
  return f;
}

std::vector<MeanTerm> DesignBuilder::terms(int response, bool candidates) const {
  std::vector<MeanTerm> out;
  Index first = 0;
  for (const auto& label : term_list(response, candidates)) {
    MeanTerm t;
    t.label = label;
    t.first = first;
    if (label == "Intercept") {
      t.width = 1;
    } else {
      const auto parts = split(label, ':');
      if (parts.size() > 2) throw SpecificationError("term '" + label + "': only second-order interactions");
      Index width = 1;
      for (const auto& p : parts) {
        Poly poly;
        if (parse_poly(p, poly)) {
          width *= poly.degree;
        } else if (const auto lv = levels_.find(p); lv != levels_.end()) {
          width *= static_cast<Index>(lv->second.size()) - 1;
        } else {
          const auto& s = config_.schema;
          if (p != s.time && std::find(s.numeric.begin(), s.numeric.end(), p) == s.numeric.end()) {
            throw SpecificationError("mean term refers to unknown column '" + p + "'");
          }
        }
      }
      if (parts.size() == 2) t.parents = parts;
      t.width = width;
    }
    if (t.width == 0) throw SpecificationError("term '" + label + "' has no columns");
    first += t.width;
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<std::string> DesignBuilder::column_names(int response, bool candidates) const {
  std::vector<std::string> out;
  for (const auto& label : term_list(response, candidates)) {
    if (label == "Intercept") {
      out.push_back("(Intercept)");
      continue;
    }
    std::vector<std::string> names{""};
    for (const auto& p : split(label, ':')) {
      std::vector<std::string> parts;
      Poly poly;
      if (parse_poly(p, poly)) {
        for (int k = 1; k <= poly.degree; ++k) parts.push_back(p + std::to_string(k));
      } else if (const auto lv = levels_.find(p); lv != levels_.end()) {
        for (std::size_t l = 1; l < lv->second.size(); ++l) parts.push_back(p + lv->second[l]);
      } else {
        parts.push_back(p);
      }
      std::vector<std::string> next;
      for (const auto& b : parts)
        for (const auto& a : names) next.push_back(a.empty() ? b : a + ":" + b);
      names = std::move(next);
    }
    out.insert(out.end(), names.begin(), names.end());
  }
  return out;
}

MatrixXd DesignBuilder::design_matrix(int response, const Dataset& data, bool candidates) const {
  const Index n = data.n_rows();
  std::vector<std::vector<double>> cols;
  for (const auto& label : term_list(response, candidates)) {
    if (label == "Intercept") {
      cols.emplace_back(static_cast<std::size_t>(n), 1.0);
      continue;
    }
    std::vector<std::vector<double>> acc{std::vector<double>(static_cast<std::size_t>(n), 1.0)};
    for (const auto& p : split(label, ':')) {
      const Factor f = factor(p, data);
      std::vector<std::vector<double>> next;
      for (const auto& b : f.columns)
        for (const auto& a : acc) {
          std::vector<double> c(a.size());
          for (std::size_t i = 0; i < c.size(); ++i) c[i] = a[i] * b[i];
          next.push_back(std::move(c));
        }
      acc = std::move(next);
    }
    cols.insert(cols.end(), acc.begin(), acc.end());
  }
  MatrixXd x(n, static_cast<Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c)
    for (Index i = 0; i < n; ++i) x(i, static_cast<Index>(c)) = cols[c][static_cast<std::size_t>(i)];
  return x;
}

VectorXd DesignBuilder::log_offset(const Dataset& data) const {
  VectorXd out = VectorXd::Zero(data.n_rows());
  if (config_.schema.offset.empty()) return out;
  const auto& v = data.values(config_.schema.offset);
  for (Index i = 0; i < data.n_rows(); ++i) out(i) = std::log(v[static_cast<std::size_t>(i)]);
  return out;
}

std::vector<KnownMatrix> DesignBuilder::components(const std::vector<ComponentConfig>& list,
                                                   const Dataset& data,
                                                   const GroupIndex& groups) const {
  auto column_values = [&](const ColumnRef& ref) {
    if (levels_.contains(ref.column)) {
      const auto& lv = levels_.at(ref.column);
      if (ref.level.empty()) {
        throw SpecificationError("covariate component on categorical column '" + ref.column +
                                 "' needs a level");
      }
      if (std::find(lv.begin(), lv.end(), ref.level) == lv.end()) {
        throw SpecificationError("column '" + ref.column + "' has no level '" + ref.level + "'");
      }
      const auto& raw = data.text(ref.column);
      std::vector<double> v(raw.size());
      for (std::size_t i = 0; i < raw.size(); ++i) v[i] = raw[i] == ref.level ? 1.0 : 0.0;
      return v;
    }
    if (!ref.level.empty()) {
      throw SpecificationError("column '" + ref.column + "' is numeric; 'level' not allowed");
    }
    return data.values(ref.column);
  };

  std::vector<KnownMatrix> out;
  for (const auto& c : list) {
    KnownMatrix z;
    if (c.type == "identity") {
      z = build_identity(groups);
    } else if (c.type == "exchangeable") {
      z = build_exchangeable(groups, c.cluster == "group" ? ClusterKey::whole_group
                                                          : ClusterKey::within_group);
    } else if (c.type == "ma") {
      z = build_ma_band(groups, c.lag,
                        c.adjacency == "calendar" ? TimeAdjacency::calendar : TimeAdjacency::rank);
    } else if (c.type == "inverse_distance") {
      z = build_inverse_distance(groups);
    } else if (c.type == "covariate") {
      z = build_covariate_block(groups, column_values(c.columns.at(0)));
    } else if (c.type == "interaction") {
      z = build_covariate_interaction(groups, column_values(c.columns.at(0)),
                                      column_values(c.columns.at(1)));
    } else {
      throw SpecificationError("unknown covariance component type '" + c.type + "'");
    }
    z.label = c.label;
    out.push_back(std::move(z));
  }
  return out;
}

ModelSpec DesignBuilder::build(const Dataset& data, bool candidates) const {
  ModelSpec spec;
  spec.groups = data.group_index();
  const VectorXd offset = log_offset(data);
  for (int r = 0; r < static_cast<int>(config_.responses.size()); ++r) {
    const auto& rc = config_.responses[r];
    ResponseSpec resp;
    resp.name = rc.name;
    const auto& y = data.values(rc.name);
    resp.y = Eigen::Map<const VectorXd>(y.data(), static_cast<Index>(y.size()));
    resp.X = design_matrix(r, data, candidates);
    resp.columns = column_names(r, candidates);
    resp.terms = terms(r, candidates);
    resp.offset = offset;
    resp.components = components(rc.covariance, data, spec.groups);
    resp.power = rc.power;
    spec.responses.push_back(std::move(resp));
  }
  spec.validate();
  return spec;
}

ModelSpec build_design(const Dataset& data, const ModelConfig& config) {
  return DesignBuilder(config, data).build(data);
}

}  // namespace mcglm
