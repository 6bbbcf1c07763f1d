#include "mcglm/reporting.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <sstream>

#include "mcglm/dataset.hpp"
#include "mcglm/error.hpp"
#include "mcglm/stats.hpp"

namespace mcglm {

namespace {

using nlohmann::json;

Index component_index(const ResponseSpec& resp, const std::string& label) {
  for (std::size_t d = 0; d < resp.components.size(); ++d)
    if (resp.components[d].label == label) return static_cast<Index>(d);
  throw SpecificationError("response '" + resp.name + "' has no component '" + label + "'");
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  return out;
}

std::string csv_cell(const std::string& s) {
  if (s.find_first_of(",\"") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

json number(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

}  // namespace

DerivedCorrelation derived_correlation(double tau0, const VectorXd& tau, const VectorXd& weights,
                                       const MatrixXd& vcov) {
  if (tau.size() != weights.size() || vcov.rows() != tau.size() + 1 || vcov.cols() != vcov.rows()) {
    throw SpecificationError("derived correlation: inconsistent dimensions");
  }
  const double contribution = weights.dot(tau);
  const double denom = tau0 + contribution;
  if (denom == 0.0 || !std::isfinite(denom)) {
    throw SpecificationError("derived correlation undefined: tau_0 + contribution is zero");
  }
  DerivedCorrelation out;
  out.value = contribution / denom;
  VectorXd grad(tau.size() + 1);
  grad(0) = -contribution / (denom * denom);
  grad.tail(tau.size()) = weights * (tau0 / (denom * denom));
  out.se = std::sqrt(std::max(0.0, grad.dot(vcov * grad)));
  out.weights.assign(weights.data(), weights.data() + weights.size());
  return out;
}

DerivedCorrelation derived_correlation(const FittedModel& fitted, int response,
                                       std::span<const std::string> components,
                                       std::span<const double> weights) {
  const ModelSpec& spec = *fitted.spec;
  if (response < 0 || response >= spec.n_responses()) {
    throw SpecificationError("derived correlation: unknown response");
  }
  if (components.size() != weights.size() || components.empty()) {
    throw SpecificationError("derived correlation: one weight per component required");
  }
  const auto& resp = spec.responses[response];
  const ParameterLayout layout(spec);
  std::vector<Index> theta_idx{layout.n_beta() + layout.tau_index(response, 0)};
  VectorXd tau(static_cast<Index>(components.size()));
  for (std::size_t k = 0; k < components.size(); ++k) {
    const Index d = component_index(resp, components[k]);
    if (d == 0) throw SpecificationError("derived correlation: component must not be tau_0");
    tau(static_cast<Index>(k)) = fitted.state.tau[response](d);
    theta_idx.push_back(layout.n_beta() + layout.tau_index(response, static_cast<int>(d)));
  }
  MatrixXd v(theta_idx.size(), theta_idx.size());
  for (std::size_t i = 0; i < theta_idx.size(); ++i)
    for (std::size_t j = 0; j < theta_idx.size(); ++j)
      v(i, j) = fitted.vcov(theta_idx[i], theta_idx[j]);
  const VectorXd w = Eigen::Map<const VectorXd>(weights.data(), static_cast<Index>(weights.size()));
  DerivedCorrelation out = derived_correlation(fitted.state.tau[response](0), tau, w, v);
  out.components.assign(components.begin(), components.end());
  out.label = resp.name + ":";
  for (std::size_t k = 0; k < components.size(); ++k) out.label += (k ? "+" : "") + components[k];
  return out;
}

DerivedCorrelation derived_correlation(const FittedModel& fitted, int response,
                                       const std::string& component, double weight) {
  return derived_correlation(fitted, response, std::span(&component, 1), std::span(&weight, 1));
}

double gaussian_pseudo_likelihood(const FittedModel& fitted) {
  const ModelSpec& spec = *fitted.spec;
  const MeanState mean = mean_state(spec, fitted.state);
  const JointCovariance cov = joint_covariance(spec, fitted.state, mean);
  return gaussian_pseudo_likelihood(cov, stacked_response(spec) - stacked_mean(mean));
}

std::vector<FittedValue> fitted_values_ci(const FittedModel& fitted, int response,
                                          const MatrixXd& x, const VectorXd& offset, double level) {
  const ModelSpec& spec = *fitted.spec;
  if (response < 0 || response >= spec.n_responses()) {
    throw SpecificationError("fitted values: unknown response");
  }
  const ParameterLayout layout(spec);
  const Index k = layout.beta_size(response);
  if (x.cols() != k) {
    throw SpecificationError("fitted values: new data has " + std::to_string(x.cols()) +
                             " columns, the design has " + std::to_string(k));
  }
  if (offset.size() != x.rows()) throw SpecificationError("fitted values: offset length mismatch");
  const Index o = layout.beta_offset(response);
  const MatrixXd v = fitted.vcov.block(o, o, k, k);
  const VectorXd& beta = fitted.state.beta[response];
  const double z = stats::normal_interval_z(level);
  std::vector<FittedValue> out(static_cast<std::size_t>(x.rows()));
  for (Index i = 0; i < x.rows(); ++i) {
    FittedValue& f = out[static_cast<std::size_t>(i)];
    const VectorXd xi = x.row(i).transpose();
    f.eta = xi.dot(beta) + offset(i);
    f.se = std::sqrt(std::max(0.0, xi.dot(v * xi)));
    f.mean = std::exp(f.eta);
    f.lower = std::exp(f.eta - z * f.se);
    f.upper = std::exp(f.eta + z * f.se);
  }
  return out;
}

std::vector<WaldRow> wald_table(const FittedModel& fitted) {
  const ModelSpec& spec = *fitted.spec;
  const ParameterLayout layout(spec);
  std::vector<WaldRow> out;
  for (int r = 0; r < spec.n_responses(); ++r) {
    for (const auto& t : spec.responses[r].terms) {
      if (t.label == "Intercept") continue;
      std::vector<Index> idx;
      for (Index c = 0; c < t.width; ++c) idx.push_back(layout.beta_offset(r) + t.first + c);
      const WaldResult w = wald_test(fitted, idx);
      out.push_back({spec.responses[r].name, t.label, w.df, w.statistic, w.p_value});
    }
  }
  return out;
}

std::vector<DispersionRow> dispersion_table(const FittedModel& fitted) {
  const ParameterLayout layout = fitted.layout();
  const VectorXd theta = fitted.theta();
  const VectorXd se = fitted.std_errors();
  std::vector<DispersionRow> out;
  for (Index i = 0; i < layout.n_lambda(); ++i) {
    const Index k = layout.n_beta() + i;
    out.push_back({layout.lambda_entries()[i].label, theta(k), se(k), theta(k) / se(k)});
  }
  return out;
}

void emit_report(const FittedModel& fitted, const SelectionTrace* trace,
                 const ReportOptions& options) {
  namespace fs = std::filesystem;
  const ModelSpec& spec = *fitted.spec;
  const ParameterLayout layout(spec);
  std::error_code ec;
  fs::create_directories(options.directory, ec);
  if (ec) throw std::runtime_error("cannot create '" + options.directory.string() + "': " + ec.message());

  const VectorXd theta = fitted.theta();
  const VectorXd se = fitted.std_errors();
  const auto wald = wald_table(fitted);
  const auto disp = dispersion_table(fitted);

  std::vector<DerivedCorrelation> correlations;
  for (int r = 0; r < spec.n_responses(); ++r)
    for (std::size_t d = 1; d < spec.responses[r].components.size(); ++d) {
      try {
        correlations.push_back(derived_correlation(fitted, r, spec.responses[r].components[d].label));
      } catch (const SpecificationError&) {
      }
    }

  json doc;
  json responses = json::array();
  for (int r = 0; r < spec.n_responses(); ++r) {
    const auto& resp = spec.responses[r];
    json jr;
    jr["name"] = resp.name;
    jr["columns"] = resp.columns;
    jr["beta"] = std::vector<double>(fitted.state.beta[r].data(),
                                     fitted.state.beta[r].data() + fitted.state.beta[r].size());
    jr["power"] = fitted.state.power(r);
    jr["power_estimated"] = resp.power.estimate;
    std::vector<std::string> labels;
    for (const auto& z : resp.components) labels.push_back(z.label);
    jr["components"] = labels;
    jr["tau"] = std::vector<double>(fitted.state.tau[r].data(),
                                    fitted.state.tau[r].data() + fitted.state.tau[r].size());
    responses.push_back(std::move(jr));
  }
  doc["responses"] = std::move(responses);
  doc["rho"] = std::vector<double>(fitted.state.rho.data(),
                                   fitted.state.rho.data() + fitted.state.rho.size());

  json params = json::array();
  std::vector<std::string> labels = layout.beta_labels();
  for (const auto& e : layout.lambda_entries()) labels.push_back(e.label);
  for (Index i = 0; i < theta.size(); ++i) {
    params.push_back({{"parameter", labels[i]},
                      {"estimate", theta(i)},
                      {"se", number(se(i))},
                      {"z", number(theta(i) / se(i))}});
  }
  doc["parameters"] = std::move(params);
  json jw = json::array();
  for (const auto& w : wald)
    jw.push_back({{"response", w.response}, {"effect", w.effect}, {"df", w.df},
                  {"chi2", number(w.chi2)}, {"p_value", number(w.p_value)}});
  doc["wald"] = std::move(jw);
  json jc = json::array();
  for (const auto& c : correlations)
    jc.push_back({{"label", c.label}, {"value", number(c.value)}, {"se", number(c.se)},
                  {"components", c.components}, {"weights", c.weights}});
  doc["derived_correlations"] = std::move(jc);
  doc["gpl"] = number(fitted.gpl);
  doc["gpl_includes_2pi"] = true;
  doc["n_parameters"] = layout.n_theta();
  doc["n_observations"] = spec.n_rows() * spec.n_responses();
  doc["iterations"] = fitted.iterations;
  doc["max_abs_score"] = {{"beta", fitted.psi_beta.cwiseAbs().maxCoeff()},
                          {"lambda", fitted.psi_lambda.size() ? fitted.psi_lambda.cwiseAbs().maxCoeff() : 0.0}};
  try {
    doc["metadata"] = json::parse(options.metadata_json);
  } catch (const json::exception& e) {
    throw SpecificationError(std::string("report metadata is not valid JSON: ") + e.what());
  }
  {
    auto out = open_out(options.directory / "results.json");
    out << doc.dump(2) << '\n';
  }

  {
    auto out = open_out(options.directory / "coefficients.csv");
    out << "Parameter,Estimate,SE,Z\n";
    for (Index i = 0; i < theta.size(); ++i)
      out << csv_cell(labels[i]) << ',' << format_number(theta(i)) << ',' << format_number(se(i))
          << ',' << format_number(theta(i) / se(i)) << '\n';
  }
  {
    auto out = open_out(options.directory / "wald.csv");
    out << "Response,Effects,Df,Chi2,p-value\n";
    for (const auto& w : wald)
      out << csv_cell(w.response) << ',' << csv_cell(w.effect) << ',' << w.df << ','
          << format_number(w.chi2) << ',' << format_number(w.p_value) << '\n';
  }
  {
    auto out = open_out(options.directory / "dispersion.csv");
    out << "Parameter,Estimate,SE,Z\n";
    for (const auto& d : disp)
      out << csv_cell(d.parameter) << ',' << format_number(d.estimate) << ','
          << format_number(d.se) << ',' << format_number(d.z) << '\n';
  }
  {
    auto out = open_out(options.directory / "correlations.csv");
    out << "Label,Estimate,SE\n";
    for (const auto& c : correlations)
      out << csv_cell(c.label) << ',' << format_number(c.value) << ',' << format_number(c.se) << '\n';
  }

  for (int r = 0; r < spec.n_responses(); ++r) {
    const auto& resp = spec.responses[r];
    const bool custom = static_cast<std::size_t>(r) < options.curve_x.size();
    const MatrixXd& x = custom ? options.curve_x[r] : resp.X;
    const VectorXd offset = custom ? options.curve_offset.at(r) : VectorXd::Zero(x.rows());
    const auto values = fitted_values_ci(fitted, r, x, offset);
    auto out = open_out(options.directory / ("fitted_" + resp.name + ".csv"));
    const bool labelled = static_cast<std::size_t>(r) < options.curve_labels.size();
    for (const auto& h : options.curve_header) out << csv_cell(h) << ',';
    if (!labelled && options.curve_header.empty()) out << "row,";
    out << "eta,se,fitted,lower,upper\n";
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (labelled) {
        out << options.curve_labels[r][i] << ',';
      } else if (options.curve_header.empty()) {
        out << i + 1 << ',';
      }
      const auto& f = values[i];
      out << format_number(f.eta) << ',' << format_number(f.se) << ',' << format_number(f.mean)
          << ',' << format_number(f.lower) << ',' << format_number(f.upper) << '\n';
    }
  }

  if (trace) {
    auto out = open_out(options.directory / "trace.csv");
    out << "Phase,Response,Candidate,Statistic,SIC,p-value,Decision\n";
    for (const auto& s : trace->steps)
      out << s.phase << ',' << csv_cell(s.response) << ',' << csv_cell(s.candidate) << ','
          << format_number(s.statistic) << ',' << format_number(s.sic) << ','
          << format_number(s.p_value) << ',' << s.decision << '\n';
    for (const auto& d : trace->diagnostics) out << "# " << d << '\n';
  }

  {
    auto out = open_out(options.directory / "summary.txt");
    out << std::fixed;
    out << "Multivariate covariance GLM fit\n";
    out << "observations: " << spec.n_rows() << " rows x " << spec.n_responses()
        << " responses, " << spec.groups.size() << " groups\n";
    out << "iterations: " << fitted.iterations << "\n";
    out << "Gaussian pseudo-likelihood: " << std::setprecision(3) << fitted.gpl << "\n\n";
    out << "Regression and dispersion parameters\n";
    for (Index i = 0; i < theta.size(); ++i)
      out << "  " << std::left << std::setw(40) << labels[i] << std::right << std::setprecision(4)
          << std::setw(12) << theta(i) << std::setw(12) << se(i) << std::setw(10)
          << theta(i) / se(i) << '\n';
    out << "\nWald tests\n";
    for (const auto& w : wald)
      out << "  " << std::left << std::setw(40) << (w.response + ":" + w.effect) << std::right
          << std::setw(4) << w.df << std::setprecision(3) << std::setw(12) << w.chi2
          << std::setprecision(4) << std::setw(10) << w.p_value << '\n';
    if (!correlations.empty()) {
      out << "\nDerived correlations\n";
      for (const auto& c : correlations)
        out << "  " << std::left << std::setw(40) << c.label << std::right << std::setprecision(3)
            << std::setw(10) << c.value << " (" << c.se << ")\n";
    }
    if (trace) {
      out << "\nSelection\n";
      for (const auto& s : trace->steps)
        out << "  " << s.phase << ' ' << s.response << ' ' << s.candidate << ' ' << s.decision
            << " T=" << std::setprecision(3) << s.statistic << " SIC=" << s.sic << '\n';
    }
  }
}

ParameterState read_estimates(const std::filesystem::path& results_json) {
  std::ifstream in(results_json);
  if (!in) throw std::runtime_error("cannot open '" + results_json.string() + "'");
  const json doc = json::parse(in);
  ParameterState state;
  const auto& responses = doc.at("responses");
  state.power.resize(static_cast<Index>(responses.size()));
  Index r = 0;
  for (const auto& jr : responses) {
    const auto beta = jr.at("beta").get<std::vector<double>>();
    const auto tau = jr.at("tau").get<std::vector<double>>();
    state.beta.push_back(Eigen::Map<const VectorXd>(beta.data(), static_cast<Index>(beta.size())));
    state.tau.push_back(Eigen::Map<const VectorXd>(tau.data(), static_cast<Index>(tau.size())));
    state.power(r++) = jr.at("power").get<double>();
  }
  const auto rho = doc.at("rho").get<std::vector<double>>();
  state.rho = Eigen::Map<const VectorXd>(rho.data(), static_cast<Index>(rho.size()));
  return state;
}

}  // namespace mcglm
