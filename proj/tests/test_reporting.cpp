#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "mcglm/error.hpp"
#include "mcglm/reporting.hpp"
#include "mcglm/stats.hpp"
#include "support.hpp"

using namespace mcglm;
using testing::max_abs;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string first_line(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  return line;
}

// Intercept + polynomial time trend up to `degree`, identity + exchangeable.
ModelSpec trend_spec(int groups, int m, int degree) {
  ModelSpec spec = testing::simple_spec(groups, m, true, 1.5, false);
  auto& resp = spec.responses[0];
  const Index n = spec.n_rows();
  resp.X.resize(n, degree + 1);
  resp.columns = {"(Intercept)"};
  resp.terms = {{"Intercept", 0, 1, {}}};
  for (Index i = 0; i < n; ++i) {
    const double t = (spec.groups.time()[i] - (m + 1) / 2.0) / m;
    for (int k = 0; k <= degree; ++k) resp.X(i, k) = std::pow(t, k);
  }
  for (int k = 1; k <= degree; ++k) {
    resp.columns.push_back("t" + std::to_string(k));
    resp.terms.push_back({"t" + std::to_string(k), k, 1, {}});
  }
  return spec;
}

FittedModel small_fit(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelSpec spec = trend_spec(30, 5, 2);
  ParameterState truth;
  truth.beta = {(VectorXd(3) << 2.5, 0.8, -1.5).finished()};
  truth.rho = VectorXd(0);
  truth.power = VectorXd::Constant(1, 1.5);
  truth.tau = {(VectorXd(2) << 0.4, 0.3).finished()};
  spec = with_responses(spec, simulate_gaussian(spec, truth, rng));
  return fit(spec);
}

}  // namespace

TEST_CASE("derived correlations from reference estimates") {
  const MatrixXd v = MatrixXd::Identity(2, 2);
  auto one = [&](double t0, double t1, double w) {
    return derived_correlation(t0, VectorXd::Constant(1, t1), VectorXd::Constant(1, w), v).value;
  };
  CHECK(one(0.474, 0.722, 1.0) == doctest::Approx(0.604).epsilon(5e-4));
  CHECK(one(0.686, 0.294, 1.0) == doctest::Approx(0.300).epsilon(5e-4));
  CHECK(one(0.474, -0.155, 1.0) == doctest::Approx(-0.486).epsilon(5e-4));
  CHECK(one(0.474, -0.155, 1.0) == doctest::Approx(-0.155 / 0.319).epsilon(1e-12));
  // Lag 2 of an inverse-distance component carries weight 1/2.
  CHECK(one(0.474, -0.155, 0.5) == doctest::Approx(-0.0775 / (0.474 - 0.0775)).epsilon(1e-12));
  CHECK_THROWS_AS(one(0.2, -0.2, 1.0), SpecificationError);
}

TEST_CASE("delta-method standard error against numerical gradients") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z;
  for (int rep = 0; rep < 10; ++rep) {
    const double t0 = 0.5 + std::abs(z(rng));
    VectorXd tau(2), w(2);
    tau << 0.3 * z(rng), 0.2 + 0.1 * std::abs(z(rng));
    w << 1.0, 0.5;
    MatrixXd a(3, 3);
    for (Index i = 0; i < 9; ++i) a.data()[i] = z(rng);
    const MatrixXd vcov = 0.01 * a * a.transpose();
    const auto d = derived_correlation(t0, tau, w, vcov);

    auto f = [&](const VectorXd& x) {
      const double c = w.dot(x.tail(2));
      return c / (x(0) + c);
    };
    VectorXd x(3);
    x << t0, tau;
    VectorXd g(3);
    for (Index i = 0; i < 3; ++i) {
      const double h = 1e-6;
      VectorXd up = x, dn = x;
      up(i) += h;
      dn(i) -= h;
      g(i) = (f(up) - f(dn)) / (2 * h);
    }
    CHECK(d.value == doctest::Approx(f(x)).epsilon(1e-14));
    CHECK(d.se == doctest::Approx(std::sqrt(g.dot(vcov * g))).epsilon(1e-7));

    // Ratio form: rescaling every tau leaves the value unchanged.
    for (double c : {0.1, 3.0, 250.0})
      CHECK(derived_correlation(c * t0, c * tau, w, vcov).value ==
            doctest::Approx(d.value).epsilon(1e-13));
  }
}

TEST_CASE("derived correlation of a fitted model") {
  const auto f = small_fit(4);
  const auto d = derived_correlation(f, 0, "Exchangeable");
  const auto layout = f.layout();
  const Index i0 = layout.n_beta() + layout.tau_index(0, 0);
  const Index i1 = layout.n_beta() + layout.tau_index(0, 1);
  MatrixXd v(2, 2);
  v << f.vcov(i0, i0), f.vcov(i0, i1), f.vcov(i1, i0), f.vcov(i1, i1);
  const auto e = derived_correlation(f.state.tau[0](0), f.state.tau[0].tail(1),
                                     VectorXd::Ones(1), v);
  CHECK(d.value == e.value);
  CHECK(d.se == doctest::Approx(e.se).epsilon(1e-14));
  CHECK(d.se > 0.0);
  CHECK_THROWS_AS(derived_correlation(f, 0, "Missing"), SpecificationError);
  CHECK_THROWS_AS(derived_correlation(f, 3, "Exchangeable"), SpecificationError);
}

TEST_CASE("Gaussian pseudo-likelihood") {
  const auto g1 = GroupIndex::from_labels(std::vector<std::string>{"a"}, {1.0}, {});
  const auto c1 = JointCovariance::assemble({BlockDiagonal{{MatrixXd::Identity(1, 1)}}}, VectorXd(0), g1);
  CHECK(gaussian_pseudo_likelihood(c1, VectorXd::Zero(1)) == doctest::Approx(-0.9189385332).epsilon(1e-10));

  std::mt19937_64 rng(9);
  for (int rep = 0; rep < 5; ++rep) {
    const auto toy = testing::toy_with_data(rng, {.max_rows = 30});
    const auto mean = mean_state(toy.spec, toy.state);
    const auto cov = joint_covariance(toy.spec, toy.state, mean);
    const VectorXd r = stacked_response(toy.spec) - stacked_mean(mean);
    const MatrixXd c = reference::joint_covariance(toy.spec, toy.state);
    const double nr = static_cast<double>(r.size());
    const double expected = -0.5 * (nr * std::log(2 * std::numbers::pi) +
                                    std::log(c.determinant()) + r.dot(c.ldlt().solve(r)));
    CHECK(gaussian_pseudo_likelihood(cov, r) == doctest::Approx(expected).epsilon(1e-10));

    if (toy.spec.n_responses() == 1) {
      const double k = 2.7;
      auto sig = response_sigmas(toy.spec, toy.state, mean);
      for (auto& b : sig[0].blocks) b *= k;
      const auto scaled = JointCovariance::assemble(sig, VectorXd(0), toy.spec.groups);
      const double quad = r.dot(c.ldlt().solve(r));
      const double diff = -0.5 * (nr * std::log(k) - quad * (1 - 1 / k));
      CHECK(gaussian_pseudo_likelihood(scaled, r) - gaussian_pseudo_likelihood(cov, r) ==
            doctest::Approx(diff).epsilon(1e-9));
    }
  }

  const auto f = small_fit(5);
  CHECK(gaussian_pseudo_likelihood(f) == f.gpl);
}

TEST_CASE("pseudo-likelihood grows from a quadratic to a cubic trend") {
  std::mt19937_64 rng(11);
  int increases = 0;
  for (int rep = 0; rep < 5; ++rep) {
    ModelSpec cubic = trend_spec(40, 6, 3);
    ParameterState truth;
    truth.beta = {(VectorXd(4) << 2.5, 0.5, -1.0, 3.0).finished()};
    truth.rho = VectorXd(0);
    truth.power = VectorXd::Constant(1, 1.5);
    truth.tau = {(VectorXd(2) << 0.3, 0.2).finished()};
    cubic = with_responses(cubic, simulate_gaussian(cubic, truth, rng));
    const ModelSpec quad = restrict_mean(cubic, 0, {"Intercept", "t1", "t2"});
    const ModelSpec lin = restrict_mean(cubic, 0, {"Intercept", "t1"});
    const double g3 = fit(cubic).gpl, g2 = fit(quad).gpl, g1 = fit(lin).gpl;
    if (g1 < g2 && g2 < g3) ++increases;
  }
  CHECK(increases == 5);
}

TEST_CASE("fitted values with confidence intervals") {
  const auto f = small_fit(6);
  const double z = stats::normal_interval_z(0.95);
  CHECK(z == doctest::Approx(1.959964).epsilon(1e-6));
  const Index k = f.state.beta[0].size();

  MatrixXd x0 = MatrixXd::Zero(1, k);
  x0(0, 0) = 1.0;
  const auto v0 = fitted_values_ci(f, 0, x0, VectorXd::Zero(1));
  const double b0 = f.state.beta[0](0), se0 = std::sqrt(f.vcov(0, 0));
  CHECK(v0[0].mean == doctest::Approx(std::exp(b0)).epsilon(1e-14));
  CHECK(v0[0].lower == doctest::Approx(std::exp(b0 - z * se0)).epsilon(1e-12));
  CHECK(v0[0].upper == doctest::Approx(std::exp(b0 + z * se0)).epsilon(1e-12));

  const MatrixXd& x = f.spec->responses[0].X;
  const auto base = fitted_values_ci(f, 0, x, VectorXd::Zero(x.rows()));
  const auto doubled = fitted_values_ci(f, 0, x, VectorXd::Constant(x.rows(), std::log(2.0)));
  for (std::size_t i = 0; i < base.size(); ++i) {
    CHECK(base[i].lower > 0.0);
    CHECK(base[i].lower < base[i].mean);
    CHECK(base[i].mean < base[i].upper);
    CHECK(doubled[i].mean == doctest::Approx(2 * base[i].mean).epsilon(1e-12));
    CHECK(std::log(doubled[i].upper / doubled[i].lower) ==
          doctest::Approx(std::log(base[i].upper / base[i].lower)).epsilon(1e-10));
    CHECK(base[i].mean == doctest::Approx(f.fitted(static_cast<Index>(i))).epsilon(1e-12));
  }
  CHECK_THROWS_AS(fitted_values_ci(f, 0, MatrixXd::Ones(1, k + 1), VectorXd::Zero(1)),
                  SpecificationError);
  const auto wide = fitted_values_ci(f, 0, x0, VectorXd::Zero(1), 0.99);
  CHECK(wide[0].upper > v0[0].upper);
}

TEST_CASE("tables") {
  const auto f = small_fit(7);
  const auto w = wald_table(f);
  REQUIRE(w.size() == 2);
  CHECK(w[0].effect == "t1");
  CHECK(w[1].effect == "t2");
  for (std::size_t i = 0; i < w.size(); ++i) {
    const Index idx = static_cast<Index>(i) + 1;
    const auto direct = wald_test(f, std::span(&idx, 1));
    CHECK(w[i].chi2 == direct.statistic);
    CHECK(w[i].df == 1);
    CHECK(w[i].p_value == direct.p_value);
  }
  const auto d = dispersion_table(f);
  REQUIRE(d.size() == 2);
  for (const auto& row : d) CHECK(row.z == doctest::Approx(row.estimate / row.se).epsilon(1e-14));
  CHECK(d[0].estimate == f.state.tau[0](0));
}

TEST_CASE("report files round trip") {
  const auto f = small_fit(8);
  const auto dir = std::filesystem::temp_directory_path() / "mcglm_report_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  ReportOptions opts;
  opts.directory = dir;
  opts.metadata_json = R"({"centering": 3.5})";
  opts.curve_x = {f.spec->responses[0].X.topRows(3)};
  opts.curve_offset = {VectorXd::Zero(3)};
  SelectionTrace trace;
  trace.steps.push_back({"covariance", "y", "Exchangeable", 12.5, -8.5, 0.0004, "add"});
  emit_report(f, &trace, opts);

  for (const char* name : {"results.json", "coefficients.csv", "wald.csv", "dispersion.csv",
                           "correlations.csv", "fitted_y.csv", "trace.csv", "summary.txt"})
    CHECK(std::filesystem::exists(dir / name));
  CHECK(first_line(dir / "wald.csv") == "Response,Effects,Df,Chi2,p-value");
  CHECK(first_line(dir / "dispersion.csv") == "Parameter,Estimate,SE,Z");
  CHECK(first_line(dir / "trace.csv") == "Phase,Response,Candidate,Statistic,SIC,p-value,Decision");
  CHECK(first_line(dir / "fitted_y.csv").find("lower,upper") != std::string::npos);

  const ParameterState back = read_estimates(dir / "results.json");
  REQUIRE(back.beta.size() == 1);
  CHECK((back.beta[0].array() == f.state.beta[0].array()).all());
  CHECK((back.tau[0].array() == f.state.tau[0].array()).all());
  CHECK(back.power(0) == f.state.power(0));
  CHECK(slurp(dir / "results.json").find("centering") != std::string::npos);
  CHECK(slurp(dir / "results.json").find("gpl_includes_2pi") != std::string::npos);

  // Emitting into a path that is a regular file fails with the path in the message.
  ReportOptions bad = opts;
  bad.directory = dir / "results.json";
  try {
    emit_report(f, nullptr, bad);
    FAIL("expected an I/O error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("results.json") != std::string::npos);
  }
  std::filesystem::remove_all(dir);
}
