#include "commands.hpp"

#include <openssl/evp.h>

#include <Eigen/Core>
#include <boost/version.hpp>
#include <cmath>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "mcglm/dataset.hpp"
#include "mcglm/design.hpp"
#include "mcglm/error.hpp"
#include "mcglm/estimation.hpp"
#include "mcglm/kernels.hpp"
#include "mcglm/reporting.hpp"
#include "mcglm/selection.hpp"
#include "mcglm/selfcheck.hpp"
#include "mcglm/simulate.hpp"
#include "mcglm/stats.hpp"

namespace mcglm::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr const char* kVersion = "0.1.0";

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SpecificationError("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_json(const fs::path& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << doc.dump(2) << '\n';
}

struct Context {
  std::string config_text;
  ModelConfig config;
  Dataset data;
  std::string data_hash;
};

Context load(const Args& args) {
  if (args.config.empty()) throw SpecificationError("--config is required");
  if (args.data.empty()) throw SpecificationError("--data is required");
  Context ctx{read_file(args.config), {}, {}, {}};
  ctx.config = parse_config(ctx.config_text);
  if (!args.power.empty()) {
    PowerSpec p;
    if (args.power == "estimate") {
      p.estimate = true;
    } else if (args.power.starts_with("fixed=")) {
      p.estimate = false;
      try {
        p.value = std::stod(args.power.substr(6));
      } catch (const std::exception&) {
        throw SpecificationError("--power: cannot parse '" + args.power + "'");
      }
    } else {
      throw SpecificationError("--power must be 'estimate' or 'fixed=<value>'");
    }
    for (auto& r : ctx.config.responses) {
      if (p.estimate) {
        r.power.estimate = true;
      } else {
        r.power = p;
      }
    }
  }
  if (!args.penalty.empty()) {
    if (args.penalty != "aic" && args.penalty != "bic") {
      throw SpecificationError("--penalty must be 'aic' or 'bic'");
    }
    ctx.config.selection.penalty = args.penalty;
  }
  if (args.max_iter > 0) ctx.config.fit.max_iter = args.max_iter;
  if (args.tol > 0.0) ctx.config.fit.score_tol = args.tol;
  ctx.config.fit.threads = std::max(1, args.threads);
  ctx.data = load_dataset(args.data, ctx.config.schema);
  ctx.data_hash = sha256_hex(read_file(args.data));
  return ctx;
}

json versions() {
  return {{"mcglm", kVersion},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                        "." + std::to_string(EIGEN_MINOR_VERSION)},
          {"boost", std::to_string(BOOST_VERSION / 100000) + "." +
                        std::to_string(BOOST_VERSION / 100 % 1000) + "." +
                        std::to_string(BOOST_VERSION % 100)},
          {"compiler", __VERSION__},
          {"kernels", std::string(kernels::isa_name(kernels::active_isa()))}};
}

void write_manifest(const Args& args, const Context* ctx, const json& extra = json::object()) {
  json m = {{"command", args.command},
            {"seed", args.seed},
            {"threads", args.threads},
            {"versions", versions()},
            {"fit_invocations", fit_invocations()}};
  if (ctx) {
    m["config"] = args.config;
    m["config_sha256"] = sha256_hex(ctx->config_text);
    m["data"] = args.data;
    m["data_sha256"] = ctx->data_hash;
    m["penalty"] = ctx->config.selection.penalty;
  }
  for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
  write_json(args.out / "manifest.json", m);
}

json metadata(const Context& ctx, const DesignBuilder& builder) {
  json centers = json::object();
  for (const auto& [k, v] : builder.centers()) centers[k] = v;
  return {{"config_sha256", sha256_hex(ctx.config_text)},
          {"centering", centers},
          {"gpl_constant", "includes NR*log(2*pi)"},
          {"offset", ctx.config.schema.offset.empty() ? "none" : "log(" + ctx.config.schema.offset + ")"}};
}

ReportOptions report_options(const Args& args, const Context& ctx, const DesignBuilder& builder,
                             const ModelSpec& spec) {
  ReportOptions opt;
  opt.directory = args.out;
  opt.metadata_json = metadata(ctx, builder).dump();
  const auto& schema = ctx.config.schema;
  opt.curve_header = {schema.group};
  if (!schema.time.empty()) opt.curve_header.push_back(schema.time);
  std::vector<std::string> labels;
  const auto& g = ctx.data.text(schema.group);
  for (Index i = 0; i < ctx.data.n_rows(); ++i) {
    std::string l = g[static_cast<std::size_t>(i)];
    if (!schema.time.empty()) l += "," + ctx.data.text(schema.time)[static_cast<std::size_t>(i)];
    labels.push_back(std::move(l));
  }
  for (const auto& r : spec.responses) {
    opt.curve_x.push_back(r.X);
    opt.curve_offset.push_back(VectorXd::Zero(r.X.rows()));
    opt.curve_labels.push_back(labels);
  }
  return opt;
}

double penalty_delta(const ModelConfig& config, Index n_rows) {
  return config.selection.penalty == "bic" ? std::log(static_cast<double>(n_rows)) : 2.0;
}

void ensure_out(const Args& args) {
  std::error_code ec;
  fs::create_directories(args.out, ec);
  if (ec) throw std::runtime_error("cannot create '" + args.out.string() + "': " + ec.message());
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

void write_error(const fs::path& dir, const std::exception& e) {
  json doc;
  doc["message"] = e.what();
  if (const auto* le = dynamic_cast<const LoadError*>(&e)) {
    doc["type"] = "load";
    if (le->row() > 0) doc["row"] = le->row();
  } else if (dynamic_cast<const SpecificationError*>(&e)) {
    doc["type"] = "specification";
  } else if (const auto* de = dynamic_cast<const DiagnosticError*>(&e)) {
    doc["type"] = "diagnostic";
    doc["trace"] = de->trace();
  } else if (dynamic_cast<const InfeasiblePoint*>(&e)) {
    doc["type"] = "infeasible";
  } else {
    doc["type"] = "runtime";
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  std::ofstream out(dir / "error.json");
  out << doc.dump(2) << '\n';
}

int run_fit(const Args& args) {
  const Context ctx = load(args);
  ensure_out(args);
  const DesignBuilder builder(ctx.config, ctx.data);
  const auto spec = std::make_shared<const ModelSpec>(builder.build(ctx.data));
  const FittedModel fitted = fit(spec, ctx.config.fit);
  emit_report(fitted, nullptr, report_options(args, ctx, builder, *spec));
  write_manifest(args, &ctx);
  std::cout << "fit converged in " << fitted.iterations << " iterations; GPL " << fitted.gpl
            << "\nreport written to " << args.out.string() << "\n";
  return 0;
}

int run_select(const Args& args) {
  const Context ctx = load(args);
  ensure_out(args);
  const DesignBuilder builder(ctx.config, ctx.data);
  WorkflowInput input;
  input.full = builder.build(ctx.data, true);
  for (const auto& rc : ctx.config.responses) {
    std::vector<std::string> base{"Intercept"};
    base.insert(base.end(), rc.mean.begin(), rc.mean.end());
    input.base_terms.push_back(std::move(base));
    input.cov_candidates.push_back(
        builder.components(rc.covariance_candidates, ctx.data, input.full.groups));
  }
  WorkflowOptions opt;
  opt.delta = penalty_delta(ctx.config, ctx.data.n_rows());
  opt.alpha = ctx.config.selection.alpha;
  opt.max_steps = ctx.config.selection.max_steps;
  opt.fit = ctx.config.fit;
  const WorkflowResult result = stepwise_workflow(input, opt);
  emit_report(result.model, &result.trace,
              report_options(args, ctx, builder, *result.model.spec));
  write_manifest(args, &ctx, {{"delta", opt.delta}});
  std::cout << "selection finished: " << result.trace.steps.size() << " steps; report written to "
            << args.out.string() << "\n";
  return 0;
}

int run_score(const Args& args) {
  const Context ctx = load(args);
  ensure_out(args);
  const DesignBuilder builder(ctx.config, ctx.data);
  const auto spec = std::make_shared<const ModelSpec>(builder.build(ctx.data));
  const std::size_t fits_before = fit_invocations();
  const FittedModel base = fit(spec, ctx.config.fit);
  const double delta = penalty_delta(ctx.config, ctx.data.n_rows());

  std::vector<CandidateComponent> all;
  for (int r = 0; r < static_cast<int>(ctx.config.responses.size()); ++r)
    for (auto& z : builder.components(ctx.config.responses[r].covariance_candidates, ctx.data,
                                      spec->groups))
      all.push_back({r, std::move(z)});
  if (all.empty()) throw SpecificationError("score: config lists no covariance candidates");

  std::ofstream out(args.out / "score.csv");
  out << "Response,Candidate,T,Df,SIC,p-value,PseudoInverse\n";
  json rows = json::array();
  auto emit = [&](const std::string& response, const std::string& label,
                  std::span<const CandidateComponent> set) {
    const ScoreStatistic t = generalized_score_statistic(base, set, ctx.config.fit.threads);
    const double sic = -t.statistic + delta * static_cast<double>(tau_count(*spec) +
                                                                  static_cast<Index>(set.size()));
    const double p = stats::chi_square_sf(t.statistic, static_cast<double>(t.df));
    out << response << ',' << label << ',' << format_number(t.statistic) << ',' << t.df << ','
        << format_number(sic) << ',' << format_number(p) << ',' << (t.pseudo_inverse ? 1 : 0)
        << '\n';
    rows.push_back({{"response", response}, {"candidate", label}, {"T", t.statistic},
                    {"df", t.df}, {"sic", sic}, {"p_value", p},
                    {"pseudo_inverse", t.pseudo_inverse}, {"asymmetry", t.asymmetry}});
  };
  for (const auto& c : all)
    emit(spec->responses[c.response].name, c.matrix.label, std::span(&c, 1));
  if (all.size() > 1) emit("*", "all", all);
  const std::size_t fits = fit_invocations() - fits_before;
  write_json(args.out / "score.json", {{"delta", delta}, {"rows", rows}, {"fits", fits}});
  write_manifest(args, &ctx, {{"delta", delta}, {"fits_this_command", fits}});
  std::cout << "one-step SIC for " << all.size() << " candidates using " << fits
            << " model fit(s); table written to " << (args.out / "score.csv").string() << "\n";
  return 0;
}

int run_check(const Args& args) {
  ensure_out(args);
  const auto records = derivative_self_test(args.seed);
  json doc = json::array();
  bool ok = true;
  for (const auto& r : records) {
    std::cout << (r.pass ? "PASS " : "FAIL ") << r.name << ": " << r.value << " (tol "
              << r.tolerance << ")\n";
    doc.push_back({{"check", r.name}, {"value", r.value}, {"tolerance", r.tolerance}, {"pass", r.pass}});
    ok = ok && r.pass;
  }
  write_json(args.out / "check.json", doc);
  write_manifest(args, nullptr);
  if (!ok) {
    write_error(args.out, DiagnosticError("derivative self-test failed"));
    return 1;
  }
  return 0;
}

int run_simulate(const Args& args) {
  ensure_out(args);
  const fs::path path = args.out / "hunting_synthetic.csv";
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << hunting_fixture_csv(args.seed);
  write_manifest(args, nullptr);
  std::cout << "wrote " << path.string() << "\n";
  return 0;
}

}  // namespace mcglm::cli
