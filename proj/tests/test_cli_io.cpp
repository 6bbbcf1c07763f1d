#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mcglm/dataset.hpp"
#include "mcglm/design.hpp"
#include "mcglm/error.hpp"
#include "mcglm/selfcheck.hpp"
#include "mcglm/simulate.hpp"

using namespace mcglm;
namespace fs = std::filesystem;

namespace {

const fs::path source_dir{MCGLM_SOURCE_DIR};
const fs::path fixture = source_dir / "data" / "hunting_synthetic.csv";
const fs::path final_config = source_dir / "configs" / "hunting_final.json";

const char* const schema_json = R"("data": {"group": "HUNTER", "time": "MONTH", "key": "HUNTER.MONTH",
  "offset": "OFFSET", "categorical": ["SEX", "METHOD", "ALT"]})";

Schema hunting_schema() {
  Schema s;
  s.group = "HUNTER";
  s.time = "MONTH";
  s.key = "HUNTER.MONTH";
  s.offset = "OFFSET";
  s.responses = {"BD", "OT"};
  s.categorical = {"SEX", "METHOD", "ALT"};
  return s;
}

Dataset parse_text(const std::string& text, const Schema& schema = hunting_schema()) {
  std::istringstream in(text);
  return parse_dataset(in, schema);
}

const std::string header = "HUNTER,MONTH,HUNTER.MONTH,SEX,METHOD,ALT,OFFSET,BD,OT\n";
const std::string minimal = header +
                            "H01,1,H01.1,Female,Snare,3,5,3,1\n"
                            "H01,2,H01.2,Female,Snare,4,7,0,4\n";

long load_error_row(const std::string& text) {
  try {
    parse_text(text);
  } catch (const LoadError& e) {
    return e.row();
  }
  return -1;
}

std::string config_text(const std::string& responses) {
  return std::string("{") + schema_json + ", \"responses\": [" + responses + "]}";
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("mcglm_cli_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(read_file(p)); }

int run_cli(const std::string& arguments) {
  const std::string cmd = std::string("\"") + MCGLM_CLI_PATH + "\" " + arguments + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const std::string ot_selection = R"({"name": "OT", "mean": ["METHOD"], "mean_candidates": ["SEX"],
  "covariance": [{"type": "identity", "label": "Intercept"}],
  "covariance_candidates": [{"type": "exchangeable", "cluster": "key", "label": "Hunter-Month"},
                            {"type": "ma", "lag": 1, "label": "MA1"}],
  "power": {"mode": "fixed", "value": 1.5}})";

}  // namespace

TEST_CASE("synthetic hunting file loads with the expected dimensions") {
  const Dataset d = load_dataset(fixture, hunting_schema());
  CHECK(d.n_rows() == 1216);
  CHECK(d.schema().responses.size() == 2);
  const auto g = d.group_index();
  CHECK(g.size() == 52);
  const auto& month = d.values("MONTH");
  CHECK(std::set<double>(month.begin(), month.end()).size() == 33);
  CHECK(d.levels("ALT").size() == 5);
  CHECK(d.levels("SEX").size() == 2);
  CHECK(d.levels("METHOD").size() == 2);
  for (double o : d.values("OFFSET")) CHECK(o > 0.0);
  // The vendored file is exactly what the generator writes.
  CHECK(read_file(fixture) == hunting_fixture_csv(20240101));
}

TEST_CASE("load errors") {
  SUBCASE("empty input") {
    CHECK_THROWS_WITH_AS(parse_text(""), "no rows", LoadError);
    CHECK_THROWS_WITH_AS(parse_text(header), "no rows", LoadError);
  }
  SUBCASE("row addressed") {
    CHECK(load_error_row(minimal + "H02,1,H02.1,Male,Snare,3,4,-1,0\n") == 4);
    CHECK(load_error_row(minimal + "H02,1,H02.1,Male,Snare,3,4,1.5,0\n") == 4);
    CHECK(load_error_row(header + "H02,1,H02.1,Male,Snare,3,0,1,0\n") == 2);
    CHECK(load_error_row(header + "H02,1,H02.1,Male,Snare,3,-2,1,0\n") == 2);
    CHECK(load_error_row(header + "H02,1,H02.1,Male,Snare,3,2,1\n") == 2);
    CHECK(load_error_row(minimal + "H02,1,H02.1,,Snare,3,4,1,0\n") == 4);
    CHECK(load_error_row(header + "H02,x,H02.1,Male,Snare,3,4,1,0\n") == 2);
  }
  SUBCASE("missing column") {
    Schema s = hunting_schema();
    s.offset = "DAYS";
    try {
      parse_text(minimal, s);
      FAIL("expected a load error");
    } catch (const LoadError& e) {
      CHECK(std::string(e.what()).find("DAYS") != std::string::npos);
    }
  }
}

TEST_CASE("categorical levels are frozen in first-appearance order") {
  const Dataset d = parse_text(header +
                               "A,1,A.1,Male,Snare,4,1,0,0\n"
                               "A,2,A.2,Female,Firearm,2,1,0,0\n"
                               "B,1,B.1,Male,Snare,4,1,0,0\n");
  CHECK(d.levels("SEX") == std::vector<std::string>{"Male", "Female"});
  CHECK(d.levels("ALT") == std::vector<std::string>{"4", "2"});
  CHECK(d.group_index().size() == 2);
}

TEST_CASE("write then load is byte-stable") {
  for (const std::string& text :
       {read_file(fixture), header + "A,1,A.1,Male,Snare,4,0.1,0,0\nA,3,A.3,Male,Snare,4,1e-07,2,0\n"
                                     "B,2,B.2,Female,\"Fire,arm\",1,123456.789,0,5\n"}) {
    const Dataset a = parse_text(text);
    std::ostringstream first;
    write_dataset(a, first);
    const Dataset b = parse_text(first.str());
    std::ostringstream second;
    write_dataset(b, second);
    CHECK(first.str() == second.str());
    CHECK(b.values("OFFSET") == a.values("OFFSET"));
    CHECK(b.text("METHOD") == a.text("METHOD"));
  }
  for (double x : {0.1, 1.0 / 3.0, 1e-300, 6.02214076e23, -2.5})
    CHECK(std::stod(format_number(x)) == x);
}

TEST_CASE("design construction") {
  const Dataset d = load_dataset(fixture, hunting_schema());
  const ModelConfig cfg = load_config(final_config);

  SUBCASE("treatment coding") {
    const ModelConfig alt = parse_config(config_text(R"({"name": "BD", "mean": ["ALT"]})"));
    const ModelSpec spec = build_design(d, alt);
    CHECK(spec.responses[0].X.cols() == 5);
    CHECK(spec.responses[0].columns[0] == "(Intercept)");
    for (Index i = 0; i < spec.n_rows(); ++i)
      CHECK(spec.responses[0].X.row(i).tail(4).sum() ==
            (d.text("ALT")[static_cast<std::size_t>(i)] == d.levels("ALT")[0] ? 0.0 : 1.0));
  }

  SUBCASE("final model shapes") {
    const ModelSpec spec = build_design(d, cfg);
    REQUIRE(spec.n_responses() == 2);
    CHECK(spec.responses[0].X.cols() == 1 + 1 + 4 + 1 + 3 + 4 + 12);
    CHECK(spec.responses[1].X.cols() == 1 + 1 + 4 + 1 + 3);
    REQUIRE(spec.responses[0].components.size() == 4);
    CHECK(spec.responses[0].components[0].label == "Intercept");
    CHECK(spec.responses[0].components[1].label == "Hunter-Month");
    CHECK(spec.responses[0].components[2].label == "Method");
    CHECK(spec.responses[0].components[3].label == "Longitudinal");
    CHECK(spec.responses[1].components.size() == 2);
    CHECK(spec.responses[0].power.estimate);
    for (Index i = 0; i < spec.n_rows(); ++i)
      CHECK(spec.responses[0].offset(i) == std::log(d.values("OFFSET")[static_cast<std::size_t>(i)]));
  }

  SUBCASE("centred polynomial") {
    const DesignBuilder b(cfg, d);
    const auto& month = d.values("MONTH");
    double mean = 0.0;
    for (double m : month) mean += m;
    mean /= static_cast<double>(month.size());
    REQUIRE(b.centers().contains("MONTH"));
    CHECK(b.centers().at("MONTH") == doctest::Approx(mean).epsilon(1e-14));
    const ModelSpec spec = b.build(d);
    const auto& names = spec.responses[1].columns;
    const auto it = std::find_if(names.begin(), names.end(),
                                 [](const std::string& n) { return n == "poly(MONTH,3)3"; });
    REQUIRE(it != names.end());
    const Index c = it - names.begin();
    for (std::size_t i = 0; i < month.size(); i += 97)
      CHECK(spec.responses[1].X(static_cast<Index>(i), c) ==
            doctest::Approx(std::pow(month[i] - b.centers().at("MONTH"), 3)).epsilon(1e-12));
  }

  SUBCASE("deterministic") {
    const ModelSpec a = build_design(d, cfg);
    const ModelSpec b = build_design(d, cfg);
    for (std::size_t r = 0; r < a.responses.size(); ++r) {
      CHECK(a.responses[r].X == b.responses[r].X);
      CHECK(a.responses[r].columns == b.responses[r].columns);
      for (std::size_t k = 0; k < a.responses[r].components.size(); ++k)
        for (std::size_t g = 0; g < a.groups.size(); ++g)
          CHECK(a.responses[r].components[k].matrix.blocks[g] ==
                b.responses[r].components[k].matrix.blocks[g]);
    }
  }
}

TEST_CASE("configuration errors") {
  const Dataset d = parse_text(minimal);
  CHECK_THROWS_AS(parse_config("{"), SpecificationError);
  CHECK_THROWS_AS(parse_config(R"({"link": "inverse", )" + std::string(schema_json) +
                               R"(, "responses": [{"name": "BD"}]})"),
                  SpecificationError);
  CHECK_THROWS_AS(parse_config(config_text(R"({"name": "BD", "covariance": [{"type": "ar1"}]})")),
                  SpecificationError);
  CHECK_THROWS_AS(parse_config(config_text(R"({"name": "BD", "power": {"mode": "free"}})")),
                  SpecificationError);
  CHECK_THROWS_AS(build_design(d, parse_config(config_text(R"({"name": "BD", "mean": ["AGE"]})"))),
                  SpecificationError);
  CHECK_THROWS_AS(build_design(d, parse_config(config_text(R"({"name": "BD", "mean": ["SEX:METHOD:ALT"]})"))),
                  SpecificationError);

  // Every row is Female and Snare in the training data: the indicator of a
  // later level cannot exist, and aliased columns are reported by name.
  const Dataset two = parse_text(header +
                                 "A,1,A.1,Female,Snare,3,5,3,1\n"
                                 "A,2,A.2,Male,Firearm,4,7,0,4\n"
                                 "B,1,B.1,Female,Snare,3,5,1,2\n");
  try {
    build_design(two, parse_config(config_text(R"({"name": "BD", "mean": ["SEX", "METHOD"]})")));
    FAIL("expected a rank-deficiency error");
  } catch (const SpecificationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("rank deficient") != std::string::npos);
    CHECK((msg.find("SEX") != std::string::npos || msg.find("METHOD") != std::string::npos));
  }
}

TEST_CASE("minimal file runs end to end") {
  const Dataset d = parse_text(minimal);
  CHECK(d.n_rows() == 2);
  CHECK(d.group_index().size() == 1);
  const ModelConfig cfg = parse_config(config_text(
      R"({"name": "BD", "covariance": [{"type": "identity"}], "power": {"mode": "fixed", "value": 1}})"));
  const FittedModel f = fit(build_design(d, cfg));
  // Intercept-only with offsets: exp(b0) = sum y / sum offset.
  CHECK(std::exp(f.state.beta[0](0)) == doctest::Approx(3.0 / 12.0).epsilon(1e-8));
}

TEST_CASE("command line") {
  const fs::path dir = scratch("cli");
  write_file(dir / "mini.csv", minimal);
  write_file(dir / "mini.json",
             config_text(R"({"name": "BD", "covariance": [{"type": "identity", "label": "Intercept"}],
                            "power": {"mode": "fixed", "value": 1}})"));
  write_file(dir / "both.json",
             config_text(R"({"name": "BD", "power": {"mode": "fixed", "value": 1}},
                            {"name": "OT", "power": {"mode": "fixed", "value": 1}})"));
  write_file(dir / "bad.csv", minimal + "H02,1,H02.1,Male,Snare,3,4,1.5,0\n");
  write_file(dir / "sel.json", config_text(ot_selection));
  const std::string data = " --data \"" + fixture.string() + "\"";

  SUBCASE("fit on the minimal file") {
    CHECK(run_cli("fit --config " + (dir / "mini.json").string() + " --data " +
                  (dir / "mini.csv").string() + " --out " + (dir / "fit").string()) == 0);
    for (const char* name : {"results.json", "coefficients.csv", "dispersion.csv", "fitted_BD.csv",
                             "summary.txt", "manifest.json"})
      CHECK(fs::exists(dir / "fit" / name));
    const auto manifest = read_json(dir / "fit" / "manifest.json");
    CHECK(manifest.contains("config_sha256"));
    CHECK(manifest.contains("seed"));
  }

  SUBCASE("two responses on two rows cannot identify their correlation") {
    CHECK(run_cli("fit --config " + (dir / "both.json").string() + " --data " +
                  (dir / "mini.csv").string() + " --out " + (dir / "both").string()) != 0);
    CHECK(read_json(dir / "both" / "error.json")["type"] == "diagnostic");
  }

  SUBCASE("load failures leave a machine-readable error") {
    CHECK(run_cli("fit --config " + (dir / "mini.json").string() + " --data " +
                  (dir / "bad.csv").string() + " --out " + (dir / "bad").string()) != 0);
    const auto err = read_json(dir / "bad" / "error.json");
    CHECK(err["type"] == "load");
    CHECK(err["row"] == 4);
    CHECK(run_cli("fit --config " + (dir / "missing.json").string() + " --data " +
                  (dir / "mini.csv").string() + " --out " + (dir / "nocfg").string()) != 0);
    CHECK(read_json(dir / "nocfg" / "error.json")["type"] == "specification");
    CHECK(run_cli("fit --config " + (dir / "mini.json").string() + " --data " +
                  (dir / "mini.csv").string() + " --power sometimes --out " +
                  (dir / "badpower").string()) != 0);
    CHECK(fs::exists(dir / "badpower" / "error.json"));
  }

  SUBCASE("select penalties") {
    CHECK(run_cli("select --config " + (dir / "sel.json").string() + data + " --penalty aic --out " +
                  (dir / "aic").string()) == 0);
    CHECK(read_json(dir / "aic" / "manifest.json")["delta"] == 2.0);
    CHECK(fs::exists(dir / "aic" / "trace.csv"));
    CHECK(run_cli("select --config " + (dir / "sel.json").string() + data + " --penalty bic --out " +
                  (dir / "bic").string()) == 0);
    CHECK(read_json(dir / "bic" / "manifest.json")["delta"].get<double>() ==
          doctest::Approx(std::log(1216.0)).epsilon(1e-14));
  }

  SUBCASE("score fits the base model once") {
    CHECK(run_cli("score --config " + (dir / "sel.json").string() + data + " --out " +
                  (dir / "score").string()) == 0);
    const auto s = read_json(dir / "score" / "score.json");
    CHECK(s["fits"] == 1);
    CHECK(s["delta"] == 2.0);
    CHECK(s["rows"].size() == 3);
    for (const auto& row : s["rows"]) CHECK(row["T"].get<double>() >= 0.0);
  }

  SUBCASE("check") {
    CHECK(run_cli("check --seed 5 --out " + (dir / "check").string()) == 0);
    for (const auto& row : read_json(dir / "check" / "check.json")) CHECK(row["pass"] == true);
  }
  fs::remove_all(dir);
}

TEST_CASE("derivative self-test fails under an impossible tolerance") {
  const auto ok = derivative_self_test(17, 3);
  for (const auto& r : ok) CHECK(r.pass);
  const auto strict = derivative_self_test(17, 3, 1e-300);
  CHECK(std::any_of(strict.begin(), strict.end(), [](const CheckRecord& r) { return !r.pass; }));
}
