#include <CLI11.hpp>
#include <iostream>

#include "commands.hpp"

int main(int argc, char** argv) {
  using namespace mcglm::cli;
  CLI::App app{"Multivariate covariance generalized linear models"};
  app.require_subcommand(1);
  Args args;

  auto add_common = [&](CLI::App* sub, bool needs_data) {
    if (needs_data) {
      sub->add_option("--config", args.config, "model configuration (JSON)")->required();
      sub->add_option("--data", args.data, "comma-separated data file")->required();
      sub->add_option("--penalty", args.penalty, "SIC penalty")->check(CLI::IsMember({"aic", "bic"}));
      sub->add_option("--power", args.power, "fixed=<v> or estimate");
      sub->add_option("--max-iter", args.max_iter, "maximum scoring iterations");
      sub->add_option("--tol", args.tol, "score tolerance");
    }
    sub->add_option("--seed", args.seed, "random seed");
    sub->add_option("--threads", args.threads, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--out", args.out, "output directory");
  };
  auto* fit = app.add_subcommand("fit", "fit a model and write the report");
  auto* select = app.add_subcommand("select", "stepwise model selection");
  auto* score = app.add_subcommand("score", "one-step SIC for candidate components");
  auto* check = app.add_subcommand("check", "finite-difference derivative self-test");
  auto* simulate = app.add_subcommand("simulate", "write the synthetic hunting data file");
  add_common(fit, true);
  add_common(select, true);
  add_common(score, true);
  add_common(check, false);
  add_common(simulate, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code != 0) write_error(args.out, std::runtime_error(e.what()));
    return code;
  }

  try {
    const std::pair<CLI::App*, int (*)(const Args&)> commands[] = {
        {fit, run_fit}, {select, run_select}, {score, run_score},
        {check, run_check}, {simulate, run_simulate}};
    for (const auto& [sub, run] : commands) {
      if (!*sub) continue;
      args.command = sub->get_name();
      return run(args);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    write_error(args.out, e);
    return 1;
  }
  return 2;
}
