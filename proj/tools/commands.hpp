#pragma once

#include <cstdint>
#include <exception>
#include <filesystem>
#include <string>
#include <string_view>

namespace mcglm::cli {

struct Args {
  std::string command;
  std::string config;
  std::string data;
  std::filesystem::path out = "mcglm-out";
  std::string penalty;  // empty: take the config value
  std::string power;    // empty, "estimate" or "fixed=<v>"
  int max_iter = 0;     // 0: config value
  double tol = 0.0;     // 0: config value
  std::uint64_t seed = 20240101;
  int threads = 1;
};

int run_fit(const Args& args);
int run_select(const Args& args);
int run_score(const Args& args);
int run_check(const Args& args);
int run_simulate(const Args& args);

// error.json in `dir`: type, message, and row / trace when available.
void write_error(const std::filesystem::path& dir, const std::exception& e);

std::string sha256_hex(std::string_view bytes);

}  // namespace mcglm::cli
