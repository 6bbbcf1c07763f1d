#pragma once

// Gaussian simulation from the first two moments of a model, and the
// synthetic hunting-like data file used as a schema fixture.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mcglm/model.hpp"

namespace mcglm {

// Y ~ N(M, C) at the given parameters, per response (length N each).
std::vector<VectorXd> simulate_gaussian(const ModelSpec& spec, const ParameterState& state,
                                        std::mt19937_64& rng);

// Copy of `spec` with the response vectors replaced.
ModelSpec with_responses(ModelSpec spec, const std::vector<VectorXd>& y);

// CSV text with columns HUNTER, MONTH, HUNTER.MONTH, SEX, METHOD, ALT,
// OFFSET, BD, OT: 52 hunters over 33 months, 1216 rows, 1 to 16 records
// per hunter-month, Poisson-lognormal counts.
std::string hunting_fixture_csv(std::uint64_t seed);

}  // namespace mcglm
