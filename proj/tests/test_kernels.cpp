#include <doctest.h>

#include <random>
#include <stdexcept>
#include <vector>

#include "mcglm/kernels.hpp"

using namespace mcglm::kernels;

namespace {

std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

long double naive_dot(const std::vector<double>& a, const std::vector<double>& b) {
  long double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<long double>(a[i]) * b[i];
  return s;
}

struct IsaGuard {
  Isa saved = active_isa();
  ~IsaGuard() { force_isa(saved); }
};

}  // namespace

TEST_CASE("scalar dot matches an extended-precision sum") {
  std::mt19937_64 rng(1);
  for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 16u, 33u, 257u}) {
    const auto a = random_vector(rng, n);
    const auto b = random_vector(rng, n);
    const double ref = static_cast<double>(naive_dot(a, b));
    CHECK(scalar::dot(a.data(), b.data(), n) == doctest::Approx(ref).epsilon(1e-13));
  }
}

TEST_CASE("every supported variant agrees with the scalar kernel") {
  IsaGuard guard;
  std::mt19937_64 rng(2);
  for (Isa isa : {Isa::scalar, Isa::avx2, Isa::neon}) {
    if (!isa_supported(isa)) {
      CHECK_THROWS_AS(force_isa(isa), std::invalid_argument);
      continue;
    }
    force_isa(isa);
    CHECK(active_isa() == isa);
    for (std::size_t n = 0; n < 70; ++n) {
      const auto a = random_vector(rng, n);
      const auto b = random_vector(rng, n);
      const auto c = random_vector(rng, n);
      double scale = 1e-300;
      double scale3 = 1e-300;
      for (std::size_t i = 0; i < n; ++i) {
        scale += std::abs(a[i] * b[i]);
        scale3 += std::abs(a[i] * b[i] * c[i]);
      }
      const double d = dot(a, b);
      const double d3 = dot3(a, b, c);
      CHECK(std::abs(d - scalar::dot(a.data(), b.data(), n)) <= 1e-14 * scale);
      CHECK(std::abs(d3 - scalar::dot3(a.data(), b.data(), c.data(), n)) <= 1e-14 * scale3);
    }
  }
}

TEST_CASE("isa names") {
  CHECK(isa_name(Isa::scalar) == "scalar");
  CHECK(isa_name(Isa::avx2) == "avx2");
  CHECK(isa_name(Isa::neon) == "neon");
  CHECK(isa_supported(Isa::scalar));
}
