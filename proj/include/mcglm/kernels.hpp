#pragma once

// Reduction kernels used by the trace and quadratic-form inner loops.
//
// Every kernel has a scalar reference implementation. SIMD variants are
// compiled per target and picked once at runtime from the CPU features;
// they must agree with the scalar version up to summation-order round-off.

#include <cstddef>
#include <span>
#include <string_view>

namespace mcglm::kernels {

enum class Isa { scalar, avx2, neon };

std::string_view isa_name(Isa isa);

// True when the variant was compiled in and the running CPU supports it.
bool isa_supported(Isa isa);

// Variant used by the dispatched entry points below.
Isa active_isa();

// Overrides the dispatch choice; throws std::invalid_argument if the variant
// is unsupported. Intended for equivalence tests and benchmarking.
void force_isa(Isa isa);

// sum_i a[i] * b[i]
double dot(std::span<const double> a, std::span<const double> b);

// sum_i a[i] * b[i] * c[i]
double dot3(std::span<const double> a, std::span<const double> b,
            std::span<const double> c);

namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
double dot3(const double* a, const double* b, const double* c, std::size_t n);
}  // namespace scalar

#if defined(MCGLM_HAVE_AVX2)
namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
double dot3(const double* a, const double* b, const double* c, std::size_t n);
}  // namespace avx2
#endif

#if defined(MCGLM_HAVE_NEON)
namespace neon {
double dot(const double* a, const double* b, std::size_t n);
double dot3(const double* a, const double* b, const double* c, std::size_t n);
}  // namespace neon
#endif

}  // namespace mcglm::kernels
