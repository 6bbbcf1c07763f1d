#include <atomic>
#include <cassert>
#include <stdexcept>
#include <string>

#include "mcglm/kernels.hpp"

namespace mcglm::kernels {

namespace {

using DotFn = double (*)(const double*, const double*, std::size_t);
using Dot3Fn = double (*)(const double*, const double*, const double*, std::size_t);

struct Table {
  Isa isa;
  DotFn dot;
  Dot3Fn dot3;
};

Table table_for(Isa isa) {
  switch (isa) {
#if defined(MCGLM_HAVE_AVX2)
    case Isa::avx2:
      return {Isa::avx2, &avx2::dot, &avx2::dot3};
#endif
#if defined(MCGLM_HAVE_NEON)
    case Isa::neon:
      return {Isa::neon, &neon::dot, &neon::dot3};
#endif
    default:
      return {Isa::scalar, &scalar::dot, &scalar::dot3};
  }
}

Isa detect() {
#if defined(MCGLM_HAVE_AVX2)
  if (isa_supported(Isa::avx2)) return Isa::avx2;
#endif
#if defined(MCGLM_HAVE_NEON)
  return Isa::neon;
#endif
  return Isa::scalar;
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{detect()};
  return isa;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
    case Isa::neon:
      return "neon";
  }
  return "unknown";
}

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#if defined(MCGLM_HAVE_AVX2)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Isa::neon:
#if defined(MCGLM_HAVE_NEON)
      return true;
#else
      return false;
#endif
  }
  return false;
}

Isa active_isa() { return current().load(std::memory_order_relaxed); }

void force_isa(Isa isa) {
  if (!isa_supported(isa)) {
    throw std::invalid_argument("kernel variant not supported: " + std::string(isa_name(isa)));
  }
  current().store(isa, std::memory_order_relaxed);
}

double dot(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  return table_for(active_isa()).dot(a.data(), b.data(), a.size());
}

double dot3(std::span<const double> a, std::span<const double> b, std::span<const double> c) {
  assert(a.size() == b.size() && a.size() == c.size());
  return table_for(active_isa()).dot3(a.data(), b.data(), c.data(), a.size());
}

}  // namespace mcglm::kernels
