#include "mcglm/kernels.hpp"

namespace mcglm::kernels::scalar {

double dot(const double* a, const double* b, std::size_t n) {
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += a[i] * b[i];
  return sum;
}

double dot3(const double* a, const double* b, const double* c, std::size_t n) {
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += a[i] * b[i] * c[i];
  return sum;
}

}  // namespace mcglm::kernels::scalar
