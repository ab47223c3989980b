#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <string_view>

#include "dadam/kernels.hpp"

namespace dadam::kernels {
namespace {

void moment_update(std::span<double> m, std::span<double> v, std::span<double> vhat,
                   std::span<const double> g, double b1, double b2, double b3) {
  const double c1 = 1.0 - b1;
  const double c2 = 1.0 - b2;
  const double c3 = 1.0 - b3;
  for (std::size_t d = 0; d < g.size(); ++d) {
    m[d] = b1 * m[d] + c1 * g[d];
    v[d] = b2 * v[d] + c2 * (g[d] * g[d]);
    const double prev = vhat[d];
    // Increment form: never below prev, even after rounding.
    vhat[d] = prev + c3 * (std::max(prev, v[d]) - prev);
  }
}

void adaptive_step(std::span<double> out, std::span<const double> base,
                   std::span<const double> m, std::span<const double> vhat, double alpha,
                   double eps) {
  for (std::size_t d = 0; d < out.size(); ++d)
    out[d] = base[d] - alpha * (m[d] / (std::sqrt(vhat[d]) + eps));
}

void sqrt_plus(std::span<double> out, std::span<const double> vhat, double eps) {
  for (std::size_t d = 0; d < out.size(); ++d) out[d] = std::sqrt(vhat[d]) + eps;
}

void axpy(std::span<double> y, double a, std::span<const double> x) {
  for (std::size_t d = 0; d < y.size(); ++d) y[d] += a * x[d];
}

double dot(std::span<const double> x, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t d = 0; d < x.size(); ++d) s += x[d] * y[d];
  return s;
}

double max_abs(std::span<const double> x) {
  double r = 0.0;
  for (double e : x) r = std::max(r, std::abs(e));
  return r;
}

}  // namespace

const KernelTable& scalar() {
  static const KernelTable table{"scalar", moment_update, adaptive_step, sqrt_plus,
                                 axpy,     dot,           max_abs};
  return table;
}

#if !DADAM_HAVE_AVX2
const KernelTable* avx2() { return nullptr; }
#endif

const KernelTable& active() {
  static const KernelTable& chosen = [] () -> const KernelTable& {
    const char* env = std::getenv("DADAM_KERNELS");
    if (env != nullptr && std::string_view(env) == "scalar") return scalar();
    if (const KernelTable* t = avx2()) return *t;
    return scalar();
  }();
  return chosen;
}

}  // namespace dadam::kernels
