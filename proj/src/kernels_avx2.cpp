// Compiled with -mavx2 (and without FMA) so every lane performs the same IEEE
// operations in the same order as the scalar reference.
#include <immintrin.h>

#include <algorithm>
#include <cmath>

#include "dadam/kernels.hpp"

namespace dadam::kernels {
namespace {

constexpr std::size_t kLanes = 4;

void moment_update(std::span<double> m, std::span<double> v, std::span<double> vhat,
                   std::span<const double> g, double b1, double b2, double b3) {
  const std::size_t n = g.size();
  const std::size_t body = n - n % kLanes;
  const __m256d vb1 = _mm256_set1_pd(b1), vc1 = _mm256_set1_pd(1.0 - b1);
  const __m256d vb2 = _mm256_set1_pd(b2), vc2 = _mm256_set1_pd(1.0 - b2);
  const __m256d vc3 = _mm256_set1_pd(1.0 - b3);
  for (std::size_t d = 0; d < body; d += kLanes) {
    const __m256d gd = _mm256_loadu_pd(g.data() + d);
    __m256d md = _mm256_loadu_pd(m.data() + d);
    __m256d vd = _mm256_loadu_pd(v.data() + d);
    const __m256d hd = _mm256_loadu_pd(vhat.data() + d);
    md = _mm256_add_pd(_mm256_mul_pd(vb1, md), _mm256_mul_pd(vc1, gd));
    vd = _mm256_add_pd(_mm256_mul_pd(vb2, vd), _mm256_mul_pd(vc2, _mm256_mul_pd(gd, gd)));
    const __m256d nh = _mm256_add_pd(hd, _mm256_mul_pd(vc3, _mm256_sub_pd(_mm256_max_pd(hd, vd), hd)));
    _mm256_storeu_pd(m.data() + d, md);
    _mm256_storeu_pd(v.data() + d, vd);
    _mm256_storeu_pd(vhat.data() + d, nh);
  }
  for (std::size_t d = body; d < n; ++d) {
    m[d] = b1 * m[d] + (1.0 - b1) * g[d];
    v[d] = b2 * v[d] + (1.0 - b2) * (g[d] * g[d]);
    const double prev = vhat[d];
    vhat[d] = prev + (1.0 - b3) * (std::max(prev, v[d]) - prev);
  }
}

void adaptive_step(std::span<double> out, std::span<const double> base,
                   std::span<const double> m, std::span<const double> vhat, double alpha,
                   double eps) {
  const std::size_t n = out.size();
  const std::size_t body = n - n % kLanes;
  const __m256d va = _mm256_set1_pd(alpha), ve = _mm256_set1_pd(eps);
  for (std::size_t d = 0; d < body; d += kLanes) {
    const __m256d den = _mm256_add_pd(_mm256_sqrt_pd(_mm256_loadu_pd(vhat.data() + d)), ve);
    const __m256d q = _mm256_div_pd(_mm256_loadu_pd(m.data() + d), den);
    _mm256_storeu_pd(out.data() + d,
                     _mm256_sub_pd(_mm256_loadu_pd(base.data() + d), _mm256_mul_pd(va, q)));
  }
  for (std::size_t d = body; d < n; ++d)
    out[d] = base[d] - alpha * (m[d] / (std::sqrt(vhat[d]) + eps));
}

void sqrt_plus(std::span<double> out, std::span<const double> vhat, double eps) {
  const std::size_t n = out.size();
  const std::size_t body = n - n % kLanes;
  const __m256d ve = _mm256_set1_pd(eps);
  for (std::size_t d = 0; d < body; d += kLanes)
    _mm256_storeu_pd(out.data() + d,
                     _mm256_add_pd(_mm256_sqrt_pd(_mm256_loadu_pd(vhat.data() + d)), ve));
  for (std::size_t d = body; d < n; ++d) out[d] = std::sqrt(vhat[d]) + eps;
}

void axpy(std::span<double> y, double a, std::span<const double> x) {
  const std::size_t n = y.size();
  const std::size_t body = n - n % kLanes;
  const __m256d va = _mm256_set1_pd(a);
  for (std::size_t d = 0; d < body; d += kLanes) {
    const __m256d yd = _mm256_loadu_pd(y.data() + d);
    _mm256_storeu_pd(y.data() + d,
                     _mm256_add_pd(yd, _mm256_mul_pd(va, _mm256_loadu_pd(x.data() + d))));
  }
  for (std::size_t d = body; d < n; ++d) y[d] += a * x[d];
}

double dot(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  const std::size_t body = n - n % (2 * kLanes);
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  for (std::size_t d = 0; d < body; d += 2 * kLanes) {
    acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(_mm256_loadu_pd(x.data() + d),
                                             _mm256_loadu_pd(y.data() + d)));
    acc1 = _mm256_add_pd(acc1, _mm256_mul_pd(_mm256_loadu_pd(x.data() + d + kLanes),
                                             _mm256_loadu_pd(y.data() + d + kLanes)));
  }
  alignas(32) double lanes[kLanes];
  _mm256_store_pd(lanes, _mm256_add_pd(acc0, acc1));
  double s = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
  for (std::size_t d = body; d < n; ++d) s += x[d] * y[d];
  return s;
}

double max_abs(std::span<const double> x) {
  const std::size_t n = x.size();
  const std::size_t body = n - n % kLanes;
  const __m256d sign = _mm256_set1_pd(-0.0);
  __m256d acc = _mm256_setzero_pd();
  for (std::size_t d = 0; d < body; d += kLanes)
    acc = _mm256_max_pd(acc, _mm256_andnot_pd(sign, _mm256_loadu_pd(x.data() + d)));
  alignas(32) double lanes[kLanes];
  _mm256_store_pd(lanes, acc);
  double r = std::max(std::max(lanes[0], lanes[1]), std::max(lanes[2], lanes[3]));
  for (std::size_t d = body; d < n; ++d) r = std::max(r, std::abs(x[d]));
  return r;
}

}  // namespace

const KernelTable* avx2() {
  static const KernelTable table{"avx2", moment_update, adaptive_step, sqrt_plus,
                                 axpy,   dot,           max_abs};
  static const bool supported = __builtin_cpu_supports("avx2");
  return supported ? &table : nullptr;
}

}  // namespace dadam::kernels
